//! Discrete-time lossy link between sensor and estimator.
//!
//! Each slot, the sensor offers one measurement. It is admitted to an
//! unbounded FCFS queue with probability `p`; the single server finishes the
//! packet at the head with probability `q` per slot. A packet admitted in
//! slot `t` can therefore complete no earlier than slot `t + 1`, so the
//! minimum system time (and the minimum age of a delivered measurement) is
//! one slot.
//!
//! [`AgeTracker`] keeps the freshest delivered values and their age
//! `delta(t) = t - gen_slot`, ignoring deliveries staler than what it already
//! holds.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub values: Vec<f64>,
    /// Slot in which the sensor produced this reading.
    pub gen_slot: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub measurement: Measurement,
    pub admit_slot: u64,
}

impl Packet {
    pub fn gen_slot(&self) -> u64 {
        self.measurement.gen_slot
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QueueConfig {
    /// Admission probability per offered measurement.
    pub p: f64,
    /// Per-slot service completion probability.
    pub q: f64,
}

impl QueueConfig {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "queue needs p in [0,1], q in (0,1], got p={p}, q={q}"
            )));
        }
        Ok(QueueConfig { p, q })
    }
}

#[derive(Debug, Clone, Default)]
pub struct QueueState {
    slot: u64,
    in_service: Option<Packet>,
    waiting: VecDeque<Packet>,
    pub offered: u64,
    pub admitted: u64,
    pub delivered: u64,
    /// Slots in which the server held a packet at the service check.
    pub busy_slots: u64,
}

impl QueueState {
    pub fn new() -> Self {
        QueueState::default()
    }

    pub fn in_system(&self) -> usize {
        self.waiting.len() + usize::from(self.in_service.is_some())
    }

    /// Advance to slot `t` (one call per slot, strictly increasing).
    ///
    /// Order within the slot: the packet in service may complete (delivering
    /// it), then the offered measurement may be admitted, then the head of
    /// the waiting line moves into service. Both coins are drawn every slot
    /// (service coin first) whether or not they are used, so a replay with
    /// the same RNG sees identical coin sequences regardless of queue state.
    pub fn step(
        &mut self,
        t: u64,
        new_measurement: Option<Measurement>,
        cfg: &QueueConfig,
        rng: &mut impl Rng,
    ) -> Option<Packet> {
        assert_eq!(t, self.slot + 1, "queue slots must advance one at a time");
        self.slot = t;
        let service_coin = rng.gen::<f64>();
        let admit_coin = rng.gen::<f64>();

        let mut delivered = None;
        if let Some(pkt) = self.in_service.take() {
            self.busy_slots += 1;
            if service_coin < cfg.q {
                self.delivered += 1;
                delivered = Some(pkt);
            } else {
                self.in_service = Some(pkt);
            }
        }
        if let Some(m) = new_measurement {
            self.offered += 1;
            if admit_coin < cfg.p {
                self.admitted += 1;
                self.waiting.push_back(Packet { measurement: m, admit_slot: t });
            }
        }
        if self.in_service.is_none() {
            self.in_service = self.waiting.pop_front();
        }
        delivered
    }
}

/// Freshest delivered measurement and its age.
#[derive(Debug, Clone)]
pub struct AgeTracker {
    latest: Vec<f64>,
    latest_gen: Option<u64>,
    delta: u64,
    last_slot: u64,
}

impl AgeTracker {
    /// Before anything arrives the tracked value is the zero vector and the
    /// age starts at one slot.
    pub fn new(meas_dim: usize) -> Self {
        AgeTracker { latest: vec![0.0; meas_dim], latest_gen: None, delta: 1, last_slot: 0 }
    }

    /// Account for slot `t`. A delivery resets the age to `t - gen_slot` only
    /// if it is fresher than what is already held; otherwise the age grows by
    /// one per elapsed slot.
    pub fn update(&mut self, t: u64, delivered: Option<&Packet>) {
        assert!(t > self.last_slot, "age updates must move forward in time");
        let fresher = delivered
            .map(|p| self.latest_gen.map_or(true, |g| p.gen_slot() > g))
            .unwrap_or(false);
        if fresher {
            let pkt = delivered.unwrap();
            self.latest.clear();
            self.latest.extend_from_slice(&pkt.measurement.values);
            self.latest_gen = Some(pkt.gen_slot());
            self.delta = t - pkt.gen_slot();
        } else {
            self.delta += t - self.last_slot;
        }
        self.last_slot = t;
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn latest(&self) -> &[f64] {
        &self.latest
    }

    pub fn latest_gen(&self) -> Option<u64> {
        self.latest_gen
    }
}

/// Mean age over `horizon` slots when the sensor offers a (payload-free)
/// measurement every slot.
pub fn average_age(cfg: &QueueConfig, horizon: u64, rng: &mut impl Rng) -> f64 {
    let mut queue = QueueState::new();
    let mut tracker = AgeTracker::new(0);
    let mut total = 0.0;
    for t in 1..=horizon {
        let delivered = queue.step(t, Some(Measurement { values: Vec::new(), gen_slot: t }), cfg, rng);
        tracker.update(t, delivered.as_ref());
        total += tracker.delta() as f64;
    }
    total / horizon as f64
}

/// Per-episode network draw: `log10 q` uniform on (-2, 0), then `log10 p`
/// uniform on (-3, log10 q), so p < q always holds.
pub fn sample_time_varying(rng: &mut impl Rng) -> QueueConfig {
    let log_q = rng.gen_range(-2.0..0.0);
    let log_p = rng.gen_range(-3.0..log_q);
    QueueConfig { p: 10f64.powf(log_p), q: 10f64.powf(log_q) }
}

/// Noisy age report: the true age scaled by U(0, 2) plus zero-mean Gaussian
/// noise with standard deviation `0.1 * age`, clamped at zero. Mean stays at
/// the true age; variance is `age^2 / 3 + (0.1 age)^2` up to the clamp.
pub fn noisy_age(true_age: f64, rng: &mut impl Rng) -> f64 {
    if true_age == 0.0 {
        return 0.0;
    }
    let scale = rng.gen_range(0.0..2.0);
    let noise = Normal::new(0.0, 0.1 * true_age).expect("age is finite");
    (true_age * scale + noise.sample(rng)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn meas(t: u64) -> Measurement {
        Measurement { values: vec![t as f64], gen_slot: t }
    }

    #[test]
    fn certain_admission_and_service_gives_unit_system_time() {
        let cfg = QueueConfig::new(1.0, 1.0).unwrap();
        let mut rng = substream(0, "q", 0);
        let mut queue = QueueState::new();
        assert!(queue.step(1, Some(meas(1)), &cfg, &mut rng).is_none());
        for t in 2..=10 {
            let pkt = queue.step(t, Some(meas(t)), &cfg, &mut rng).expect("delivery every slot");
            assert_eq!(pkt.gen_slot(), t - 1, "system time must be exactly one slot");
        }
    }

    /// Independent replay: regenerate the same slot-indexed coins and compute
    /// departures with the textbook recursion (enter service when admitted or
    /// when the predecessor departs; complete at the first later slot whose
    /// service coin succeeds). The queue must deliver the identical sequence.
    #[test]
    fn deliveries_match_event_list_replay() {
        for (p, q) in [(0.3, 0.5), (0.1, 0.3), (0.8, 0.9), (0.05, 0.06)] {
            let cfg = QueueConfig::new(p, q).unwrap();
            let horizon = 20_000u64;

            let mut rng = substream(11, "queue", (p * 1e4) as u64);
            let mut queue = QueueState::new();
            let mut got: Vec<(u64, u64)> = Vec::new(); // (gen_slot, delivery_slot)
            for t in 1..=horizon {
                if let Some(pkt) = queue.step(t, Some(meas(t)), &cfg, &mut rng) {
                    got.push((pkt.gen_slot(), t));
                }
            }

            let mut rng = substream(11, "queue", (p * 1e4) as u64);
            let mut service = vec![false; horizon as usize + 1];
            let mut admit = vec![false; horizon as usize + 1];
            for t in 1..=horizon as usize {
                service[t] = rng.gen::<f64>() < q;
                admit[t] = rng.gen::<f64>() < p;
            }
            let mut want: Vec<(u64, u64)> = Vec::new();
            let mut prev_departure = 0u64;
            for a in 1..=horizon {
                if !admit[a as usize] {
                    continue;
                }
                let enter = a.max(prev_departure);
                let mut d = enter + 1;
                while d <= horizon && !service[d as usize] {
                    d += 1;
                }
                if d > horizon {
                    break;
                }
                want.push((a, d));
                prev_departure = d;
            }
            assert_eq!(got, want, "queue diverged from replay at p={p}, q={q}");
        }
    }

    #[test]
    fn conservation_and_fifo_hold() {
        let cfg = QueueConfig::new(0.4, 0.5).unwrap();
        let mut rng = substream(5, "q", 7);
        let mut queue = QueueState::new();
        let mut last_gen = 0;
        for t in 1..=50_000 {
            if let Some(pkt) = queue.step(t, Some(meas(t)), &cfg, &mut rng) {
                assert!(pkt.gen_slot() > last_gen, "FIFO order violated");
                assert!(pkt.gen_slot() < t, "system time of at least one slot");
                last_gen = pkt.gen_slot();
            }
            assert_eq!(
                queue.admitted,
                queue.delivered + queue.in_system() as u64,
                "packet conservation violated at slot {t}"
            );
        }
    }

    #[test]
    fn age_resets_on_fresh_delivery_only() {
        let mut tr = AgeTracker::new(1);
        assert_eq!(tr.delta(), 1);
        assert_eq!(tr.latest(), &[0.0]);

        let fresh = Packet { measurement: Measurement { values: vec![9.0], gen_slot: 3 }, admit_slot: 3 };
        tr.update(1, None);
        assert_eq!(tr.delta(), 2);
        tr.update(2, None);
        assert_eq!(tr.delta(), 3);
        tr.update(5, Some(&fresh));
        assert_eq!(tr.delta(), 2, "age = t - gen_slot");
        assert_eq!(tr.latest(), &[9.0]);

        let stale = Packet { measurement: Measurement { values: vec![1.0], gen_slot: 2 }, admit_slot: 2 };
        tr.update(6, Some(&stale));
        assert_eq!(tr.delta(), 3, "stale delivery must not reset the age");
        assert_eq!(tr.latest(), &[9.0]);
    }

    #[test]
    fn age_is_a_sawtooth() {
        let cfg = QueueConfig::new(0.3, 0.6).unwrap();
        let mut rng = substream(8, "q", 1);
        let mut queue = QueueState::new();
        let mut tr = AgeTracker::new(1);
        let mut prev = tr.delta();
        for t in 1..=20_000 {
            let d = queue.step(t, Some(meas(t)), &cfg, &mut rng);
            tr.update(t, d.as_ref());
            let now = tr.delta();
            assert!(
                now == prev + 1 || now < prev + 1 && now >= 1,
                "age must climb by one or reset downward: {prev} -> {now}"
            );
            prev = now;
        }
    }

    #[test]
    fn perfect_link_has_unit_average_age() {
        let cfg = QueueConfig::new(1.0, 1.0).unwrap();
        let mut rng = substream(0, "age", 0);
        let avg = average_age(&cfg, 100_000, &mut rng);
        assert!((avg - 1.0).abs() < 1e-3, "avg {avg}");
    }

    #[test]
    fn average_age_dips_at_interior_admission_rate() {
        // Throttling (p small) starves the receiver; saturating (p -> q)
        // floods the queue. An interior p wins at both service rates.
        for (q, ps) in [(0.3, [0.01, 0.1, 0.297]), (0.5, [0.01, 0.3, 0.499])] {
            let mut means = Vec::new();
            for p in ps {
                let mut acc = 0.0;
                for seed in 0..3u64 {
                    let mut rng = substream(seed, "sweep", (p * 1e4) as u64);
                    acc += average_age(&QueueConfig::new(p, q).unwrap(), 200_000, &mut rng);
                }
                means.push(acc / 3.0);
            }
            assert!(means[1] < means[0] && means[1] < means[2], "no dip at q={q}: {means:?}");
        }
    }

    #[test]
    fn time_varying_draws_respect_bounds() {
        let mut rng = substream(13, "tv", 0);
        let n = 20_000;
        let (mut sum_lq, mut sum_lp) = (0.0, 0.0);
        for _ in 0..n {
            let cfg = sample_time_varying(&mut rng);
            assert!(cfg.p < cfg.q, "p must stay below q");
            assert!(cfg.q > 0.01 - 1e-12 && cfg.q < 1.0);
            assert!(cfg.p > 0.001 - 1e-12);
            sum_lq += cfg.q.log10();
            sum_lp += cfg.p.log10();
        }
        let mean_lq = sum_lq / n as f64;
        let mean_lp = sum_lp / n as f64;
        // E[log10 q] = -1; E[log10 p] = (-3 + E[log10 q]) / 2 = -2.
        assert!((mean_lq + 1.0).abs() < 0.02, "mean log10 q {mean_lq}");
        assert!((mean_lp + 2.0).abs() < 0.03, "mean log10 p {mean_lp}");
    }

    #[test]
    fn noisy_age_is_unbiased_with_known_spread() {
        let mut rng = substream(21, "noisy", 0);
        let a = 50.0;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let v = noisy_age(a, &mut rng);
            assert!(v >= 0.0);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let want_var = a * a / 3.0 + (0.1 * a) * (0.1 * a);
        assert!((mean - a).abs() / a < 0.02, "mean {mean}");
        assert!((var - want_var).abs() / want_var < 0.05, "var {var} want {want_var}");
        assert_eq!(noisy_age(0.0, &mut rng), 0.0);
    }
}
