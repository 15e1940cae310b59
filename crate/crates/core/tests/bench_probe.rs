use std::time::Instant;

use aoi_lab::laa::{evaluate, save_checkpoint, train, CheckpointMeta, TrainConfig};
use aoi_lab::sim::{AgeMode, ControlMode, EvalConfig, NetworkSetting, ScenarioConfig, SystemKind};

#[test]
#[ignore]
fn probe_training_throughput() {
    let scenario = ScenarioConfig {
        system: SystemKind::Linear,
        network: NetworkSetting::Fixed { p: 0.1, q: 0.3 },
        control: ControlMode::Known,
        age: AgeMode::True,
    };
    for window in [4usize, 8, 16, 32] {
        let cfg = TrainConfig {
            episodes: 1,
            horizon: 2000,
            bptt_window: window,
            update_period: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let (_, report) = train(&scenario, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let per_update = dt / report.updates as f64;
        let full_run = per_update * 15_000.0;
        println!(
            "window {window:>2}: {:>6.2}s for {} updates ({:.1} ms/update) -> 30x2000 run ~{:.1} min, 3 seeds ~{:.1} min",
            dt,
            report.updates,
            per_update * 1e3,
            full_run / 60.0,
            3.0 * full_run / 60.0
        );
    }
}

#[test]
#[ignore]
fn probe_sparse_ablation_windows() {
    let windows: Vec<usize> = std::env::var("ABLATION_WINDOWS")
        .unwrap_or_else(|_| "16,32".into())
        .split(',')
        .map(|w| w.trim().parse().unwrap())
        .collect();
    let seeds: Vec<u64> = std::env::var("ABLATION_SEEDS")
        .unwrap_or_else(|_| "1,2,3".into())
        .split(',')
        .map(|s| s.trim().parse().unwrap())
        .collect();
    let out = std::path::Path::new("/tmp/ablation");
    std::fs::create_dir_all(out).unwrap();
    let eval10 = EvalConfig::default();
    let eval50 = EvalConfig { episodes: 50, ..EvalConfig::default() };
    for window in windows {
        let mut wins10 = 0;
        let mut wins50 = 0;
        for &seed in &seeds {
            let mut rmse10 = [0.0f64; 2];
            let mut rmse50 = [0.0f64; 2];
            for (i, age) in [AgeMode::True, AgeMode::None].into_iter().enumerate() {
                let scenario = ScenarioConfig {
                    system: SystemKind::Linear,
                    network: NetworkSetting::Fixed { p: 0.01, q: 0.3 },
                    control: ControlMode::Networked,
                    age,
                };
                let cfg = TrainConfig { bptt_window: window, seed, ..TrainConfig::default() };
                let t0 = Instant::now();
                let (mut model, report) = train(&scenario, &cfg).unwrap();
                let dt = t0.elapsed().as_secs_f64();
                let n = report.loss_trace.len();
                let decile = n / 10;
                let first: f64 = report.loss_trace[..decile].iter().sum::<f64>() / decile as f64;
                let last: f64 = report.loss_trace[n - decile..].iter().sum::<f64>() / decile as f64;
                rmse10[i] = evaluate(&mut model, &scenario, &eval10).unwrap().rmse_total;
                rmse50[i] = evaluate(&mut model, &scenario, &eval50).unwrap().rmse_total;
                let tag = if i == 0 { "with-age" } else { "no-age  " };
                let meta = CheckpointMeta::new(scenario, cfg);
                save_checkpoint(&model, &meta, &out.join(format!("w{window}_s{seed}_{i}.laa")))
                    .unwrap();
                println!(
                    "window {window:>2} seed {seed} {tag}: rmse10 {:.1} rmse50 {:.1} loss {first:.0}->{last:.0} ({dt:.0}s)",
                    rmse10[i], rmse50[i]
                );
            }
            if rmse10[0] <= rmse10[1] {
                wins10 += 1;
            }
            if rmse50[0] <= rmse50[1] {
                wins50 += 1;
            }
        }
        println!(
            "window {window:>2}: {wins10}/{} seeds favor ages (10 ep), {wins50}/{} (50 ep)",
            seeds.len(),
            seeds.len()
        );
    }
}

#[test]
#[ignore]
fn probe_loss_halving_one_seed() {
    let scenario = ScenarioConfig {
        system: SystemKind::Linear,
        network: NetworkSetting::Fixed { p: 0.1, q: 0.3 },
        control: ControlMode::Known,
        age: AgeMode::True,
    };
    for (window, period) in [(8usize, 4u64), (4, 4)] {
        let cfg = TrainConfig {
            bptt_window: window,
            update_period: period,
            seed: 1,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let (_, report) = train(&scenario, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let n = report.loss_trace.len();
        let decile = n / 10;
        let first: f64 = report.loss_trace[..decile].iter().sum::<f64>() / decile as f64;
        let last: f64 = report.loss_trace[n - decile..].iter().sum::<f64>() / decile as f64;
        println!(
            "window {window} period {period}: {n} updates in {:.0}s, first-decile {first:.2}, last-decile {last:.2}, ratio {:.3}",
            dt,
            last / first
        );
    }
}
