//! Evaluation adapter: drives a trained model through fresh episodes under
//! the shared simulator and scores it with the common RMSE accumulator.

use rand_chacha::ChaCha8Rng;

use super::{build_input, LaaModel};
use crate::sim::{
    evaluate_with, AgeMode, ControlMode, EvalConfig, EvalResult, ScenarioConfig, SlotEstimator,
    SlotOutcome,
};
use crate::{Error, Result};

pub struct LaaEstimator<'a> {
    model: &'a mut LaaModel,
    control: ControlMode,
    age: AgeMode,
}

impl<'a> LaaEstimator<'a> {
    pub fn new(model: &'a mut LaaModel, control: ControlMode, age: AgeMode) -> Result<Self> {
        let wants_ages = age != AgeMode::None;
        if wants_ages != model.with_ages {
            return Err(Error::InvalidConfig(format!(
                "model was built {} age inputs but evaluation age mode is '{}'",
                if model.with_ages { "with" } else { "without" },
                age.name()
            )));
        }
        Ok(LaaEstimator { model, control, age })
    }
}

impl SlotEstimator for LaaEstimator<'_> {
    fn reset(&mut self, _episode: u64) {
        self.model.reset_episode();
    }

    fn estimate(&mut self, outcome: &SlotOutcome, noisy_rng: &mut ChaCha8Rng) -> Vec<f64> {
        let input = build_input(
            outcome,
            self.model.prev_estimate(),
            self.control,
            self.age,
            noisy_rng,
        );
        self.model.estimate(&input).expect("input layout matches the model").to_vec()
    }
}

/// Score a model over fresh episodes of `scenario`.
pub fn evaluate(
    model: &mut LaaModel,
    scenario: &ScenarioConfig,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    if scenario.system != model.system {
        return Err(Error::InvalidConfig(format!(
            "model is for '{}' but scenario is '{}'",
            model.system.name(),
            scenario.system.name()
        )));
    }
    let mut est = LaaEstimator::new(model, scenario.control, scenario.age)?;
    evaluate_with(&mut est, scenario, cfg)
}
