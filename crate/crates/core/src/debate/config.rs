use serde::{Deserialize, Serialize};

use super::DebateError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebateConfig {
    /// Gap threshold shared by the uncertain-set test and early termination.
    pub delta1: f64,
    /// Top-1 score below which the candidate ladder may expand.
    pub delta2: f64,
    pub max_rounds: u32,
    pub ladder: Vec<usize>,
    pub w_sim: f64,
    pub w_agents: f64,
    pub judge_delta_clamp: f64,
    pub ldv_confidence_floor: f64,
    pub compression_budget: f64,
    pub compression_floor_tokens: u64,
    /// Re-asks after an unparseable reply before substituting abstentions.
    pub max_retries: u32,
    /// Worker threads for per-entity fan-out; 0 picks the machine default.
    pub workers: usize,
}

impl Default for DebateConfig {
    fn default() -> Self {
        Self {
            delta1: 0.05,
            delta2: 0.5,
            max_rounds: 3,
            ladder: vec![5, 10, 15, 20],
            w_sim: 0.3,
            w_agents: 0.7,
            judge_delta_clamp: 0.2,
            ldv_confidence_floor: 0.6,
            compression_budget: 0.15,
            compression_floor_tokens: 32,
            max_retries: 2,
            workers: 0,
        }
    }
}

impl DebateConfig {
    pub fn validate(&self) -> Result<(), DebateError> {
        let bad = |m: String| Err(DebateError::Config(m));
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.delta1) || !finite_nonneg(self.delta2) {
            return bad(format!("thresholds must be finite and >= 0 (delta1={}, delta2={})", self.delta1, self.delta2));
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if self.ladder.is_empty() || self.ladder[0] < 2 {
            return bad("ladder must start at 2 or more candidates".into());
        }
        if self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("ladder {:?} must be strictly increasing", self.ladder));
        }
        if !finite_nonneg(self.w_sim) || !finite_nonneg(self.w_agents) {
            return bad("weights must be finite and >= 0".into());
        }
        if !finite_nonneg(self.judge_delta_clamp) {
            return bad("judge_delta_clamp must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.ldv_confidence_floor) {
            return bad("ldv_confidence_floor must lie in [0, 1]".into());
        }
        if !(self.compression_budget > 0.0 && self.compression_budget <= 1.0) {
            return bad("compression_budget must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn max_ladder(&self) -> usize {
        *self.ladder.last().expect("validated ladder")
    }
}
