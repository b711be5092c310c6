use serde::{Deserialize, Serialize};

use super::DebateConfig;

/// What the expansion and termination tests look at after a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSignals {
    /// 1-based round number.
    pub round: u32,
    /// Index into the candidate ladder.
    pub rung: usize,
    /// Top aggregate total in the current subset.
    pub s1: f64,
    /// Top-1 minus Top-2 aggregate total in the current subset.
    pub gap: f64,
    /// Specialists voting `align = true` for the aggregate Top-1.
    pub v_agree: u32,
    /// Specialists with a non-abstain verdict for the aggregate Top-1.
    pub v: u32,
    pub judge: bool,
}

impl RoundSignals {
    fn ratio(&self) -> Option<f64> {
        (self.v > 0).then(|| self.v_agree as f64 / self.v as f64)
    }
}

/// `s1 < delta2 and v_agree/v <= 0.5 and not judge`, never on the last rung.
/// With no votes the ratio clause holds.
pub fn should_expand(s: &RoundSignals, cfg: &DebateConfig) -> bool {
    let last_rung = s.rung + 1 >= cfg.ladder.len();
    let weak_votes = s.ratio().is_none_or(|r| r <= 0.5);
    !last_rung && s.s1 < cfg.delta2 && weak_votes && !s.judge
}

/// `((gap > delta1 or v_agree/v > 0.5) and judge) or round = n`.
/// With no votes the ratio clause fails.
pub fn should_terminate(s: &RoundSignals, cfg: &DebateConfig) -> bool {
    let strong_votes = s.ratio().is_some_and(|r| r > 0.5);
    ((s.gap > cfg.delta1 || strong_votes) && s.judge) || s.round >= cfg.max_rounds
}
