//! Scalar building blocks of the calibration chain. All pure.

use serde::{Deserialize, Serialize};

/// How the calibrated logit is formed from the intervention factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationMode {
    /// `logit * exp(lambda * sigmoid(rva))`.
    #[default]
    Literal,
    /// `logit + lambda * sigmoid(rva)`; rank-equivalent for logits of any sign.
    Shift,
}

impl std::str::FromStr for ModulationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "shift" => Ok(Self::Shift),
            other => Err(format!(
                "unknown modulation mode `{other}` (expected literal|shift)"
            )),
        }
    }
}

/// Mean of the contextual and isolated alignment scores.
pub fn combined_score(ccta: f64, ita: f64) -> f64 {
    (ccta + ita) / 2.0
}

/// Improvement of `comb` over the baseline, normalized by the remaining
/// headroom `1 - baseline`. The baseline is clamped to `1 - clamp_eps` so the
/// denominator stays positive.
pub fn relative_visual_advantage(comb: f64, baseline: f64, clamp_eps: f64) -> f64 {
    let b = baseline.min(1.0 - clamp_eps);
    (comb - b) / (1.0 - b)
}

/// `alpha * (1 - baseline)^2`.
pub fn intervention_strength(alpha: f64, baseline: f64) -> f64 {
    let gap = 1.0 - baseline;
    alpha * (gap * gap)
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Returns `(multiplier, logit_after)` where the multiplier is
/// `exp(lambda * sigmoid(rva))`.
pub fn calibrate_logit(logit: f64, lambda: f64, rva: f64, mode: ModulationMode) -> (f64, f64) {
    let gate = lambda * sigmoid(rva);
    let multiplier = gate.exp();
    let after = match mode {
        ModulationMode::Literal => logit * multiplier,
        ModulationMode::Shift => logit + gate,
    };
    (multiplier, after)
}
