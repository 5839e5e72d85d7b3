//! Dynamic logit calibration.
//!
//! Each calibrated step works in two phases:
//!
//! 1. **Assessment.** The recent generated context is scored against the
//!    image (history alignment) and pushed into a [`BaselineWindow`]. Each
//!    top-k candidate is scored twice: appended to the context (contextual
//!    alignment) and alone (isolated alignment). The two are averaged.
//! 2. **Modulation.** The averaged score is compared with the baseline to get
//!    a relative visual advantage, the baseline sets the intervention strength
//!    `alpha * (1 - baseline)^2`, and the logit is scaled by
//!    `exp(strength * sigmoid(advantage))`.

mod scalar;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{AlignmentError, AlignmentScore, AlignmentScorer, ImageRef, TokenId};

pub use scalar::{
    calibrate_logit, combined_score, intervention_strength, relative_visual_advantage, sigmoid,
    ModulationMode,
};
pub use window::BaselineWindow;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("alpha must be finite and >= 0, got {0}")]
    Alpha(f64),
    #[error("window_n must be >= 1")]
    WindowN,
    #[error("top_k must be >= 1")]
    TopK,
    #[error("baseline_clamp_epsilon must be in (0, 1), got {0}")]
    ClampEpsilon(f64),
    #[error("disable_ccta and disable_ita cannot both be set")]
    BothScoresDisabled,
}

/// How the intervention strength evolves over a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    /// Recomputed every step from the current baseline.
    #[default]
    Adaptive,
    /// Fixed at `alpha`, ignoring the baseline.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Maximum intervention strength.
    pub alpha: f64,
    /// Size of both the context window and the baseline queue.
    pub window_n: usize,
    /// Candidate pool size.
    pub top_k: usize,
    /// Generated tokens emitted before calibration starts.
    pub warmup_steps: usize,
    pub baseline_clamp_epsilon: f64,
    pub modulation_mode: ModulationMode,
    /// Ablation: use the isolated score alone as the combined score.
    pub disable_ccta: bool,
    /// Ablation: use the contextual score alone as the combined score.
    pub disable_ita: bool,
    pub lambda_mode: LambdaMode,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            window_n: 8,
            top_k: 50,
            warmup_steps: 3,
            baseline_clamp_epsilon: 1e-6,
            modulation_mode: ModulationMode::Literal,
            disable_ccta: false,
            disable_ita: false,
            lambda_mode: LambdaMode::Adaptive,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if self.window_n == 0 {
            return Err(ConfigError::WindowN);
        }
        if self.top_k == 0 {
            return Err(ConfigError::TopK);
        }
        let eps = self.baseline_clamp_epsilon;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ConfigError::ClampEpsilon(eps));
        }
        if self.disable_ccta && self.disable_ita {
            return Err(ConfigError::BothScoresDisabled);
        }
        Ok(())
    }

    /// Intervention strength for `baseline` under the configured lambda mode.
    pub fn lambda(&self, baseline: f64) -> f64 {
        match self.lambda_mode {
            LambdaMode::Adaptive => intervention_strength(self.alpha, baseline),
            LambdaMode::Constant => self.alpha,
        }
    }

    /// The combined score under the configured ablations.
    pub fn comb(&self, ccta: f64, ita: f64) -> f64 {
        if self.disable_ccta {
            ita
        } else if self.disable_ita {
            ccta
        } else {
            combined_score(ccta, ita)
        }
    }
}

/// A top-k entry handed to the calibrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub token: TokenId,
    pub text: String,
    pub logit: f64,
    /// Structural tokens (EOS, padding) that are never scored.
    pub special: bool,
}

impl Candidate {
    pub fn is_bypassed(&self) -> bool {
        self.special || self.text.trim().is_empty()
    }
}

/// Full record of one candidate's assessment and calibration.
///
/// Score fields are `None` for bypassed candidates, which keep multiplier 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAssessment {
    pub token: TokenId,
    pub text: String,
    pub logit_before: f64,
    pub ccta: Option<AlignmentScore>,
    pub ita: Option<AlignmentScore>,
    pub comb: Option<f64>,
    pub rva: Option<f64>,
    pub multiplier: f64,
    pub logit_after: f64,
    pub bypassed: bool,
}

impl CandidateAssessment {
    fn bypassed(c: &Candidate) -> Self {
        Self {
            token: c.token,
            text: c.text.clone(),
            logit_before: c.logit,
            ccta: None,
            ita: None,
            comb: None,
            rva: None,
            multiplier: 1.0,
            logit_after: c.logit,
            bypassed: true,
        }
    }
}

/// Text whose alignment measures a candidate in context: the context and the
/// candidate joined by a single space.
pub fn contextual_text(context: &str, token_text: &str) -> String {
    if context.is_empty() {
        token_text.to_owned()
    } else {
        format!("{context} {token_text}")
    }
}

/// Assesses and calibrates a candidate pool against a fixed baseline and
/// intervention strength.
///
/// All contextual and isolated queries go out as one batch: contextual texts
/// first, then isolated texts, in candidate order. Bypassed candidates are
/// not queried. A scorer failure fails the whole pool.
pub fn assess_candidates<S: AlignmentScorer + ?Sized>(
    scorer: &S,
    image: &ImageRef,
    context: &str,
    candidates: &[Candidate],
    baseline: f64,
    lambda: f64,
    cfg: &CalibrationConfig,
) -> Result<Vec<CandidateAssessment>, AlignmentError> {
    let active: Vec<&Candidate> = candidates.iter().filter(|c| !c.is_bypassed()).collect();
    let scores = if active.is_empty() {
        Vec::new()
    } else {
        let mut texts: Vec<String> = active
            .iter()
            .map(|c| contextual_text(context, &c.text))
            .collect();
        texts.extend(active.iter().map(|c| c.text.clone()));
        let scores = scorer.score_batch(image, &texts)?;
        if scores.len() != texts.len() {
            return Err(AlignmentError::Protocol(format!(
                "scorer returned {} scores for {} texts",
                scores.len(),
                texts.len()
            )));
        }
        scores
    };

    let m = active.len();
    let mut next = 0usize;
    let out = candidates
        .iter()
        .map(|c| {
            if c.is_bypassed() {
                return CandidateAssessment::bypassed(c);
            }
            let (ccta, ita) = (scores[next], scores[m + next]);
            next += 1;
            let comb = cfg.comb(ccta.value(), ita.value());
            let rva = relative_visual_advantage(comb, baseline, cfg.baseline_clamp_epsilon);
            let (multiplier, logit_after) =
                calibrate_logit(c.logit, lambda, rva, cfg.modulation_mode);
            CandidateAssessment {
                token: c.token,
                text: c.text.clone(),
                logit_before: c.logit,
                ccta: Some(ccta),
                ita: Some(ita),
                comb: Some(comb),
                rva: Some(rva),
                multiplier,
                logit_after,
                bypassed: false,
            }
        })
        .collect();
    Ok(out)
}

/// Result of one calibrated step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCalibration {
    pub hcta: f64,
    pub baseline: f64,
    pub lambda: f64,
    pub assessments: Vec<CandidateAssessment>,
}

/// Per-session calibration state. Not shared between sessions.
#[derive(Debug, Clone)]
pub struct Calibrator {
    cfg: CalibrationConfig,
    window: BaselineWindow,
}

impl Calibrator {
    pub fn new(cfg: CalibrationConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let window = BaselineWindow::new(cfg.window_n);
        Ok(Self { cfg, window })
    }

    pub fn config(&self) -> &CalibrationConfig {
        &self.cfg
    }

    pub fn window(&self) -> &BaselineWindow {
        &self.window
    }

    pub fn baseline(&self) -> f64 {
        self.window.baseline()
    }

    /// Scores the context, updates the baseline with it, then assesses the
    /// candidates against the updated baseline.
    pub fn step<S: AlignmentScorer + ?Sized>(
        &mut self,
        scorer: &S,
        image: &ImageRef,
        context: &str,
        candidates: &[Candidate],
    ) -> Result<StepCalibration, AlignmentError> {
        let hcta = scorer.score(image, context)?.value();
        self.window.push(hcta);
        let baseline = self.window.baseline();
        let lambda = self.cfg.lambda(baseline);
        let assessments = assess_candidates(
            scorer, image, context, candidates, baseline, lambda, &self.cfg,
        )?;
        Ok(StepCalibration {
            hcta,
            baseline,
            lambda,
            assessments,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    /// Scores a text by its length, and counts batch calls.
    struct LengthScorer {
        batches: AtomicUsize,
    }

    impl AlignmentScorer for LengthScorer {
        fn score(&self, _: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
            Ok(AlignmentScore::from_cosine(
                (text.len() as f64 / 20.0).min(1.0),
            ))
        }

        fn score_batch(
            &self,
            image: &ImageRef,
            texts: &[String],
        ) -> Result<Vec<AlignmentScore>, AlignmentError> {
            self.batches.fetch_add(1, Ordering::SeqCst);
            texts.iter().map(|t| self.score(image, t)).collect()
        }
    }

    fn cand(id: u32, text: &str, logit: f64) -> Candidate {
        Candidate {
            token: TokenId(id),
            text: text.into(),
            logit,
            special: false,
        }
    }

    #[test]
    fn default_config_matches_reference_settings() {
        let c = CalibrationConfig::default();
        assert_eq!(
            (c.alpha, c.window_n, c.top_k, c.warmup_steps),
            (3.0, 8, 50, 3)
        );
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut CalibrationConfig)| {
            let mut c = CalibrationConfig::default();
            f(&mut c);
            c.validate()
        };
        assert_eq!(bad(|c| c.alpha = -1.0), Err(ConfigError::Alpha(-1.0)));
        assert_eq!(bad(|c| c.window_n = 0), Err(ConfigError::WindowN));
        assert_eq!(bad(|c| c.top_k = 0), Err(ConfigError::TopK));
        assert_eq!(
            bad(|c| c.baseline_clamp_epsilon = 1.0),
            Err(ConfigError::ClampEpsilon(1.0))
        );
        assert_eq!(
            bad(|c| {
                c.disable_ccta = true;
                c.disable_ita = true
            }),
            Err(ConfigError::BothScoresDisabled)
        );
    }

    #[test]
    fn all_bypassed_pool_is_untouched_and_unscored() {
        let scorer = LengthScorer {
            batches: AtomicUsize::new(0),
        };
        let eos = Candidate {
            token: TokenId(0),
            text: String::new(),
            logit: 4.0,
            special: true,
        };
        let ws = cand(1, "  ", -1.0);
        let out = assess_candidates(
            &scorer,
            &ImageRef::new("x"),
            "a cat",
            &[eos, ws],
            0.2,
            2.0,
            &CalibrationConfig::default(),
        )
        .unwrap();
        assert_eq!(scorer.batches.load(Ordering::SeqCst), 0);
        for a in &out {
            assert!(a.bypassed);
            assert_eq!(a.multiplier, 1.0);
            assert_eq!(a.logit_after, a.logit_before);
        }
    }

    #[test]
    fn one_batch_per_pool() {
        let scorer = LengthScorer {
            batches: AtomicUsize::new(0),
        };
        let pool = [
            cand(1, "cat", 1.0),
            cand(2, "elephant", 1.0),
            cand(3, "a", 0.5),
        ];
        let out = assess_candidates(
            &scorer,
            &ImageRef::new("x"),
            "on the",
            &pool,
            0.3,
            1.0,
            &CalibrationConfig::default(),
        )
        .unwrap();
        assert_eq!(scorer.batches.load(Ordering::SeqCst), 1);
        assert_eq!(out.len(), 3);
        // ccta is the score of "on the <tok>", ita of "<tok>".
        assert_eq!(out[0].ccta.unwrap().value(), 10.0 / 20.0);
        assert_eq!(out[0].ita.unwrap().value(), 3.0 / 20.0);
    }

    #[test]
    fn grounded_candidate_wins_tie() {
        let scorer = LengthScorer {
            batches: AtomicUsize::new(0),
        };
        // Longer text scores higher under LengthScorer, so "elephant" is the grounded one.
        let pool = [cand(1, "elephant", 2.0), cand(2, "ox", 2.0)];
        let out = assess_candidates(
            &scorer,
            &ImageRef::new("x"),
            "the",
            &pool,
            0.3,
            1.5,
            &CalibrationConfig::default(),
        )
        .unwrap();
        assert!(out[0].comb.unwrap() > 0.3 && out[1].comb.unwrap() < 0.3);
        assert!(out[0].logit_after > out[1].logit_after);
    }

    #[test]
    fn ablation_comb() {
        let mut c = CalibrationConfig::default();
        assert_eq!(c.comb(0.4, 0.2), combined_score(0.4, 0.2));
        c.disable_ccta = true;
        assert_eq!(c.comb(0.4, 0.2), 0.2);
        c.disable_ccta = false;
        c.disable_ita = true;
        assert_eq!(c.comb(0.4, 0.2), 0.4);
    }

    #[test]
    fn step_pushes_before_reading_baseline() {
        let scorer = LengthScorer {
            batches: AtomicUsize::new(0),
        };
        let mut cal = Calibrator::new(CalibrationConfig::default()).unwrap();
        let s = cal
            .step(&scorer, &ImageRef::new("x"), "abcde", &[cand(1, "a", 1.0)])
            .unwrap();
        assert_eq!(s.hcta, 0.25);
        assert_eq!(s.baseline, 0.25);
        assert_eq!(s.lambda, intervention_strength(3.0, 0.25));
    }

    #[test]
    fn constant_lambda_ignores_baseline() {
        let scorer = LengthScorer {
            batches: AtomicUsize::new(0),
        };
        let cfg = CalibrationConfig {
            lambda_mode: LambdaMode::Constant,
            ..Default::default()
        };
        let mut cal = Calibrator::new(cfg).unwrap();
        let img = ImageRef::new("x");
        let first = cal
            .step(&scorer, &img, "abcde", &[cand(1, "a", 1.0)])
            .unwrap();
        let second = cal
            .step(&scorer, &img, "abcdefghijklmno", &[cand(1, "a", 1.0)])
            .unwrap();
        assert_ne!(first.baseline, second.baseline);
        assert_eq!((first.lambda, second.lambda), (3.0, 3.0));
    }

    #[test]
    fn contextual_text_joins_with_space() {
        assert_eq!(contextual_text("", "cat"), "cat");
        assert_eq!(contextual_text("a big", "cat"), "a big cat");
    }
}
