//! Per-session decode trace and its JSONL encoding.
//!
//! A trace file is one `{"session": {...}}` header line, one object per
//! emitted token, and, if the session failed, a final
//! `{"aborted": true, "reason": ...}` line. Field order is the struct
//! declaration order and floats are written in shortest round-trip form, so
//! identical sessions produce identical bytes.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sampler::SamplerSpec;
use crate::alignment::TokenId;
use crate::calibrator::{
    calibrate_logit, intervention_strength, relative_visual_advantage, CalibrationConfig,
    CandidateAssessment, LambdaMode,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative tolerance used when re-deriving recorded quantities.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub config: CalibrationConfig,
    /// True when calibration was disabled for the whole session.
    pub vanilla: bool,
    pub sampler: SamplerSpec,
    pub image_id: String,
    pub world_seed: Option<u64>,
    pub sampler_seed: u64,
    pub max_new_tokens: usize,
    pub schema_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub baseline: f64,
    pub lambda: f64,
    pub hcta: Option<f64>,
    pub sampled_token: TokenId,
    pub sampled_text: String,
    pub calibrated: bool,
    pub candidates: Vec<CandidateAssessment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub aborted: bool,
    pub reason: String,
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    session: &'a SessionHeader,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header { session: SessionHeader },
    Abort(AbortRecord),
    Step(StepRecord),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trace at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("step {found} out of sequence (expected {expected})")]
    StepSequence { expected: usize, found: usize },
    #[error("step {0}: calibrated during warm-up or in a vanilla session")]
    CalibratedTooEarly(usize),
    #[error("step {0}: calibration flag disagrees with hcta/candidates")]
    Inconsistent(usize),
    #[error("step {step}: `{field}` recorded {recorded}, re-derived {derived}")]
    Mismatch {
        step: usize,
        field: &'static str,
        recorded: f64,
        derived: f64,
    },
}

/// Everything recorded about one decode session.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub header: SessionHeader,
    pub steps: Vec<StepRecord>,
    pub abort: Option<String>,
}

fn close(recorded: f64, derived: f64) -> bool {
    recorded == derived
        || (recorded - derived).abs() <= AUDIT_TOLERANCE * recorded.abs().max(derived.abs())
}

impl DecodeTrace {
    pub fn new(header: SessionHeader) -> Self {
        Self {
            header,
            steps: Vec::new(),
            abort: None,
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.abort.is_some()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.steps.iter().map(|s| s.sampled_token).collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        serde_json::to_writer(
            &mut out,
            &HeaderLine {
                session: &self.header,
            },
        )?;
        out.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        if let Some(reason) = &self.abort {
            let rec = AbortRecord {
                aborted: true,
                reason: reason.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, TraceError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut abort = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| TraceError::Malformed {
                line: lineno,
                message,
            };
            if abort.is_some() {
                return Err(malformed("record after abort marker".into()));
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            match (parsed, header.is_some()) {
                (Line::Header { session }, false) => {
                    if session.schema_version != SCHEMA_VERSION {
                        return Err(malformed(format!(
                            "unsupported schema_version {}",
                            session.schema_version
                        )));
                    }
                    header = Some(session);
                }
                (Line::Header { .. }, true) => return Err(malformed("duplicate header".into())),
                (_, false) => return Err(malformed("missing session header".into())),
                (Line::Abort(a), true) if a.aborted => abort = Some(a.reason),
                (Line::Abort(_), true) => {
                    return Err(malformed("abort record without aborted=true".into()))
                }
                (Line::Step(s), true) => steps.push(s),
            }
        }
        let header = header.ok_or(TraceError::Malformed {
            line: 0,
            message: "empty trace".into(),
        })?;
        Ok(Self {
            header,
            steps,
            abort,
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    /// Checks structural invariants and re-derives every recorded
    /// calibration output from its recorded inputs.
    pub fn audit(&self) -> Result<(), AuditError> {
        let cfg = &self.header.config;
        for (i, s) in self.steps.iter().enumerate() {
            let expected = i + 1;
            if s.step != expected {
                return Err(AuditError::StepSequence {
                    expected,
                    found: s.step,
                });
            }
            if s.calibrated && (self.header.vanilla || s.step <= cfg.warmup_steps) {
                return Err(AuditError::CalibratedTooEarly(s.step));
            }
            if s.calibrated != s.hcta.is_some() || s.calibrated == s.candidates.is_empty() {
                return Err(AuditError::Inconsistent(s.step));
            }
            if !s.calibrated {
                continue;
            }
            let mismatch = |field, recorded, derived| AuditError::Mismatch {
                step: s.step,
                field,
                recorded,
                derived,
            };
            let lambda = match cfg.lambda_mode {
                LambdaMode::Adaptive => intervention_strength(cfg.alpha, s.baseline),
                LambdaMode::Constant => cfg.alpha,
            };
            if !close(s.lambda, lambda) {
                return Err(mismatch("lambda", s.lambda, lambda));
            }
            for c in &s.candidates {
                if c.bypassed {
                    if c.multiplier != 1.0 {
                        return Err(mismatch("multiplier", c.multiplier, 1.0));
                    }
                    if c.logit_after != c.logit_before {
                        return Err(mismatch("logit_after", c.logit_after, c.logit_before));
                    }
                    continue;
                }
                let (Some(ccta), Some(ita), Some(comb), Some(rva)) = (c.ccta, c.ita, c.comb, c.rva)
                else {
                    return Err(AuditError::Inconsistent(s.step));
                };
                let comb_d = cfg.comb(ccta.value(), ita.value());
                if !close(comb, comb_d) {
                    return Err(mismatch("comb", comb, comb_d));
                }
                let rva_d =
                    relative_visual_advantage(comb_d, s.baseline, cfg.baseline_clamp_epsilon);
                if !close(rva, rva_d) {
                    return Err(mismatch("rva", rva, rva_d));
                }
                let (mult_d, after_d) =
                    calibrate_logit(c.logit_before, lambda, rva_d, cfg.modulation_mode);
                if !close(c.multiplier, mult_d) {
                    return Err(mismatch("multiplier", c.multiplier, mult_d));
                }
                if !close(c.logit_after, after_d) {
                    return Err(mismatch("logit_after", c.logit_after, after_d));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::sampler::SamplerKind;

    fn header() -> SessionHeader {
        SessionHeader {
            config: CalibrationConfig {
                warmup_steps: 1,
                ..Default::default()
            },
            vanilla: false,
            sampler: SamplerSpec::new(SamplerKind::Greedy, 3),
            image_id: "img-0000".into(),
            world_seed: Some(11),
            sampler_seed: 3,
            max_new_tokens: 4,
            schema_version: SCHEMA_VERSION,
        }
    }

    fn plain(step: usize) -> StepRecord {
        StepRecord {
            step,
            baseline: 0.0,
            lambda: 0.0,
            hcta: None,
            sampled_token: TokenId(2),
            sampled_text: "cat".into(),
            calibrated: false,
            candidates: vec![],
        }
    }

    #[test]
    fn header_line_shape() {
        let t = DecodeTrace::new(header());
        let s = t.to_jsonl_string();
        let v: serde_json::Value = serde_json::from_str(s.lines().next().unwrap()).unwrap();
        let session = &v["session"];
        assert_eq!(session["schema_version"], 1);
        assert_eq!(session["image_id"], "img-0000");
        assert_eq!(session["config"]["alpha"], 3.0);
    }

    #[test]
    fn abort_round_trip() {
        let mut t = DecodeTrace::new(header());
        t.steps.push(plain(1));
        t.abort = Some("scorer unavailable".into());
        let s = t.to_jsonl_string();
        assert!(s.ends_with("{\"aborted\":true,\"reason\":\"scorer unavailable\"}\n"));
        assert_eq!(DecodeTrace::read_jsonl(s.as_bytes()).unwrap(), t);
    }

    #[test]
    fn malformed_inputs() {
        assert!(DecodeTrace::read_jsonl("".as_bytes()).is_err());
        let step = serde_json::to_string(&plain(1)).unwrap();
        assert!(DecodeTrace::read_jsonl(step.as_bytes()).is_err());
        let good = DecodeTrace::new(header()).to_jsonl_string();
        let dup = format!("{good}{good}");
        assert!(DecodeTrace::read_jsonl(dup.as_bytes()).is_err());
        let junk = format!("{good}{{\"step\": \"x\"}}\n");
        assert!(matches!(
            DecodeTrace::read_jsonl(junk.as_bytes()),
            Err(TraceError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn audit_catches_sequence_and_warmup() {
        let mut t = DecodeTrace::new(header());
        t.steps.push(plain(2));
        assert_eq!(
            t.audit(),
            Err(AuditError::StepSequence {
                expected: 1,
                found: 2
            })
        );
        t.steps[0].step = 1;
        t.steps[0].calibrated = true;
        assert_eq!(t.audit(), Err(AuditError::CalibratedTooEarly(1)));
    }

    #[test]
    fn audit_catches_tampered_logit() {
        use crate::alignment::AlignmentScore;
        let mut t = DecodeTrace::new(header());
        t.steps.push(plain(1));
        let cfg = &t.header.config;
        let baseline = 0.3;
        let lambda = intervention_strength(cfg.alpha, baseline);
        let comb = cfg.comb(0.5, 0.4);
        let rva = relative_visual_advantage(comb, baseline, cfg.baseline_clamp_epsilon);
        let (m, after) = calibrate_logit(2.0, lambda, rva, cfg.modulation_mode);
        t.steps.push(StepRecord {
            step: 2,
            baseline,
            lambda,
            hcta: Some(0.3),
            calibrated: true,
            candidates: vec![CandidateAssessment {
                token: TokenId(2),
                text: "cat".into(),
                logit_before: 2.0,
                ccta: Some(AlignmentScore::new(0.5).unwrap()),
                ita: Some(AlignmentScore::new(0.4).unwrap()),
                comb: Some(comb),
                rva: Some(rva),
                multiplier: m,
                logit_after: after,
                bypassed: false,
            }],
            ..plain(2)
        });
        assert_eq!(t.audit(), Ok(()));
        t.steps[1].candidates[0].logit_after += 1e-6;
        assert!(matches!(
            t.audit(),
            Err(AuditError::Mismatch {
                field: "logit_after",
                ..
            })
        ));
    }
}
