use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::TokenId;

/// Sampling strategy applied to the (possibly calibrated) logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerKind {
    Greedy,
    /// Top-p over the full vocabulary. `p = 1` is plain multinomial sampling.
    Nucleus {
        p: f64,
    },
    TopK {
        k: usize,
    },
    TemperatureTopK {
        temperature: f64,
        k: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    #[serde(flatten)]
    pub kind: SamplerKind,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn greedy() -> Self {
        Self::new(SamplerKind::Greedy, 0)
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            SamplerKind::Greedy => Ok(()),
            SamplerKind::Nucleus { p } if p > 0.0 && p <= 1.0 => Ok(()),
            SamplerKind::Nucleus { p } => Err(format!("nucleus p must be in (0, 1], got {p}")),
            SamplerKind::TopK { k } if k >= 1 => Ok(()),
            SamplerKind::TopK { .. } => Err("top-k k must be >= 1".into()),
            SamplerKind::TemperatureTopK { temperature, k } => {
                if !(temperature.is_finite() && temperature > 0.0) {
                    Err(format!("temperature must be > 0, got {temperature}"))
                } else if k == 0 {
                    Err("top-k k must be >= 1".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerKind::Greedy => write!(f, "greedy"),
            SamplerKind::Nucleus { p } => write!(f, "nucleus:{p}"),
            SamplerKind::TopK { k } => write!(f, "topk:{k}"),
            SamplerKind::TemperatureTopK { temperature, k } => {
                write!(f, "temp:{temperature},topk:{k}")
            }
        }
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    /// Parses `greedy`, `nucleus:<p>`, `topk:<k>` or `temp:<t>,topk:<k>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid sampler `{s}`");
        let kind = if s == "greedy" {
            SamplerKind::Greedy
        } else if let Some(p) = s.strip_prefix("nucleus:") {
            SamplerKind::Nucleus {
                p: p.parse().map_err(|_| bad())?,
            }
        } else if let Some(k) = s.strip_prefix("topk:") {
            SamplerKind::TopK {
                k: k.parse().map_err(|_| bad())?,
            }
        } else if let Some(rest) = s.strip_prefix("temp:") {
            let (t, k) = rest.split_once(",topk:").ok_or_else(bad)?;
            SamplerKind::TemperatureTopK {
                temperature: t.parse().map_err(|_| bad())?,
                k: k.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        SamplerSpec::new(kind, 0).validate()?;
        Ok(kind)
    }
}

/// Indices of `values` ordered by value descending, ties by index ascending.
pub fn ranked_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// The `k` highest entries of `values` under the [`ranked_indices`] order.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx = ranked_indices(values);
    idx.truncate(k);
    idx
}

/// Argmax with lowest-index tie-break.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Unnormalized softmax weights of the selected logits, max-shifted.
fn softmax_weights(logits: &[f64], selected: &[usize]) -> Vec<f64> {
    let max = selected
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    selected.iter().map(|&i| (logits[i] - max).exp()).collect()
}

/// Seeded sampler. One instance per decode session.
pub struct Sampler {
    spec: SamplerSpec,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(spec: SamplerSpec) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        }
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    pub fn sample(&mut self, logits: &[f64]) -> TokenId {
        assert!(!logits.is_empty(), "cannot sample from an empty vocabulary");
        let idx = match self.spec.kind {
            SamplerKind::Greedy => argmax(logits),
            SamplerKind::TopK { k } => {
                let pool = top_k_indices(logits, k);
                let w = softmax_weights(logits, &pool);
                pool[self.draw(&w)]
            }
            SamplerKind::TemperatureTopK { temperature, k } => {
                let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
                let pool = top_k_indices(&scaled, k);
                let w = softmax_weights(&scaled, &pool);
                pool[self.draw(&w)]
            }
            SamplerKind::Nucleus { p } => {
                let order = ranked_indices(logits);
                let w = softmax_weights(logits, &order);
                let keep = if p >= 1.0 {
                    order.len()
                } else {
                    let total: f64 = w.iter().sum();
                    let mut cum = 0.0;
                    let mut n = 0;
                    for x in &w {
                        cum += x / total;
                        n += 1;
                        if cum >= p {
                            break;
                        }
                    }
                    n
                };
                order[self.draw(&w[..keep])]
            }
        };
        TokenId(idx as u32)
    }

    /// Draws a position in `weights` proportionally to its weight, consuming
    /// exactly one uniform from the generator.
    fn draw(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let target = self.rng.gen::<f64>() * total;
        let mut cum = 0.0;
        for (i, w) in weights.iter().enumerate() {
            cum += w;
            if target < cum {
                return i;
            }
        }
        weights.len() - 1
    }
}
