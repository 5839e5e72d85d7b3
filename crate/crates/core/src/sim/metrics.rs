use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::world::{DriftWorld, TokenKind};
use super::WorldError;
use crate::alignment::TokenId;
use crate::decoder::DecodeTrace;

/// Mention and sentence counts for one image (or the whole batch).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MentionCounts {
    pub captions: usize,
    pub mentions_total: usize,
    pub mentions_hallucinated: usize,
    pub sentences_total: usize,
    pub sentences_hallucinated: usize,
}

impl MentionCounts {
    fn add(&mut self, other: &MentionCounts) {
        self.captions += other.captions;
        self.mentions_total += other.mentions_total;
        self.mentions_hallucinated += other.mentions_hallucinated;
        self.sentences_total += other.sentences_total;
        self.sentences_hallucinated += other.sentences_hallucinated;
    }

    /// Hallucinated mentions over all mentions; 0 without mentions.
    pub fn c_i(&self) -> f64 {
        ratio(self.mentions_hallucinated, self.mentions_total)
    }

    /// Hallucinated sentences over all sentences; 0 without sentences.
    pub fn c_s(&self) -> f64 {
        ratio(self.sentences_hallucinated, self.sentences_total)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub c_i: f64,
    pub c_s: f64,
    #[serde(flatten)]
    pub counts: MentionCounts,
}

/// Object-hallucination rates over synthetic concept mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub c_i: f64,
    pub c_s: f64,
    pub mentions_total: usize,
    pub mentions_hallucinated: usize,
    pub sentences_total: usize,
    pub sentences_hallucinated: usize,
    pub captions: usize,
    /// Sorted by image id.
    pub per_image: Vec<ImageReport>,
}

/// Counts one caption against the ground truth of `image_id`.
pub fn count_caption(
    world: &DriftWorld,
    image_id: &str,
    tokens: &[TokenId],
) -> Result<MentionCounts, WorldError> {
    let im = world
        .image(image_id)
        .ok_or_else(|| WorldError::UnknownImage(image_id.to_owned()))?;
    let delimiter = world.delimiter();
    let mut c = MentionCounts {
        captions: 1,
        ..Default::default()
    };
    let mut sentence_open = false;
    let mut sentence_bad = false;
    let close = |open: &mut bool, bad: &mut bool, c: &mut MentionCounts| {
        if *open {
            c.sentences_total += 1;
            c.sentences_hallucinated += usize::from(*bad);
        }
        *open = false;
        *bad = false;
    };
    for &t in tokens {
        let kind = world.kind(t).ok_or(WorldError::UnknownToken(t))?;
        if t == delimiter {
            close(&mut sentence_open, &mut sentence_bad, &mut c);
            continue;
        }
        if kind == TokenKind::Eos {
            continue;
        }
        sentence_open = true;
        if kind.is_concept() {
            c.mentions_total += 1;
            if !im.present.contains(&t) {
                c.mentions_hallucinated += 1;
                sentence_bad = true;
            }
        }
    }
    close(&mut sentence_open, &mut sentence_bad, &mut c);
    Ok(c)
}

/// Synthetic CHAIR-style evaluation of `(image_id, tokens)` captions.
///
/// A mention is any concept token; it is hallucinated when the concept is not
/// among the image's present concepts. Sentences are maximal non-empty runs
/// between `.` delimiters, EOS ignored.
pub fn evaluate(
    captions: &[(String, Vec<TokenId>)],
    world: &DriftWorld,
) -> Result<HallucinationReport, WorldError> {
    let mut per: BTreeMap<&str, MentionCounts> = BTreeMap::new();
    for (image_id, tokens) in captions {
        let c = count_caption(world, image_id, tokens)?;
        per.entry(image_id.as_str()).or_default().add(&c);
    }
    let mut total = MentionCounts::default();
    let per_image = per
        .into_iter()
        .map(|(id, counts)| {
            total.add(&counts);
            ImageReport {
                image_id: id.to_owned(),
                c_i: counts.c_i(),
                c_s: counts.c_s(),
                counts,
            }
        })
        .collect();
    Ok(HallucinationReport {
        c_i: total.c_i(),
        c_s: total.c_s(),
        mentions_total: total.mentions_total,
        mentions_hallucinated: total.mentions_hallucinated,
        sentences_total: total.sentences_total,
        sentences_hallucinated: total.sentences_hallucinated,
        captions: total.captions,
        per_image,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub ccta: f64,
    pub baseline: f64,
}

/// Contextual alignment of each sampled token alongside the baseline, for
/// every calibrated step whose sampled token was scored in the pool.
pub fn ccta_trajectory(trace: &DecodeTrace) -> Result<Vec<TrajectoryPoint>, WorldError> {
    check_well_formed(trace)?;
    Ok(trace
        .steps
        .iter()
        .filter(|s| s.calibrated)
        .filter_map(|s| {
            let c = s
                .candidates
                .iter()
                .find(|c| c.token == s.sampled_token && !c.bypassed)?;
            Some(TrajectoryPoint {
                step: s.step,
                ccta: c.ccta?.value(),
                baseline: s.baseline,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub step: usize,
    pub rank: usize,
    pub token: String,
    pub logit_before: f64,
    pub ccta: Option<f64>,
    pub ita: Option<f64>,
}

/// Per-step candidate pools ranked by original logit (ties by token id).
pub fn candidate_snapshots(trace: &DecodeTrace) -> Result<Vec<SnapshotRow>, WorldError> {
    check_well_formed(trace)?;
    let mut rows = Vec::new();
    for s in trace.steps.iter().filter(|s| s.calibrated) {
        let mut pool: Vec<_> = s.candidates.iter().collect();
        pool.sort_by(|a, b| {
            b.logit_before
                .partial_cmp(&a.logit_before)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.token.cmp(&b.token))
        });
        rows.extend(pool.into_iter().enumerate().map(|(r, c)| SnapshotRow {
            step: s.step,
            rank: r + 1,
            token: c.text.clone(),
            logit_before: c.logit_before,
            ccta: c.ccta.map(|x| x.value()),
            ita: c.ita.map(|x| x.value()),
        }));
    }
    Ok(rows)
}

fn check_well_formed(trace: &DecodeTrace) -> Result<(), WorldError> {
    trace
        .audit()
        .map_err(|e| WorldError::MalformedTrace(e.to_string()))
}

/// Writes `step,ccta,baseline`.
pub fn write_trajectory_csv(points: &[TrajectoryPoint], out: impl Write) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(["step", "ccta", "baseline"])?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `step,rank,token,logit_before,ccta,ita`.
pub fn write_snapshots_csv(rows: &[SnapshotRow], out: impl Write) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(["step", "rank", "token", "logit_before", "ccta", "ita"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
