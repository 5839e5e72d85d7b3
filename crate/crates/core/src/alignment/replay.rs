use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AlignmentError, AlignmentScore, AlignmentScorer, ImageRef};

/// One line of a replay score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub image_id: String,
    pub text: String,
    pub score: f64,
}

/// Answers queries from previously recorded scores, keyed on the exact
/// `(image_id, text)` pair.
#[derive(Debug, Clone, Default)]
pub struct ReplayScorer {
    scores: HashMap<(String, String), AlignmentScore>,
}

impl ReplayScorer {
    pub fn from_records(
        records: impl IntoIterator<Item = ReplayRecord>,
    ) -> Result<Self, AlignmentError> {
        let mut scores = HashMap::new();
        for r in records {
            let s = AlignmentScore::new(r.score)?;
            scores.insert((r.image_id, r.text), s);
        }
        Ok(Self { scores })
    }

    /// Reads JSONL; blank lines are skipped.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, AlignmentError> {
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| AlignmentError::InvalidInput(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| AlignmentError::InvalidInput(format!("replay line {}: {e}", n + 1)))?;
            records.push(rec);
        }
        Self::from_records(records)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, AlignmentError> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| {
            AlignmentError::InvalidInput(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl AlignmentScorer for ReplayScorer {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
        // The borrowed tuple lookup needs owned keys; queries are short.
        self.scores
            .get(&(image.id.clone(), text.to_owned()))
            .copied()
            .ok_or_else(|| AlignmentError::ReplayMiss {
                image_id: image.id.clone(),
                text: text.to_owned(),
            })
    }
}

/// Wraps a scorer and records every answered query, so a session can later
/// be replayed without the original scorer.
pub struct RecordingScorer<S> {
    inner: S,
    log: Mutex<Vec<ReplayRecord>>,
}

impl<S: AlignmentScorer> RecordingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<ReplayRecord> {
        self.log.lock().expect("recording log poisoned").clone()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in self.log.lock().expect("recording log poisoned").iter() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn record(&self, image: &ImageRef, texts: &[String], scores: &[AlignmentScore]) {
        let mut log = self.log.lock().expect("recording log poisoned");
        log.extend(texts.iter().zip(scores).map(|(t, s)| ReplayRecord {
            image_id: image.id.clone(),
            text: t.clone(),
            score: s.value(),
        }));
    }
}

impl<S: AlignmentScorer> AlignmentScorer for RecordingScorer<S> {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
        let s = self.inner.score(image, text)?;
        self.record(image, &[text.to_owned()], &[s]);
        Ok(s)
    }

    fn score_batch(
        &self,
        image: &ImageRef,
        texts: &[String],
    ) -> Result<Vec<AlignmentScore>, AlignmentError> {
        let scores = self.inner.score_batch(image, texts)?;
        self.record(image, texts, &scores);
        Ok(scores)
    }
}
