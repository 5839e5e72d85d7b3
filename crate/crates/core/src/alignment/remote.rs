use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{
    AlignmentError, AlignmentScore, AlignmentScorer, ImageRef, ScoreRequest, ScoreResponse,
};

pub const DEFAULT_MAX_INFLIGHT: usize = 4;

/// Counting semaphore bounding concurrent requests.
struct Inflight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Inflight);

impl Inflight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock().expect("inflight lock poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("inflight lock poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().expect("inflight lock poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for the `POST /score` scoring service.
///
/// 404 maps to [`AlignmentError::UnknownImage`]; transport failures, 503 and
/// any other non-200 status map to [`AlignmentError::ScorerUnavailable`].
pub struct RemoteScorer {
    endpoint: String,
    agent: ureq::Agent,
    inflight: Inflight,
}

impl RemoteScorer {
    pub fn new(base_url: &str, max_inflight: usize) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(60))
            .build();
        Self {
            endpoint: format!("{}/score", base_url.trim_end_matches('/')),
            agent,
            inflight: Inflight {
                limit: max_inflight.max(1),
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post(&self, request: &ScoreRequest) -> Result<ScoreResponse, AlignmentError> {
        let _permit = self.inflight.acquire();
        let resp = self.agent.post(&self.endpoint).send_json(request);
        match resp {
            Ok(r) if r.status() == 200 => r
                .into_json::<ScoreResponse>()
                .map_err(|e| AlignmentError::Protocol(format!("bad response body: {e}"))),
            Ok(r) => Err(AlignmentError::ScorerUnavailable(format!(
                "status {}",
                r.status()
            ))),
            Err(ureq::Error::Status(404, _)) => {
                Err(AlignmentError::UnknownImage(request.image_id.clone()))
            }
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                Err(AlignmentError::ScorerUnavailable(format!(
                    "status {code}: {body}"
                )))
            }
            Err(e) => Err(AlignmentError::ScorerUnavailable(e.to_string())),
        }
    }
}

impl AlignmentScorer for RemoteScorer {
    fn score(&self, image: &ImageRef, text: &str) -> Result<AlignmentScore, AlignmentError> {
        let mut v = self.score_batch(image, &[text.to_owned()])?;
        Ok(v.remove(0))
    }

    fn score_batch(
        &self,
        image: &ImageRef,
        texts: &[String],
    ) -> Result<Vec<AlignmentScore>, AlignmentError> {
        if texts.is_empty() {
            return Err(AlignmentError::InvalidInput("empty text batch".into()));
        }
        let request = ScoreRequest {
            image_id: image.id.clone(),
            texts: texts.to_vec(),
        };
        self.post(&request)?.validate(&request)
    }
}
