//! Remote knowledge-base client.
//!
//! Talks JSON over HTTP to a captioner (`POST /caption`) and a generator
//! (`POST /generate`). The client never blocks indefinitely: every request
//! carries a global timeout, transient failures (socket errors, timeouts,
//! 5xx statuses) are retried within a bounded budget, and everything else
//! surfaces as a typed error. A mutex/condvar gate caps the number of
//! requests in flight across threads sharing one client.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{
    mock, CaptionRecord, CaptionSource, ImageRecord, KbError, KnowledgeBase, Provenance, Result,
};

/// Captioner endpoint path.
pub const CAPTION_PATH: &str = "/caption";

/// Generator endpoint path.
pub const GENERATE_PATH: &str = "/generate";

/// Connection and retry settings for [`RemoteKb`].
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Service root, e.g. `http://127.0.0.1:8080`; endpoint paths are
    /// appended to it.
    pub base_url: String,
    /// Optional bearer token sent as `Authorization: Bearer <token>`.
    pub bearer_token: Option<String>,
    /// Global per-request timeout (connect + transfer).
    pub timeout: Duration,
    /// Extra attempts after the first on transient failures.
    pub retries: u32,
    /// Pause between attempts.
    pub retry_backoff: Duration,
    /// Maximum concurrent requests through one client.
    pub max_in_flight: usize,
    /// Seed forwarded to the generator service.
    pub generate_seed: u64,
    /// Diffusion step count forwarded to the generator service.
    pub generate_steps: u32,
}

impl RemoteConfig {
    /// Defaults for a service at `base_url`: 10 s timeout, 2 retries with
    /// 50 ms backoff, 4 requests in flight, no auth.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            bearer_token: None,
            timeout: Duration::from_secs(10),
            retries: 2,
            retry_backoff: Duration::from_millis(50),
            max_in_flight: 4,
            generate_seed: 0,
            generate_steps: 30,
        }
    }

    /// Check the config is usable.
    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(KbError::Config("base_url is empty".to_string()));
        }
        if self.max_in_flight == 0 {
            return Err(KbError::Config(
                "max_in_flight must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Counting gate: at most `cap` guards alive at once, extra acquirers block.
pub(crate) struct Gate {
    cap: usize,
    count: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Gate {
    pub(crate) fn new(cap: usize) -> Self {
        Self {
            cap,
            count: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.count.lock().unwrap();
        while *n >= self.cap {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        GateGuard { gate: self }
    }

    #[cfg(test)]
    pub(crate) fn in_flight(&self) -> usize {
        *self.count.lock().unwrap()
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.count.lock().unwrap();
        *n -= 1;
        self.gate.cv.notify_one();
    }
}

#[derive(Serialize)]
struct CaptionRequest {
    image_b64: String,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    seed: u64,
    steps: u32,
}

#[derive(Deserialize)]
struct GenerateResponse {
    image_b64: String,
}

/// HTTP client implementing [`KnowledgeBase`] against a remote service.
pub struct RemoteKb {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteKb {
    /// Build a client; fails on unusable config.
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        cfg.validate()?;
        let agent_cfg = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .build();
        Ok(Self {
            gate: Gate::new(cfg.max_in_flight),
            agent: ureq::Agent::new_with_config(agent_cfg),
            cfg,
        })
    }

    /// The active configuration.
    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    /// True for failures worth retrying: transport-level problems and
    /// server-side (5xx) statuses. Client errors (4xx) are final.
    fn transient(err: &ureq::Error) -> bool {
        match err {
            ureq::Error::StatusCode(code) => (500..600).contains(code),
            ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed => true,
            _ => false,
        }
    }

    fn post_json<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp> {
        let _slot = self.gate.acquire();
        let url = self.url(path);
        let budget = self.cfg.retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.agent.post(&url);
            if let Some(token) = &self.cfg.bearer_token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    return resp.body_mut().read_json::<Resp>().map_err(|e| {
                        KbError::Decode {
                            endpoint: url,
                            reason: e.to_string(),
                        }
                    })
                }
                Err(err) if Self::transient(&err) && attempt < budget => {
                    std::thread::sleep(self.cfg.retry_backoff);
                }
                Err(ureq::Error::StatusCode(status)) => {
                    return Err(KbError::RemoteStatus {
                        endpoint: url,
                        status,
                        attempts: attempt,
                    })
                }
                Err(err) => {
                    return Err(KbError::Transport {
                        endpoint: url,
                        attempts: attempt,
                        reason: err.to_string(),
                    })
                }
            }
        }
    }
}

impl KnowledgeBase for RemoteKb {
    fn caption(&self, img: &ImageRecord) -> Result<CaptionRecord> {
        let resp: CaptionResponse = self.post_json(
            CAPTION_PATH,
            &CaptionRequest {
                image_b64: BASE64.encode(&img.payload),
            },
        )?;
        if resp.caption.trim().is_empty() {
            return Err(KbError::InvalidRecord(format!(
                "remote captioner returned empty text for image {:?}",
                img.id
            )));
        }
        Ok(CaptionRecord {
            image_id: img.id.clone(),
            text: resp.caption,
            source: CaptionSource::Remote,
        })
    }

    fn reconstruct(&self, caption: &CaptionRecord) -> Result<ImageRecord> {
        let resp: GenerateResponse = self.post_json(
            GENERATE_PATH,
            &GenerateRequest {
                prompt: &caption.text,
                seed: self.cfg.generate_seed,
                steps: self.cfg.generate_steps,
            },
        )?;
        let payload = BASE64.decode(resp.image_b64.as_bytes()).map_err(|e| {
            KbError::Decode {
                endpoint: self.url(GENERATE_PATH),
                reason: format!("bad image_b64: {e}"),
            }
        })?;
        // The service returns only bytes; the caption text is the sole label
        // evidence, so recover it the same way the mock does.
        let label = mock::keyword_label(&caption.text).unwrap_or("unknown");
        Ok(ImageRecord {
            id: format!("recon-{}", caption.image_id),
            label: label.to_string(),
            payload,
            provenance: Provenance::Remote,
        })
    }
}
