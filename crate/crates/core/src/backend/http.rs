use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{decode_response, encode_request, DenoiseResponseWire};
use super::{BackendError, DenoiseRequest, DenoiseResponse, Denoiser};

/// POSTs `body` as JSON, retrying connection failures and 5xx replies.
pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &B,
    attempts: u32,
) -> Result<R, BackendError> {
    let attempts = attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        if attempt > 1 {
            thread::sleep(Duration::from_millis(100 * u64::from(attempt - 1)));
        }
        let resp = match client.post(url).json(body).send() {
            Ok(r) => r,
            Err(e) => {
                let retryable = e.is_connect() || e.is_timeout() || e.is_request();
                last = Some(BackendError::Transport {
                    message: e.to_string(),
                    retryable,
                    attempts: attempt,
                });
                if retryable {
                    continue;
                }
                break;
            }
        };
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Err(BackendError::Configuration(format!(
                "endpoint {url} not found (HTTP 404)"
            )));
        }
        if !status.is_success() {
            let message = resp.text().unwrap_or_default();
            let err = BackendError::Remote {
                status: status.as_u16(),
                message,
            };
            if status.is_server_error() {
                last = Some(err);
                continue;
            }
            return Err(err);
        }
        let bytes = resp.bytes().map_err(|e| BackendError::Transport {
            message: e.to_string(),
            retryable: true,
            attempts: attempt,
        })?;
        return serde_json::from_slice(&bytes).map_err(|e| BackendError::Malformed(e.to_string()));
    }
    Err(last.unwrap_or_else(|| BackendError::Transport {
        message: "no attempt made".into(),
        retryable: false,
        attempts,
    }))
}

/// Denoiser that forwards each stage to `POST {base}/v1/denoise`.
#[derive(Debug, Clone)]
pub struct HttpDenoiser {
    base_url: String,
    endpoint: String,
    client: reqwest::blocking::Client,
    attempts: u32,
}

impl HttpDenoiser {
    pub fn new(base_url: &str) -> Result<Self, BackendError> {
        Self::with_options(base_url, Duration::from_secs(600), 2)
    }

    pub fn with_options(
        base_url: &str,
        timeout: Duration,
        attempts: u32,
    ) -> Result<Self, BackendError> {
        let base = base_url.trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| BackendError::Configuration(e.to_string()))?;
        Ok(Self {
            endpoint: format!("{base}/v1/denoise"),
            base_url: base,
            client,
            attempts,
        })
    }
}

impl Denoiser for HttpDenoiser {
    fn id(&self) -> String {
        self.base_url.clone()
    }

    fn denoise(&self, request: &DenoiseRequest) -> Result<DenoiseResponse, BackendError> {
        request.validate()?;
        let body = encode_request(request)?;
        let reply: DenoiseResponseWire = post_json(&self.client, &self.endpoint, &body, self.attempts)?;
        let resp = decode_response(&reply)?;
        resp.validate_for(request)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_server_reports_transport_error() {
        // port 9 (discard) on localhost is closed in the test sandbox
        let d = HttpDenoiser::with_options("http://127.0.0.1:9", Duration::from_secs(2), 2).unwrap();
        let crop = crate::model::ImageBuffer::filled(4, 4, &[0, 0, 0]).unwrap();
        let req = DenoiseRequest {
            soft_mask: crate::model::SoftMask::constant(4, 4, 1.0).unwrap(),
            crop,
            prompt: String::new(),
            edge_map: None,
            denoising_strength: 0.5,
            stage_steps: 1,
            total_steps: 1,
            stage: super::super::Stage::Base,
            seed: 0,
            continuation: None,
        };
        match d.denoise(&req) {
            Err(BackendError::Transport { retryable, attempts, .. }) => {
                assert!(retryable);
                assert_eq!(attempts, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
