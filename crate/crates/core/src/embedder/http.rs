use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingVector, EncoderBackend};

/// Body of `POST /encode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest<'a> {
    #[serde(borrow)]
    pub texts: Vec<&'a str>,
    pub prefix: &'a str,
}

/// Response of `POST /encode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub dimension: usize,
    pub embeddings: Vec<Vec<f32>>,
}

/// Client for an encoder sidecar speaking the `/encode` JSON protocol.
///
/// A `413` reply splits the batch in half and retries, so a server with a
/// smaller request cap than the configured batch size still gets served.
pub struct HttpBackend {
    endpoint: String,
    dimension: usize,
    normalized: bool,
    name: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, dimension: usize, normalized: bool, timeout: Duration) -> Self {
        let base = base_url.trim_end_matches('/');
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: format!("{base}/encode"),
            dimension,
            normalized,
            name: format!("http:{base}"),
            agent,
        }
    }

    fn post(&self, texts: &[&str], prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let request = EncodeRequest { texts: texts.to_vec(), prefix };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&request)
            .map_err(|e| EmbedError::BackendUnavailable(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status().as_u16();
        if status == 413 && texts.len() > 1 {
            let (a, b) = texts.split_at(texts.len() / 2);
            let mut out = self.post(a, prefix)?;
            out.extend(self.post(b, prefix)?);
            return Ok(out);
        }
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(EmbedError::BackendUnavailable(format!(
                "{} returned HTTP {status}: {}",
                self.endpoint,
                body.chars().take(200).collect::<String>()
            )));
        }
        let parsed: EncodeResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Protocol(format!("bad /encode response: {e}")))?;
        if parsed.dimension != self.dimension {
            return Err(EmbedError::DimensionMismatch { expected: self.dimension, got: parsed.dimension });
        }
        Ok(parsed.embeddings)
    }
}

impl EncoderBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn normalized_at_encode(&self) -> bool {
        self.normalized
    }

    fn encode(&self, texts: &[&str], prefix: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.post(texts, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let req = EncodeRequest { texts: vec!["a", "b"], prefix: "query: " };
        assert_eq!(serde_json::to_string(&req).unwrap(), r#"{"texts":["a","b"],"prefix":"query: "}"#);
    }

    #[test]
    fn response_wire_format() {
        let resp: EncodeResponse = serde_json::from_str(r#"{"dimension":2,"embeddings":[[0.5,-1.0]]}"#).unwrap();
        assert_eq!(resp, EncodeResponse { dimension: 2, embeddings: vec![vec![0.5, -1.0]] });
    }

    #[test]
    fn unreachable_server_is_unavailable() {
        // port 9 (discard) on localhost is closed in the sandbox
        let b = HttpBackend::new("http://127.0.0.1:9", 4, true, Duration::from_secs(2));
        assert!(matches!(b.encode(&["x"], "query: "), Err(EmbedError::BackendUnavailable(_))));
    }
}
