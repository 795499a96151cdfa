//! Chat-completion HTTP client.
//!
//! Request body:
//! `{"model": "...", "temperature": 0, "messages": [{"role": "user", "content": "<prompt>"}]}`
//!
//! The reply text is read from `choices[0].message.content`. The API key is
//! taken from the environment variable named in [`RemoteConfig::api_key_env`]
//! and sent as a bearer token.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ScorerBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            initial_backoff_ms: 1_000,
            max_backoff_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): initial · 2^attempt, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }

    /// Run `op`, retrying retryable failures with exponential backoff.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if !e.is_retryable() => return Err(e),
                Err(e) if attempt >= self.max_retries => {
                    return Err(BackendError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => {
                    let delay = self.backoff(attempt);
                    tracing::warn!(attempt = attempt + 1, delay_ms = delay.as_millis() as u64, error = %e, "retrying scorer request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

/// Blocking token bucket.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, refill_per_sec: f64) -> Self {
        let capacity = f64::from(capacity.max(1));
        TokenBucket {
            capacity,
            refill_per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Take one token, sleeping until one is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket lock poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.refill_per_sec).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                if self.refill_per_sec <= 0.0 {
                    Duration::from_millis(50)
                } else {
                    Duration::from_secs_f64((1.0 - state.0) / self.refill_per_sec)
                }
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub requests_per_second: f64,
    pub burst: u32,
    pub retry: RetryPolicy,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout_secs: 60,
            requests_per_second: 1.0,
            burst: 1,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    bucket: TokenBucket,
    in_flight: Mutex<()>,
}

impl RemoteBackend {
    /// Read the API key from the environment. A missing key is an error.
    pub fn from_env(config: RemoteConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| BackendError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        Ok(RemoteBackend::new(config, Some(key)))
    }

    pub fn new(config: RemoteConfig, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        let bucket = TokenBucket::new(config.burst, config.requests_per_second);
        RemoteBackend {
            config,
            api_key,
            agent,
            bucket,
            in_flight: Mutex::new(()),
        }
    }

    fn request_once(&self, body: &Value) -> Result<String, BackendError> {
        self.bucket.acquire();
        let _one_at_a_time = self.in_flight.lock().expect("in-flight lock poisoned");
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match req.send_json(body.clone()) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(BackendError::Http { status, body });
            }
            Err(ureq::Error::Transport(t)) => return Err(BackendError::Transport(t.to_string())),
        };
        let value: Value = response
            .into_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        extract_content(&value)
    }
}

pub fn request_body(prompt: &str, model_id: &str, temperature: f64) -> Value {
    json!({
        "model": model_id,
        "temperature": temperature,
        "messages": [{"role": "user", "content": prompt}],
    })
}

pub fn extract_content(value: &Value) -> Result<String, BackendError> {
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
}

impl ScorerBackend for RemoteBackend {
    fn complete(&self, prompt: &str, model_id: &str, temperature: f64) -> Result<String, BackendError> {
        let body = request_body(prompt, model_id, temperature);
        self.config.retry.run(|| self.request_once(&body))
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves `replies` in order, one connection each, recording request bodies.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = bodies.clone();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), bodies)
    }

    fn fast_config(endpoint: String) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            timeout_secs: 5,
            requests_per_second: 1000.0,
            burst: 10,
            retry: RetryPolicy {
                max_retries: 3,
                initial_backoff_ms: 1,
                max_backoff_ms: 4,
            },
            ..RemoteConfig::default()
        }
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"YES\nGood."}}]}"#;

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, bodies) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, OK.into())]);
        let backend = RemoteBackend::new(fast_config(url), Some("k".into()));
        let reply = backend.complete("the prompt", "gpt-x", 0.0).unwrap();
        assert_eq!(reply, "YES\nGood.");
        let bodies = bodies.lock().unwrap();
        assert_eq!(bodies.len(), 3);
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent, request_body("the prompt", "gpt-x", 0.0));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, bodies) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
        let backend = RemoteBackend::new(fast_config(url), None);
        let err = backend.complete("p", "m", 0.0).unwrap_err();
        assert!(matches!(err, BackendError::Http { status: 401, .. }), "{err}");
        assert_eq!(bodies.lock().unwrap().len(), 1);
    }

    #[test]
    fn retry_budget_is_bounded() {
        let policy = RetryPolicy {
            max_retries: 2,
            initial_backoff_ms: 1,
            max_backoff_ms: 1,
        };
        let calls = AtomicUsize::new(0);
        let err = policy
            .run::<()>(|| {
                calls.fetch_add(1, Ordering::SeqCst);
                Err(BackendError::Transport("reset".into()))
            })
            .unwrap_err();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert!(matches!(err, BackendError::Exhausted { attempts: 3, .. }));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_secs(1));
        assert_eq!(p.backoff(1), Duration::from_secs(2));
        assert_eq!(p.backoff(4), Duration::from_secs(16));
        assert_eq!(p.backoff(10), Duration::from_secs(60));
        assert_eq!(p.backoff(80), Duration::from_secs(60));
    }

    #[test]
    fn malformed_reply() {
        assert!(extract_content(&json!({"choices": []})).is_err());
        assert_eq!(
            extract_content(&serde_json::from_str(OK).unwrap()).unwrap(),
            "YES\nGood."
        );
    }

    #[test]
    fn bucket_throttles() {
        let bucket = TokenBucket::new(1, 50.0);
        let start = Instant::now();
        for _ in 0..4 {
            bucket.acquire();
        }
        // first token is free, the next three need ~20ms each
        assert!(start.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn missing_api_key_env() {
        let config = RemoteConfig {
            api_key_env: "NEWSIGNAL_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..RemoteConfig::default()
        };
        assert!(matches!(RemoteBackend::from_env(config), Err(BackendError::Config(_))));
    }
}
