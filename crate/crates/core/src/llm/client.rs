//! Blocking chat-completion client with retries, backoff and rate limiting.

use super::{AttemptRecord, ChatMessage, Completion, LlmConfig, LlmError};
use crate::rng::{seeded_rng, SimRng};
use rand::Rng;
use serde_json::{json, Value};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};
use ureq::Agent;

enum Outcome {
    Done(String),
    Retry(AttemptRecord, bool),
    Fatal(AttemptRecord, Box<dyn FnOnce(Vec<AttemptRecord>) -> LlmError>),
}

/// Shareable client; the rate limiter is its only point of serialization.
pub struct ChatClient {
    config: LlmConfig,
    api_key: String,
    agent: Agent,
    last_request: Mutex<Option<Instant>>,
    jitter: Mutex<SimRng>,
}

impl ChatClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: LlmConfig) -> Result<ChatClient, LlmError> {
        let api_key = std::env::var(&config.api_key_env_var).map_err(|_| LlmError::MissingApiKey {
            var: config.api_key_env_var.clone(),
        })?;
        Ok(ChatClient::with_key(config, api_key))
    }

    pub fn with_key(config: LlmConfig, api_key: String) -> ChatClient {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.request_timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        let jitter = seeded_rng(config.jitter_seed, "llm/backoff");
        ChatClient {
            config,
            api_key,
            agent,
            last_request: Mutex::new(None),
            jitter: Mutex::new(jitter),
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn wait_for_slot(&self) {
        if self.config.rate_limit <= 0.0 {
            return;
        }
        let interval = Duration::from_secs_f64(1.0 / self.config.rate_limit);
        let mut last = self.last_request.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let ready = prev + interval;
            let now = Instant::now();
            if ready > now {
                thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base * 2f64.powi(retry as i32);
        let jitter: f64 = self.jitter.lock().expect("jitter poisoned").random_range(0.0..0.25);
        Duration::from_secs_f64(base * (1.0 + jitter))
    }

    fn attempt(&self, number: u32, body: &Value, delay: Duration) -> Outcome {
        self.wait_for_slot();
        let mut record = AttemptRecord {
            attempt: number,
            delay_ms: delay.as_millis() as u64,
            status: None,
            error: None,
        };
        let response = self
            .agent
            .post(&self.config.endpoint_url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => {
                record.error = Some(format!("timeout: {t}"));
                return Outcome::Retry(record, true);
            }
            Err(e @ (ureq::Error::BadUri(_) | ureq::Error::Http(_))) => {
                record.error = Some(e.to_string());
                let message = e.to_string();
                return Outcome::Fatal(record, Box::new(move |attempts| LlmError::Transport { message, attempts }));
            }
            Err(e) => {
                record.error = Some(e.to_string());
                return Outcome::Retry(record, false);
            }
        };
        let status = response.status().as_u16();
        record.status = Some(status);
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                record.error = Some(e.to_string());
                return Outcome::Retry(record, matches!(e, ureq::Error::Timeout(_)));
            }
        };
        match status {
            200..=299 => match extract_content(&text) {
                Some(content) => Outcome::Done(content),
                None => {
                    record.error = Some("response lacks choices[0].message.content".to_string());
                    let message = record.error.clone().unwrap_or_default();
                    Outcome::Fatal(record, Box::new(move |attempts| LlmError::Transport { message, attempts }))
                }
            },
            401 | 403 => Outcome::Fatal(record, Box::new(move |attempts| LlmError::AuthFailure { status, attempts })),
            429 | 500..=599 => Outcome::Retry(record, false),
            _ => {
                record.error = Some(truncate(&text, 200));
                let message = format!("unexpected status {status}");
                Outcome::Fatal(record, Box::new(move |attempts| LlmError::Transport { message, attempts }))
            }
        }
    }

    /// Sends one chat request and returns the text of the first choice.
    pub fn chat_logged(&self, messages: &[ChatMessage]) -> Result<(String, Vec<AttemptRecord>), LlmError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let mut attempts = Vec::new();
        let mut all_timeouts = true;
        let mut delay = Duration::ZERO;
        for number in 1..=self.config.max_retries + 1 {
            if !delay.is_zero() {
                thread::sleep(delay);
            }
            match self.attempt(number, &body, delay) {
                Outcome::Done(text) => return Ok((text, attempts)),
                Outcome::Fatal(record, make) => {
                    attempts.push(record);
                    return Err(make(attempts));
                }
                Outcome::Retry(record, timed_out) => {
                    all_timeouts &= timed_out;
                    attempts.push(record);
                    delay = self.backoff(number - 1);
                }
            }
        }
        if all_timeouts {
            Err(LlmError::Timeout { attempts })
        } else {
            Err(LlmError::RetriesExhausted { attempts })
        }
    }
}

fn truncate(text: &str, max: usize) -> String {
    text.chars().take(max).collect()
}

fn extract_content(body: &str) -> Option<String> {
    let value: Value = serde_json::from_str(body).ok()?;
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl Completion for ChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        self.chat_logged(messages).map(|(text, _)| text)
    }
}
