use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, GatewayError, Result};

/// Chat-completions client with a response cache and an in-flight limit.
pub struct RemoteBackend {
    endpoint: String,
    model: String,
    api_key_env: Option<String>,
    temperature: f64,
    max_retries: usize,
    agent: ureq::Agent,
    slots: Semaphore,
    memo: Mutex<HashMap<String, String>>,
    cache_file: Option<(PathBuf, Mutex<File>)>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    content: String,
}

struct Semaphore {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut used = self.used.lock().expect("semaphore poisoned");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("semaphore poisoned");
        }
        *used += 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("semaphore poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

impl RemoteBackend {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        endpoint: String,
        model: String,
        api_key_env: Option<String>,
        temperature: f64,
        max_retries: usize,
        timeout_secs: u64,
        max_in_flight: usize,
        cache_path: Option<PathBuf>,
    ) -> Result<Self> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(GatewayError::Precondition(format!("temperature {temperature} must be ≥ 0")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .build()
            .into();
        let mut memo = HashMap::new();
        let mut cache_file = None;
        if let Some(path) = cache_path {
            let err = |detail: String| GatewayError::Cache {
                path: path.display().to_string(),
                detail,
            };
            if path.exists() {
                let reader = BufReader::new(File::open(&path).map_err(|e| err(e.to_string()))?);
                for (i, line) in reader.lines().enumerate() {
                    let line = line.map_err(|e| err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: CacheRecord =
                        serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                    memo.insert(rec.key, rec.content);
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| err(e.to_string()))?;
            cache_file = Some((path, Mutex::new(file)));
        }
        Ok(Self {
            endpoint,
            model,
            api_key_env,
            temperature,
            max_retries,
            agent,
            slots: Semaphore {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: max_in_flight.max(1),
            },
            memo: Mutex::new(memo),
            cache_file,
        })
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": self.temperature,
        })
    }

    fn key(&self, body: &serde_json::Value) -> String {
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }

    fn send(&self, body: &serde_json::Value) -> Result<String> {
        let token = self.api_key_env.as_deref().and_then(|name| std::env::var(name).ok());
        let attempts = self.max_retries + 1;
        let mut detail = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            let _slot = self.slots.acquire();
            let mut req = self.agent.post(&self.endpoint);
            if let Some(t) = &token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => match resp.body_mut().read_json::<serde_json::Value>() {
                    Ok(json) => match json.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
                        Some(text) => return Ok(text.to_string()),
                        None => detail = "response lacks choices[0].message.content".into(),
                    },
                    Err(e) => detail = e.to_string(),
                },
                Err(e) => detail = e.to_string(),
            }
            log::warn!("chat request attempt {} failed: {detail}", attempt + 1);
        }
        Err(GatewayError::Remote { attempts, detail })
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = self.body(request);
        let key = self.key(&body);
        if let Some(hit) = self.memo.lock().expect("chat memo poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let content = self.send(&body)?;
        let mut memo = self.memo.lock().expect("chat memo poisoned");
        if let Some(hit) = memo.get(&key) {
            return Ok(hit.clone());
        }
        if let Some((path, file)) = &self.cache_file {
            let mut line = serde_json::to_string(&CacheRecord {
                key: key.clone(),
                content: content.clone(),
            })
            .expect("cache record serializes");
            line.push('\n');
            file.lock()
                .expect("chat cache poisoned")
                .write_all(line.as_bytes())
                .map_err(|e| GatewayError::Cache {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })?;
        }
        memo.insert(key, content.clone());
        Ok(content)
    }
}
