use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 2048,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub method: String,
    /// `<task id>__<subject>`; the mock backend looks transcripts up by it.
    pub key: String,
    pub prompt: String,
    pub model: String,
    pub decoding: Decoding,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Usage,
}

/// A synchronous chat-model call. Implementations are shared across worker
/// threads.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        (**self).complete(request)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Needles {
    One(String),
    All(Vec<String>),
}

#[derive(Clone, Debug, Deserialize)]
struct Rule {
    #[serde(default)]
    when_prompt_contains: Option<Needles>,
    /// 1-based call number for this transcript file.
    #[serde(default)]
    on_call: Option<usize>,
    payload: Json,
}

impl Rule {
    fn matches(&self, prompt: &str, call: usize) -> bool {
        let text_ok = match &self.when_prompt_contains {
            None => true,
            Some(Needles::One(s)) => prompt.contains(s.as_str()),
            Some(Needles::All(v)) => v.iter().all(|s| prompt.contains(s.as_str())),
        };
        text_ok && self.on_call.is_none_or(|n| n == call)
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct Transcript {
    responses: Vec<Rule>,
}

impl Transcript {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

enum Source {
    Dir(PathBuf),
    Memory(HashMap<String, Transcript>),
}

/// Replays scripted transcripts: `<root>/<method>/<key>.json`, falling back
/// to `<root>/<method>/default.json`. Each file holds
/// `{"responses": [{"when_prompt_contains": .., "on_call": .., "payload": ..}]}`;
/// the first matching rule answers. A string payload is returned verbatim,
/// anything else as compact JSON.
pub struct MockBackend {
    source: Source,
    loaded: Mutex<HashMap<String, Option<Transcript>>>,
    per_file: Mutex<HashMap<String, usize>>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn from_dir(root: impl Into<PathBuf>) -> Self {
        Self::with_source(Source::Dir(root.into()))
    }

    /// Transcripts keyed by `<method>/<key>` (or `<method>/default`).
    pub fn from_transcripts(map: HashMap<String, Transcript>) -> Self {
        Self::with_source(Source::Memory(map))
    }

    fn with_source(source: Source) -> Self {
        Self {
            source,
            loaded: Mutex::new(HashMap::new()),
            per_file: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn transcript(&self, id: &str) -> Result<Option<Transcript>> {
        match &self.source {
            Source::Memory(m) => Ok(m.get(id).cloned()),
            Source::Dir(root) => {
                let mut loaded = self.loaded.lock().expect("mock cache poisoned");
                if let Some(t) = loaded.get(id) {
                    return Ok(t.clone());
                }
                let path = root.join(format!("{id}.json"));
                let t = match fs::read_to_string(&path) {
                    Ok(text) => Some(
                        Transcript::from_json(&text)
                            .map_err(|e| Error::Backend(format!("transcript {}: {e}", path.display())))?,
                    ),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                    Err(e) => return Err(Error::io(path, e)),
                };
                loaded.insert(id.to_owned(), t.clone());
                Ok(t)
            }
        }
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Backend for MockBackend {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let specific = format!("{}/{}", request.method, request.key);
        let (id, transcript) = match self.transcript(&specific)? {
            Some(t) => (specific, t),
            None => {
                let fallback = format!("{}/default", request.method);
                match self.transcript(&fallback)? {
                    Some(t) => (fallback, t),
                    None => {
                        return Err(Error::Backend(format!(
                            "no mock transcript for {}/{}",
                            request.method, request.key
                        )))
                    }
                }
            }
        };
        let call = {
            let mut counts = self.per_file.lock().expect("mock counter poisoned");
            let n = counts.entry(id.clone()).or_insert(0);
            *n += 1;
            *n
        };
        let rule = transcript
            .responses
            .iter()
            .find(|r| r.matches(&request.prompt, call))
            .ok_or_else(|| Error::Backend(format!("no rule in transcript {id} matches call {call}")))?;
        let text = match &rule.payload {
            Json::String(s) => s.clone(),
            other => other.to_string(),
        };
        Ok(ModelResponse {
            usage: Usage {
                prompt_tokens: word_count(&request.prompt),
                completion_tokens: word_count(&text),
            },
            text,
        })
    }
}

/// Memoizes responses by hash(method, prompt, model, decoding), optionally
/// persisted as `<dir>/<hash>.json`.
pub struct CachedBackend<B> {
    inner: B,
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Arc<Mutex<Option<ModelResponse>>>>>,
    misses: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            dir: None,
            slots: Mutex::new(HashMap::new()),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn persistent(inner: B, dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::new(inner)
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Requests forwarded to the inner backend.
    pub fn backend_calls(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn cache_key(request: &ModelRequest) -> String {
        let canonical = serde_json::json!([request.method, request.prompt, request.model, request.decoding,]);
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    fn read_disk(dir: &Path, key: &str) -> Option<ModelResponse> {
        let text = fs::read_to_string(dir.join(format!("{key}.json"))).ok()?;
        serde_json::from_str(&text).ok()
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        let key = Self::cache_key(request);
        let slot = {
            let mut slots = self.slots.lock().expect("cache poisoned");
            Arc::clone(slots.entry(key.clone()).or_default())
        };
        // Concurrent identical requests wait on the slot instead of
        // duplicating the call.
        let mut slot = slot.lock().expect("cache slot poisoned");
        if let Some(r) = slot.as_ref() {
            return Ok(r.clone());
        }
        if let Some(r) = self.dir.as_deref().and_then(|d| Self::read_disk(d, &key)) {
            *slot = Some(r.clone());
            return Ok(r);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let r = self.inner.complete(request)?;
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{key}.json"));
            let text = serde_json::to_string(&r)?;
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        *slot = Some(r.clone());
        Ok(r)
    }
}

#[cfg(feature = "http")]
pub use http::HttpBackend;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde_json::{json, Value as Json};

    use super::{Backend, ModelRequest, ModelResponse, Usage};
    use crate::error::{Error, Result};

    const RETRIES: u32 = 2;

    /// OpenAI-compatible `POST <base_url>/chat/completions`.
    pub struct HttpBackend {
        agent: ureq::Agent,
        base_url: String,
        token: String,
    }

    impl HttpBackend {
        /// Reads the bearer token from the environment variable `token_env`.
        pub fn new(base_url: &str, token_env: &str, timeout: Duration) -> Result<Self> {
            let token = std::env::var(token_env)
                .map_err(|_| Error::Config(format!("environment variable {token_env} is not set")))?;
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into();
            Ok(Self {
                agent,
                base_url: base_url.trim_end_matches('/').to_owned(),
                token,
            })
        }

        fn attempt(&self, body: &Json) -> std::result::Result<Json, (bool, String)> {
            let url = format!("{}/chat/completions", self.base_url);
            let mut resp = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", self.token))
                .send_json(body)
                .map_err(|e| (true, e.to_string()))?;
            let status = resp.status().as_u16();
            let parsed: std::result::Result<Json, _> = resp.body_mut().read_json();
            match status {
                200..=299 => parsed.map_err(|e| (false, format!("bad response body: {e}"))),
                429 | 500..=599 => Err((true, format!("HTTP {status}"))),
                _ => Err((false, format!("HTTP {status}"))),
            }
        }
    }

    impl Backend for HttpBackend {
        fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
            let body = json!({
                "model": request.model,
                "messages": [{"role": "user", "content": request.prompt}],
                "temperature": request.decoding.temperature,
                "max_tokens": request.decoding.max_tokens,
            });
            let mut attempt = 0;
            let reply = loop {
                match self.attempt(&body) {
                    Ok(v) => break v,
                    Err((true, msg)) if attempt < RETRIES => {
                        attempt += 1;
                        log::warn!("{} request failed ({msg}); retry {attempt}", request.method);
                        std::thread::sleep(Duration::from_secs(1 << attempt));
                    }
                    Err((_, msg)) => return Err(Error::Backend(msg)),
                }
            };
            let text = reply["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| Error::Backend("response has no message content".into()))?
                .to_owned();
            let usage = Usage {
                prompt_tokens: reply["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                completion_tokens: reply["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            };
            Ok(ModelResponse { text, usage })
        }
    }
}
