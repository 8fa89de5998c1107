//! Next-token score providers.
//!
//! Scores are unnormalized log-scores over the whole vocabulary; the
//! sampler normalizes after masking. Every stochastic provider derives its
//! randomness from its seed and the prefix, so a provider is a pure function
//! of its configuration.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::escape::{parse_quoted, unescape_plain};
use crate::vocab::{TokenId, VocabError, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    scores: Vec<f64>,
}

impl Distribution {
    pub fn new(scores: Vec<f64>, vocab_size: usize) -> Result<Self, ProviderError> {
        if scores.len() != vocab_size {
            return Err(ProviderError::LengthMismatch {
                expected: vocab_size,
                got: scores.len(),
            });
        }
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ProviderError::NonFinite { index });
        }
        Ok(Self { scores })
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Self {
            scores: vec![0.0; vocab_size],
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Smallest id with the highest score.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("expected {expected} scores, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("server returned {status}: {message}")]
    Remote { status: u16, message: String },
    #[error("prefix contains the eos token")]
    EosInPrefix,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("bad provider spec {spec:?}: {msg}")]
    Spec { spec: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line} cannot be encoded: {source}")]
    Unencodable {
        line: usize,
        #[source]
        source: VocabError,
    },
    #[error("line {line}: {msg}")]
    Script { line: usize, msg: String },
}

pub trait LmProvider: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution, ProviderError>;
}

impl<P: LmProvider + ?Sized> LmProvider for Box<P> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution, ProviderError> {
        (**self).next_distribution(prefix)
    }
}

/// SplitMix64 finalizer, used to derive per-step seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix(seed ^ mix(salt))
}

fn prefix_hash(prefix: &[TokenId]) -> u64 {
    prefix
        .iter()
        .fold(mix(prefix.len() as u64), |h, &t| mix(h ^ t as u64))
}

// ---------------------------------------------------------------------------

/// Independent uniform scores per step.
#[derive(Debug, Clone)]
pub struct RandomProvider {
    vocab_size: usize,
    seed: u64,
}

impl RandomProvider {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self { vocab_size, seed }
    }
}

impl LmProvider for RandomProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution, ProviderError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, prefix_hash(prefix)));
        Ok(Distribution {
            scores: (0..self.vocab_size).map(|_| rng.random::<f64>()).collect(),
        })
    }
}

// ---------------------------------------------------------------------------

/// A stand-in for an imperfect model that knows the answer.
///
/// At step k the gold token k (eos past the end) scores 10 and everything
/// else draws from U(0, 1). With probability `eps` the step is corrupted: a
/// uniformly drawn token scores 10 and the gold token drops to 5, so it is
/// still the runner-up once the corrupt choice is masked away. Corruption
/// depends only on the seed and the position.
#[derive(Debug, Clone)]
pub struct NoisyGoldProvider {
    gold: Vec<TokenId>,
    eos: TokenId,
    vocab_size: usize,
    eps: f64,
    seed: u64,
}

impl NoisyGoldProvider {
    pub fn new(gold: Vec<TokenId>, vocab: &Vocabulary, eps: f64, seed: u64) -> Self {
        Self {
            gold,
            eos: vocab.eos(),
            vocab_size: vocab.len(),
            eps: eps.clamp(0.0, 1.0),
            seed,
        }
    }

    pub fn gold(&self) -> &[TokenId] {
        &self.gold
    }

    /// Whether step `k` is corrupted.
    pub fn corrupted_at(&self, k: usize) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, k as u64));
        rng.random::<f64>() < self.eps
    }
}

impl LmProvider for NoisyGoldProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution, ProviderError> {
        let k = prefix.len();
        let gold = self.gold.get(k).copied().unwrap_or(self.eos) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, k as u64));
        let corrupt = rng.random::<f64>() < self.eps;
        let mut scores: Vec<f64> = (0..self.vocab_size).map(|_| rng.random::<f64>()).collect();
        if corrupt {
            let r = rng.random_range(0..self.vocab_size);
            scores[gold] = 5.0;
            scores[r] = 10.0;
        } else {
            scores[gold] = 10.0;
        }
        Ok(Distribution { scores })
    }
}

// ---------------------------------------------------------------------------

/// Order-k token n-gram model with add-alpha smoothing.
#[derive(Debug, Clone)]
pub struct NgramProvider {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    /// context → (total, per-token counts)
    counts: HashMap<Vec<TokenId>, (u64, HashMap<TokenId, u64>)>,
}

impl NgramProvider {
    /// `corpus` holds one escaped artifact text per line; blank lines are
    /// skipped. Each text is followed by eos.
    pub fn build(corpus: &str, vocab: &Vocabulary, order: usize, alpha: f64) -> Result<Self, ConfigError> {
        let bad = |msg: &str| ConfigError::Spec {
            spec: "ngram".into(),
            msg: msg.into(),
        };
        if order < 1 {
            return Err(bad("order must be at least 1"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(bad("alpha must be positive"));
        }
        let mut counts: HashMap<Vec<TokenId>, (u64, HashMap<TokenId, u64>)> = HashMap::new();
        for (i, line) in corpus.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let text = unescape_plain(line).map_err(|msg| ConfigError::Script { line: i + 1, msg })?;
            let mut ids = vocab
                .encode(&text)
                .map_err(|source| ConfigError::Unencodable { line: i + 1, source })?;
            ids.push(vocab.eos());
            for (k, &t) in ids.iter().enumerate() {
                let ctx = ids[k.saturating_sub(order - 1)..k].to_vec();
                let e = counts.entry(ctx).or_default();
                e.0 += 1;
                *e.1.entry(t).or_default() += 1;
            }
        }
        Ok(Self {
            order,
            alpha,
            vocab_size: vocab.len(),
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

impl LmProvider for NgramProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution, ProviderError> {
        let ctx = &prefix[prefix.len().saturating_sub(self.order - 1)..];
        let v = self.vocab_size as f64;
        let empty = (0, HashMap::new());
        let (total, per) = self.counts.get(ctx).unwrap_or(&empty);
        let denom = (*total as f64 + self.alpha * v).ln();
        let base = self.alpha.ln() - denom;
        let mut scores = vec![base; self.vocab_size];
        for (&t, &c) in per {
            scores[t as usize] = (c as f64 + self.alpha).ln() - denom;
        }
        Ok(Distribution { scores })
    }
}

// ---------------------------------------------------------------------------

/// Fixed scores per prefix, read from a script:
///
/// ```text
/// "" -> 3:2.0, 5:1.0
/// "3 7" -> 0:4.5
/// ```
///
/// Ids not listed for a prefix, and prefixes not listed at all, score 0.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    vocab_size: usize,
    table: HashMap<Vec<TokenId>, Vec<(TokenId, f64)>>,
}

impl ScriptedProvider {
    pub fn parse(doc: &str, vocab_size: usize) -> Result<Self, ConfigError> {
        let mut table = HashMap::new();
        for (i, raw) in doc.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| ConfigError::Script {
                line: i + 1,
                msg: msg.into(),
            };
            let (key, used) = parse_quoted(line).map_err(|m| err(&m))?;
            let rest = line[used..]
                .trim_start()
                .strip_prefix("->")
                .ok_or_else(|| err("expected '->'"))?;
            let key = String::from_utf8(key).map_err(|_| err("prefix is not text"))?;
            let prefix: Vec<TokenId> = key
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| err("bad prefix id")))
                .collect::<Result<_, _>>()?;
            let mut entries = Vec::new();
            for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (id, score) = item.split_once(':').ok_or_else(|| err("expected id:score"))?;
                let id: TokenId = id.trim().parse().map_err(|_| err("bad token id"))?;
                let score: f64 = score.trim().parse().map_err(|_| err("bad score"))?;
                if id as usize >= vocab_size {
                    return Err(err("token id out of range"));
                }
                if !score.is_finite() {
                    return Err(err("score is not finite"));
                }
                entries.push((id, score));
            }
            table.insert(prefix, entries);
        }
        Ok(Self { vocab_size, table })
    }
}

impl LmProvider for ScriptedProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution, ProviderError> {
        let mut scores = vec![0.0; self.vocab_size];
        if let Some(entries) = self.table.get(prefix) {
            for &(id, s) in entries {
                scores[id as usize] = s;
            }
        }
        Ok(Distribution { scores })
    }
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct LogitsRequest<'a> {
    tokens: &'a [TokenId],
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

#[derive(Deserialize)]
struct ErrorResponse {
    error: String,
}

/// Client for a logits service: `POST <url>/v1/logits` with
/// `{"tokens": [...]}`, answered by `{"logits": [...]}`.
pub struct HttpProvider {
    endpoint: String,
    vocab_size: usize,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider").field("endpoint", &self.endpoint).finish()
    }
}

impl HttpProvider {
    pub fn new(base_url: &str, vocab_size: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: format!("{}/v1/logits", base_url.trim_end_matches('/')),
            vocab_size,
            agent,
        }
    }
}

impl LmProvider for HttpProvider {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution, ProviderError> {
        let transport = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout,
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
            other => ProviderError::Transport(other.to_string()),
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(LogitsRequest { tokens: prefix })
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(transport)?;
        if status != 200 {
            let message = serde_json::from_str::<ErrorResponse>(&body)
                .map(|e| e.error)
                .unwrap_or(body);
            return Err(ProviderError::Remote { status, message });
        }
        let parsed: LogitsResponse =
            serde_json::from_str(&body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        Distribution::new(parsed.logits, self.vocab_size)
    }
}

// ---------------------------------------------------------------------------

/// Parsed `--provider` spec: `kind:key=value,...`.
///
/// | kind | keys |
/// |---|---|
/// | `random` | `seed` |
/// | `noisy-gold` | `eps`, `seed`, `gold` (program file; benches use the task's program) |
/// | `ngram` | `order` (3), `alpha` (0.1), `corpus` (bundled CLEVR corpus) |
/// | `scripted` | `path` |
/// | `http` | `url`, `timeout` (ms, 5000) |
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderConfig {
    Random { seed: Option<u64> },
    NoisyGold { eps: f64, seed: Option<u64>, gold: Option<PathBuf> },
    Ngram { order: usize, alpha: f64, corpus: Option<PathBuf> },
    Scripted { path: PathBuf },
    Http { url: String, timeout_ms: u64 },
}

impl ProviderConfig {
    pub fn parse(spec: &str) -> Result<Self, ConfigError> {
        let bad = |msg: String| ConfigError::Spec {
            spec: spec.to_string(),
            msg,
        };
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut kv: HashMap<&str, &str> = HashMap::new();
        for item in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {item:?}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let allowed: &[&str] = match kind {
            "random" => &["seed"],
            "noisy-gold" => &["eps", "seed", "gold"],
            "ngram" => &["order", "alpha", "corpus"],
            "scripted" => &["path"],
            "http" => &["url", "timeout"],
            other => return Err(bad(format!("unknown provider kind {other:?}"))),
        };
        if let Some(k) = kv.keys().find(|k| !allowed.contains(k)) {
            return Err(bad(format!("unknown key {k:?}")));
        }
        fn num<T: std::str::FromStr>(
            kv: &HashMap<&str, &str>,
            key: &str,
            bad: &dyn Fn(String) -> ConfigError,
        ) -> Result<Option<T>, ConfigError> {
            kv.get(key)
                .map(|v| v.parse::<T>().map_err(|_| bad(format!("bad value for {key}: {v:?}"))))
                .transpose()
        }
        Ok(match kind {
            "random" => ProviderConfig::Random {
                seed: num(&kv, "seed", &bad)?,
            },
            "noisy-gold" => {
                let eps: f64 = num(&kv, "eps", &bad)?.unwrap_or(0.0);
                if !(0.0..=1.0).contains(&eps) {
                    return Err(bad("eps must lie in [0, 1]".into()));
                }
                ProviderConfig::NoisyGold {
                    eps,
                    seed: num(&kv, "seed", &bad)?,
                    gold: kv.get("gold").map(PathBuf::from),
                }
            }
            "ngram" => {
                let order = num(&kv, "order", &bad)?.unwrap_or(3);
                let alpha = num(&kv, "alpha", &bad)?.unwrap_or(0.1);
                if order < 1 {
                    return Err(bad("order must be at least 1".into()));
                }
                if !(alpha > 0.0) {
                    return Err(bad("alpha must be positive".into()));
                }
                ProviderConfig::Ngram {
                    order,
                    alpha,
                    corpus: kv.get("corpus").map(PathBuf::from),
                }
            }
            "scripted" => ProviderConfig::Scripted {
                path: kv
                    .get("path")
                    .map(PathBuf::from)
                    .ok_or_else(|| bad("scripted needs path=".into()))?,
            },
            _ => ProviderConfig::Http {
                url: kv
                    .get("url")
                    .map(|s| s.to_string())
                    .ok_or_else(|| bad("http needs url=".into()))?,
                timeout_ms: num(&kv, "timeout", &bad)?.unwrap_or(5000),
            },
        })
    }

    /// Builds the provider. `gold` supplies the program for `noisy-gold`
    /// when the spec has no `gold=` file; `seed` is the run seed, used when
    /// the spec has none.
    pub fn build(
        &self,
        vocab: &Vocabulary,
        gold: Option<&[TokenId]>,
        seed: u64,
        default_corpus: &str,
    ) -> Result<Box<dyn LmProvider>, ConfigError> {
        let read = |p: &PathBuf| {
            std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.clone(),
                source,
            })
        };
        Ok(match self {
            ProviderConfig::Random { seed: s } => Box::new(RandomProvider::new(vocab.len(), s.unwrap_or(seed))),
            ProviderConfig::NoisyGold { eps, seed: s, gold: file } => {
                let ids = match (file, gold) {
                    (Some(p), _) => vocab
                        .encode(read(p)?.as_bytes())
                        .map_err(|source| ConfigError::Unencodable { line: 1, source })?,
                    (None, Some(g)) => g.to_vec(),
                    (None, None) => {
                        return Err(ConfigError::Spec {
                            spec: "noisy-gold".into(),
                            msg: "no gold program: pass gold=<file>".into(),
                        })
                    }
                };
                Box::new(NoisyGoldProvider::new(ids, vocab, *eps, s.unwrap_or(seed)))
            }
            ProviderConfig::Ngram { order, alpha, corpus } => {
                let text = match corpus {
                    Some(p) => read(p)?,
                    None => default_corpus.to_string(),
                };
                Box::new(NgramProvider::build(&text, vocab, *order, *alpha)?)
            }
            ProviderConfig::Scripted { path } => Box::new(ScriptedProvider::parse(&read(path)?, vocab.len())?),
            ProviderConfig::Http { url, timeout_ms } => {
                Box::new(HttpProvider::new(url, vocab.len(), Duration::from_millis(*timeout_ms)))
            }
        })
    }
}

// ---------------------------------------------------------------------------

pub mod stub {
    //! Minimal single-threaded logits server for tests and demos.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{SocketAddr, TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;
    use std::thread::JoinHandle;
    use std::time::Duration;

    use crate::vocab::TokenId;

    pub enum Reply {
        /// 200 with `{"logits": [...]}`; non-finite values are sent as `NaN`.
        Logits(Vec<f64>),
        /// Non-200 with `{"error": msg}`.
        Error(u16, String),
        /// 200 with this body verbatim.
        Raw(String),
        /// Sleep, then answer.
        Delay(Duration, Box<Reply>),
    }

    pub struct StubServer {
        addr: SocketAddr,
        stop: Arc<AtomicBool>,
        handle: Option<JoinHandle<()>>,
    }

    impl StubServer {
        pub fn start<F>(handler: F) -> std::io::Result<Self>
        where
            F: Fn(&[TokenId]) -> Reply + Send + 'static,
        {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let stop = Arc::new(AtomicBool::new(false));
            let flag = Arc::clone(&stop);
            let handle = std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = conn {
                        let _ = serve(stream, &handler);
                    }
                }
            });
            Ok(Self {
                addr,
                stop,
                handle: Some(handle),
            })
        }

        pub fn url(&self) -> String {
            format!("http://{}", self.addr)
        }
    }

    impl Drop for StubServer {
        fn drop(&mut self) {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            if let Some(h) = self.handle.take() {
                let _ = h.join();
            }
        }
    }

    fn serve<F: Fn(&[TokenId]) -> Reply>(stream: TcpStream, handler: &F) -> std::io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = stream;
        loop {
            let mut request_line = String::new();
            if reader.read_line(&mut request_line)? == 0 {
                return Ok(());
            }
            let mut content_length = 0usize;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h)?;
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        content_length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; content_length];
            reader.read_exact(&mut body)?;
            let tokens: Vec<TokenId> = serde_json::from_slice::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| serde_json::from_value(v.get("tokens")?.clone()).ok())
                .unwrap_or_default();
            let (status, payload) = render(handler(&tokens));
            let reason = if status == 200 { "OK" } else { "Error" };
            write!(
                writer,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
                payload.len()
            )?;
            writer.flush()?;
        }
    }

    fn render(reply: Reply) -> (u16, String) {
        match reply {
            Reply::Logits(v) => {
                let items: Vec<String> = v
                    .iter()
                    .map(|x| if x.is_finite() { format!("{x:?}") } else { "NaN".into() })
                    .collect();
                (200, format!("{{\"logits\":[{}]}}", items.join(",")))
            }
            Reply::Error(status, msg) => (status, serde_json::json!({ "error": msg }).to_string()),
            Reply::Raw(body) => (200, body),
            Reply::Delay(d, inner) => {
                std::thread::sleep(d);
                render(*inner)
            }
        }
    }
}
