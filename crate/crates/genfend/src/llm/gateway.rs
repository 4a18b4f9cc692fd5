//! The gateway: mode dispatch, retries, bounded concurrency, and the two
//! batch operations (comment generation and veracity judgment).

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;

use super::transcript::{cache_key, TranscriptStore};
use super::transport::{ChatMessage, ChatRequest, Transport};
use super::GenerationConfig;
use crate::dataset::{CommentRecord, CommentSource, NewsItem};
use crate::error::{Error, Result};
use crate::profiles::{render_generation_prompt, render_judgment_prompt, PromptPair, UserProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayMode {
    Live,
    Replay,
    LiveWithCache,
}

/// Bounded retry with exponential backoff and ±20% jitter.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub jitter_frac: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
            jitter_frac: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Zero-sleep policy for tests.
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
            jitter_frac: 0.0,
        }
    }

    fn delay_for(&self, attempt: u32) -> Duration {
        if self.base_delay.is_zero() {
            return Duration::ZERO;
        }
        let base = self.base_delay.as_secs_f64() * 2f64.powi(attempt as i32);
        let jitter = if self.jitter_frac > 0.0 {
            rand::thread_rng().gen_range(-self.jitter_frac..=self.jitter_frac)
        } else {
            0.0
        };
        Duration::from_secs_f64((base * (1.0 + jitter)).max(0.0))
    }
}

/// FIFO-fair counting semaphore: tickets are served in acquisition order.
struct InflightLimiter {
    max: usize,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

struct LimiterState {
    active: usize,
    next_ticket: u64,
    queue: VecDeque<u64>,
}

struct InflightPermit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    fn new(max: usize) -> Self {
        InflightLimiter {
            max: max.max(1),
            state: Mutex::new(LimiterState {
                active: 0,
                next_ticket: 0,
                queue: VecDeque::new(),
            }),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> InflightPermit<'_> {
        let mut state = self.state.lock().unwrap();
        let ticket = state.next_ticket;
        state.next_ticket += 1;
        state.queue.push_back(ticket);
        while state.active >= self.max || *state.queue.front().unwrap() != ticket {
            state = self.cv.wait(state).unwrap();
        }
        state.queue.pop_front();
        state.active += 1;
        drop(state);
        InflightPermit { limiter: self }
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().unwrap();
        state.active -= 1;
        drop(state);
        self.limiter.cv.notify_all();
    }
}

/// Slot shared by callers waiting on one in-flight digest.
struct InflightSlot {
    done: Mutex<Option<std::result::Result<String, String>>>,
    cv: Condvar,
}

/// Thread-safe chat gateway.
pub struct Gateway {
    mode: GatewayMode,
    transport: Arc<dyn Transport>,
    store: Option<TranscriptStore>,
    retry: RetryPolicy,
    limiter: InflightLimiter,
    inflight: Mutex<HashMap<String, Arc<InflightSlot>>>,
}

impl Gateway {
    /// Replay-only gateway over a transcript directory; performs no
    /// network operations.
    pub fn replay(store: TranscriptStore) -> Self {
        Gateway::build(
            GatewayMode::Replay,
            Arc::new(super::transport::NoNetwork),
            Some(store),
            RetryPolicy::immediate(1),
            1,
        )
    }

    pub fn live(transport: Arc<dyn Transport>, retry: RetryPolicy, max_inflight: usize) -> Self {
        Gateway::build(GatewayMode::Live, transport, None, retry, max_inflight)
    }

    pub fn live_with_cache(
        transport: Arc<dyn Transport>,
        store: TranscriptStore,
        retry: RetryPolicy,
        max_inflight: usize,
    ) -> Self {
        Gateway::build(
            GatewayMode::LiveWithCache,
            transport,
            Some(store),
            retry,
            max_inflight,
        )
    }

    fn build(
        mode: GatewayMode,
        transport: Arc<dyn Transport>,
        store: Option<TranscriptStore>,
        retry: RetryPolicy,
        max_inflight: usize,
    ) -> Self {
        Gateway {
            mode,
            transport,
            store,
            retry,
            limiter: InflightLimiter::new(max_inflight),
            inflight: Mutex::new(HashMap::new()),
        }
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    /// Resolve one prompt to a response under the gateway's mode.
    pub fn complete(&self, prompt: &PromptPair, config: &GenerationConfig) -> Result<String> {
        config.validate()?;
        let digest = cache_key(prompt, config);
        match self.mode {
            GatewayMode::Replay => {
                let store = self.store.as_ref().ok_or_else(|| {
                    Error::Config("replay mode requires a transcript store".into())
                })?;
                Ok(store.load(&digest)?.response)
            }
            GatewayMode::Live => self.call_coalesced(&digest, prompt, config),
            GatewayMode::LiveWithCache => {
                let store = self.store.as_ref().ok_or_else(|| {
                    Error::Config("live_with_cache mode requires a transcript store".into())
                })?;
                if let Ok(transcript) = store.load(&digest) {
                    return Ok(transcript.response);
                }
                let response = self.call_coalesced(&digest, prompt, config)?;
                store.record(prompt, config, &response)?;
                Ok(response)
            }
        }
    }

    /// Issue the provider call, coalescing identical in-flight digests into
    /// a single request.
    fn call_coalesced(
        &self,
        digest: &str,
        prompt: &PromptPair,
        config: &GenerationConfig,
    ) -> Result<String> {
        let (slot, leader) = {
            let mut map = self.inflight.lock().unwrap();
            match map.get(digest) {
                Some(slot) => (Arc::clone(slot), false),
                None => {
                    let slot = Arc::new(InflightSlot {
                        done: Mutex::new(None),
                        cv: Condvar::new(),
                    });
                    map.insert(digest.to_string(), Arc::clone(&slot));
                    (slot, true)
                }
            }
        };

        if !leader {
            let mut done = slot.done.lock().unwrap();
            while done.is_none() {
                done = slot.cv.wait(done).unwrap();
            }
            return match done.as_ref().unwrap() {
                Ok(text) => Ok(text.clone()),
                Err(message) => Err(Error::Transport(message.clone())),
            };
        }

        let result = self.call_with_retries(prompt, config);
        {
            let mut done = slot.done.lock().unwrap();
            *done = Some(match &result {
                Ok(text) => Ok(text.clone()),
                Err(e) => Err(e.to_string()),
            });
        }
        slot.cv.notify_all();
        self.inflight.lock().unwrap().remove(digest);
        result
    }

    fn call_with_retries(&self, prompt: &PromptPair, config: &GenerationConfig) -> Result<String> {
        let request = ChatRequest {
            model: config.model.clone(),
            messages: vec![
                ChatMessage { role: "system".into(), content: prompt.system.clone() },
                ChatMessage { role: "user".into(), content: prompt.context.clone() },
            ],
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        let mut last_err = None;
        for attempt in 0..self.retry.attempts {
            let _permit = self.limiter.acquire();
            match self.transport.send(&request) {
                Ok(text) => return Ok(text),
                Err(e @ Error::Config(_)) => return Err(e),
                Err(e) => last_err = Some(e),
            }
            drop(_permit);
            if attempt + 1 < self.retry.attempts {
                let delay = self.retry.delay_for(attempt);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
        }
        Err(last_err.unwrap_or_else(|| Error::Transport("no attempts made".into())))
    }

    /// Generate one comment per profile for a news item. Per-profile
    /// failures are collected, not fatal; `comment_index` distinguishes
    /// repeated passes over the same grid (0 for the first comment per
    /// profile, 1 for the second, ...).
    pub fn generate_comments(
        &self,
        news: &NewsItem,
        grid: &[UserProfile],
        config: &GenerationConfig,
        comment_index: usize,
    ) -> GenerationOutcome {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for profile in grid {
            let mut prompt = render_generation_prompt(profile, &news.text);
            if comment_index > 0 {
                // Distinct digest per repeated sample at the same settings.
                prompt.context.push_str(&format!("\n[sample {comment_index}]"));
            }
            match self.complete(&prompt, config) {
                Ok(text) if !text.trim().is_empty() => records.push(CommentRecord {
                    id: format!("{}:{}:{}", news.id, profile.slug(), comment_index),
                    news_id: news.id.clone(),
                    text,
                    source: CommentSource::Generated,
                    profile: Some(*profile),
                }),
                Ok(_) => failures.push((*profile, "empty response".to_string())),
                Err(e) => failures.push((*profile, e.to_string())),
            }
        }
        GenerationOutcome { records, failures }
    }

    /// Ask for a 0/1 veracity judgment and parse the first Arabic numeral.
    pub fn judge_veracity(
        &self,
        news: &NewsItem,
        comments: Option<&[String]>,
        config: &GenerationConfig,
    ) -> Result<u8> {
        let prompt = render_judgment_prompt(&news.text, comments);
        let response = self.complete(&prompt, config)?;
        parse_judgment(&response)
    }
}

/// First `0` or `1` character in the response decides the judgment.
pub fn parse_judgment(response: &str) -> Result<u8> {
    for c in response.chars() {
        match c {
            '0' => return Ok(0),
            '1' => return Ok(1),
            _ => {}
        }
    }
    Err(Error::JudgmentParse { raw: response.to_string() })
}

/// Result of a grid generation pass.
#[derive(Debug)]
pub struct GenerationOutcome {
    pub records: Vec<CommentRecord>,
    pub failures: Vec<(UserProfile, String)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use crate::llm::transport::StubTransport;
    use crate::profiles::enumerate_profiles;

    fn news(id: &str) -> NewsItem {
        NewsItem {
            id: id.into(),
            text: format!("news text {id}"),
            label: Label::Real,
            timestamp: None,
            actual_comments: vec![],
        }
    }

    fn prompt() -> PromptPair {
        PromptPair { system: "s".into(), context: "c".into() }
    }

    #[test]
    fn replay_returns_stored_response_and_never_dials() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::open(dir.path()).unwrap();
        let config = GenerationConfig::generation("m");
        store.record(&prompt(), &config, "stored bytes \u{1F980}").unwrap();

        let gateway = Gateway::replay(TranscriptStore::open(dir.path()).unwrap());
        let out = gateway.complete(&prompt(), &config).unwrap();
        assert_eq!(out, "stored bytes \u{1F980}");

        let mut other = prompt();
        other.context = "something else".into();
        match gateway.complete(&other, &config) {
            Err(Error::CacheMiss { digest }) => assert_eq!(digest.len(), 64),
            other => panic!("expected cache miss, got {other:?}"),
        }
    }

    #[test]
    fn live_with_cache_dedupes_provider_calls() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Arc::new(StubTransport::fixed("reply"));
        let gateway = Gateway::live_with_cache(
            Arc::clone(&stub) as Arc<dyn Transport>,
            TranscriptStore::open(dir.path()).unwrap(),
            RetryPolicy::immediate(3),
            4,
        );
        let config = GenerationConfig::generation("m");
        assert_eq!(gateway.complete(&prompt(), &config).unwrap(), "reply");
        assert_eq!(gateway.complete(&prompt(), &config).unwrap(), "reply");
        assert_eq!(stub.call_count(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let stub = Arc::new(StubTransport::fixed("ok").fail_first(2));
        let gateway = Gateway::live(
            Arc::clone(&stub) as Arc<dyn Transport>,
            RetryPolicy::immediate(3),
            2,
        );
        let out = gateway.complete(&prompt(), &GenerationConfig::generation("m")).unwrap();
        assert_eq!(out, "ok");
        assert_eq!(stub.call_count(), 3);
    }

    #[test]
    fn retries_exhausted_is_transport_error() {
        let stub = Arc::new(StubTransport::fixed("never").fail_first(100));
        let gateway = Gateway::live(
            Arc::clone(&stub) as Arc<dyn Transport>,
            RetryPolicy::immediate(3),
            2,
        );
        assert!(matches!(
            gateway.complete(&prompt(), &GenerationConfig::generation("m")),
            Err(Error::Transport(_))
        ));
        assert_eq!(stub.call_count(), 3);
    }

    #[test]
    fn generation_covers_the_grid() {
        let stub = Arc::new(StubTransport::echoing("comment on "));
        let gateway = Gateway::live(
            Arc::clone(&stub) as Arc<dyn Transport>,
            RetryPolicy::immediate(1),
            4,
        );
        let grid = enumerate_profiles();
        let outcome =
            gateway.generate_comments(&news("n1"), &grid, &GenerationConfig::generation("m"), 0);
        assert_eq!(outcome.records.len(), 30);
        assert!(outcome.failures.is_empty());
        assert!(outcome.records.iter().all(|r| r.profile.is_some()));
        // Empty grid, empty output.
        let empty = gateway.generate_comments(&news("n2"), &[], &GenerationConfig::generation("m"), 0);
        assert!(empty.records.is_empty());
    }

    #[test]
    fn repeated_grid_passes_give_distinct_records() {
        let stub = Arc::new(StubTransport::echoing("c "));
        let gateway = Gateway::live(
            Arc::clone(&stub) as Arc<dyn Transport>,
            RetryPolicy::immediate(1),
            4,
        );
        let grid = enumerate_profiles();
        let config = GenerationConfig::generation("m");
        let item = news("n1");
        let mut all = Vec::new();
        for k in 0..3 {
            all.extend(gateway.generate_comments(&item, &grid, &config, k).records);
        }
        assert_eq!(all.len(), 90);
        let mut ids: Vec<&str> = all.iter().map(|r| r.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 90);
    }

    #[test]
    fn judgment_parsing_rules() {
        assert_eq!(parse_judgment("1").unwrap(), 1);
        assert_eq!(parse_judgment("The answer is 0.").unwrap(), 0);
        assert!(matches!(
            parse_judgment("undetermined"),
            Err(Error::JudgmentParse { .. })
        ));
    }

    #[test]
    fn judge_veracity_parses_through_gateway() {
        let stub = Arc::new(StubTransport::fixed("The answer (Arabic numerals) is: 1"));
        let gateway = Gateway::live(
            Arc::clone(&stub) as Arc<dyn Transport>,
            RetryPolicy::immediate(1),
            1,
        );
        let verdict = gateway
            .judge_veracity(&news("n"), None, &GenerationConfig::judgment("m"))
            .unwrap();
        assert_eq!(verdict, 1);
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};

        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let active_c = Arc::clone(&active);
        let peak_c = Arc::clone(&peak);
        let stub = Arc::new(StubTransport::new(move |req| {
            let now = active_c.fetch_add(1, Ordering::SeqCst) + 1;
            peak_c.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            active_c.fetch_sub(1, Ordering::SeqCst);
            Ok(format!("r:{}", req.messages[1].content))
        }));
        let gateway = Arc::new(Gateway::live(
            Arc::clone(&stub) as Arc<dyn Transport>,
            RetryPolicy::immediate(1),
            3,
        ));
        let mut handles = Vec::new();
        for i in 0..12 {
            let gw = Arc::clone(&gateway);
            handles.push(std::thread::spawn(move || {
                let p = PromptPair { system: "s".into(), context: format!("c{i}") };
                gw.complete(&p, &GenerationConfig::generation("m")).unwrap()
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3, "peak {}", peak.load(Ordering::SeqCst));
        assert_eq!(stub.call_count(), 12);
    }

    #[test]
    fn identical_inflight_digests_coalesce() {
        let stub = Arc::new(StubTransport::new(move |_| {
            std::thread::sleep(Duration::from_millis(40));
            Ok("shared".to_string())
        }));
        let gateway = Arc::new(Gateway::live(
            Arc::clone(&stub) as Arc<dyn Transport>,
            RetryPolicy::immediate(1),
            8,
        ));
        let mut handles = Vec::new();
        for _ in 0..6 {
            let gw = Arc::clone(&gateway);
            handles.push(std::thread::spawn(move || {
                gw.complete(&prompt(), &GenerationConfig::generation("m")).unwrap()
            }));
        }
        for h in handles {
            assert_eq!(h.join().unwrap(), "shared");
        }
        assert_eq!(stub.call_count(), 1);
    }

    #[test]
    fn full_generate_persist_replay_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Arc::new(StubTransport::echoing("gen: "));
        let gateway = Gateway::live_with_cache(
            Arc::clone(&stub) as Arc<dyn Transport>,
            TranscriptStore::open(dir.path()).unwrap(),
            RetryPolicy::immediate(1),
            4,
        );
        let grid = enumerate_profiles();
        let config = GenerationConfig::generation("m");
        let item = news("cycle");
        let live = gateway.generate_comments(&item, &grid, &config, 0);
        assert!(live.failures.is_empty());

        let replay = Gateway::replay(TranscriptStore::open(dir.path()).unwrap());
        let replayed = replay.generate_comments(&item, &grid, &config, 0);
        assert!(replayed.failures.is_empty());
        assert_eq!(live.records, replayed.records);
    }
}
