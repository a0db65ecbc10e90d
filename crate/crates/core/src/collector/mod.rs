//! Rate-limited account polling. Calls are spread evenly over each 15
//! minute window, and each call goes to an account expected to have many
//! unseen tweets, judged by a per-account incoming-rate estimate.

mod sim;

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Lang, Tweet};

pub use sim::{parse_telemetry, AccountSpec, Burst, GeneratedAccounts, Scenario, SimulatedFeed};

pub const WINDOW_SECS: i64 = 900;
pub const N_TOTAL: u32 = 450;
pub const N_SAFE: u32 = 200;
/// Rate assigned to an account nobody has fetched yet, tweets per second.
pub const INITIAL_RATE: f64 = 10.0;
/// Rate assigned after a fetch returns nothing.
pub const FLOOR_RATE: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 100.0;
pub const MAX_RESULTS: usize = 100;
pub const LOOKBACK_SECS: i64 = 7 * 86_400;

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("no accounts to poll")]
    NoAccounts,
    #[error("invalid budget: n_safe {n_safe} must be below n_total {n_total}")]
    Budget { n_total: u32, n_safe: u32 },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("telemetry line {line}: {reason}")]
    Telemetry { line: usize, reason: String },
}

/// A failed call; the slot it used is still spent.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("feed query failed: {0}")]
pub struct FeedError(pub String);

/// One tweet as returned by a feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedTweet {
    /// Ids grow with posting time.
    pub id: u64,
    pub account: String,
    pub created_at_ms: i64,
    pub lang: Lang,
    pub text: String,
}

impl FeedTweet {
    pub fn to_tweet(&self) -> Tweet {
        Tweet {
            id: format!("{:019}", self.id),
            text: self.text.clone(),
            lang: self.lang.clone(),
            account: self.account.clone(),
            created_at: self.created_at_ms.div_euclid(1000),
        }
    }
}

/// Per-account timeline search.
pub trait FeedSource {
    /// Up to 100 tweets of `account` newer than `since_id` and from the last
    /// seven days before `now_ms`, newest first.
    fn query(&mut self, account: &str, since_id: Option<u64>, now_ms: i64) -> Result<Vec<FeedTweet>, FeedError>;
}

/// Time source for the scheduler.
pub trait Clock {
    fn now_ms(&self) -> i64;
    fn sleep_until(&mut self, t_ms: i64);
}

/// Jumps straight to the requested time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    now: i64,
}

impl VirtualClock {
    pub fn new(start_ms: i64) -> Self {
        Self { now: start_ms }
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> i64 {
        self.now
    }

    fn sleep_until(&mut self, t_ms: i64) {
        self.now = self.now.max(t_ms);
    }
}

/// Wall-clock time; sleeps for real.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
    }

    fn sleep_until(&mut self, t_ms: i64) {
        let wait = t_ms - self.now_ms();
        if wait > 0 {
            std::thread::sleep(std::time::Duration::from_millis(wait as u64));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowBudget {
    pub window_secs: i64,
    pub n_total: u32,
    pub n_safe: u32,
}

impl Default for WindowBudget {
    fn default() -> Self {
        Self { window_secs: WINDOW_SECS, n_total: N_TOTAL, n_safe: N_SAFE }
    }
}

impl WindowBudget {
    pub fn with_safe(n_safe: u32) -> Result<Self, CollectorError> {
        let b = Self { n_safe, ..Self::default() };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        if self.n_safe >= self.n_total || self.window_secs <= 0 {
            return Err(CollectorError::Budget { n_total: self.n_total, n_safe: self.n_safe });
        }
        Ok(())
    }

    /// Calls per window.
    pub fn calls(&self) -> u32 {
        self.n_total - self.n_safe
    }

    /// Gap between calls, rounded up to whole milliseconds so a window
    /// never holds more than `calls()` of them.
    pub fn spacing_ms(&self) -> i64 {
        let w = self.window_secs * 1000;
        let n = i64::from(self.calls());
        (w + n - 1) / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountState {
    pub account_id: String,
    /// Tweets per second.
    pub rate_estimate: f64,
    pub last_fetched_ms: i64,
    pub fetch_count: u64,
    /// Newest tweet id seen so far.
    pub since_id: Option<u64>,
}

impl AccountState {
    /// A never-fetched account, counted from `now_ms`.
    pub fn new(account_id: impl Into<String>, now_ms: i64) -> Self {
        Self { account_id: account_id.into(), rate_estimate: INITIAL_RATE, last_fetched_ms: now_ms, fetch_count: 0, since_id: None }
    }
}

/// Expected unseen tweets: rate times seconds since the last fetch.
pub fn estimate_available(state: &AccountState, now_ms: i64) -> f64 {
    state.rate_estimate * ((now_ms - state.last_fetched_ms).max(0) as f64 / 1000.0)
}

/// Uniform among accounts whose estimate exceeds `threshold`; otherwise the
/// largest estimate, ties to the earliest account.
pub fn select_account<R: Rng + ?Sized>(states: &[AccountState], now_ms: i64, threshold: f64, rng: &mut R) -> Option<usize> {
    if states.is_empty() {
        return None;
    }
    let est: Vec<f64> = states.iter().map(|s| estimate_available(s, now_ms)).collect();
    let eligible: Vec<usize> = (0..states.len()).filter(|&i| est[i] > threshold).collect();
    if !eligible.is_empty() {
        return Some(eligible[rng.random_range(0..eligible.len())]);
    }
    let mut best = 0;
    for i in 1..est.len() {
        if est[i] > est[best] {
            best = i;
        }
    }
    Some(best)
}

/// Re-estimates the rate from a fetch result (newest first or any order).
pub fn update_rate(state: &mut AccountState, result: &[FeedTweet], now_ms: i64) {
    match result.len() {
        0 => state.rate_estimate = FLOOR_RATE,
        // A first fetch returning one tweet saw the whole lookback period;
        // keeping the initial rate would have the account polled again at once.
        1 if state.fetch_count == 0 => state.rate_estimate = 1.0 / LOOKBACK_SECS as f64,
        1 => tracing::debug!(account = %state.account_id, "single tweet returned; rate unchanged"),
        n => {
            let newest = result.iter().map(|t| t.created_at_ms).max().expect("non-empty");
            let oldest = result.iter().map(|t| t.created_at_ms).min().expect("non-empty");
            let span = (newest - oldest) as f64 / 1000.0;
            state.rate_estimate = if span > 0.0 { n as f64 / span } else { n as f64 };
        }
    }
    if let Some(max_id) = result.iter().map(|t| t.id).max() {
        state.since_id = Some(state.since_id.map_or(max_id, |s| s.max(max_id)));
    }
    state.last_fetched_ms = now_ms;
    state.fetch_count += 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    RateBased { threshold: f64 },
    /// Fixed cyclic order; the comparison baseline.
    RoundRobin,
}

impl Default for Policy {
    fn default() -> Self {
        Policy::RateBased { threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionConfig {
    pub budget: WindowBudget,
    pub policy: Policy,
    pub duration_secs: i64,
    pub seed: u64,
    /// Keep only tweets in these languages; `None` keeps all.
    pub langs: Option<Vec<Lang>>,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self { budget: WindowBudget::default(), policy: Policy::default(), duration_secs: 86_400, seed: 0, langs: None }
    }
}

/// Per-window counters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowTelemetry {
    pub window: u64,
    pub calls: u32,
    pub failures: u32,
    /// New unique tweets returned in this window.
    pub tweets: u64,
    /// New tweets kept after language filtering.
    pub kept: u64,
    pub per_account: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionResult {
    pub tweets: Vec<Tweet>,
    pub telemetry: Vec<WindowTelemetry>,
    pub states: Vec<AccountState>,
    /// Start time of every call, in order.
    pub call_times_ms: Vec<i64>,
}

impl CollectionResult {
    /// Unique tweets returned, before language filtering.
    pub fn yield_count(&self) -> u64 {
        self.telemetry.iter().map(|w| w.tweets).sum()
    }

    pub fn calls(&self) -> u64 {
        self.telemetry.iter().map(|w| u64::from(w.calls)).sum()
    }

    pub fn telemetry_jsonl(&self) -> String {
        self.telemetry.iter().map(|w| serde_json::to_string(w).expect("telemetry serializes") + "\n").collect()
    }
}

/// Polls `accounts` for `duration_secs` of clock time, one call per slot.
/// A failed call spends its slot; the same account is retried next slot.
pub fn run_collection<S: FeedSource + ?Sized, C: Clock + ?Sized>(
    accounts: &[String],
    source: &mut S,
    clock: &mut C,
    cfg: &CollectionConfig,
) -> Result<CollectionResult, CollectorError> {
    cfg.budget.validate()?;
    if accounts.is_empty() {
        return Err(CollectorError::NoAccounts);
    }
    let start = clock.now_ms();
    let end = start + cfg.duration_secs.max(0) * 1000;
    let spacing = cfg.budget.spacing_ms();
    let per_window = u64::from(cfg.budget.calls());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut states: Vec<AccountState> = accounts.iter().map(|a| AccountState::new(a.clone(), start)).collect();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut tweets = Vec::new();
    let mut telemetry: Vec<WindowTelemetry> = Vec::new();
    let mut call_times = Vec::new();
    let mut retry: Option<usize> = None;
    let mut cursor = 0usize;

    let mut slot: u64 = 0;
    loop {
        let t = start + slot as i64 * spacing;
        if t >= end {
            break;
        }
        clock.sleep_until(t);
        let now = clock.now_ms();
        let window = slot / per_window;
        if telemetry.last().is_none_or(|w| w.window != window) {
            telemetry.push(WindowTelemetry { window, ..WindowTelemetry::default() });
        }
        let idx = match retry.take() {
            Some(i) => i,
            None => match cfg.policy {
                Policy::RateBased { threshold } => select_account(&states, now, threshold, &mut rng).expect("non-empty"),
                Policy::RoundRobin => {
                    let i = cursor;
                    cursor = (cursor + 1) % states.len();
                    i
                }
            },
        };
        let w = telemetry.last_mut().expect("pushed above");
        w.calls += 1;
        call_times.push(now);
        let account = states[idx].account_id.clone();
        match source.query(&account, states[idx].since_id, now) {
            Ok(result) => {
                update_rate(&mut states[idx], &result, now);
                let mut fresh = 0u32;
                for ft in result {
                    if seen.insert(ft.id) {
                        fresh += 1;
                        w.tweets += 1;
                        if cfg.langs.as_ref().is_none_or(|ls| ls.contains(&ft.lang)) {
                            w.kept += 1;
                            tweets.push(ft.to_tweet());
                        }
                    }
                }
                *w.per_account.entry(account).or_default() += fresh;
            }
            Err(e) => {
                tracing::warn!(%account, error = %e, "fetch failed; retrying next slot");
                w.failures += 1;
                retry = Some(idx);
            }
        }
        slot += 1;
    }
    tweets.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CollectionResult { tweets, telemetry, states, call_times_ms: call_times })
}
