//! Simulated per-account feeds driven by a TOML scenario.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CollectionConfig, CollectorError, FeedError, FeedSource, FeedTweet, Policy, WindowBudget, WindowTelemetry, DEFAULT_THRESHOLD, LOOKBACK_SECS, MAX_RESULTS, N_SAFE};
use crate::corpus::Lang;

/// Rate multiplier over `[start_secs, end_secs)`, relative to the run start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub start_secs: i64,
    pub end_secs: i64,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountSpec {
    pub id: String,
    /// True posting rate, tweets per second.
    pub rate: f64,
    #[serde(default = "default_lang")]
    pub lang: Lang,
    #[serde(default)]
    pub bursts: Vec<Burst>,
}

impl AccountSpec {
    fn rate_at(&self, t_secs: f64) -> f64 {
        let m: f64 = self
            .bursts
            .iter()
            .filter(|b| t_secs >= b.start_secs as f64 && t_secs < b.end_secs as f64)
            .map(|b| b.multiplier)
            .product();
        self.rate * m
    }

    fn peak_rate(&self) -> f64 {
        let m: f64 = self.bursts.iter().map(|b| b.multiplier.max(1.0)).product();
        self.rate * m
    }
}

/// Many accounts where a small fraction carries most of the traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAccounts {
    pub count: usize,
    /// Summed rate over all generated accounts, tweets per second.
    pub total_rate: f64,
    pub heavy_fraction: f64,
    pub heavy_share: f64,
    #[serde(default = "default_langs")]
    pub langs: Vec<Lang>,
}

fn default_lang() -> Lang {
    Lang::En
}

fn default_langs() -> Vec<Lang> {
    vec![Lang::En]
}

fn default_duration() -> i64 {
    86_400
}

fn default_warmup() -> i64 {
    3_600
}

fn default_start() -> i64 {
    1_538_352_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_secs: i64,
    /// Posting history generated before the run starts.
    #[serde(default = "default_warmup")]
    pub warmup_secs: i64,
    #[serde(default = "default_start")]
    pub start_ms: i64,
    /// Chance that any single query fails.
    #[serde(default)]
    pub failure_rate: f64,
    #[serde(default)]
    pub n_safe: Option<u32>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub langs: Option<Vec<Lang>>,
    #[serde(default)]
    pub accounts: Vec<AccountSpec>,
    #[serde(default)]
    pub generate: Option<GeneratedAccounts>,
}

impl Scenario {
    /// `count` accounts, 10% of which post 90% of `total_rate`.
    pub fn skewed(count: usize, total_rate: f64, seed: u64) -> Self {
        Self {
            seed,
            duration_secs: default_duration(),
            warmup_secs: default_warmup(),
            start_ms: default_start(),
            failure_rate: 0.0,
            n_safe: None,
            threshold: None,
            langs: None,
            accounts: Vec::new(),
            generate: Some(GeneratedAccounts { count, total_rate, heavy_fraction: 0.1, heavy_share: 0.9, langs: default_langs() }),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CollectorError> {
        let s: Self = toml::from_str(text).map_err(|e| CollectorError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CollectorError> {
        let text = std::fs::read_to_string(path).map_err(|e| CollectorError::Scenario(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        let bad = |m: String| Err(CollectorError::Scenario(m));
        if self.duration_secs < 0 || self.warmup_secs < 0 {
            return bad("durations must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return bad(format!("failure_rate {} outside [0, 1]", self.failure_rate));
        }
        if let Some(g) = &self.generate {
            if !(g.total_rate.is_finite() && g.total_rate >= 0.0) {
                return bad("generate.total_rate must be finite and non-negative".into());
            }
            if !(0.0..=1.0).contains(&g.heavy_fraction) || !(0.0..=1.0).contains(&g.heavy_share) {
                return bad("generate fractions must lie in [0, 1]".into());
            }
            if g.langs.is_empty() {
                return bad("generate.langs is empty".into());
            }
        }
        let mut ids = HashSet::new();
        for a in self.resolved_accounts() {
            if !(a.rate.is_finite() && a.rate >= 0.0) {
                return bad(format!("account `{}` has invalid rate {}", a.id, a.rate));
            }
            if a.bursts.iter().any(|b| !(b.multiplier.is_finite() && b.multiplier >= 0.0) || b.end_secs < b.start_secs) {
                return bad(format!("account `{}` has an invalid burst", a.id));
            }
            if !ids.insert(a.id.clone()) {
                return bad(format!("duplicate account `{}`", a.id));
            }
        }
        if ids.is_empty() {
            return bad("scenario defines no accounts".into());
        }
        Ok(())
    }

    /// Explicit accounts followed by generated ones.
    pub fn resolved_accounts(&self) -> Vec<AccountSpec> {
        let mut out = self.accounts.clone();
        let Some(g) = &self.generate else { return out };
        if g.count == 0 {
            return out;
        }
        let n_heavy = ((g.count as f64 * g.heavy_fraction).round() as usize).clamp(1, g.count);
        let n_light = g.count - n_heavy;
        let heavy_rate = g.total_rate * if n_light == 0 { 1.0 } else { g.heavy_share } / n_heavy as f64;
        let light_rate = if n_light == 0 { 0.0 } else { g.total_rate * (1.0 - g.heavy_share) / n_light as f64 };
        let mut heavy: Vec<bool> = (0..g.count).map(|i| i < n_heavy).collect();
        heavy.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_acc7));
        for (i, h) in heavy.into_iter().enumerate() {
            out.push(AccountSpec {
                id: format!("acct{i:05}"),
                rate: if h { heavy_rate } else { light_rate },
                lang: g.langs[i % g.langs.len()].clone(),
                bursts: Vec::new(),
            });
        }
        out
    }

    pub fn account_ids(&self) -> Vec<String> {
        self.resolved_accounts().into_iter().map(|a| a.id).collect()
    }

    pub fn collection_config(&self, policy: Policy) -> Result<CollectionConfig, CollectorError> {
        let budget = WindowBudget::with_safe(self.n_safe.unwrap_or(N_SAFE))?;
        let policy = match policy {
            Policy::RateBased { .. } if self.threshold.is_some() => Policy::RateBased { threshold: self.threshold.unwrap_or(DEFAULT_THRESHOLD) },
            p => p,
        };
        Ok(CollectionConfig { budget, policy, duration_secs: self.duration_secs, seed: self.seed, langs: self.langs.clone() })
    }
}

/// Pre-generated Poisson posting histories for every account.
#[derive(Debug, Clone)]
pub struct SimulatedFeed {
    index: HashMap<String, usize>,
    specs: Vec<AccountSpec>,
    /// Per account, `(created_at_ms, id)` in posting order.
    posts: Vec<Vec<(i64, u64)>>,
    failure_rate: f64,
    rng: ChaCha8Rng,
    pub queries: u64,
}

impl SimulatedFeed {
    pub fn new(scenario: &Scenario) -> Result<Self, CollectorError> {
        scenario.validate()?;
        let specs = scenario.resolved_accounts();
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let from = -scenario.warmup_secs as f64;
        let to = scenario.duration_secs as f64;
        let mut all: Vec<(i64, usize)> = Vec::new();
        for (ai, spec) in specs.iter().enumerate() {
            let peak = spec.peak_rate();
            if peak <= 0.0 {
                continue;
            }
            // Thinning: candidate arrivals at the peak rate, kept in proportion
            // to the rate at that moment.
            let mut t = from;
            loop {
                let u: f64 = rng.random();
                t += -(1.0 - u).ln() / peak;
                if t >= to {
                    break;
                }
                if rng.random::<f64>() * peak < spec.rate_at(t) {
                    all.push((scenario.start_ms + (t * 1000.0).floor() as i64, ai));
                }
            }
        }
        all.sort_unstable();
        let mut posts = vec![Vec::new(); specs.len()];
        for (n, (t, ai)) in all.into_iter().enumerate() {
            posts[ai].push((t, n as u64 + 1));
        }
        let index = specs.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        Ok(Self { index, specs, posts, failure_rate: scenario.failure_rate, rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ 0xfa11), queries: 0 })
    }

    /// Tweets posted by all accounts in `[from_ms, to_ms)`.
    pub fn posted_between(&self, from_ms: i64, to_ms: i64) -> u64 {
        self.posts
            .iter()
            .map(|p| (p.partition_point(|&(t, _)| t < to_ms) - p.partition_point(|&(t, _)| t < from_ms)) as u64)
            .sum()
    }

    pub fn posted_by(&self, account: &str, from_ms: i64, to_ms: i64) -> u64 {
        self.index.get(account).map_or(0, |&i| {
            let p = &self.posts[i];
            (p.partition_point(|&(t, _)| t < to_ms) - p.partition_point(|&(t, _)| t < from_ms)) as u64
        })
    }

    pub fn specs(&self) -> &[AccountSpec] {
        &self.specs
    }
}

impl FeedSource for SimulatedFeed {
    fn query(&mut self, account: &str, since_id: Option<u64>, now_ms: i64) -> Result<Vec<FeedTweet>, FeedError> {
        self.queries += 1;
        let &ai = self.index.get(account).ok_or_else(|| FeedError(format!("unknown account `{account}`")))?;
        if self.failure_rate > 0.0 && self.rng.random_bool(self.failure_rate) {
            return Err(FeedError("simulated outage".into()));
        }
        let p = &self.posts[ai];
        let hi = p.partition_point(|&(t, _)| t <= now_ms);
        let mut lo = p.partition_point(|&(t, _)| t < now_ms - LOOKBACK_SECS * 1000);
        if let Some(s) = since_id {
            lo = lo.max(p.partition_point(|&(_, id)| id <= s));
        }
        let lo = lo.max(hi.saturating_sub(MAX_RESULTS)).min(hi);
        let spec = &self.specs[ai];
        Ok(p[lo..hi]
            .iter()
            .rev()
            .map(|&(t, id)| FeedTweet { id, account: spec.id.clone(), created_at_ms: t, lang: spec.lang.clone(), text: format!("post {id} by {}", spec.id) })
            .collect())
    }
}

/// Reads a telemetry JSONL file back.
pub fn parse_telemetry(text: &str) -> Result<Vec<WindowTelemetry>, CollectorError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CollectorError::Telemetry { line: i + 1, reason: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = r#"
seed = 3
duration_secs = 3600
warmup_secs = 600

[[accounts]]
id = "busy"
rate = 0.5
lang = "de"

[[accounts.bursts]]
start_secs = 0
end_secs = 600
multiplier = 4.0

[[accounts]]
id = "quiet"
rate = 0.001
"#;

    #[test]
    fn parses_and_generates() {
        let s = Scenario::parse(SCENARIO).unwrap();
        assert_eq!(s.account_ids(), vec!["busy", "quiet"]);
        let feed = SimulatedFeed::new(&s).unwrap();
        let burst = feed.posted_by("busy", s.start_ms, s.start_ms + 600_000) as f64;
        let calm = feed.posted_by("busy", s.start_ms + 600_000, s.start_ms + 1_200_000) as f64;
        assert!(burst > 2.5 * calm, "burst {burst} calm {calm}");
    }

    #[test]
    fn query_contract() {
        let s = Scenario::parse(SCENARIO).unwrap();
        let mut feed = SimulatedFeed::new(&s).unwrap();
        let now = s.start_ms + 1_800_000;
        let r = feed.query("busy", None, now).unwrap();
        assert_eq!(r.len(), MAX_RESULTS);
        assert!(r.windows(2).all(|w| w[0].id > w[1].id && w[0].created_at_ms >= w[1].created_at_ms));
        assert!(r.iter().all(|t| t.created_at_ms <= now && t.lang == Lang::De));
        let newest = r[0].id;
        let again = feed.query("busy", Some(newest), now + 60_000).unwrap();
        assert!(again.iter().all(|t| t.id > newest));
        assert!(feed.query("nobody", None, now).is_err());
    }

    #[test]
    fn rejects_bad_scenarios() {
        assert!(Scenario::parse("").is_err());
        assert!(Scenario::parse("[[accounts]]\nid = \"a\"\nrate = -1.0\n").is_err());
        assert!(Scenario::parse("[[accounts]]\nid = \"a\"\nrate = 1.0\n[[accounts]]\nid = \"a\"\nrate = 1.0\n").is_err());
        assert!(Scenario::parse("failure_rate = 2.0\n[[accounts]]\nid = \"a\"\nrate = 1.0\n").is_err());
    }

    #[test]
    fn skewed_split() {
        let s = Scenario::skewed(100, 10.0, 1);
        let accts = s.resolved_accounts();
        let total: f64 = accts.iter().map(|a| a.rate).sum();
        let mut rates: Vec<f64> = accts.iter().map(|a| a.rate).collect();
        rates.sort_by(|a, b| b.total_cmp(a));
        let top: f64 = rates[..10].iter().sum();
        assert!((total - 10.0).abs() < 1e-9);
        assert!((top / total - 0.9).abs() < 1e-9);
    }
}
