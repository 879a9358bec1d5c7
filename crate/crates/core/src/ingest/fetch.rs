use std::collections::HashSet;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::source::{Candidate, ImageSource, SourceError};
use super::PlanEntry;

/// Per-source fetch behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Politeness {
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    /// Minimum spacing between requests to one source; 0 disables the limiter.
    pub min_interval_ms: u64,
    /// Upper bound on concurrent requests to one source (the adapter's own
    /// declaration may lower it further).
    pub max_in_flight: usize,
    /// When non-empty, only these hosts may be fetched from.
    pub allow_hosts: Vec<String>,
    pub deny_hosts: Vec<String>,
}

impl Default for Politeness {
    fn default() -> Self {
        Politeness {
            max_attempts: 3,
            initial_backoff_ms: 500,
            min_interval_ms: 1000,
            max_in_flight: 4,
            allow_hosts: Vec::new(),
            deny_hosts: Vec::new(),
        }
    }
}

impl Politeness {
    /// No rate limit; used for local folders.
    pub fn unthrottled() -> Self {
        Politeness {
            min_interval_ms: 0,
            initial_backoff_ms: 10,
            ..Politeness::default()
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16)))
    }

    /// Reason the origin may not be fetched, if any. Non-URL origins (local
    /// paths) carry no host and are always allowed.
    pub fn refusal(&self, origin: &str) -> Option<String> {
        let host = url::Url::parse(origin).ok()?.host_str()?.to_ascii_lowercase();
        let matches = |pattern: &String| {
            let p = pattern.to_ascii_lowercase();
            host == p || host.ends_with(&format!(".{p}"))
        };
        if self.deny_hosts.iter().any(matches) {
            return Some(format!("host {host} is on the deny list"));
        }
        if !self.allow_hosts.is_empty() && !self.allow_hosts.iter().any(matches) {
            return Some(format!("host {host} is not on the allow list"));
        }
        None
    }
}

/// Spaces requests to one source at least `min_interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        RateLimiter {
            min_interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut slot = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let start = match *slot {
                Some(t) if t > now => t,
                _ => now,
            };
            *slot = Some(start + self.min_interval);
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// Counting semaphore capping in-flight requests to one source.
#[derive(Debug)]
pub(crate) struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    pub(crate) fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn hold<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut used = self.used.lock().unwrap();
            while *used >= self.limit {
                used = self.freed.wait(used).unwrap();
            }
            *used += 1;
        }
        let out = f();
        *self.used.lock().unwrap() -= 1;
        self.freed.notify_one();
        out
    }
}

/// Shared per-source throttling state.
#[derive(Debug)]
pub(crate) struct Throttle {
    pub(crate) limiter: RateLimiter,
    pub(crate) in_flight: InFlight,
}

impl Throttle {
    pub(crate) fn new(politeness: &Politeness, adapter: &dyn ImageSource) -> Self {
        Throttle {
            limiter: RateLimiter::new(Duration::from_millis(politeness.min_interval_ms)),
            in_flight: InFlight::new(politeness.max_in_flight.min(adapter.max_in_flight())),
        }
    }

    pub(crate) fn in_flight_limit(&self) -> usize {
        self.in_flight.limit
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchFailure {
    pub origin: String,
    pub attempts: u32,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct FetchedPayload {
    pub candidate: Candidate,
    pub bytes: Vec<u8>,
}

/// What one plan entry yielded, before persistence.
#[derive(Debug, Clone, Default)]
pub struct FetchOutcome {
    pub payloads: Vec<FetchedPayload>,
    pub failures: Vec<FetchFailure>,
    /// Set when the entry was abandoned (refusal); remaining candidates untried.
    pub skipped: Option<String>,
    /// `need - payloads.len()` when the source ran dry.
    pub shortfall: u64,
}

fn with_retry<T>(
    politeness: &Politeness,
    throttle: &Throttle,
    mut call: impl FnMut() -> Result<T, SourceError>,
) -> (Result<T, SourceError>, u32) {
    let attempts = politeness.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        throttle.limiter.acquire();
        let result = throttle.in_flight.hold(&mut call);
        match result {
            Err(SourceError::Transient(_)) if attempt < attempts => {
                thread::sleep(politeness.backoff(attempt));
                attempt += 1;
            }
            other => return (other, attempt),
        }
    }
}

/// Fetch up to `need` payloads for one plan entry. Candidates whose origin is
/// in `known_origins` are skipped without a request.
pub(crate) fn fetch_payloads(
    entry: &PlanEntry,
    need: u64,
    adapter: &dyn ImageSource,
    politeness: &Politeness,
    throttle: &Throttle,
    known_origins: &HashSet<String>,
) -> FetchOutcome {
    let mut outcome = FetchOutcome::default();
    if need == 0 {
        return outcome;
    }
    // over-ask so failed or already-known candidates can be replaced
    let limit = (need as usize).saturating_mul(2).saturating_add(known_origins.len().min(need as usize * 4));
    let (found, attempts) = with_retry(politeness, throttle, || adapter.search(entry, limit));
    let candidates = match found {
        Ok(c) => c,
        Err(SourceError::Refused(reason)) => {
            outcome.skipped = Some(reason);
            outcome.shortfall = need;
            return outcome;
        }
        Err(e) => {
            outcome.failures.push(FetchFailure {
                origin: entry.query.clone(),
                attempts,
                reason: e.to_string(),
            });
            outcome.shortfall = need;
            return outcome;
        }
    };
    for candidate in candidates {
        if outcome.payloads.len() as u64 >= need {
            break;
        }
        if known_origins.contains(&candidate.origin) {
            continue;
        }
        if let Some(reason) = politeness.refusal(&candidate.origin) {
            outcome.failures.push(FetchFailure {
                origin: candidate.origin.clone(),
                attempts: 0,
                reason,
            });
            continue;
        }
        let (result, attempts) = with_retry(politeness, throttle, || adapter.download(&candidate));
        match result {
            Ok(bytes) => outcome.payloads.push(FetchedPayload { candidate, bytes }),
            Err(SourceError::Refused(reason)) => {
                outcome.skipped = Some(reason);
                break;
            }
            Err(e) => outcome.failures.push(FetchFailure {
                origin: candidate.origin.clone(),
                attempts,
                reason: e.to_string(),
            }),
        }
    }
    outcome.shortfall = need.saturating_sub(outcome.payloads.len() as u64);
    outcome
}

/// Fetch one plan entry without persisting anything: up to `entry.target`
/// payloads, in the adapter's result order.
pub fn fetch(entry: &PlanEntry, adapter: &dyn ImageSource, politeness: &Politeness) -> FetchOutcome {
    let throttle = Throttle::new(politeness, adapter);
    fetch_payloads(entry, entry.target, adapter, politeness, &throttle, &HashSet::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SourceKind;
    use crate::VehicleClass;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        fail_first: u32,
        calls: AtomicU32,
        error: SourceError,
    }

    impl ImageSource for Flaky {
        fn kind(&self) -> SourceKind {
            SourceKind::SearchEngine
        }
        fn search(&self, _: &PlanEntry, limit: usize) -> Result<Vec<Candidate>, SourceError> {
            Ok((0..limit.min(3))
                .map(|i| Candidate { origin: format!("https://img.example.com/{i}.jpg"), file_name: format!("{i}.jpg") })
                .collect())
        }
        fn download(&self, c: &Candidate) -> Result<Vec<u8>, SourceError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(self.error.clone())
            } else {
                Ok(c.origin.as_bytes().to_vec())
            }
        }
    }

    fn entry(target: u64) -> PlanEntry {
        PlanEntry {
            make: "Renault".into(),
            model: "Master".into(),
            vehicle_class: VehicleClass::MediumDuty,
            source: SourceKind::SearchEngine,
            query: "Renault Master".into(),
            target,
        }
    }

    fn fast() -> Politeness {
        Politeness { initial_backoff_ms: 1, min_interval_ms: 0, ..Politeness::default() }
    }

    #[test]
    fn transient_errors_are_retried() {
        let src = Flaky { fail_first: 2, calls: AtomicU32::new(0), error: SourceError::Transient("503".into()) };
        let out = fetch(&entry(1), &src, &fast());
        assert_eq!(out.payloads.len(), 1);
        assert!(out.failures.is_empty());
        assert_eq!(src.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_become_failures() {
        let src = Flaky { fail_first: 3, calls: AtomicU32::new(0), error: SourceError::Transient("reset".into()) };
        let out = fetch(&entry(1), &src, &fast());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].attempts, 3);
        // the next candidate succeeds
        assert_eq!(out.payloads.len(), 1);
    }

    #[test]
    fn refusal_skips_entry() {
        let src = Flaky { fail_first: 100, calls: AtomicU32::new(0), error: SourceError::Refused("429".into()) };
        let out = fetch(&entry(3), &src, &fast());
        assert!(out.payloads.is_empty());
        assert_eq!(out.skipped.as_deref(), Some("429"));
        assert_eq!(src.calls.load(Ordering::SeqCst), 1);
        assert_eq!(out.shortfall, 3);
    }

    #[test]
    fn deny_list_blocks_host() {
        let src = Flaky { fail_first: 0, calls: AtomicU32::new(0), error: SourceError::Transient(String::new()) };
        let p = Politeness { deny_hosts: vec!["example.com".into()], ..fast() };
        let out = fetch(&entry(2), &src, &p);
        assert!(out.payloads.is_empty());
        assert_eq!(out.failures.len(), 3);
        assert_eq!(src.calls.load(Ordering::SeqCst), 0);

        let allow = Politeness { allow_hosts: vec!["cdn.other.org".into()], ..fast() };
        assert!(allow.refusal("https://img.example.com/a.jpg").is_some());
        assert!(allow.refusal("/local/path.jpg").is_none());
    }

    #[test]
    fn backoff_doubles() {
        let p = Politeness::default();
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_millis(1000));
        assert_eq!(p.backoff(3), Duration::from_millis(2000));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(Duration::from_millis(20));
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(60));
    }
}
