//! Exponential backoff for interactions with external resources.

use serde::{Deserialize, Serialize};

/// Failure class of an external operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// Worth retrying (connection refused, cluster offline).
    Transient(String),
    /// Retrying cannot help.
    Permanent(String),
}

impl std::fmt::Display for Fault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fault::Transient(m) => write!(f, "transient: {m}"),
            Fault::Permanent(m) => write!(f, "permanent: {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    pub initial: f64,
    pub multiplier: f64,
    pub max_failures: u32,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy { initial: 1.0, multiplier: 2.0, max_failures: 5 }
    }
}

impl BackoffPolicy {
    /// Delay before retry number `k` (0-based).
    pub fn delay(&self, k: u32) -> f64 {
        self.initial * self.multiplier.powi(k as i32)
    }

    /// Decision after the `failures`-th consecutive failure (1-based).
    pub fn after_failure(&self, failures: u32) -> Decision {
        if failures >= self.max_failures {
            Decision::Pause
        } else {
            Decision::Retry { delay: self.delay(failures.saturating_sub(1)) }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Retry { delay: f64 },
    Pause,
}

/// Reason recorded when the retry budget is exhausted.
pub const MAX_RETRIES: &str = "max-retries";

/// Outcome of [`with_backoff`] when the operation did not succeed.
#[derive(Debug, Clone, PartialEq)]
pub enum Exhausted {
    /// Too many consecutive transient failures; the caller should pause.
    Paused { failures: u32, last: String },
    /// A permanent fault; no retry was attempted.
    Failed(String),
}

/// Runs `op` until it succeeds, retrying transient faults after
/// `initial × multiplier^k` seconds (slept through `sleep`).
pub fn with_backoff<T>(
    policy: &BackoffPolicy,
    mut op: impl FnMut() -> Result<T, Fault>,
    mut sleep: impl FnMut(f64),
) -> Result<T, Exhausted> {
    let mut failures = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(Fault::Permanent(m)) => return Err(Exhausted::Failed(m)),
            Err(Fault::Transient(m)) => {
                failures += 1;
                match policy.after_failure(failures) {
                    Decision::Pause => return Err(Exhausted::Paused { failures, last: m }),
                    Decision::Retry { delay } => sleep(delay),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_failures_then_success_sleeps_one_then_two_seconds() {
        let mut remaining = 2;
        let mut slept = Vec::new();
        let out = with_backoff(
            &BackoffPolicy::default(),
            || {
                if remaining > 0 {
                    remaining -= 1;
                    Err(Fault::Transient("offline".into()))
                } else {
                    Ok(7)
                }
            },
            |d| slept.push(d),
        );
        assert_eq!(out, Ok(7));
        assert_eq!(slept, vec![1.0, 2.0]);
    }

    #[test]
    fn five_failures_pause() {
        let mut slept = Vec::new();
        let out: Result<(), _> = with_backoff(&BackoffPolicy::default(), || Err(Fault::Transient("x".into())), |d| slept.push(d));
        assert_eq!(out, Err(Exhausted::Paused { failures: 5, last: "x".into() }));
        assert_eq!(slept, vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn permanent_faults_skip_retry() {
        let mut calls = 0;
        let out: Result<(), _> = with_backoff(
            &BackoffPolicy::default(),
            || {
                calls += 1;
                Err(Fault::Permanent("bad".into()))
            },
            |_| panic!("no sleep"),
        );
        assert_eq!(out, Err(Exhausted::Failed("bad".into())));
        assert_eq!(calls, 1);
    }
}
