//! Risk scoring and the notification decision.
//!
//! The scorer and aggregator are strategies so the authority can change the
//! scoring function without touching the protocol.

use rand::Rng;

use crate::config::ScorerConfig;

/// One matched exposure: encounter day and duration in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Exposure {
    pub day: u32,
    pub duration_sec: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct RiskScore(pub f64);

pub trait Scorer: Send + Sync {
    fn score(&self, lepm: &[Exposure], today: u32) -> RiskScore;
}

pub trait Aggregator: Send + Sync {
    fn aggregate(&self, daily: &[RiskScore]) -> RiskScore;
}

/// Total exposed seconds over entries at most `ct_days` old.
#[derive(Clone, Copy, Debug)]
pub struct AdditiveScorer {
    pub ct_days: u32,
}

impl Scorer for AdditiveScorer {
    fn score(&self, lepm: &[Exposure], today: u32) -> RiskScore {
        RiskScore(
            lepm.iter()
                .filter(|e| e.day <= today && today - e.day <= self.ct_days)
                .map(|e| e.duration_sec as f64)
                .sum(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SumAggregator;

impl Aggregator for SumAggregator {
    fn aggregate(&self, daily: &[RiskScore]) -> RiskScore {
        RiskScore(daily.iter().map(|s| s.0).sum())
    }
}

/// Strictly-greater comparison against the threshold.
pub fn decide(score: RiskScore, threshold: f64) -> bool {
    score.0 > threshold
}

/// Deniability: a negative decision becomes positive with
/// probability `p`.
pub fn probabilistic_notify<R: Rng + ?Sized>(decision: bool, p: f64, rng: &mut R) -> bool {
    decision || (p > 0.0 && rng.gen_bool(p.min(1.0)))
}

pub struct RiskEngine {
    scorer: Box<dyn Scorer>,
    aggregator: Box<dyn Aggregator>,
    pub threshold: f64,
    pub notify_p: f64,
    pub min_match_count: usize,
}

impl std::fmt::Debug for RiskEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RiskEngine")
            .field("threshold", &self.threshold)
            .field("notify_p", &self.notify_p)
            .field("min_match_count", &self.min_match_count)
            .finish()
    }
}

impl RiskEngine {
    pub fn new(
        scorer: Box<dyn Scorer>,
        aggregator: Box<dyn Aggregator>,
        threshold: f64,
        notify_p: f64,
        min_match_count: usize,
    ) -> Self {
        RiskEngine {
            scorer,
            aggregator,
            threshold,
            notify_p,
            min_match_count,
        }
    }

    /// Engine for a scorer configuration; the config is assumed validated.
    pub fn from_config(scorer: &ScorerConfig, ct_days: u32, threshold: f64, notify_p: f64) -> Self {
        RiskEngine::new(
            Box::new(AdditiveScorer { ct_days }),
            Box::new(SumAggregator),
            threshold,
            notify_p,
            scorer.min_match_count,
        )
    }

    pub fn score(&self, lepm: &[Exposure], today: u32) -> RiskScore {
        self.scorer.score(lepm, today)
    }

    pub fn aggregate(&self, daily: &[RiskScore]) -> RiskScore {
        self.aggregator.aggregate(daily)
    }

    /// Threshold rule plus the minimum-match-count rule.
    pub fn decide(&self, score: RiskScore, match_count: usize) -> bool {
        match_count >= self.min_match_count && decide(score, self.threshold)
    }

    pub fn notify<R: Rng + ?Sized>(&self, decision: bool, rng: &mut R) -> bool {
        probabilistic_notify(decision, self.notify_p, rng)
    }
}
