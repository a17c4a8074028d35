//! Adversarial scenarios. Each one adds its own devices on top of an honest
//! trace, so the background population behaves exactly as in a plain run.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::authority::{Credential, Issuer, KeyRing, TokenClass};
use crate::config::HarnessConfig;
use crate::crypto::{BlindRequest, EntryKey, PetToken};
use crate::risk::RiskEngine;
use crate::server::Server;
use crate::time::SECONDS_PER_DAY;
use crate::wire::{EsrRequest, EsrStatus, UserId};

use super::audit::Verdict;
use super::harness::{derive_seed, BeaconSource, Faults, Injection, Mode, Scenario, SimError, Simulation};
use super::report::AttackVerdict;
use super::trace::{ContactTrace, TraceEvent, TraceEventKind};

pub const REPLAY: &str = "replay";
pub const RELAY_WITHIN: &str = "relay-within-epoch";
pub const RELAY_ACROSS: &str = "relay-across-epochs";

fn diagnose(time: u64, device: usize) -> TraceEvent {
    TraceEvent {
        time,
        kind: TraceEventKind::Diagnose { device },
    }
}

fn matches_in(sim: &Simulation, tagged: &BTreeSet<PetToken>) -> usize {
    sim.server()
        .transcript()
        .matches
        .iter()
        .filter(|p| tagged.contains(p))
        .count()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayOutcome {
    /// Matches from a beacon recorded in one epoch and replayed in a later one.
    pub replay_matches: usize,
    /// Matches from a live two-way relay inside a single epoch.
    pub relay_within_matches: usize,
    /// Matches from a two-way relay whose recordings cross an epoch boundary.
    pub relay_across_matches: usize,
    pub injected_encounters: usize,
}

impl ReplayOutcome {
    pub fn verdict(&self) -> AttackVerdict {
        AttackVerdict {
            name: REPLAY.into(),
            verdict: Verdict {
                pass: self.replay_matches == 0 && self.relay_across_matches == 0,
                detail: format!(
                    "replayed beacons matched {}, cross-epoch relay matched {}, same-epoch relay matched {} (the accepted bound)",
                    self.replay_matches, self.relay_across_matches, self.relay_within_matches
                ),
            },
            metrics: vec![
                ("replay_matches".into(), self.replay_matches.to_string()),
                ("relay_across_matches".into(), self.relay_across_matches.to_string()),
                ("relay_within_matches".into(), self.relay_within_matches.to_string()),
                ("injected_encounters".into(), self.injected_encounters.to_string()),
            ],
        }
    }
}

/// A victim's beacon is recorded and played back to third parties. Three
/// variants run side by side with fresh devices: one-way replay into a
/// later epoch, a live two-way relay inside one epoch, and a two-way relay
/// of recordings delivered one epoch late. The victim and all targets of
/// stale beacons are later diagnosed, so any match would surface.
pub fn attack_replay(trace: &ContactTrace, config: &HarnessConfig, seed: u64) -> Result<ReplayOutcome, SimError> {
    let pop = trace.population;
    let (victim, replay_target, relay_target, across_target) = (pop, pop + 1, pop + 2, pop + 3);
    let dur = config.protocol.epoch_duration_sec;
    let e0 = config.protocol.epochs_per_day() + 8;
    let at = |epoch: u64| epoch * dur + 30;
    let window = 600;
    let injections = vec![
        Injection {
            label: REPLAY.into(),
            source: BeaconSource::Captured {
                device: victim,
                at: at(e0),
            },
            target: replay_target,
            start: at(e0 + 2),
            end: at(e0 + 2) + window,
        },
        Injection {
            label: RELAY_WITHIN.into(),
            source: BeaconSource::Live(victim),
            target: relay_target,
            start: at(e0 + 4),
            end: at(e0 + 4) + window,
        },
        Injection {
            label: RELAY_WITHIN.into(),
            source: BeaconSource::Live(relay_target),
            target: victim,
            start: at(e0 + 4),
            end: at(e0 + 4) + window,
        },
        Injection {
            label: RELAY_ACROSS.into(),
            source: BeaconSource::Captured {
                device: victim,
                at: at(e0 + 6),
            },
            target: across_target,
            start: at(e0 + 7),
            end: at(e0 + 7) + window,
        },
        Injection {
            label: RELAY_ACROSS.into(),
            source: BeaconSource::Captured {
                device: across_target,
                at: at(e0 + 6),
            },
            target: victim,
            start: at(e0 + 7),
            end: at(e0 + 7) + window,
        },
    ];
    let t_diag = 2 * SECONDS_PER_DAY + 3600;
    let extra = vec![
        diagnose(t_diag, victim),
        diagnose(t_diag, replay_target),
        diagnose(t_diag, across_target),
    ];
    let trace = trace.extended(4, 5, extra);
    let mut scenario = Scenario::new(trace, config.clone(), seed, Mode::Stateful);
    scenario.injections = injections;
    let out = Simulation::new(scenario)?.run()?;
    let truth = out.sim.ground_truth();
    Ok(ReplayOutcome {
        replay_matches: matches_in(&out.sim, &truth.injected_pets(REPLAY)),
        relay_within_matches: matches_in(&out.sim, &truth.injected_pets(RELAY_WITHIN)),
        relay_across_matches: matches_in(&out.sim, &truth.injected_pets(RELAY_ACROSS)),
        injected_encounters: truth
            .encounters
            .iter()
            .filter(|e| truth.injected.values().any(|s| s.contains(&(e.device, e.peer))))
            .count(),
    })
}

/// A bare server with a registration authority, for probes that need no
/// devices.
pub struct Probe {
    server: Server,
    rng: ChaCha20Rng,
    padding: usize,
    next_phone: u64,
}

impl Probe {
    pub fn new(config: &HarnessConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let p = &config.protocol;
        let keys = KeyRing::new(derive_seed(seed, "probe-keys", 0), config.sim.rsa_bits)?;
        let issuer = Issuer::new(keys, p.ct_days, derive_seed(seed, "probe-issuer", 0));
        let risk = RiskEngine::from_config(&config.scorer, p.ct_days, p.risk_threshold_sec, p.notify_p);
        Ok(Probe {
            server: Server::new(p.clone(), risk, issuer, derive_seed(seed, "probe-server", 0)),
            rng: ChaCha20Rng::from_seed(derive_seed(seed, "probe", 0)),
            padding: p.padding_t,
            next_phone: 0,
        })
    }

    pub fn server(&mut self) -> &mut Server {
        &mut self.server
    }

    pub fn register(&mut self) -> Result<(UserId, EntryKey), SimError> {
        let phone = Credential::Phone(format!("probe-{}", self.next_phone));
        self.next_phone += 1;
        let issuer = self.server.issuer();
        let pk = issuer.public(TokenClass::Registration);
        let (req, blinded) = BlindRequest::new(&mut self.rng, &pk);
        let token = req.finish(&issuer.issue(TokenClass::Registration, &phone, &blinded)?)?;
        self.server
            .register(&token)
            .map_err(|e| SimError::Protocol(e.to_string()))
    }

    /// One status request carrying only random padding.
    pub fn query(&mut self, id: UserId, ek: &EntryKey, epoch: u64) -> Result<EsrStatus, SimError> {
        let tokens = (0..self.padding)
            .map(|_| {
                let mut b = [0u8; 32];
                self.rng.fill_bytes(&mut b);
                PetToken(b)
            })
            .collect();
        self.server
            .handle_esr(
                EsrRequest {
                    id,
                    ek: ek.clone(),
                    tokens,
                },
                epoch,
            )
            .map_err(|e| SimError::Protocol(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotificationRate {
    pub at_risk: usize,
    pub total: usize,
}

impl NotificationRate {
    pub fn fraction(&self) -> f64 {
        self.at_risk as f64 / self.total as f64
    }
}

/// Fraction of "at risk" replies to requests from users with no exposure.
/// Requests from one user are spaced past the notification reset, so every
/// reply is an independent draw.
pub fn notification_rate(
    config: &HarnessConfig,
    seed: u64,
    requests: usize,
    users: usize,
) -> Result<NotificationRate, SimError> {
    let mut probe = Probe::new(config, seed)?;
    let p = &config.protocol;
    let spacing = p.esr_min_epochs().max(p.reset_days as u64 * p.epochs_per_day());
    let ids: Vec<_> = (0..users.max(1)).map(|_| probe.register()).collect::<Result<_, _>>()?;
    let mut at_risk = 0;
    for i in 0..requests {
        let (id, ek) = &ids[i % ids.len()];
        let epoch = (i / ids.len() + 1) as u64 * spacing;
        if probe.query(*id, ek, epoch)? == EsrStatus::AtRisk {
            at_risk += 1;
        }
    }
    Ok(NotificationRate {
        at_risk,
        total: requests,
    })
}

/// Replies a single user gets in one day when asking every epoch.
pub fn answered_per_day(config: &HarnessConfig, seed: u64) -> Result<(u64, u64), SimError> {
    let mut probe = Probe::new(config, seed)?;
    let (id, ek) = probe.register()?;
    let p = &config.protocol;
    let first = p.esr_min_epochs();
    let (mut answered, mut limited) = (0, 0);
    for epoch in first..first + p.epochs_per_day() {
        match probe.query(id, &ek, epoch)? {
            EsrStatus::RateLimited => limited += 1,
            _ => answered += 1,
        }
    }
    Ok((answered, limited))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneEntryOutcome {
    /// With every mitigation off, the adversary was notified.
    pub learned_without_mitigation: bool,
    /// Matches the adversary's requests got under the minimum-count rule.
    pub matches_under_min_count: usize,
    /// At-risk replies the adversary got under the minimum-count rule.
    pub notified_under_min_count: bool,
    pub answered_per_day: u64,
    pub expected_per_day: u64,
    pub false_positive: NotificationRate,
    pub notify_p: f64,
}

impl OneEntryOutcome {
    fn fp_within_bound(&self) -> bool {
        let n = self.false_positive.total as f64;
        let sigma = (self.notify_p * (1.0 - self.notify_p) / n).sqrt();
        (self.false_positive.fraction() - self.notify_p).abs() <= 3.0 * sigma
    }

    pub fn verdict(&self) -> AttackVerdict {
        let pass = self.learned_without_mitigation
            && self.matches_under_min_count == 1
            && !self.notified_under_min_count
            && self.answered_per_day == self.expected_per_day
            && self.fp_within_bound();
        AttackVerdict {
            name: "one-entry".into(),
            verdict: Verdict {
                pass,
                detail: format!(
                    "unmitigated: learned={}; min-count: {} match, notified={}; rate limit: {} of {} allowed answers per day; p={}: false-positive rate {:.4}",
                    self.learned_without_mitigation,
                    self.matches_under_min_count,
                    self.notified_under_min_count,
                    self.answered_per_day,
                    self.expected_per_day,
                    self.notify_p,
                    self.false_positive.fraction()
                ),
            },
            metrics: vec![
                ("learned_without_mitigation".into(), self.learned_without_mitigation.to_string()),
                ("matches_under_min_count".into(), self.matches_under_min_count.to_string()),
                ("notified_under_min_count".into(), self.notified_under_min_count.to_string()),
                ("answered_per_day".into(), self.answered_per_day.to_string()),
                ("false_positive_rate".into(), format!("{:.6}", self.false_positive.fraction())),
                ("false_positive_requests".into(), self.false_positive.total.to_string()),
            ],
        }
    }
}

/// Runs the single-contact scenario and returns (adversary notified,
/// matches on the adversary's requests).
fn one_entry_run(trace: &ContactTrace, config: &HarnessConfig, seed: u64) -> Result<(bool, usize), SimError> {
    let pop = trace.population;
    let (adversary, target) = (pop, pop + 1);
    let dur = config.protocol.epoch_duration_sec;
    let start = (config.protocol.epochs_per_day() + 20) * dur;
    let events = vec![
        TraceEvent {
            time: start,
            kind: TraceEventKind::ContactStart {
                a: adversary,
                b: target,
            },
        },
        TraceEvent {
            time: start + 600,
            kind: TraceEventKind::ContactEnd {
                a: adversary,
                b: target,
            },
        },
        diagnose(2 * SECONDS_PER_DAY + 3600, target),
    ];
    let trace = trace.extended(2, 5, events);
    let out = Simulation::new(Scenario::new(trace, config.clone(), seed, Mode::Stateful))?.run()?;
    let id = out.sim.devices()[adversary].id();
    let matched = out
        .sim
        .server()
        .transcript()
        .requests
        .iter()
        .filter(|r| r.id == id)
        .map(|r| r.matched)
        .sum();
    Ok((out.report.devices[adversary].notified, matched))
}

/// An adversary who holds exactly one RTL entry, for the single user it
/// met, asks for its status. Measured under each mitigation separately:
/// none at all (any single match notifies), the minimum-match-count rule,
/// rate limiting, and probabilistic notification at p = 0.05.
pub fn attack_one_entry(trace: &ContactTrace, config: &HarnessConfig, seed: u64) -> Result<OneEntryOutcome, SimError> {
    let mut off = config.clone();
    off.protocol.notify_p = 0.0;
    off.protocol.risk_threshold_sec = 0.0;
    off.scorer.min_match_count = 1;
    let (learned, _) = one_entry_run(trace, &off, seed)?;

    let mut min_count = off.clone();
    min_count.scorer.min_match_count = 2;
    let (notified, matched) = one_entry_run(trace, &min_count, seed)?;

    let (answered, _) = answered_per_day(&off, seed)?;

    let mut prob = off.clone();
    prob.protocol.notify_p = 0.05;
    let fp = notification_rate(&prob, seed, 4000, 40)?;

    Ok(OneEntryOutcome {
        learned_without_mitigation: learned,
        matches_under_min_count: matched,
        notified_under_min_count: notified,
        answered_per_day: answered,
        expected_per_day: config.protocol.esr_per_day,
        false_positive: fp,
        notify_p: prob.protocol.notify_p,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkabilityOutcome {
    pub honest: Verdict,
    pub control: Verdict,
}

impl LinkabilityOutcome {
    pub fn verdict(&self) -> AttackVerdict {
        AttackVerdict {
            name: "linkability".into(),
            verdict: Verdict {
                pass: self.honest.pass && !self.control.pass,
                detail: format!(
                    "honest run {} ({}); broken uploads {} ({})",
                    self.honest.label(),
                    self.honest.detail,
                    self.control.label(),
                    self.control.detail
                ),
            },
            metrics: vec![
                ("honest".into(), self.honest.label().into()),
                ("negative_control".into(), self.control.label().into()),
            ],
        }
    }
}

/// The unlinkability audit on an honest run and on a run whose diagnosed
/// devices upload their request tokens. The second must fail.
pub fn attack_linkability(
    trace: &ContactTrace,
    config: &HarnessConfig,
    seed: u64,
) -> Result<LinkabilityOutcome, SimError> {
    let honest = Simulation::new(Scenario::new(trace.clone(), config.clone(), seed, Mode::Stateful))?.run()?;
    let mut broken = Scenario::new(trace.clone(), config.clone(), seed, Mode::Stateful);
    broken.faults = Faults {
        upload_rtl_instead: true,
    };
    let control = Simulation::new(broken)?.run()?;
    Ok(LinkabilityOutcome {
        honest: honest.report.audits.unlinkability,
        control: control.report.audits.unlinkability,
    })
}
