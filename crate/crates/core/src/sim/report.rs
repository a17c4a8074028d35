//! Scenario reports: a human-readable summary and a flat tab-separated
//! table. Both are deterministic functions of the run.

use std::fmt::Write as _;

use super::audit::{AuditResults, Verdict};
use super::harness::Mode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub registrations: u64,
    pub requests: u64,
    pub rate_limited: u64,
    pub at_risk_replies: u64,
    pub matches: u64,
    pub uploads_sent: u64,
    pub uploads_accepted: u64,
    pub uploads_rejected: u64,
    pub diagnoses: u64,
    pub test_results: u64,
    pub encounters_stored: u64,
    pub encounters_too_short: u64,
    pub encounters_rejected: u64,
    pub beacons_delivered: u64,
}

impl Counters {
    fn rows(&self) -> [(&'static str, u64); 14] {
        [
            ("registrations", self.registrations),
            ("requests", self.requests),
            ("rate_limited", self.rate_limited),
            ("at_risk_replies", self.at_risk_replies),
            ("matches", self.matches),
            ("uploads_sent", self.uploads_sent),
            ("uploads_accepted", self.uploads_accepted),
            ("uploads_rejected", self.uploads_rejected),
            ("diagnoses", self.diagnoses),
            ("test_results", self.test_results),
            ("encounters_stored", self.encounters_stored),
            ("encounters_too_short", self.encounters_too_short),
            ("encounters_rejected", self.encounters_rejected),
            ("beacons_delivered", self.beacons_delivered),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceOutcome {
    pub device: usize,
    pub notified: bool,
    pub first_notified_at: Option<u64>,
    pub notification_events: u32,
    pub global_score: f64,
    pub requests: u64,
    pub rate_limited: u64,
    pub at_risk_replies: u64,
    pub rtl_len: usize,
    pub etl_len: usize,
    pub diagnosed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackVerdict {
    pub name: String,
    pub verdict: Verdict,
    /// Named measurements, in display order.
    pub metrics: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioReport {
    pub mode: Mode,
    pub seed: u64,
    pub population: usize,
    pub horizon_days: u32,
    pub devices: Vec<DeviceOutcome>,
    pub counters: Counters,
    pub audits: AuditResults,
    pub attacks: Vec<AttackVerdict>,
}

impl ScenarioReport {
    pub fn notified_set(&self) -> Vec<usize> {
        self.devices.iter().filter(|d| d.notified).map(|d| d.device).collect()
    }

    /// True iff every audit and every attack verdict passed.
    pub fn all_pass(&self) -> bool {
        self.audits.all_pass() && self.attacks.iter().all(|a| a.verdict.pass)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut row = |cols: &[&dyn std::fmt::Display]| {
            let line: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
            out.push_str(&line.join("\t"));
            out.push('\n');
        };
        row(&[&"run", &"mode", &self.mode.as_str()]);
        row(&[&"run", &"seed", &self.seed]);
        row(&[&"run", &"population", &self.population]);
        row(&[&"run", &"horizon_days", &self.horizon_days]);
        for (k, v) in self.counters.rows() {
            row(&[&"counter", &k, &v]);
        }
        for (k, v) in self.audits.iter() {
            row(&[&"audit", &k, &v.label(), &v.detail]);
        }
        for a in &self.attacks {
            row(&[&"attack", &a.name, &a.verdict.label(), &a.verdict.detail]);
            for (k, v) in &a.metrics {
                row(&[&"attack_metric", &a.name, k, v]);
            }
        }
        row(&[
            &"device_header",
            &"device",
            &"notified",
            &"first_notified_at",
            &"notification_events",
            &"global_score",
            &"requests",
            &"rate_limited",
            &"at_risk_replies",
            &"rtl_len",
            &"etl_len",
            &"diagnosed",
        ]);
        for d in &self.devices {
            let first = d.first_notified_at.map_or("-".to_string(), |t| t.to_string());
            row(&[
                &"device",
                &d.device,
                &(d.notified as u8),
                &first,
                &d.notification_events,
                &d.global_score,
                &d.requests,
                &d.rate_limited,
                &d.at_risk_replies,
                &d.rtl_len,
                &d.etl_len,
                &(d.diagnosed as u8),
            ]);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.counters;
        writeln!(
            s,
            "{} run, seed {}, {} devices over {} days",
            self.mode.as_str(),
            self.seed,
            self.population,
            self.horizon_days
        )
        .unwrap();
        writeln!(
            s,
            "encounters stored {}, too short {}; uploads {} sent, {} accepted; {} requests, {} rate limited, {} matches",
            c.encounters_stored, c.encounters_too_short, c.uploads_sent, c.uploads_accepted, c.requests, c.rate_limited, c.matches
        )
        .unwrap();
        let notified = self.notified_set();
        writeln!(s, "notified devices ({}): {:?}", notified.len(), notified).unwrap();
        for (k, v) in self.audits.iter() {
            writeln!(s, "audit {k}: {} ({})", v.label(), v.detail).unwrap();
        }
        for a in &self.attacks {
            writeln!(s, "attack {}: {} ({})", a.name, a.verdict.label(), a.verdict.detail).unwrap();
        }
        s
    }
}
