//! Contact traces.
//!
//! Line-oriented text; `#` starts a comment. Grammar:
//!
//! ```text
//! population <n>
//! horizon_days <d>
//! <time_sec> start <a> <b>        contact between devices a and b begins
//! <time_sec> end <a> <b>          ... and ends
//! <time_sec> diagnose <a>         a is diagnosed positive
//! <time_sec> test <a> positive|negative
//! ```
//!
//! Header lines come first; events must be in non-decreasing time order.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::time::SECONDS_PER_DAY;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {msg}")]
pub struct TraceError {
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEventKind {
    ContactStart { a: usize, b: usize },
    ContactEnd { a: usize, b: usize },
    Diagnose { device: usize },
    TestResult { device: usize, positive: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: u64,
    pub kind: TraceEventKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactTrace {
    pub population: usize,
    pub horizon_days: u32,
    pub events: Vec<TraceEvent>,
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl ContactTrace {
    pub fn horizon_sec(&self) -> u64 {
        self.horizon_days as u64 * SECONDS_PER_DAY
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut population = None;
        let mut horizon_days = None;
        let mut events = Vec::new();
        let mut open = BTreeSet::new();
        let mut last_time = 0u64;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| TraceError { line, msg };
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let num = |s: &str| -> Result<u64, TraceError> {
                s.parse().map_err(|_| err(format!("expected a number, got `{s}`")))
            };
            match words.as_slice() {
                ["population", n] => population = Some(num(n)? as usize),
                ["horizon_days", d] => horizon_days = Some(num(d)? as u32),
                [t, verb, rest @ ..] => {
                    let (pop, horizon) = match (population, horizon_days) {
                        (Some(p), Some(h)) => (p, h),
                        _ => return Err(err("events before population/horizon_days header".into())),
                    };
                    let time = num(t)?;
                    if time < last_time {
                        return Err(err(format!("time {time} goes backwards (previous {last_time})")));
                    }
                    if time > horizon as u64 * SECONDS_PER_DAY {
                        return Err(err(format!("time {time} beyond horizon")));
                    }
                    last_time = time;
                    let dev = |s: &str| -> Result<usize, TraceError> {
                        let d = num(s)? as usize;
                        if d >= pop {
                            return Err(err(format!("device {d} out of range (population {pop})")));
                        }
                        Ok(d)
                    };
                    let kind = match (*verb, rest) {
                        ("start", [a, b]) | ("end", [a, b]) => {
                            let (a, b) = (dev(a)?, dev(b)?);
                            if a == b {
                                return Err(err("contact of a device with itself".into()));
                            }
                            if *verb == "start" {
                                if !open.insert(pair(a, b)) {
                                    return Err(err(format!("contact {a}-{b} already open")));
                                }
                                TraceEventKind::ContactStart { a, b }
                            } else {
                                if !open.remove(&pair(a, b)) {
                                    return Err(err(format!("end without start for {a}-{b}")));
                                }
                                TraceEventKind::ContactEnd { a, b }
                            }
                        }
                        ("diagnose", [a]) => TraceEventKind::Diagnose { device: dev(a)? },
                        ("test", [a, result]) => TraceEventKind::TestResult {
                            device: dev(a)?,
                            positive: match *result {
                                "positive" => true,
                                "negative" => false,
                                other => return Err(err(format!("unknown test result `{other}`"))),
                            },
                        },
                        _ => return Err(err(format!("unrecognized event `{content}`"))),
                    };
                    events.push(TraceEvent { time, kind });
                }
                _ => return Err(err(format!("unrecognized line `{content}`"))),
            }
        }
        if let Some((a, b)) = open.into_iter().next() {
            return Err(TraceError {
                line: text.lines().count(),
                msg: format!("contact {a}-{b} never ends"),
            });
        }
        Ok(ContactTrace {
            population: population.ok_or(TraceError {
                line: 0,
                msg: "missing population".into(),
            })?,
            horizon_days: horizon_days.ok_or(TraceError {
                line: 0,
                msg: "missing horizon_days".into(),
            })?,
            events,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "population {}", self.population).unwrap();
        writeln!(out, "horizon_days {}", self.horizon_days).unwrap();
        for e in &self.events {
            match e.kind {
                TraceEventKind::ContactStart { a, b } => writeln!(out, "{} start {a} {b}", e.time),
                TraceEventKind::ContactEnd { a, b } => writeln!(out, "{} end {a} {b}", e.time),
                TraceEventKind::Diagnose { device } => writeln!(out, "{} diagnose {device}", e.time),
                TraceEventKind::TestResult { device, positive } => writeln!(
                    out,
                    "{} test {device} {}",
                    e.time,
                    if positive { "positive" } else { "negative" }
                ),
            }
            .unwrap();
        }
        out
    }

    /// Adds `extra` devices and merges `events` in time order.
    pub fn extended(&self, extra: usize, horizon_days: u32, mut events: Vec<TraceEvent>) -> Self {
        let mut all = self.events.clone();
        all.append(&mut events);
        all.sort_by_key(|e| e.time);
        ContactTrace {
            population: self.population + extra,
            horizon_days: self.horizon_days.max(horizon_days),
            events: all,
        }
    }
}
