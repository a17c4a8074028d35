//! Simulation: contact traces, the scenario driver, audits, attacks and
//! reports.

pub mod attacks;
pub mod audit;
pub mod harness;
pub mod report;
pub mod trace;

pub use audit::{audit_linkability, AuditResults, LinkabilityView, Verdict};
pub use harness::{run, BeaconSource, Faults, Injection, Mode, Scenario, SimError, SimOutcome, Simulation};
pub use report::{AttackVerdict, Counters, DeviceOutcome, ScenarioReport};
pub use trace::{ContactTrace, TraceError, TraceEvent, TraceEventKind};
