//! Per-session cost accounting from a trace, with the reference cost
//! formulas of the proposed algorithm carried alongside the literal counts.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::{campaign_scenario, campaign_seeds, CampaignParams, EventAction};
use crate::simnet::{run, trace_hash, Trace, TraceEvent};
use crate::types::{CheckpointCause, Outcome, ProcessId, Trigger};
use crate::verifier::{self, FindingCode, VerifyReport};

pub const FORMULA_MESSAGES: &str = "3 * N_min * C_air";
pub const FORMULA_CHECKPOINTS: &str = "N_min";
pub const FORMULA_BLOCKING: &str = "0";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no session {0} in trace")]
    UnknownSession(Trigger),
    #[error("session {0} was never decided")]
    Undecided(Trigger),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub trigger: Trigger,
    pub outcome: Outcome,
    pub n: usize,
    pub n_min: usize,
    pub ckpts_permanent: usize,
    pub ckpts_tentative: usize,
    pub ckpts_induced: usize,
    pub ckpts_useless: usize,
    /// Checkpoint requests, initial and forwarded.
    pub msgs_creq: usize,
    pub msgs_crply: usize,
    /// Decision notifications to processes other than the initiator.
    pub msgs_decision: usize,
    pub msgs_control_total: usize,
    /// Decision messages between stations, not part of the total above.
    pub msgs_decision_stations: usize,
    /// The reference best-case message count, 3 * N_min.
    pub formula_messages_value: usize,
    pub formula_messages: String,
    pub formula_checkpoints: String,
    pub formula_blocking: String,
    pub blocking_ticks: u64,
    pub latency_ticks: u64,
    /// Processes the session never contacted.
    pub undisturbed_mh: usize,
    pub piggyback_bytes: u64,
}

/// Counts everything for one decided session, given the size of its
/// minimum set from the oracle.
pub fn compute_metrics(
    trace: &Trace,
    trigger: Trigger,
    oracle_set: &BTreeSet<ProcessId>,
) -> Result<SessionMetrics, MetricsError> {
    let n = trace
        .events()
        .find_map(|e| match e {
            TraceEvent::RunStart { n, .. } => Some(*n),
            _ => None,
        })
        .unwrap_or(0);
    let start = trace
        .entries
        .iter()
        .position(|e| matches!(&e.event, TraceEvent::Initiated { trigger: t, .. } if *t == trigger))
        .ok_or(MetricsError::UnknownSession(trigger))?;
    let initiated_at = trace.entries[start].time;
    let mut decided = None;
    let mut closed = trace.entries.len();
    let mut m = SessionMetrics {
        trigger,
        outcome: Outcome::Abort,
        n,
        n_min: oracle_set.len(),
        ckpts_permanent: 0,
        ckpts_tentative: 0,
        ckpts_induced: 0,
        ckpts_useless: 0,
        msgs_creq: 0,
        msgs_crply: 0,
        msgs_decision: 0,
        msgs_control_total: 0,
        msgs_decision_stations: 0,
        formula_messages_value: 3 * oracle_set.len(),
        formula_messages: FORMULA_MESSAGES.into(),
        formula_checkpoints: FORMULA_CHECKPOINTS.into(),
        formula_blocking: FORMULA_BLOCKING.into(),
        blocking_ticks: 0,
        latency_ticks: 0,
        undisturbed_mh: 0,
        piggyback_bytes: 0,
    };
    let mut disturbed = BTreeSet::from([trigger.initiator]);
    let mut discarded = 0;
    for (i, e) in trace.entries.iter().enumerate().skip(start) {
        let ours = |t: &Trigger| *t == trigger;
        match &e.event {
            TraceEvent::CReqSent { to, trigger: t, .. } if ours(t) => {
                m.msgs_creq += 1;
                disturbed.insert(*to);
            }
            TraceEvent::CRplySent { trigger: t, .. } if ours(t) => m.msgs_crply += 1,
            TraceEvent::DecisionSent { trigger: t, .. } if ours(t) => m.msgs_decision_stations += 1,
            TraceEvent::DecisionApplied {
                process,
                trigger: t,
                notified: true,
                ..
            } if ours(t) => {
                disturbed.insert(*process);
                if *process != trigger.initiator {
                    m.msgs_decision += 1;
                }
            }
            TraceEvent::CheckpointTaken {
                process,
                cause,
                trigger: Some(t),
                ..
            } if ours(t) => {
                m.ckpts_tentative += 1;
                if *cause == CheckpointCause::Induced {
                    m.ckpts_induced += 1;
                }
                disturbed.insert(*process);
            }
            TraceEvent::CheckpointAdopted { trigger: t, .. } if ours(t) => m.ckpts_tentative += 1,
            TraceEvent::CheckpointPromoted { trigger: t, .. } if ours(t) => m.ckpts_permanent += 1,
            TraceEvent::CheckpointDiscarded { trigger: Some(t), .. } if ours(t) => discarded += 1,
            TraceEvent::Decided {
                trigger: t, outcome, ..
            } if ours(t) => decided = Some((e.time, *outcome)),
            TraceEvent::AppSent {
                requested_at,
                piggyback_bytes,
                ..
            } if i < closed => {
                m.blocking_ticks += e.time.saturating_sub(*requested_at);
                m.piggyback_bytes += piggyback_bytes;
            }
            TraceEvent::SessionClosed { trigger: t } if ours(t) => closed = i,
            _ => {}
        }
    }
    let (at, outcome) = decided.ok_or(MetricsError::Undecided(trigger))?;
    m.outcome = outcome;
    m.latency_ticks = at - initiated_at;
    if outcome == Outcome::Commit {
        m.ckpts_useless = discarded;
    }
    m.msgs_control_total = m.msgs_creq + m.msgs_crply + m.msgs_decision;
    m.undisturbed_mh = n.saturating_sub(disturbed.len());
    Ok(m)
}

/// Everything reported for one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub trace_hash: String,
    pub sessions: Vec<SessionMetrics>,
    pub verification: VerifyReport,
}

pub fn run_report(scenario: &str, seed: u64, trace: &Trace) -> RunReport {
    let verification = verifier::verify(trace);
    let sessions = verification
        .sessions
        .iter()
        .filter_map(|s| {
            let oracle: BTreeSet<ProcessId> = s.oracle_set.iter().copied().collect();
            compute_metrics(trace, s.trigger, &oracle).ok()
        })
        .collect();
    RunReport {
        scenario: scenario.into(),
        seed,
        trace_hash: trace.hash_hex(),
        sessions,
        verification,
    }
}

/// One line of a campaign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignEntry {
    pub index: usize,
    pub seed: u64,
    pub n: usize,
    pub mss_count: usize,
    pub disconnects: bool,
    pub refuses: bool,
    pub sessions: usize,
    pub commits: usize,
    pub aborts: usize,
    pub findings: BTreeMap<FindingCode, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub master_seed: u64,
    pub count: usize,
    pub params: CampaignParams,
    /// Every finding code with its total, zeros included.
    pub totals: BTreeMap<FindingCode, usize>,
    pub errors: usize,
    pub sessions: usize,
    pub commits: usize,
    pub aborts: usize,
    pub extra_ckpts: usize,
    pub useless_ckpts: usize,
    /// FNV-1a over the per-scenario trace hashes in index order.
    pub aggregate_hash: String,
    pub entries: Vec<CampaignEntry>,
}

fn campaign_entry(index: usize, seed: u64, params: &CampaignParams) -> CampaignEntry {
    let scenario = campaign_scenario(index, seed, params);
    let mut entry = CampaignEntry {
        index,
        seed,
        n: scenario.n,
        mss_count: scenario.mss_count,
        disconnects: scenario
            .events
            .iter()
            .any(|e| matches!(e.action, EventAction::Disconnect { .. })),
        refuses: !scenario.refuse.is_empty(),
        sessions: 0,
        commits: 0,
        aborts: 0,
        findings: BTreeMap::new(),
        trace_hash: None,
        error: None,
    };
    match run(&scenario, seed) {
        Ok(result) => {
            let rep = verifier::verify(&result.trace);
            entry.sessions = rep.sessions.len();
            entry.commits = rep
                .sessions
                .iter()
                .filter(|s| s.outcome == Some(Outcome::Commit))
                .count();
            entry.aborts = rep
                .sessions
                .iter()
                .filter(|s| s.outcome == Some(Outcome::Abort))
                .count();
            entry.findings = rep.counts();
            entry.trace_hash = Some(result.trace.hash_hex());
        }
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry
}

/// Simulates and verifies `count` generated scenarios in parallel. The
/// report depends only on the arguments.
pub fn run_campaign(master_seed: u64, count: usize, params: &CampaignParams) -> CampaignReport {
    let seeds = campaign_seeds(master_seed, count);
    let entries: Vec<CampaignEntry> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, seed)| campaign_entry(i, *seed, params))
        .collect();
    let mut totals: BTreeMap<FindingCode, usize> = FindingCode::ALL.iter().map(|c| (*c, 0)).collect();
    let mut hashes = String::new();
    for e in &entries {
        for (c, k) in &e.findings {
            *totals.entry(*c).or_insert(0) += k;
        }
        hashes.push_str(e.trace_hash.as_deref().unwrap_or("error"));
        hashes.push('\n');
    }
    CampaignReport {
        master_seed,
        count,
        params: *params,
        errors: entries.iter().filter(|e| e.error.is_some()).count(),
        sessions: entries.iter().map(|e| e.sessions).sum(),
        commits: entries.iter().map(|e| e.commits).sum(),
        aborts: entries.iter().map(|e| e.aborts).sum(),
        extra_ckpts: totals[&FindingCode::ExtraCkpt],
        useless_ckpts: totals[&FindingCode::UselessCkpt],
        totals,
        aggregate_hash: format!("{:016x}", trace_hash(hashes.as_bytes())),
        entries,
    }
}

pub const CSV_COLUMNS: [&str; 24] = [
    "scenario",
    "seed",
    "initiator",
    "initiator_mss",
    "initiation_csn",
    "outcome",
    "n",
    "n_min",
    "ckpts_permanent",
    "ckpts_tentative",
    "ckpts_induced",
    "ckpts_useless",
    "msgs_creq",
    "msgs_crply",
    "msgs_decision",
    "msgs_control_total",
    "msgs_decision_stations",
    "formula_messages_value",
    "blocking_ticks",
    "latency_ticks",
    "undisturbed_mh",
    "piggyback_bytes",
    "findings",
    "trace_hash",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

/// One CSV row per session; a run without sessions still gets one row
/// with empty session columns.
pub fn csv_rows(report: &RunReport) -> Vec<String> {
    let findings = report.verification.findings.len().to_string();
    let prefix = [csv_field(&report.scenario), report.seed.to_string()];
    if report.sessions.is_empty() {
        let mut row: Vec<String> = prefix.to_vec();
        row.extend(std::iter::repeat_n(String::new(), CSV_COLUMNS.len() - 4));
        row.push(findings);
        row.push(report.trace_hash.clone());
        return vec![row.join(",")];
    }
    report
        .sessions
        .iter()
        .map(|s| {
            let outcome = match s.outcome {
                Outcome::Commit => "commit",
                Outcome::Abort => "abort",
            };
            let mut row: Vec<String> = prefix.to_vec();
            row.extend([
                s.trigger.initiator.0.to_string(),
                s.trigger.initiator_mss.0.to_string(),
                s.trigger.initiation_csn.0.to_string(),
                outcome.to_string(),
                s.n.to_string(),
                s.n_min.to_string(),
                s.ckpts_permanent.to_string(),
                s.ckpts_tentative.to_string(),
                s.ckpts_induced.to_string(),
                s.ckpts_useless.to_string(),
                s.msgs_creq.to_string(),
                s.msgs_crply.to_string(),
                s.msgs_decision.to_string(),
                s.msgs_control_total.to_string(),
                s.msgs_decision_stations.to_string(),
                s.formula_messages_value.to_string(),
                s.blocking_ticks.to_string(),
                s.latency_ticks.to_string(),
                s.undisturbed_mh.to_string(),
                s.piggyback_bytes.to_string(),
                findings.clone(),
                report.trace_hash.clone(),
            ]);
            row.join(",")
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
