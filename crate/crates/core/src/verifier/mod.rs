//! Trace oracles: snapshot consistency, minimum-set closure, minimality,
//! termination, single tentative per session, non-blocking sends and
//! weight conservation. Everything here works from the trace alone.

pub mod mutations;
mod projection;
mod weights;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::simnet::{Trace, TraceEvent};
use crate::types::{Outcome, ProcessId, Trigger};

pub use projection::{
    CheckpointView, Fate, MessageView, Participation, Projection, RunEndView, SessionView, Step, StepKind,
};
pub use weights::audit_weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    Orphan,
    ExtraCkpt,
    DiscExtra,
    MissingCkpt,
    Nonterm,
    DupTent,
    WeightLeak,
    BlockedSend,
    DanglingTent,
    Undelivered,
    Anomaly,
    UselessCkpt,
}

impl FindingCode {
    pub const ALL: [FindingCode; 12] = [
        FindingCode::Orphan,
        FindingCode::ExtraCkpt,
        FindingCode::DiscExtra,
        FindingCode::MissingCkpt,
        FindingCode::Nonterm,
        FindingCode::DupTent,
        FindingCode::WeightLeak,
        FindingCode::BlockedSend,
        FindingCode::DanglingTent,
        FindingCode::Undelivered,
        FindingCode::Anomaly,
        FindingCode::UselessCkpt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::Orphan => "ORPHAN",
            FindingCode::ExtraCkpt => "EXTRA_CKPT",
            FindingCode::DiscExtra => "DISC_EXTRA",
            FindingCode::MissingCkpt => "MISSING_CKPT",
            FindingCode::Nonterm => "NONTERM",
            FindingCode::DupTent => "DUP_TENT",
            FindingCode::WeightLeak => "WEIGHT_LEAK",
            FindingCode::BlockedSend => "BLOCKED_SEND",
            FindingCode::DanglingTent => "DANGLING_TENT",
            FindingCode::Undelivered => "UNDELIVERED",
            FindingCode::Anomaly => "ANOMALY",
            FindingCode::UselessCkpt => "USELESS_CKPT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub detail: String,
}

impl Finding {
    fn new(code: FindingCode, detail: impl Into<String>) -> Finding {
        Finding {
            code,
            trigger: None,
            process: None,
            seq: None,
            detail: detail.into(),
        }
    }

    fn session(mut self, t: Trigger) -> Finding {
        self.trigger = Some(t);
        self
    }

    fn at(mut self, p: ProcessId) -> Finding {
        self.process = Some(p);
        self
    }

    fn msg(mut self, seq: u64) -> Finding {
        self.seq = Some(seq);
        self
    }
}

/// The trace does not describe a finished run, so snapshot checks cannot
/// be decided.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("inconclusive: {0}")]
pub struct Inconclusive(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Minimality {
    pub trigger: Trigger,
    pub committed_set: Vec<ProcessId>,
    pub oracle_set: Vec<ProcessId>,
    pub extras: Vec<ProcessId>,
    /// Extras answered for by a station on behalf of a disconnected host.
    pub disc_extras: Vec<ProcessId>,
    pub missing: Vec<ProcessId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub trigger: Trigger,
    pub initiated_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    pub oracle_set: Vec<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimality: Option<Minimality>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub terminated: bool,
    pub inconclusive: bool,
    pub sessions: Vec<SessionSummary>,
    pub findings: Vec<Finding>,
}

impl VerifyReport {
    pub fn count(&self, code: FindingCode) -> usize {
        self.findings.iter().filter(|f| f.code == code).count()
    }

    pub fn counts(&self) -> BTreeMap<FindingCode, usize> {
        let mut m = BTreeMap::new();
        for f in &self.findings {
            *m.entry(f.code).or_insert(0) += 1;
        }
        m
    }

    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Runs every check over a trace.
pub fn verify(trace: &Trace) -> VerifyReport {
    let pr = Projection::from_trace(trace);
    let mut findings = Vec::new();
    let mut inconclusive = false;
    match check_no_orphans(&pr) {
        Ok(f) => findings.extend(f),
        Err(_) => inconclusive = true,
    }
    let mut sessions = Vec::new();
    for s in &pr.sessions {
        let oracle = oracle_min_set(&pr, s.trigger);
        let minimality = match s.decided {
            Some((_, _, Outcome::Commit)) => {
                let m = check_minimality(&pr, s.trigger);
                findings.extend(minimality_findings(&m));
                Some(m)
            }
            _ => None,
        };
        sessions.push(SessionSummary {
            trigger: s.trigger,
            initiated_at: s.initiated_at,
            decided_at: s.decided.map(|d| d.1),
            outcome: s.decided.map(|d| d.2),
            oracle_set: oracle.into_iter().collect(),
            minimality,
        });
    }
    findings.extend(termination_findings(&pr));
    findings.extend(single_tentative_findings(&pr));
    findings.extend(non_blocking_findings(trace));
    findings.extend(audit_weights(trace));
    findings.extend(leftover_findings(&pr));
    findings.extend(anomaly_findings(trace, &pr));
    findings.extend(useless_findings(&pr));
    VerifyReport {
        terminated: pr.run_end.is_some_and(|r| r.terminated),
        inconclusive,
        sessions,
        findings,
    }
}

/// Messages whose delivery is recorded in a committed recovery line while
/// their send is not.
pub fn check_no_orphans(pr: &Projection) -> Result<Vec<Finding>, Inconclusive> {
    match pr.run_end {
        Some(r) if r.terminated => {}
        Some(_) => return Err(Inconclusive("run ended with a session open".into())),
        None => return Err(Inconclusive("trace has no end marker".into())),
    }
    let mut out = Vec::new();
    for s in &pr.sessions {
        let Some((decided, _, Outcome::Commit)) = s.decided else {
            continue;
        };
        let after = s.closed.unwrap_or(decided) + 1;
        let line: Vec<usize> = (0..pr.n as u32)
            .map(|p| pr.permanent_pos_at(ProcessId(p), after))
            .collect();
        for m in pr.messages.values() {
            let Some(d) = m.deliver else { continue };
            if d < line[m.dst.index()] && m.send >= line[m.src.index()] {
                out.push(
                    Finding::new(
                        FindingCode::Orphan,
                        format!(
                            "m{} {}->{} delivered inside the snapshot, sent outside it",
                            m.seq, m.src, m.dst
                        ),
                    )
                    .session(s.trigger)
                    .msg(m.seq),
                );
            }
        }
    }
    Ok(out)
}

/// Processes whose current interval the initiator's session state depends
/// on, directly or through other such processes.
pub fn oracle_min_set(pr: &Projection, trigger: Trigger) -> BTreeSet<ProcessId> {
    let mut set = BTreeSet::from([trigger.initiator]);
    let Some(s) = pr.session(trigger) else {
        return set;
    };
    let base: Vec<usize> = (0..pr.n as u32)
        .map(|p| pr.permanent_pos_at(ProcessId(p), s.initiated))
        .collect();
    let mut inbound: BTreeMap<ProcessId, Vec<&MessageView>> = BTreeMap::new();
    for m in pr.messages.values() {
        if m.deliver.is_some() {
            inbound.entry(m.dst).or_default().push(m);
        }
    }
    let mut work = vec![trigger.initiator];
    while let Some(q) = work.pop() {
        let cut = pr.cut_pos(q, trigger);
        for m in inbound.get(&q).map(Vec::as_slice).unwrap_or_default() {
            let delivered_before = m.deliver.is_some_and(|d| d < cut);
            if delivered_before && m.send >= base[m.src.index()] && set.insert(m.src) {
                work.push(m.src);
            }
        }
    }
    set
}

pub fn check_minimality(pr: &Projection, trigger: Trigger) -> Minimality {
    let oracle = oracle_min_set(pr, trigger);
    let promoted: Vec<&Participation> = pr
        .participations
        .iter()
        .filter(|x| x.trigger == trigger && matches!(x.fate, Fate::Promoted(_)))
        .collect();
    let committed: BTreeSet<ProcessId> = promoted.iter().map(|x| x.process).collect();
    let mut extras = Vec::new();
    let mut disc_extras = Vec::new();
    for x in &promoted {
        if !oracle.contains(&x.process) {
            if x.on_behalf {
                disc_extras.push(x.process);
            } else {
                extras.push(x.process);
            }
        }
    }
    Minimality {
        trigger,
        missing: oracle.difference(&committed).copied().collect(),
        committed_set: committed.into_iter().collect(),
        oracle_set: oracle.into_iter().collect(),
        extras,
        disc_extras,
    }
}

fn minimality_findings(m: &Minimality) -> Vec<Finding> {
    let mut out = Vec::new();
    for p in &m.extras {
        out.push(
            Finding::new(FindingCode::ExtraCkpt, "committed outside the minimum set")
                .session(m.trigger)
                .at(*p),
        );
    }
    for p in &m.disc_extras {
        out.push(
            Finding::new(
                FindingCode::DiscExtra,
                "disconnect checkpoint committed outside the minimum set",
            )
            .session(m.trigger)
            .at(*p),
        );
    }
    for p in &m.missing {
        out.push(
            Finding::new(FindingCode::MissingCkpt, "minimum-set member not committed")
                .session(m.trigger)
                .at(*p),
        );
    }
    out
}

/// Every session is decided no later than its deadline and closed, and the
/// run itself finished.
pub fn check_termination(pr: &Projection) -> bool {
    termination_findings(pr).is_empty()
}

fn termination_findings(pr: &Projection) -> Vec<Finding> {
    let mut out = Vec::new();
    match pr.run_end {
        None => out.push(Finding::new(FindingCode::Nonterm, "trace has no end marker")),
        Some(r) if !r.terminated => out.push(Finding::new(FindingCode::Nonterm, "run ended with a session open")),
        _ => {}
    }
    for s in &pr.sessions {
        match s.decided {
            None => out.push(Finding::new(FindingCode::Nonterm, "session never decided").session(s.trigger)),
            Some((_, at, _)) if at > s.deadline => out.push(
                Finding::new(
                    FindingCode::Nonterm,
                    format!("decided at {at} after deadline {}", s.deadline),
                )
                .session(s.trigger),
            ),
            Some(_) if s.closed.is_none() => {
                out.push(Finding::new(FindingCode::Nonterm, "decision never reached every station").session(s.trigger))
            }
            _ => {}
        }
    }
    out
}

/// At most one tentative checkpoint per process and session.
pub fn check_single_tentative(pr: &Projection) -> bool {
    single_tentative_findings(pr).is_empty()
}

fn single_tentative_findings(pr: &Projection) -> Vec<Finding> {
    let mut seen: BTreeMap<(ProcessId, Trigger), usize> = BTreeMap::new();
    for x in &pr.participations {
        *seen.entry((x.process, x.trigger)).or_insert(0) += 1;
    }
    seen.into_iter()
        .filter(|(_, c)| *c > 1)
        .map(|((p, t), c)| {
            Finding::new(FindingCode::DupTent, format!("{c} tentative checkpoints"))
                .session(t)
                .at(p)
        })
        .collect()
}

/// Ticks by which application sends were held back.
pub fn blocking_ticks(trace: &Trace) -> u64 {
    trace
        .entries
        .iter()
        .map(|e| match e.event {
            TraceEvent::AppSent { requested_at, .. } => e.time.saturating_sub(requested_at),
            _ => 0,
        })
        .sum()
}

/// No application send is ever deferred.
pub fn check_non_blocking(trace: &Trace) -> bool {
    non_blocking_findings(trace).is_empty()
}

fn non_blocking_findings(trace: &Trace) -> Vec<Finding> {
    let mut out = Vec::new();
    for e in &trace.entries {
        match &e.event {
            TraceEvent::AppSent {
                seq, src, requested_at, ..
            } if e.time != *requested_at => out.push(
                Finding::new(
                    FindingCode::BlockedSend,
                    format!("requested at {requested_at}, sent at {}", e.time),
                )
                .at(*src)
                .msg(*seq),
            ),
            TraceEvent::Deferred { action, process } if action == "send" => {
                out.push(Finding::new(FindingCode::BlockedSend, "send deferred").at(*process))
            }
            _ => {}
        }
    }
    out
}

fn leftover_findings(pr: &Projection) -> Vec<Finding> {
    let mut out = Vec::new();
    if !pr.run_end.is_some_and(|r| r.terminated) {
        return out;
    }
    for x in &pr.participations {
        if x.fate == Fate::Pending {
            out.push(
                Finding::new(FindingCode::DanglingTent, "tentative never resolved")
                    .session(x.trigger)
                    .at(x.process),
            );
        }
    }
    for m in pr.messages.values() {
        if m.arrived && m.deliver.is_none() {
            out.push(
                Finding::new(FindingCode::Undelivered, "arrived but never delivered")
                    .at(m.dst)
                    .msg(m.seq),
            );
        }
    }
    out
}

fn anomaly_findings(trace: &Trace, pr: &Projection) -> Vec<Finding> {
    let mut out: Vec<Finding> = trace
        .events()
        .filter_map(|e| match e {
            TraceEvent::Anomaly {
                process,
                trigger,
                detail,
            } => Some(
                Finding::new(FindingCode::Anomaly, detail.clone())
                    .session(*trigger)
                    .at(*process),
            ),
            _ => None,
        })
        .collect();
    for (i, what) in &pr.inconsistencies {
        out.push(Finding::new(FindingCode::Anomaly, format!("entry {i}: {what}")));
    }
    out
}

/// Tentative checkpoints thrown away by a committing session.
pub fn useless_checkpoints(pr: &Projection, trigger: Trigger) -> usize {
    let committed = pr
        .session(trigger)
        .is_some_and(|s| matches!(s.decided, Some((_, _, Outcome::Commit))));
    if !committed {
        return 0;
    }
    pr.participations
        .iter()
        .filter(|x| x.trigger == trigger && matches!(x.fate, Fate::Discarded(_)))
        .count()
}

fn useless_findings(pr: &Projection) -> Vec<Finding> {
    let mut out = Vec::new();
    for s in &pr.sessions {
        if useless_checkpoints(pr, s.trigger) == 0 {
            continue;
        }
        for x in pr
            .participations
            .iter()
            .filter(|x| x.trigger == s.trigger && matches!(x.fate, Fate::Discarded(_)))
        {
            out.push(
                Finding::new(FindingCode::UselessCkpt, "tentative discarded by a commit")
                    .session(s.trigger)
                    .at(x.process),
            );
        }
    }
    out
}
