//! Hand-written trace corruptions, each paired with the finding it must
//! raise. Used as negative controls for the verifier.

use crate::error::{Error, Result};
use crate::scenario::fixture;
use crate::simnet::{run, DeliveryPath, Trace, TraceEntry, TraceEvent};
use crate::types::{CheckpointCause, CheckpointKind, ProcessId, Weight};

use super::{verify, FindingCode};

pub struct Mutation {
    pub name: &'static str,
    pub fixture: &'static str,
    pub expect: FindingCode,
    apply: fn(&mut Trace) -> Option<()>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MutationResult {
    pub name: &'static str,
    pub expect: FindingCode,
    pub baseline: usize,
    pub mutated: usize,
}

impl MutationResult {
    pub fn detected(&self) -> bool {
        self.mutated > self.baseline
    }
}

/// Seed used to produce the unmutated traces.
pub const MUTATION_SEED: u64 = 7;

pub fn suite() -> Vec<Mutation> {
    vec![
        Mutation {
            name: "drop_induced_checkpoint",
            fixture: "example1",
            expect: FindingCode::Orphan,
            apply: drop_induced,
        },
        Mutation {
            name: "deliver_before_induced_checkpoint",
            fixture: "example1",
            expect: FindingCode::Orphan,
            apply: deliver_before_induced,
        },
        Mutation {
            name: "drop_forwarded_checkpoint",
            fixture: "example2",
            expect: FindingCode::MissingCkpt,
            apply: drop_forwarded,
        },
        Mutation {
            name: "duplicate_tentative",
            fixture: "example2",
            expect: FindingCode::DupTent,
            apply: duplicate_tentative,
        },
        Mutation {
            name: "drop_decision",
            fixture: "example1",
            expect: FindingCode::Nonterm,
            apply: drop_decision,
        },
        Mutation {
            name: "inflate_reply_weight",
            fixture: "example2",
            expect: FindingCode::WeightLeak,
            apply: inflate_reply,
        },
        Mutation {
            name: "delay_send",
            fixture: "tardy",
            expect: FindingCode::BlockedSend,
            apply: delay_send,
        },
        Mutation {
            name: "commit_bystander",
            fixture: "example1",
            expect: FindingCode::ExtraCkpt,
            apply: commit_bystander,
        },
        Mutation {
            name: "postpone_tardy_delivery",
            fixture: "tardy",
            expect: FindingCode::ExtraCkpt,
            apply: postpone_tardy,
        },
        Mutation {
            name: "drop_buffer_flush",
            fixture: "example1",
            expect: FindingCode::Undelivered,
            apply: drop_flush,
        },
        Mutation {
            name: "drop_abort_discard",
            fixture: "abort-negative",
            expect: FindingCode::DanglingTent,
            apply: drop_abort_discard,
        },
        Mutation {
            name: "forget_disconnected_dependency",
            fixture: "disconnect",
            expect: FindingCode::DiscExtra,
            apply: forget_disconnected_dependency,
        },
    ]
}

impl Mutation {
    /// Runs the fixture, verifies it as-is and after the corruption, and
    /// counts the expected finding in both.
    pub fn evaluate(&self) -> Result<MutationResult> {
        let scenario = fixture(self.fixture).map_err(|e| Error::Protocol(e.to_string()))?;
        let mut trace = run(&scenario, MUTATION_SEED)?.trace;
        let baseline = verify(&trace).count(self.expect);
        (self.apply)(&mut trace).ok_or_else(|| Error::Protocol(format!("{}: target not found", self.name)))?;
        let mutated = verify(&trace).count(self.expect);
        Ok(MutationResult {
            name: self.name,
            expect: self.expect,
            baseline,
            mutated,
        })
    }
}

fn find(t: &Trace, pred: impl Fn(&TraceEvent) -> bool) -> Option<usize> {
    t.entries.iter().position(|e| pred(&e.event))
}

fn remove_where(t: &mut Trace, pred: impl Fn(&TraceEvent) -> bool) -> Option<()> {
    let before = t.entries.len();
    t.entries.retain(|e| !pred(&e.event));
    (t.entries.len() < before).then_some(())
}

fn insert_like(t: &mut Trace, at: usize, event: TraceEvent) {
    let template: &TraceEntry = &t.entries[at.min(t.entries.len() - 1)];
    let entry = TraceEntry {
        time: template.time,
        step: template.step,
        actor: template.actor.clone(),
        event,
    };
    t.entries.insert(at, entry);
}

fn induced(t: &Trace) -> Option<(usize, ProcessId)> {
    t.entries.iter().enumerate().find_map(|(i, e)| match e.event {
        TraceEvent::CheckpointTaken {
            process,
            cause: CheckpointCause::Induced,
            ..
        } => Some((i, process)),
        _ => None,
    })
}

fn drop_induced(t: &mut Trace) -> Option<()> {
    let (i, p) = induced(t)?;
    t.entries.remove(i);
    remove_where(
        t,
        |e| matches!(e, TraceEvent::CheckpointPromoted { process, .. } if *process == p),
    )
}

fn deliver_before_induced(t: &mut Trace) -> Option<()> {
    let (i, p) = induced(t)?;
    let d = (i + 1..t.entries.len())
        .find(|k| matches!(t.entries[*k].event, TraceEvent::AppDelivered { dst, .. } if dst == p))?;
    let entry = t.entries.remove(d);
    t.entries.insert(i, entry);
    Some(())
}

fn drop_forwarded(t: &mut Trace) -> Option<()> {
    let to = t.events().find_map(|e| match e {
        TraceEvent::CReqSent {
            forwarded: true, to, ..
        } => Some(*to),
        _ => None,
    })?;
    remove_where(t, |e| {
        matches!(e, TraceEvent::CheckpointTaken { process, cause: CheckpointCause::Requested, .. } if *process == to)
            || matches!(e, TraceEvent::CheckpointPromoted { process, .. } if *process == to)
    })
}

fn duplicate_tentative(t: &mut Trace) -> Option<()> {
    let i = find(t, |e| {
        matches!(
            e,
            TraceEvent::CheckpointTaken {
                cause: CheckpointCause::Requested,
                ..
            }
        )
    })?;
    let copy = t.entries[i].clone();
    t.entries.insert(i + 1, copy);
    Some(())
}

fn drop_decision(t: &mut Trace) -> Option<()> {
    remove_where(t, |e| matches!(e, TraceEvent::Decided { .. }))
}

fn inflate_reply(t: &mut Trace) -> Option<()> {
    let i = find(
        t,
        |e| matches!(e, TraceEvent::CRplySent { weight, .. } if !weight.is_one()),
    )?;
    let TraceEvent::CRplySent { weight, .. } = &mut t.entries[i].event else {
        return None;
    };
    *weight = Weight::ONE;
    Some(())
}

fn delay_send(t: &mut Trace) -> Option<()> {
    let i = find(
        t,
        |e| matches!(e, TraceEvent::AppSent { requested_at, .. } if *requested_at > 0),
    )?;
    let TraceEvent::AppSent { requested_at, .. } = &mut t.entries[i].event else {
        return None;
    };
    *requested_at -= 1;
    Some(())
}

fn commit_bystander(t: &mut Trace) -> Option<()> {
    let (trigger, uminset, d) = t.entries.iter().enumerate().find_map(|(i, e)| match &e.event {
        TraceEvent::Decided { trigger, uminset, .. } => Some((*trigger, uminset.clone(), i)),
        _ => None,
    })?;
    let bystander = (0..uminset.len() as u32)
        .rev()
        .map(ProcessId)
        .find(|p| !uminset.get(*p))?;
    let csn = crate::types::Csn(1);
    insert_like(
        t,
        d,
        TraceEvent::CheckpointTaken {
            process: bystander,
            csn,
            kind: CheckpointKind::Tentative,
            cause: CheckpointCause::Requested,
            trigger: Some(trigger),
            ddv: crate::types::BitVector::zeros(uminset.len()),
        },
    );
    let closed = find(t, |e| matches!(e, TraceEvent::SessionClosed { .. }))?;
    insert_like(
        t,
        closed,
        TraceEvent::CheckpointPromoted {
            process: bystander,
            csn,
            trigger,
        },
    );
    Some(())
}

fn postpone_tardy(t: &mut Trace) -> Option<()> {
    // The last delivery before the initiation is the tardy one.
    let ini = find(t, |e| matches!(e, TraceEvent::Initiated { .. }))?;
    let d = (0..ini)
        .rev()
        .find(|k| matches!(t.entries[*k].event, TraceEvent::AppDelivered { .. }))?;
    let entry = t.entries.remove(d);
    let closed = find(t, |e| matches!(e, TraceEvent::SessionClosed { .. }))?;
    t.entries.insert(closed + 1, entry);
    Some(())
}

fn drop_flush(t: &mut Trace) -> Option<()> {
    remove_where(t, |e| {
        matches!(
            e,
            TraceEvent::AppDelivered {
                via: DeliveryPath::Buffer,
                ..
            }
        )
    })
}

fn drop_abort_discard(t: &mut Trace) -> Option<()> {
    let i = find(t, |e| {
        matches!(e, TraceEvent::CheckpointDiscarded { trigger: Some(_), .. })
    })?;
    t.entries.remove(i);
    Some(())
}

fn forget_disconnected_dependency(t: &mut Trace) -> Option<()> {
    let p = t.events().find_map(|e| match e {
        TraceEvent::CheckpointAdopted { process, .. } => Some(*process),
        _ => None,
    })?;
    remove_where(t, |e| matches!(e, TraceEvent::AppDelivered { src, .. } if *src == p))
}
