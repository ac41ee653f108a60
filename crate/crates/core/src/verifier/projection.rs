//! Protocol-ignorant view of a trace: per-process sequences of application
//! sends, deliveries and checkpoint points, plus session boundaries. No
//! dependency vectors, request sets or weights are read here.

use std::collections::BTreeMap;

use crate::simnet::{Trace, TraceEvent};
use crate::types::{CheckpointCause, CheckpointKind, Csn, Outcome, ProcessId, Trigger};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Send(u64),
    Deliver(u64),
}

/// One application event of a process; `entry` indexes the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub kind: StepKind,
    pub entry: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageView {
    pub seq: u64,
    pub src: ProcessId,
    pub dst: ProcessId,
    /// Position of the send in the sender's step list.
    pub send: usize,
    /// Position of the delivery in the receiver's step list.
    pub deliver: Option<usize>,
    pub arrived: bool,
}

/// A recorded process state. `pos` counts the owner's steps before it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointView {
    pub process: ProcessId,
    pub csn: Csn,
    pub pos: usize,
    pub entry: usize,
    pub kind: CheckpointKind,
    pub cause: CheckpointCause,
    /// Trace entry at which the checkpoint became permanent.
    pub permanent_at: Option<usize>,
    pub dropped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fate {
    Pending,
    Promoted(usize),
    Discarded(usize),
}

/// A checkpoint standing for a process in one session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Participation {
    pub process: ProcessId,
    pub trigger: Trigger,
    pub checkpoint: usize,
    pub entry: usize,
    pub on_behalf: bool,
    pub fate: Fate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionView {
    pub trigger: Trigger,
    pub initiated: usize,
    pub initiated_at: u64,
    pub deadline: u64,
    pub decided: Option<(usize, u64, Outcome)>,
    pub closed: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunEndView {
    pub time: u64,
    pub terminated: bool,
    pub horizon_hit: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Projection {
    pub n: usize,
    pub horizon: u64,
    pub steps: Vec<Vec<Step>>,
    pub messages: BTreeMap<u64, MessageView>,
    pub checkpoints: Vec<CheckpointView>,
    pub participations: Vec<Participation>,
    pub sessions: Vec<SessionView>,
    pub run_end: Option<RunEndView>,
    /// Events the projection could not place, such as a promotion of an
    /// unknown checkpoint.
    pub inconsistencies: Vec<(usize, String)>,
}

impl Projection {
    pub fn from_trace(trace: &Trace) -> Projection {
        let mut pr = Projection::default();
        for (i, e) in trace.entries.iter().enumerate() {
            pr.absorb(i, e.time, &e.event);
        }
        pr
    }

    fn ensure(&mut self, p: ProcessId) {
        while self.steps.len() <= p.index() {
            self.steps.push(Vec::new());
        }
        if self.n <= p.index() {
            self.n = p.index() + 1;
        }
    }

    fn absorb(&mut self, i: usize, time: u64, ev: &TraceEvent) {
        match ev {
            TraceEvent::RunStart {
                n,
                horizon,
                initial_csn,
                ..
            } => {
                self.n = *n;
                self.horizon = *horizon;
                self.steps = vec![Vec::new(); *n];
                for p in 0..*n as u32 {
                    self.checkpoints.push(CheckpointView {
                        process: ProcessId(p),
                        csn: Csn(*initial_csn),
                        pos: 0,
                        entry: i,
                        kind: CheckpointKind::Permanent,
                        cause: CheckpointCause::Initial,
                        permanent_at: Some(i),
                        dropped: false,
                    });
                }
            }
            TraceEvent::AppSent { seq, src, dst, .. } => {
                self.ensure(*src);
                let send = self.steps[src.index()].len();
                self.steps[src.index()].push(Step {
                    kind: StepKind::Send(*seq),
                    entry: i,
                });
                self.messages.insert(
                    *seq,
                    MessageView {
                        seq: *seq,
                        src: *src,
                        dst: *dst,
                        send,
                        deliver: None,
                        arrived: false,
                    },
                );
            }
            TraceEvent::AppArrived { seq, .. } => match self.messages.get_mut(seq) {
                Some(m) => m.arrived = true,
                None => self.inconsistencies.push((i, format!("arrival of unsent m{seq}"))),
            },
            TraceEvent::AppDelivered { seq, dst, .. } => {
                self.ensure(*dst);
                let pos = self.steps[dst.index()].len();
                match self.messages.get_mut(seq) {
                    Some(m) if m.deliver.is_none() && m.dst == *dst => {
                        m.deliver = Some(pos);
                        self.steps[dst.index()].push(Step {
                            kind: StepKind::Deliver(*seq),
                            entry: i,
                        });
                    }
                    Some(_) => self
                        .inconsistencies
                        .push((i, format!("repeated or misrouted delivery of m{seq}"))),
                    None => self.inconsistencies.push((i, format!("delivery of unsent m{seq}"))),
                }
            }
            TraceEvent::CheckpointTaken {
                process,
                csn,
                kind,
                cause,
                trigger,
                ..
            } => {
                self.ensure(*process);
                let idx = self.checkpoints.len();
                self.checkpoints.push(CheckpointView {
                    process: *process,
                    csn: *csn,
                    pos: self.steps[process.index()].len(),
                    entry: i,
                    kind: *kind,
                    cause: *cause,
                    permanent_at: None,
                    dropped: false,
                });
                if let Some(t) = trigger {
                    self.participations.push(Participation {
                        process: *process,
                        trigger: *t,
                        checkpoint: idx,
                        entry: i,
                        on_behalf: *kind == CheckpointKind::Disconnect,
                        fate: Fate::Pending,
                    });
                }
            }
            TraceEvent::CheckpointAdopted { process, csn, trigger } => {
                let found = self.checkpoints.iter().rposition(|c| {
                    c.process == *process && c.csn == *csn && c.kind == CheckpointKind::Disconnect && !c.dropped
                });
                match found {
                    Some(idx) => self.participations.push(Participation {
                        process: *process,
                        trigger: *trigger,
                        checkpoint: idx,
                        entry: i,
                        on_behalf: true,
                        fate: Fate::Pending,
                    }),
                    None => self
                        .inconsistencies
                        .push((i, format!("{process} adopts unknown checkpoint"))),
                }
            }
            TraceEvent::CheckpointPromoted { process, trigger, .. } => match self.pending(*process, *trigger) {
                Some(k) => {
                    self.participations[k].fate = Fate::Promoted(i);
                    let c = self.participations[k].checkpoint;
                    self.checkpoints[c].permanent_at = Some(i);
                }
                None => self
                    .inconsistencies
                    .push((i, format!("{process} promotes without a tentative for {trigger}"))),
            },
            TraceEvent::CheckpointDiscarded { process, csn, trigger } => match trigger {
                Some(t) => match self.pending(*process, *t) {
                    Some(k) => {
                        self.participations[k].fate = Fate::Discarded(i);
                        let c = self.participations[k].checkpoint;
                        // A stored disconnect checkpoint survives an abort.
                        if !self.participations[k].on_behalf {
                            self.checkpoints[c].dropped = true;
                        }
                    }
                    None => self
                        .inconsistencies
                        .push((i, format!("{process} discards without a tentative for {t}"))),
                },
                None => {
                    let found = self
                        .checkpoints
                        .iter()
                        .rposition(|c| c.process == *process && c.csn == *csn && c.kind == CheckpointKind::Disconnect);
                    match found {
                        Some(c) => self.checkpoints[c].dropped = true,
                        None => self
                            .inconsistencies
                            .push((i, format!("{process} drops unknown checkpoint"))),
                    }
                }
            },
            TraceEvent::Initiated { trigger, deadline, .. } => self.sessions.push(SessionView {
                trigger: *trigger,
                initiated: i,
                initiated_at: time,
                deadline: *deadline,
                decided: None,
                closed: None,
            }),
            TraceEvent::Decided { trigger, outcome, .. } => match self.session_mut(*trigger) {
                Some(s) if s.decided.is_none() => s.decided = Some((i, time, *outcome)),
                _ => self.inconsistencies.push((i, format!("stray decision for {trigger}"))),
            },
            TraceEvent::SessionClosed { trigger } => match self.session_mut(*trigger) {
                Some(s) => s.closed = Some(i),
                None => self.inconsistencies.push((i, format!("close of unknown {trigger}"))),
            },
            TraceEvent::RunEnd {
                terminated,
                horizon_hit,
                ..
            } => {
                self.run_end = Some(RunEndView {
                    time,
                    terminated: *terminated,
                    horizon_hit: *horizon_hit,
                });
            }
            _ => {}
        }
    }

    fn pending(&self, p: ProcessId, t: Trigger) -> Option<usize> {
        self.participations
            .iter()
            .rposition(|x| x.process == p && x.trigger == t && x.fate == Fate::Pending)
    }

    fn session_mut(&mut self, t: Trigger) -> Option<&mut SessionView> {
        self.sessions.iter_mut().rev().find(|s| s.trigger == t)
    }

    pub fn session(&self, t: Trigger) -> Option<&SessionView> {
        self.sessions.iter().rev().find(|s| s.trigger == t)
    }

    pub fn participation(&self, p: ProcessId, t: Trigger) -> Option<&Participation> {
        self.participations
            .iter()
            .rev()
            .find(|x| x.process == p && x.trigger == t)
    }

    /// Number of `p`'s steps that precede trace entry `entry`.
    pub fn steps_before(&self, p: ProcessId, entry: usize) -> usize {
        self.steps
            .get(p.index())
            .map_or(0, |s| s.partition_point(|st| st.entry < entry))
    }

    /// Position of `p`'s last permanent checkpoint as of trace entry `entry`.
    pub fn permanent_pos_at(&self, p: ProcessId, entry: usize) -> usize {
        self.checkpoints
            .iter()
            .filter(|c| c.process == p && c.permanent_at.is_some_and(|at| at < entry))
            .max_by_key(|c| c.permanent_at)
            .map_or(0, |c| c.pos)
    }

    /// Where `p`'s state is cut for session `t`: its session checkpoint if
    /// it has one, else its state when the session was decided.
    pub fn cut_pos(&self, p: ProcessId, t: Trigger) -> usize {
        if let Some(x) = self.participation(p, t) {
            return self.checkpoints[x.checkpoint].pos;
        }
        let end = self
            .session(t)
            .and_then(|s| s.decided.map(|d| d.0))
            .unwrap_or(usize::MAX);
        self.steps_before(p, end)
    }
}
