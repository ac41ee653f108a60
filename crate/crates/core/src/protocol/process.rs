use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    AppDigest, BitVector, CheckpointCause, CheckpointKind, CheckpointRecord, Csn, MssId, Outcome, Piggyback, ProcessId,
    Trigger, Weight,
};

use super::initiator::InitiatorState;

/// An application message as seen by the protocol layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMessage {
    pub src: ProcessId,
    pub dst: ProcessId,
    pub seq: u64,
    pub piggyback: Piggyback,
}

/// Which branch of the receive rule handled an application message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiveCase {
    /// Sender was not on the post-checkpoint side of a session.
    Plain,
    /// Sender's session is already decided at the receiver.
    ClosedSession,
    /// Both sides are past their checkpoint for the session.
    SameSide,
    /// Receiver in minset and not yet checkpointed: induced checkpoint.
    InMinsetInduced,
    /// Receiver outside minset, has sent nothing to minset members: buffer.
    Buffered,
    /// Receiver outside minset but has sent to a minset member: induced checkpoint.
    SentToMinsetInduced,
    /// Receiver outside minset and has sent nothing this interval: deliver.
    NothingSent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Deliver,
    CheckpointThenDeliver,
    Buffer,
}

impl ReceiveCase {
    pub fn action(self) -> Action {
        match self {
            ReceiveCase::InMinsetInduced | ReceiveCase::SentToMinsetInduced => Action::CheckpointThenDeliver,
            ReceiveCase::Buffered => Action::Buffer,
            _ => Action::Deliver,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceiveOutcome {
    pub case: ReceiveCase,
    pub action: Action,
    pub checkpoint: Option<CheckpointRecord>,
}

/// How a checkpoint request was treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    /// Tentative checkpoint taken on this request.
    Fresh,
    /// Process had already checkpointed for the session through an
    /// application message; it answers without checkpointing again.
    AlreadyCheckpointed,
    /// Process already answered a request for this session.
    Duplicate,
    /// The session is already decided here.
    Stale,
    /// Process is not willing to checkpoint.
    Refused,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub new_ddv: BitVector,
    pub weight: Weight,
    pub mr: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestOutcome {
    pub kind: RequestKind,
    pub checkpoint: Option<CheckpointRecord>,
    /// Forwarded requests: target and the weight carried.
    pub forwards: Vec<(ProcessId, Weight)>,
    pub reply: Reply,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionOutcome {
    pub promoted: Option<CheckpointRecord>,
    pub discarded: Option<CheckpointRecord>,
    /// Buffered messages handed back for delivery, in receipt order.
    pub flushed: Vec<AppMessage>,
    /// Commit reached a member that holds no tentative checkpoint.
    pub anomaly: bool,
    /// The process held session state (tentative, buffer or taint) that the
    /// decision had to touch.
    pub touched: bool,
}

/// Where a direct sender's message came from: the sender interval, and the
/// session whose outcome decides that interval when the sender was holding a
/// tentative checkpoint at send time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectTag {
    pub csn: Csn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<Trigger>,
}

/// Dependency bookkeeping of one checkpoint interval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    /// Transitive dependencies on committed intervals of other processes.
    pub deps: BTreeMap<ProcessId, Csn>,
    /// Direct senders delivered in this interval.
    pub direct: BTreeMap<ProcessId, DirectTag>,
    pub sendv: BitVector,
}

impl Interval {
    fn fresh(n: usize) -> Self {
        Interval {
            deps: BTreeMap::new(),
            direct: BTreeMap::new(),
            sendv: BitVector::zeros(n),
        }
    }

    fn add_dep(&mut self, p: ProcessId, c: Csn) {
        let e = self.deps.entry(p).or_insert(c);
        *e = (*e).max(c);
    }

    fn add_direct(&mut self, p: ProcessId, tag: DirectTag) {
        let e = self.direct.entry(p).or_insert(tag);
        *e = merge_tags(*e, tag);
    }

    fn absorb(&mut self, other: Interval) -> Result<()> {
        self.sendv.merge_in(&other.sendv)?;
        for (p, c) in other.deps {
            self.add_dep(p, c);
        }
        for (p, t) in other.direct {
            self.add_direct(p, t);
        }
        Ok(())
    }

    fn resolve(&mut self, trigger: Trigger, outcome: Outcome, uminset: &BitVector) {
        for (p, tag) in self.direct.iter_mut() {
            if tag.pending == Some(trigger) {
                *tag = resolved(*p, *tag, outcome, uminset);
            }
        }
    }

    fn prune(&mut self, csn: &[Csn]) {
        self.deps.retain(|p, c| *c >= csn[p.index()]);
        self.direct
            .retain(|p, t| t.pending.is_some() || t.csn >= csn[p.index()]);
    }

    fn ddv(&self, n: usize, owner: ProcessId) -> BitVector {
        BitVector::from_members(
            n,
            std::iter::once(owner)
                .chain(self.deps.keys().copied())
                .chain(self.direct.keys().copied()),
        )
    }
}

fn merge_tags(a: DirectTag, b: DirectTag) -> DirectTag {
    match (a.pending.is_some(), b.pending.is_some()) {
        (true, false) if a.csn <= b.csn => b,
        (false, true) if b.csn <= a.csn => a,
        (true, false) => a,
        (false, true) => b,
        _ if b.csn > a.csn => b,
        _ => a,
    }
}

/// A tentative interval becomes the next committed interval if its owner
/// committed, otherwise it folds back into the previous one.
fn resolved(p: ProcessId, tag: DirectTag, outcome: Outcome, uminset: &BitVector) -> DirectTag {
    let csn = if outcome == Outcome::Commit && uminset.get(p) {
        tag.csn
    } else {
        Csn(tag.csn.0.saturating_sub(1))
    };
    DirectTag { csn, pending: None }
}

/// A started session: coordinator state, the initiator's tentative
/// checkpoint and the first requests with their weights.
pub type Initiation = (InitiatorState, CheckpointRecord, Vec<(ProcessId, Weight)>);

/// Protocol state of one process. For a mobile host this lives at its
/// support station.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessState {
    pub id: ProcessId,
    pub own_csn: Csn,
    /// Latest permanent csn known for each process.
    pub csn: Vec<Csn>,
    /// Permanent csn per process as confirmed by commit decisions only.
    confirmed_csn: Vec<Csn>,
    /// Current interval. While `c_state` is set this is the interval opened
    /// by the tentative checkpoint.
    pub current: Interval,
    /// Interval closed by the tentative checkpoint; restored on abort.
    pub checkpointed: Option<Interval>,
    pub c_state: bool,
    /// Willing to take checkpoints when asked.
    pub mr: bool,
    pub own_trigger: Option<Trigger>,
    pub current_minset: Option<BitVector>,
    /// Set when this process delivered a post-checkpoint message of an open
    /// session without joining it; its own sends then carry the session.
    pub tainted: Option<Trigger>,
    pub replied: Option<Trigger>,
    /// Decided sessions with their outcome and final member set.
    pub closed: BTreeMap<Trigger, (Outcome, BitVector)>,
    pub tentative: Option<CheckpointRecord>,
    pub permanent: Option<CheckpointRecord>,
    pub buffer: Vec<AppMessage>,
    pub app: AppDigest,
    last_initiation_csn: Option<Csn>,
}

impl ProcessState {
    pub fn new(id: ProcessId, n: usize, initial_csn: Csn) -> Self {
        let initial = CheckpointRecord {
            owner: id,
            csn: initial_csn,
            kind: CheckpointKind::Permanent,
            cause: CheckpointCause::Initial,
            trigger: None,
            ddv_snapshot: BitVector::singleton(n, id),
            app_state: AppDigest::default(),
            logical_time: 0,
        };
        ProcessState {
            id,
            own_csn: initial_csn,
            csn: vec![initial_csn; n],
            confirmed_csn: vec![initial_csn; n],
            current: Interval::fresh(n),
            checkpointed: None,
            c_state: false,
            mr: true,
            own_trigger: None,
            current_minset: None,
            tainted: None,
            replied: None,
            closed: BTreeMap::new(),
            tentative: None,
            permanent: Some(initial),
            buffer: Vec::new(),
            app: AppDigest::default(),
            last_initiation_csn: None,
        }
    }

    pub fn n(&self) -> usize {
        self.csn.len()
    }

    pub fn ddv(&self) -> BitVector {
        self.current.ddv(self.n(), self.id)
    }

    pub fn sendv(&self) -> &BitVector {
        &self.current.sendv
    }

    /// Direct senders of the interval a checkpoint request is about: the
    /// checkpointed interval if a tentative exists, else the current one.
    pub fn direct_senders(&self) -> BitVector {
        let interval = self.checkpointed.as_ref().unwrap_or(&self.current);
        BitVector::from_members(self.n(), interval.direct.keys().copied())
    }

    /// The ddv with, per member, the interval depended upon.
    fn dependency_tags(&self) -> (BitVector, Vec<Csn>) {
        let ddv = self.ddv();
        let tags = ddv
            .members()
            .map(|p| {
                if p == self.id {
                    return self.own_csn;
                }
                let dep = self.current.deps.get(&p).copied();
                let direct = self.current.direct.get(&p);
                let settled = direct.filter(|t| t.pending.is_none()).map(|t| t.csn);
                dep.max(settled)
                    .or(direct.map(|t| t.csn))
                    .expect("ddv member has a dependency entry")
            })
            .collect();
        (ddv, tags)
    }

    fn session_mark(&self) -> Option<Trigger> {
        if self.c_state {
            self.own_trigger
        } else {
            self.tainted
        }
    }

    pub fn on_app_send(&mut self, dst: ProcessId, seq: u64) -> Result<AppMessage> {
        if dst == self.id {
            return Err(Error::Protocol(format!("{} cannot send to itself", self.id)));
        }
        if dst.index() >= self.n() {
            return Err(Error::BitOutOfRange {
                index: dst.index(),
                len: self.n(),
            });
        }
        self.current.sendv.set(dst);
        let (ddv, dep_csn) = self.dependency_tags();
        let (minset, trigger) = match self.session_mark() {
            Some(t) => (self.current_minset.clone(), Some(t)),
            None => (None, None),
        };
        Ok(AppMessage {
            src: self.id,
            dst,
            seq,
            piggyback: Piggyback {
                ddv,
                dep_csn,
                own_csn: self.own_csn,
                c_state: self.c_state,
                minset,
                trigger,
            },
        })
    }

    /// Classifies an arriving application message without changing state.
    pub fn classify(&self, msg: &AppMessage) -> ReceiveCase {
        let pb = &msg.piggyback;
        let Some((trigger, minset)) = pb.session() else {
            return ReceiveCase::Plain;
        };
        if self.closed.contains_key(&trigger) {
            return ReceiveCase::ClosedSession;
        }
        if self.c_state || self.tainted == Some(trigger) {
            return ReceiveCase::SameSide;
        }
        if pb.own_csn <= self.csn[msg.src.index()] {
            return ReceiveCase::Plain;
        }
        if minset.get(self.id) {
            ReceiveCase::InMinsetInduced
        } else if self.current.sendv.is_zero() {
            ReceiveCase::NothingSent
        } else if self.current.sendv.and(minset).map(|v| v.is_zero()).unwrap_or(true) {
            ReceiveCase::Buffered
        } else {
            ReceiveCase::SentToMinsetInduced
        }
    }

    pub fn on_app_receive(&mut self, msg: &AppMessage, now: u64) -> Result<ReceiveOutcome> {
        if msg.dst != self.id {
            return Err(Error::Protocol(format!(
                "message for {} delivered to {}",
                msg.dst, self.id
            )));
        }
        let case = self.classify(msg);
        let mut checkpoint = None;
        match case.action() {
            Action::Buffer => self.buffer.push(msg.clone()),
            Action::CheckpointThenDeliver => {
                let (trigger, minset) = msg.piggyback.session().expect("session present");
                checkpoint = Some(self.take_tentative(CheckpointCause::Induced, trigger, minset.clone(), now)?);
                self.deliver(msg)?;
            }
            Action::Deliver => {
                if case == ReceiveCase::NothingSent {
                    let (trigger, minset) = msg.piggyback.session().expect("session present");
                    self.tainted = Some(trigger);
                    self.current_minset = Some(minset.clone());
                }
                self.deliver(msg)?;
            }
        }
        Ok(ReceiveOutcome {
            case,
            action: case.action(),
            checkpoint,
        })
    }

    /// Applies a delivery: csn knowledge, direct-sender and ddv merge.
    pub fn deliver(&mut self, msg: &AppMessage) -> Result<()> {
        let pb = &msg.piggyback;
        let src = msg.src.index();
        let sender_permanent = Csn(pb.own_csn.0.saturating_sub(u64::from(pb.c_state)));
        self.csn[src] = self.csn[src].max(sender_permanent);
        // A send from an interval that has since been closed by a permanent
        // checkpoint is recorded at the sender and creates no dependency.
        let mut tag = DirectTag {
            csn: pb.own_csn,
            pending: if pb.c_state { pb.trigger } else { None },
        };
        if let Some((outcome, uminset)) = tag.pending.and_then(|t| self.closed.get(&t)) {
            tag = resolved(msg.src, tag, *outcome, uminset);
        }
        if tag.pending.is_some() || tag.csn >= self.csn[src] {
            self.current.add_direct(msg.src, tag);
            // Only dependencies on intervals known to be current are kept;
            // anything newer may belong to an undecided checkpoint.
            for (p, c) in pb.dependencies() {
                if p != self.id && p != msg.src && p.index() < self.n() && c == self.csn[p.index()] {
                    self.current.add_dep(p, c);
                }
            }
        }
        self.app.record(msg.src, msg.seq);
        Ok(())
    }

    fn take_tentative(
        &mut self,
        cause: CheckpointCause,
        trigger: Trigger,
        minset: BitVector,
        now: u64,
    ) -> Result<CheckpointRecord> {
        if self.c_state {
            return Err(Error::Protocol(format!(
                "{} already holds a tentative checkpoint",
                self.id
            )));
        }
        self.own_csn = self.csn[self.id.index()].next();
        let record = CheckpointRecord {
            owner: self.id,
            csn: self.own_csn,
            kind: CheckpointKind::Tentative,
            cause,
            trigger: Some(trigger),
            ddv_snapshot: self.ddv(),
            app_state: self.app.clone(),
            logical_time: now,
        };
        self.open_interval(record.clone(), trigger, minset);
        Ok(record)
    }

    fn open_interval(&mut self, record: CheckpointRecord, trigger: Trigger, minset: BitVector) {
        let fresh = Interval::fresh(self.n());
        let closed = std::mem::replace(&mut self.current, fresh);
        self.checkpointed = Some(closed);
        self.c_state = true;
        self.own_csn = record.csn;
        self.own_trigger = Some(trigger);
        self.current_minset = Some(minset);
        self.tentative = Some(record);
    }

    /// Installs a checkpoint taken elsewhere (a disconnect checkpoint) as the
    /// tentative checkpoint for `trigger`.
    pub fn adopt_checkpoint(
        &mut self,
        mut record: CheckpointRecord,
        trigger: Trigger,
        minset: BitVector,
    ) -> Result<()> {
        if self.c_state {
            return Err(Error::Protocol(format!(
                "{} already holds a tentative checkpoint",
                self.id
            )));
        }
        record.trigger = Some(trigger);
        self.open_interval(record, trigger, minset);
        Ok(())
    }

    /// Starts a session with this process as initiator.
    pub fn initiate_checkpoint(&mut self, mss: MssId, now: u64, max_timeout: u64) -> Result<Initiation> {
        let minset = self.ddv();
        let mut initiation_csn = self.csn[self.id.index()].next();
        if let Some(last) = self.last_initiation_csn {
            initiation_csn = initiation_csn.max(last.next());
        }
        self.last_initiation_csn = Some(initiation_csn);
        let trigger = Trigger {
            initiator: self.id,
            initiator_mss: mss,
            initiation_csn,
        };
        let record = self.take_tentative(CheckpointCause::Initiator, trigger, minset.clone(), now)?;
        self.replied = Some(trigger);

        let mut weight = Weight::ONE;
        let mut requests = Vec::new();
        for j in minset.members().filter(|j| *j != self.id) {
            let (keep, send) = weight.halve()?;
            weight = keep;
            requests.push((j, send));
        }
        let ini = InitiatorState::new(trigger, minset, weight, now + max_timeout);
        Ok((ini, record, requests))
    }

    pub fn on_checkpoint_request(
        &mut self,
        trigger: Trigger,
        minset: &BitVector,
        ws: Weight,
        now: u64,
    ) -> Result<RequestOutcome> {
        let empty = |kind| RequestOutcome {
            kind,
            checkpoint: None,
            forwards: Vec::new(),
            reply: Reply {
                new_ddv: BitVector::zeros(minset.len()),
                weight: ws,
                mr: true,
            },
        };
        if self.closed.contains_key(&trigger) {
            return Ok(empty(RequestKind::Stale));
        }
        if self.replied == Some(trigger) {
            return Ok(empty(RequestKind::Duplicate));
        }
        if !self.mr {
            self.replied = Some(trigger);
            let mut out = empty(RequestKind::Refused);
            out.reply.mr = false;
            return Ok(out);
        }

        let (kind, checkpoint) = if self.c_state {
            if self.own_trigger != Some(trigger) {
                return Err(Error::Protocol(format!(
                    "{} asked for {} while checkpointed for another session",
                    self.id, trigger
                )));
            }
            (RequestKind::AlreadyCheckpointed, None)
        } else {
            let rec = self.take_tentative(CheckpointCause::Requested, trigger, minset.clone(), now)?;
            (RequestKind::Fresh, Some(rec))
        };
        self.replied = Some(trigger);
        self.current_minset = Some(minset.clone());

        let mut new_ddv = BitVector::zeros(self.n());
        let mut remaining = ws;
        let mut forwards = Vec::new();
        for k in self.direct_senders().members() {
            if k == self.id || minset.get(k) {
                continue;
            }
            let (keep, send) = remaining.halve()?;
            remaining = keep;
            forwards.push((k, send));
            new_ddv.set(k);
        }
        Ok(RequestOutcome {
            kind,
            checkpoint,
            forwards,
            reply: Reply {
                new_ddv,
                weight: remaining,
                mr: true,
            },
        })
    }

    pub fn on_decision(&mut self, trigger: Trigger, outcome: Outcome, uminset: &BitVector) -> Result<DecisionOutcome> {
        self.closed.insert(trigger, (outcome, uminset.clone()));
        self.current.resolve(trigger, outcome, uminset);
        if let Some(c) = self.checkpointed.as_mut() {
            c.resolve(trigger, outcome, uminset);
        }
        let member = uminset.get(self.id);
        let mut promoted = None;
        let mut discarded = None;
        let mut anomaly = false;
        let holds = self.c_state && self.own_trigger == Some(trigger);
        let touched = holds || !self.buffer.is_empty() || self.tainted == Some(trigger);

        if holds {
            let mut record = self.tentative.take().expect("c_state implies tentative");
            if outcome == Outcome::Commit && member {
                record.kind = CheckpointKind::Permanent;
                self.csn[self.id.index()] = record.csn;
                self.own_csn = record.csn;
                self.checkpointed = None;
                self.permanent = Some(record.clone());
                promoted = Some(record);
            } else {
                self.own_csn = self.csn[self.id.index()];
                if let Some(closed) = self.checkpointed.take() {
                    let after = std::mem::replace(&mut self.current, closed);
                    self.current.absorb(after)?;
                }
                discarded = Some(record);
            }
            self.c_state = false;
        } else if outcome == Outcome::Commit && member {
            anomaly = true;
        }

        if outcome == Outcome::Commit {
            for p in uminset.members() {
                if p == self.id {
                    continue;
                }
                let i = p.index();
                self.confirmed_csn[i] = self.confirmed_csn[i].next();
                self.csn[i] = self.csn[i].max(self.confirmed_csn[i]);
            }
            if promoted.is_some() {
                self.confirmed_csn[self.id.index()] = self.csn[self.id.index()];
            }
            self.current.prune(&self.csn);
        }

        self.own_trigger = None;
        self.current_minset = None;
        self.tainted = None;

        let flushed = std::mem::take(&mut self.buffer);
        for msg in &flushed {
            self.deliver(msg)?;
        }
        Ok(DecisionOutcome {
            promoted,
            discarded,
            flushed,
            anomaly,
            touched,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn trig(i: u32) -> Trigger {
        Trigger {
            initiator: p(i),
            initiator_mss: MssId(0),
            initiation_csn: Csn(1),
        }
    }

    fn members(n: usize, ids: &[u32]) -> BitVector {
        BitVector::from_members(n, ids.iter().map(|i| p(*i)))
    }

    fn send(from: &mut ProcessState, to: &mut ProcessState, seq: u64) -> ReceiveOutcome {
        let msg = from.on_app_send(to.id, seq).unwrap();
        to.on_app_receive(&msg, 0).unwrap()
    }

    fn procs(n: usize) -> Vec<ProcessState> {
        (0..n as u32).map(|i| ProcessState::new(p(i), n, Csn(0))).collect()
    }

    #[test]
    fn send_marks_sendv_and_piggybacks_ddv() {
        let mut ps = procs(3);
        let msg = ps[1].on_app_send(p(2), 1).unwrap();
        assert!(ps[1].sendv().get(p(2)));
        assert_eq!(msg.piggyback.ddv, members(3, &[1]));
        assert!(!msg.piggyback.c_state);
        assert!(msg.piggyback.minset.is_none());
        ps[1].on_app_send(p(2), 2).unwrap();
        assert_eq!(ps[1].sendv().count(), 1);
        assert!(ps[1].on_app_send(p(1), 3).is_err());
    }

    #[test]
    fn plain_delivery_merges_dependencies() {
        let mut ps = procs(3);
        let (a, rest) = ps.split_at_mut(1);
        let (b, c) = rest.split_at_mut(1);
        assert_eq!(send(&mut a[0], &mut b[0], 1).case, ReceiveCase::Plain);
        send(&mut b[0], &mut c[0], 2);
        assert_eq!(c[0].ddv(), members(3, &[0, 1, 2]));
        assert_eq!(c[0].direct_senders(), members(3, &[1]));
    }

    #[test]
    fn initiation_splits_weight_by_halving() {
        let mut ps = procs(4);
        for i in [0, 1, 3] {
            let msg = ps[i].on_app_send(p(2), i as u64).unwrap();
            ps[2].on_app_receive(&msg, 0).unwrap();
        }
        let (ini, rec, reqs) = ps[2].initiate_checkpoint(MssId(0), 10, 100).unwrap();
        assert_eq!(rec.cause, CheckpointCause::Initiator);
        assert_eq!(ps[2].own_csn, Csn(1));
        let targets: Vec<_> = reqs.iter().map(|r| r.0).collect();
        assert_eq!(targets, vec![p(0), p(1), p(3)]);
        let ws: Vec<_> = reqs.iter().map(|r| r.1).collect();
        assert_eq!(
            ws,
            vec![
                Weight::new(1, 1).unwrap(),
                Weight::new(1, 2).unwrap(),
                Weight::new(1, 3).unwrap()
            ]
        );
        assert_eq!(ini.weight, Weight::new(1, 3).unwrap());
        let total = ws.iter().fold(ini.weight, |a, w| a.accumulate(*w).unwrap());
        assert!(total.is_one());
    }

    #[test]
    fn lone_initiator_sends_nothing() {
        let mut ps = procs(3);
        let (ini, _, reqs) = ps[0].initiate_checkpoint(MssId(0), 0, 10).unwrap();
        assert!(reqs.is_empty());
        assert!(ini.weight.is_one());
        assert_eq!(ini.uminset, members(3, &[0]));
    }

    #[test]
    fn request_forwards_only_to_direct_senders_outside_minset() {
        let mut ps = procs(5);
        // 4 -> 3 -> 2 makes 4 transitive for 2; 1 -> 2 direct.
        let m = ps[4].on_app_send(p(3), 1).unwrap();
        ps[3].on_app_receive(&m, 0).unwrap();
        let m = ps[3].on_app_send(p(2), 2).unwrap();
        ps[2].on_app_receive(&m, 0).unwrap();
        let m = ps[1].on_app_send(p(2), 3).unwrap();
        ps[2].on_app_receive(&m, 0).unwrap();
        assert_eq!(ps[2].ddv(), members(5, &[1, 2, 3, 4]));
        let minset = members(5, &[0, 2, 3]);
        let out = ps[2]
            .on_checkpoint_request(trig(0), &minset, Weight::new(1, 1).unwrap(), 5)
            .unwrap();
        assert_eq!(out.kind, RequestKind::Fresh);
        assert_eq!(out.forwards, vec![(p(1), Weight::new(1, 2).unwrap())]);
        assert_eq!(out.reply.new_ddv, members(5, &[1]));
        assert_eq!(out.reply.weight, Weight::new(1, 2).unwrap());
        assert!(ps[2].c_state);
        assert_eq!(ps[2].own_csn, Csn(1));

        let again = ps[2]
            .on_checkpoint_request(trig(0), &minset, Weight::new(1, 4).unwrap(), 6)
            .unwrap();
        assert_eq!(again.kind, RequestKind::Duplicate);
        assert!(again.checkpoint.is_none());
        assert_eq!(again.reply.weight, Weight::new(1, 4).unwrap());
        assert!(again.reply.new_ddv.is_zero());
    }

    #[test]
    fn unwilling_process_replies_negatively() {
        let mut ps = procs(3);
        ps[1].mr = false;
        let out = ps[1]
            .on_checkpoint_request(trig(0), &members(3, &[0, 1]), Weight::new(1, 1).unwrap(), 1)
            .unwrap();
        assert_eq!(out.kind, RequestKind::Refused);
        assert!(!out.reply.mr);
        assert_eq!(out.reply.weight, Weight::new(1, 1).unwrap());
        assert!(out.forwards.is_empty());
        assert!(!ps[1].c_state);
    }

    /// Sets up a process that has checkpointed for `trig(0)` with the given minset.
    fn checkpointed(ps: &mut [ProcessState], who: usize, minset: &BitVector) {
        ps[who]
            .on_checkpoint_request(trig(0), minset, Weight::new(1, 1).unwrap(), 1)
            .unwrap();
    }

    #[test]
    fn receive_rule_cases() {
        let n = 7;
        let minset = members(n, &[0, 1, 2, 3]);
        let mut ps = procs(n);
        // P4 sent to P3 (minset member); P5 sent to P6 (not a member).
        let m = ps[4].on_app_send(p(3), 1).unwrap();
        ps[3].on_app_receive(&m, 0).unwrap();
        let m = ps[5].on_app_send(p(6), 2).unwrap();
        ps[6].on_app_receive(&m, 0).unwrap();
        checkpointed(&mut ps, 2, &minset);
        checkpointed(&mut ps, 3, &minset);

        let m4 = ps[2].on_app_send(p(4), 3).unwrap();
        assert!(m4.piggyback.c_state);
        assert_eq!(m4.piggyback.minset.as_ref(), Some(&minset));
        let out = ps[4].on_app_receive(&m4, 2).unwrap();
        assert_eq!(out.case, ReceiveCase::SentToMinsetInduced);
        assert_eq!(out.action, Action::CheckpointThenDeliver);
        assert_eq!(out.checkpoint.unwrap().cause, CheckpointCause::Induced);

        let m5 = ps[3].on_app_send(p(5), 4).unwrap();
        let out = ps[5].on_app_receive(&m5, 2).unwrap();
        assert_eq!(out.action, Action::Buffer);
        assert_eq!(ps[5].buffer.len(), 1);
        assert!(!ps[5].ddv().get(p(3)));

        let m6 = ps[2].on_app_send(p(6), 5).unwrap();
        let out = ps[6].on_app_receive(&m6, 2).unwrap();
        assert_eq!(out.case, ReceiveCase::NothingSent);
        assert_eq!(ps[6].tainted, Some(trig(0)));

        let m10 = ps[2].on_app_send(p(3), 6).unwrap();
        assert_eq!(ps[3].on_app_receive(&m10, 3).unwrap().case, ReceiveCase::SameSide);

        let m = ps[2].on_app_send(p(1), 7).unwrap();
        assert_eq!(ps[1].on_app_receive(&m, 3).unwrap().case, ReceiveCase::InMinsetInduced);
    }

    #[test]
    fn commit_flushes_buffer_and_promotes() {
        let n = 4;
        let minset = members(n, &[0, 1]);
        let mut ps = procs(n);
        let m = ps[3].on_app_send(p(2), 1).unwrap();
        ps[2].on_app_receive(&m, 0).unwrap();
        checkpointed(&mut ps, 1, &minset);
        let m = ps[1].on_app_send(p(3), 2).unwrap();
        assert_eq!(ps[3].on_app_receive(&m, 1).unwrap().action, Action::Buffer);

        let out = ps[1].on_decision(trig(0), Outcome::Commit, &minset).unwrap();
        assert_eq!(out.promoted.unwrap().kind, CheckpointKind::Permanent);
        assert_eq!(ps[1].csn[1], Csn(1));
        assert!(!ps[1].c_state);
        assert_eq!(ps[1].ddv(), members(n, &[1]));

        let before = ps[3].app.processed;
        let out = ps[3].on_decision(trig(0), Outcome::Commit, &minset).unwrap();
        assert_eq!(out.flushed.len(), 1);
        assert_eq!(ps[3].app.processed, before + 1);
        assert!(ps[3].ddv().get(p(1)));
        assert_eq!(ps[3].csn[1], Csn(1));

        let out = ps[2].on_decision(trig(0), Outcome::Commit, &minset).unwrap();
        assert!(!out.touched);
        assert!(out.flushed.is_empty());
    }

    #[test]
    fn abort_restores_csn_and_dependencies() {
        let n = 3;
        let minset = members(n, &[0, 1, 2]);
        let mut ps = procs(n);
        let m = ps[2].on_app_send(p(1), 1).unwrap();
        ps[1].on_app_receive(&m, 0).unwrap();
        checkpointed(&mut ps, 1, &minset);
        assert_eq!(ps[1].own_csn, Csn(1));
        let m = ps[0].on_app_send(p(1), 2).unwrap();
        ps[1].on_app_receive(&m, 2).unwrap();
        let out = ps[1].on_decision(trig(0), Outcome::Abort, &minset).unwrap();
        assert!(out.discarded.is_some());
        assert_eq!(ps[1].own_csn, Csn(0));
        assert!(ps[1].tentative.is_none());
        assert_eq!(ps[1].ddv(), members(n, &[0, 1, 2]));
        assert_eq!(ps[1].direct_senders(), members(n, &[0, 2]));
    }

    #[test]
    fn stale_session_piggyback_delivers_plainly() {
        let n = 3;
        let minset = members(n, &[0, 1]);
        let mut ps = procs(n);
        checkpointed(&mut ps, 1, &minset);
        let late = ps[1].on_app_send(p(2), 1).unwrap();
        ps[2].on_decision(trig(0), Outcome::Commit, &minset).unwrap();
        assert_eq!(ps[2].on_app_receive(&late, 5).unwrap().case, ReceiveCase::ClosedSession);
        let req = ps[2]
            .on_checkpoint_request(trig(0), &minset, Weight::new(1, 2).unwrap(), 6)
            .unwrap();
        assert_eq!(req.kind, RequestKind::Stale);
        assert!(!ps[2].c_state);
    }

    #[test]
    fn commit_without_tentative_is_an_anomaly() {
        let mut ps = procs(2);
        let out = ps[1]
            .on_decision(trig(0), Outcome::Commit, &members(2, &[0, 1]))
            .unwrap();
        assert!(out.anomaly);
    }
}
