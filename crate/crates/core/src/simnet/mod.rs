//! Deterministic discrete-event simulator. Events are ordered by
//! (time, seq); channel delays come from a seeded generator.

mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mss::MssState;
use crate::protocol::{Action, AppMessage, InitiatorState, ProcessState, RequestOutcome};
use crate::scenario::{EventAction, Scenario};
use crate::types::{
    BitVector, CheckpointCause, CheckpointKind, CheckpointRecord, Csn, MssId, Outcome, ProcessId, Trigger, WireMessage,
};

pub use trace::{trace_hash, DeliveryPath, Trace, TraceEntry, TraceEvent, TraceParseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Endpoint {
    Process(ProcessId),
    Mss(MssId),
}

#[derive(Clone, Debug)]
enum EventKind {
    Script(EventAction),
    Deliver { id: u64, to: Endpoint, msg: WireMessage },
    Timer(Trigger),
}

struct ActiveSession {
    ini: InitiatorState,
    pending_fanout: BTreeSet<MssId>,
    timer: (u64, u64),
}

/// Outcome of a simulation run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: Trace,
    pub terminated: bool,
    pub horizon_hit: bool,
    /// Final protocol state of every process.
    pub processes: Vec<ProcessState>,
}

pub struct Simulation {
    scenario: Scenario,
    seed: u64,
    rng: ChaCha8Rng,
    now: u64,
    step: u64,
    next_seq: u64,
    queue: BTreeMap<(u64, u64), EventKind>,
    msses: Vec<MssState>,
    location: Vec<MssId>,
    active: Option<ActiveSession>,
    deferred: Vec<EventAction>,
    failed: BTreeSet<ProcessId>,
    channel_last: BTreeMap<(Endpoint, Endpoint), u64>,
    app_seq: u64,
    ctl_id: u64,
    entries: Vec<TraceEntry>,
}

/// Runs a scenario with the given seed.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunResult> {
    Simulation::new(scenario.clone(), seed)?.run()
}

impl Simulation {
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self> {
        scenario.validate().map_err(|e| Error::Protocol(e.to_string()))?;
        let n = scenario.n;
        let mut msses: Vec<MssState> = (0..scenario.mss_count as u32)
            .map(|m| MssState::new(MssId(m)))
            .collect();
        let mut location = Vec::with_capacity(n);
        for i in 0..n as u32 {
            let p = ProcessId(i);
            let m = scenario.placement_of(p);
            let mut state = ProcessState::new(p, n, Csn(scenario.initial_csn));
            state.mr = !scenario.refuse.contains(&p);
            msses[m.index()].admit(state);
            location.push(m);
        }
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            now: 0,
            step: 0,
            next_seq: 0,
            queue: BTreeMap::new(),
            msses,
            location,
            active: None,
            deferred: Vec::new(),
            failed: BTreeSet::new(),
            channel_last: BTreeMap::new(),
            app_seq: 0,
            ctl_id: 0,
            entries: Vec::new(),
            scenario,
        };
        for ev in sim.scenario.expanded_events(seed) {
            sim.schedule_at(ev.at, EventKind::Script(ev.action));
        }
        Ok(sim)
    }

    pub fn run(mut self) -> Result<RunResult> {
        let s = &self.scenario;
        let start = TraceEvent::RunStart {
            n: s.n,
            mss_count: s.mss_count,
            seed: self.seed,
            initial_csn: s.initial_csn,
            placement: (0..s.n as u32).map(|i| s.placement_of(ProcessId(i))).collect(),
            fifo: s.fifo,
            delay_min: s.delay.min,
            delay_max: s.delay.max,
            max_timeout: s.max_timeout(),
            horizon: s.horizon,
        };
        self.log("sim", start);
        let mut horizon_hit = false;
        while let Some((&(time, seq), _)) = self.queue.iter().next() {
            if time > self.scenario.horizon {
                horizon_hit = true;
                break;
            }
            let kind = self.queue.remove(&(time, seq)).expect("key present");
            self.now = time;
            self.step += 1;
            self.handle(kind)?;
        }
        let in_flight = self
            .queue
            .values()
            .filter(|k| matches!(k, EventKind::Deliver { .. }))
            .count();
        let terminated = self.active.is_none();
        self.log(
            "sim",
            TraceEvent::RunEnd {
                terminated,
                horizon_hit,
                open_sessions: usize::from(!terminated),
                in_flight,
            },
        );
        let mut processes: Vec<ProcessState> = Vec::new();
        for m in &self.msses {
            processes.extend(m.local.values().cloned());
            processes.extend(m.disconnected.values().map(|d| d.state.clone()));
        }
        processes.sort_by_key(|p| p.id);
        Ok(RunResult {
            trace: Trace { entries: self.entries },
            terminated,
            horizon_hit,
            processes,
        })
    }

    fn log(&mut self, actor: impl Into<String>, event: TraceEvent) {
        self.entries.push(TraceEntry {
            time: self.now,
            step: self.step,
            actor: actor.into(),
            event,
        });
    }

    fn schedule_at(&mut self, time: u64, kind: EventKind) -> (u64, u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((time, seq), kind);
        (time, seq)
    }

    fn send(&mut self, from: Endpoint, to: Endpoint, msg: WireMessage, fixed_delay: Option<u64>) -> u64 {
        let d = self.scenario.delay;
        let delay = fixed_delay.unwrap_or_else(|| self.rng.gen_range(d.min..=d.max));
        let mut at = self.now + delay;
        if self.scenario.fifo {
            let last = self.channel_last.entry((from, to)).or_insert(0);
            at = at.max(*last);
            *last = at;
        }
        let id = self.ctl_id;
        self.ctl_id += 1;
        self.schedule_at(at, EventKind::Deliver { id, to, msg });
        id
    }

    fn station(&self, p: ProcessId) -> MssId {
        self.location[p.index()]
    }

    fn mss_mut(&mut self, p: ProcessId) -> &mut MssState {
        let m = self.station(p);
        &mut self.msses[m.index()]
    }

    fn handle(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::Script(action) => self.handle_script(action),
            EventKind::Timer(trigger) => self.handle_timer(trigger),
            EventKind::Deliver { id, to, msg, .. } => match (to, msg) {
                (
                    Endpoint::Process(_),
                    WireMessage::App {
                        src,
                        dst,
                        seq,
                        piggyback,
                    },
                ) => self.deliver_app(AppMessage {
                    src,
                    dst,
                    seq,
                    piggyback,
                }),
                (Endpoint::Process(p), WireMessage::CReq { trigger, minset, ws }) => {
                    self.deliver_creq(id, p, trigger, minset, ws)
                }
                (
                    Endpoint::Mss(_),
                    WireMessage::CRply {
                        from,
                        trigger,
                        new_ddv,
                        weight,
                        mr,
                    },
                ) => self.deliver_crply(id, from, trigger, new_ddv, weight, mr),
                (Endpoint::Mss(m), WireMessage::Commit { trigger, uminset }) => {
                    self.deliver_decision(m, trigger, Outcome::Commit, uminset)
                }
                (Endpoint::Mss(m), WireMessage::Abort { trigger, uminset }) => {
                    self.deliver_decision(m, trigger, Outcome::Abort, uminset)
                }
                (to, msg) => Err(Error::Protocol(format!("misrouted {msg:?} to {to:?}"))),
            },
        }
    }

    fn handle_script(&mut self, action: EventAction) -> Result<()> {
        match action {
            EventAction::Send { src, dst, delay } => self.app_send(src, dst, delay),
            EventAction::Initiate { process } => self.initiate(process),
            EventAction::Disconnect { process } => {
                if self.active.is_some() {
                    self.defer(action, "disconnect", process);
                    return Ok(());
                }
                self.disconnect(process)
            }
            EventAction::Reconnect { process, mss } => {
                if self.active.is_some() {
                    self.defer(action, "reconnect", process);
                    return Ok(());
                }
                self.reconnect(process, mss)
            }
            EventAction::Fail { process } => {
                self.failed.insert(process);
                self.log(process.to_string(), TraceEvent::Failed { process });
                Ok(())
            }
        }
    }

    fn defer(&mut self, action: EventAction, what: &str, process: ProcessId) {
        self.deferred.push(action);
        self.log(
            process.to_string(),
            TraceEvent::Deferred {
                action: what.into(),
                process,
            },
        );
    }

    fn app_send(&mut self, src: ProcessId, dst: ProcessId, delay: Option<u64>) -> Result<()> {
        if self.mss_mut(src).is_disconnected(src) {
            self.log(
                src.to_string(),
                TraceEvent::SendSuppressed {
                    src,
                    dst,
                    reason: "disconnected".into(),
                },
            );
            return Ok(());
        }
        self.app_seq += 1;
        let seq = self.app_seq;
        let msg = self.mss_mut(src).local_mut(src)?.on_app_send(dst, seq)?;
        let pb = &msg.piggyback;
        self.log(
            src.to_string(),
            TraceEvent::AppSent {
                seq,
                src,
                dst,
                requested_at: self.now,
                c_state: pb.c_state,
                session: pb.trigger,
                piggyback_bytes: pb.wire_bytes(),
            },
        );
        let wire = WireMessage::App {
            src,
            dst,
            seq,
            piggyback: msg.piggyback,
        };
        self.send(Endpoint::Process(src), Endpoint::Process(dst), wire, delay);
        Ok(())
    }

    fn deliver_app(&mut self, msg: AppMessage) -> Result<()> {
        let dst = msg.dst;
        let (src, seq) = (msg.src, msg.seq);
        let mss = self.mss_mut(dst);
        if mss.is_disconnected(dst) {
            mss.queue_app(msg)?;
            self.log(
                format!("MSS{}", self.station(dst).0),
                TraceEvent::AppQueued { seq, src, dst },
            );
            return Ok(());
        }
        self.receive_app(msg, DeliveryPath::Direct)
    }

    fn receive_app(&mut self, msg: AppMessage, via: DeliveryPath) -> Result<()> {
        let now = self.now;
        let (src, dst, seq) = (msg.src, msg.dst, msg.seq);
        let out = self.mss_mut(dst).local_mut(dst)?.on_app_receive(&msg, now)?;
        let actor = dst.to_string();
        self.log(
            actor.clone(),
            TraceEvent::AppArrived {
                seq,
                src,
                dst,
                case: out.case,
                action: out.action,
            },
        );
        if let Some(rec) = &out.checkpoint {
            self.log(actor.clone(), checkpoint_taken(rec));
        }
        if out.action != Action::Buffer {
            self.log(actor, TraceEvent::AppDelivered { seq, src, dst, via });
        }
        Ok(())
    }

    fn initiate(&mut self, p: ProcessId) -> Result<()> {
        let actor = p.to_string();
        let reason = if self.active.is_some() || self.msses.iter().any(|m| m.g_chkpt) {
            Some("session active")
        } else if self.mss_mut(p).is_disconnected(p) {
            Some("disconnected")
        } else {
            None
        };
        if let Some(reason) = reason {
            self.log(
                actor,
                TraceEvent::InitiationDiscarded {
                    process: p,
                    reason: reason.into(),
                },
            );
            return Ok(());
        }
        let (now, mss, timeout) = (self.now, self.station(p), self.scenario.max_timeout());
        let (ini, record, requests) = self.mss_mut(p).local_mut(p)?.initiate_checkpoint(mss, now, timeout)?;
        let trigger = ini.trigger;
        self.log(
            actor.clone(),
            TraceEvent::Initiated {
                trigger,
                minset: ini.minset.clone(),
                deadline: ini.deadline,
            },
        );
        self.log(actor, checkpoint_taken(&record));
        for m in self.msses.iter_mut() {
            m.g_chkpt = true;
        }
        let minset = ini.minset.clone();
        let timer = self.schedule_at(ini.deadline, EventKind::Timer(trigger));
        self.active = Some(ActiveSession {
            ini,
            pending_fanout: (0..self.scenario.mss_count as u32).map(MssId).collect(),
            timer,
        });
        for (to, weight) in requests {
            self.send_creq(p, false, to, trigger, &minset, weight);
        }
        if self.active.as_ref().is_some_and(|a| a.ini.decided.is_some()) {
            self.decide()?;
        }
        Ok(())
    }

    fn send_creq(
        &mut self,
        by: ProcessId,
        forwarded: bool,
        to: ProcessId,
        trigger: Trigger,
        minset: &BitVector,
        weight: crate::types::Weight,
    ) {
        let wire = WireMessage::CReq {
            trigger,
            minset: minset.clone(),
            ws: weight,
        };
        let id = self.send(Endpoint::Process(by), Endpoint::Process(to), wire, None);
        self.log(
            by.to_string(),
            TraceEvent::CReqSent {
                msg: id,
                by,
                forwarded,
                to,
                trigger,
                weight,
            },
        );
    }

    fn deliver_creq(
        &mut self,
        id: u64,
        p: ProcessId,
        trigger: Trigger,
        minset: BitVector,
        ws: crate::types::Weight,
    ) -> Result<()> {
        let now = self.now;
        let mut actor = p.to_string();
        let failed = self.failed.contains(&p);
        let mss = self.mss_mut(p);
        let (out, on_behalf) = if mss.is_disconnected(p) {
            let ob = mss.on_request_for_disconnected(p, trigger, &minset, ws, now)?;
            actor = format!("MSS{}", self.station(p).0);
            if let Some(rec) = &ob.used {
                let ev = if ob.synthesized {
                    checkpoint_taken(rec)
                } else {
                    TraceEvent::CheckpointAdopted {
                        process: p,
                        csn: rec.csn,
                        trigger,
                    }
                };
                self.log(actor.clone(), ev);
            }
            (ob.request, true)
        } else if failed {
            self.log(
                actor,
                TraceEvent::CReqWithheld {
                    msg: id,
                    process: p,
                    trigger,
                    weight: ws,
                },
            );
            return Ok(());
        } else {
            let out = mss.local_mut(p)?.on_checkpoint_request(trigger, &minset, ws, now)?;
            if let Some(rec) = &out.checkpoint {
                self.log(actor.clone(), checkpoint_taken(rec));
            }
            (out, false)
        };
        self.log(
            actor.clone(),
            TraceEvent::CReqHandled {
                msg: id,
                process: p,
                trigger,
                weight: ws,
                kind: out.kind,
                on_behalf,
            },
        );
        self.forward_and_reply(actor, p, trigger, &minset, out);
        Ok(())
    }

    fn forward_and_reply(
        &mut self,
        actor: String,
        p: ProcessId,
        trigger: Trigger,
        minset: &BitVector,
        out: RequestOutcome,
    ) {
        for (to, w) in &out.forwards {
            self.send_creq(p, true, *to, trigger, minset, *w);
        }
        let reply = out.reply;
        let wire = WireMessage::CRply {
            from: p,
            trigger,
            new_ddv: reply.new_ddv.clone(),
            weight: reply.weight,
            mr: reply.mr,
        };
        let id = self.send(Endpoint::Process(p), Endpoint::Mss(trigger.initiator_mss), wire, None);
        self.log(
            actor,
            TraceEvent::CRplySent {
                msg: id,
                from: p,
                trigger,
                weight: reply.weight,
                new_ddv: reply.new_ddv,
                mr: reply.mr,
            },
        );
    }

    fn deliver_crply(
        &mut self,
        id: u64,
        from: ProcessId,
        trigger: Trigger,
        new_ddv: BitVector,
        weight: crate::types::Weight,
        mr: bool,
    ) -> Result<()> {
        let actor = format!("MSS{}", trigger.initiator_mss.0);
        let open = self
            .active
            .as_mut()
            .filter(|a| a.ini.trigger == trigger && a.ini.decided.is_none());
        let accepted = open.is_some();
        let decided = match open {
            Some(a) => a.ini.on_checkpoint_reply(trigger, &new_ddv, weight, mr)?.is_some(),
            None => false,
        };
        self.log(
            actor,
            TraceEvent::CRplyReceived {
                msg: id,
                from,
                trigger,
                weight,
                accepted,
            },
        );
        if decided {
            self.decide()?;
        }
        Ok(())
    }

    fn handle_timer(&mut self, trigger: Trigger) -> Result<()> {
        let now = self.now;
        let fired = match self.active.as_mut() {
            Some(a) if a.ini.trigger == trigger => a.ini.on_timeout(now).is_some(),
            _ => false,
        };
        if fired {
            self.log(
                format!("MSS{}", trigger.initiator_mss.0),
                TraceEvent::TimerFired { trigger },
            );
            self.decide()?;
        }
        Ok(())
    }

    fn decide(&mut self) -> Result<()> {
        let a = self.active.as_ref().expect("decide needs a session");
        let (outcome, reason) = a.ini.decided.expect("decided");
        let trigger = a.ini.trigger;
        let uminset = a.ini.uminset.clone();
        let actor = format!("MSS{}", trigger.initiator_mss.0);
        self.log(
            actor.clone(),
            TraceEvent::Decided {
                trigger,
                outcome,
                uminset: uminset.clone(),
                reason,
            },
        );
        for m in 0..self.scenario.mss_count as u32 {
            let wire = WireMessage::decision(outcome, trigger, uminset.clone());
            let id = self.send(
                Endpoint::Mss(trigger.initiator_mss),
                Endpoint::Mss(MssId(m)),
                wire,
                None,
            );
            self.log(
                actor.clone(),
                TraceEvent::DecisionSent {
                    msg: id,
                    trigger,
                    outcome,
                    to: MssId(m),
                },
            );
        }
        Ok(())
    }

    fn deliver_decision(&mut self, m: MssId, trigger: Trigger, outcome: Outcome, uminset: BitVector) -> Result<()> {
        let entries = self.msses[m.index()].fan_out_decision(trigger, outcome, &uminset)?;
        for e in entries {
            let p = e.process;
            let member = uminset.get(p);
            let actor = if e.disconnected {
                format!("MSS{}", m.0)
            } else {
                p.to_string()
            };
            self.log(
                actor.clone(),
                TraceEvent::DecisionApplied {
                    process: p,
                    trigger,
                    outcome,
                    member,
                    notified: member || e.outcome.touched,
                },
            );
            if let Some(rec) = &e.outcome.promoted {
                self.log(
                    actor.clone(),
                    TraceEvent::CheckpointPromoted {
                        process: p,
                        csn: rec.csn,
                        trigger,
                    },
                );
            }
            if let Some(rec) = &e.outcome.discarded {
                self.log(
                    actor.clone(),
                    TraceEvent::CheckpointDiscarded {
                        process: p,
                        csn: rec.csn,
                        trigger: Some(trigger),
                    },
                );
            }
            if e.outcome.anomaly {
                self.log(
                    actor.clone(),
                    TraceEvent::Anomaly {
                        process: p,
                        trigger,
                        detail: "commit without tentative".into(),
                    },
                );
            }
            for msg in &e.outcome.flushed {
                self.log(
                    actor.clone(),
                    TraceEvent::AppDelivered {
                        seq: msg.seq,
                        src: msg.src,
                        dst: msg.dst,
                        via: DeliveryPath::Buffer,
                    },
                );
            }
        }
        self.log(format!("MSS{}", m.0), TraceEvent::FanoutDone { mss: m, trigger });
        let Some(a) = self.active.as_mut() else {
            return Err(Error::Protocol(format!("decision for {trigger} without a session")));
        };
        a.pending_fanout.remove(&m);
        if a.pending_fanout.is_empty() {
            let timer = a.timer;
            self.queue.remove(&timer);
            self.active = None;
            self.log("sim", TraceEvent::SessionClosed { trigger });
            let now = self.now;
            for action in std::mem::take(&mut self.deferred) {
                self.schedule_at(now, EventKind::Script(action));
            }
        }
        Ok(())
    }

    fn disconnect(&mut self, p: ProcessId) -> Result<()> {
        let m = self.station(p);
        let actor = format!("MSS{}", m.0);
        if self.msses[m.index()].is_disconnected(p) {
            self.log(
                actor,
                TraceEvent::Ignored {
                    action: "disconnect".into(),
                    process: p,
                    reason: "already disconnected".into(),
                },
            );
            return Ok(());
        }
        let rec = self.msses[m.index()].on_disconnect(p, self.now)?;
        self.log(actor.clone(), TraceEvent::Disconnected { process: p, mss: m });
        self.log(actor, checkpoint_taken(&rec));
        Ok(())
    }

    fn reconnect(&mut self, p: ProcessId, to: MssId) -> Result<()> {
        let from = self.station(p);
        if !self.msses[from.index()].is_disconnected(p) {
            self.log(
                format!("MSS{}", to.0),
                TraceEvent::Ignored {
                    action: "reconnect".into(),
                    process: p,
                    reason: "not disconnected".into(),
                },
            );
            return Ok(());
        }
        let rec = &self.msses[from.index()].disconnected[&p];
        let unused = (!rec.consumed && rec.state.tentative.is_none()).then_some(rec.checkpoint.csn);
        let (state, queue) = self.msses[from.index()].on_reconnect(p)?;
        if let Some(csn) = unused {
            self.log(
                format!("MSS{}", from.0),
                TraceEvent::CheckpointDiscarded {
                    process: p,
                    csn,
                    trigger: None,
                },
            );
        }
        self.location[p.index()] = to;
        self.msses[to.index()].admit(state);
        self.log(
            format!("MSS{}", to.0),
            TraceEvent::Reconnected {
                process: p,
                from,
                to,
                replayed: queue.len(),
            },
        );
        for msg in queue {
            self.receive_app(msg, DeliveryPath::Replay)?;
        }
        Ok(())
    }
}

fn checkpoint_taken(rec: &CheckpointRecord) -> TraceEvent {
    TraceEvent::CheckpointTaken {
        process: rec.owner,
        csn: rec.csn,
        kind: rec.kind,
        cause: rec.cause,
        trigger: rec.trigger,
        ddv: rec.ddv_snapshot.clone(),
    }
}

impl RunResult {
    pub fn process(&self, p: ProcessId) -> &ProcessState {
        &self.processes[p.index()]
    }

    /// Every checkpoint cause seen, for quick inspection in tests.
    pub fn checkpoints(&self) -> Vec<(ProcessId, CheckpointKind, CheckpointCause)> {
        self.trace
            .events()
            .filter_map(|e| match e {
                TraceEvent::CheckpointTaken {
                    process, kind, cause, ..
                } => Some((*process, *kind, *cause)),
                _ => None,
            })
            .collect()
    }
}
