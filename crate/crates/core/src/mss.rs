//! Mobile support stations: host the protocol state of their local
//! processes, keep disconnected hosts' checkpoints and message queues, and
//! fan out decisions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::protocol::{AppMessage, DecisionOutcome, ProcessState, RequestOutcome};
use crate::types::{
    BitVector, CheckpointCause, CheckpointKind, CheckpointRecord, MssId, Outcome, ProcessId, Trigger, Weight,
};

/// What a station keeps for a disconnected host.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisconnectRecord {
    pub checkpoint: CheckpointRecord,
    /// The stored checkpoint was made permanent by a session and no longer
    /// stands for the host's state.
    pub consumed: bool,
    pub state: ProcessState,
    pub queue: Vec<AppMessage>,
    pub since: u64,
}

/// Result of a checkpoint request answered on behalf of a disconnected host.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OnBehalfOutcome {
    pub request: RequestOutcome,
    /// Checkpoint used for the session: the stored disconnect checkpoint or
    /// a new one if the stored one was already consumed.
    pub used: Option<CheckpointRecord>,
    pub synthesized: bool,
}

/// Per-process effect of a decision fan-out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FanoutEntry {
    pub process: ProcessId,
    pub disconnected: bool,
    pub outcome: DecisionOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MssState {
    pub id: MssId,
    pub g_chkpt: bool,
    pub local: BTreeMap<ProcessId, ProcessState>,
    pub disconnected: BTreeMap<ProcessId, DisconnectRecord>,
}

impl MssState {
    pub fn new(id: MssId) -> Self {
        MssState {
            id,
            g_chkpt: false,
            local: BTreeMap::new(),
            disconnected: BTreeMap::new(),
        }
    }

    pub fn admit(&mut self, state: ProcessState) {
        self.local.insert(state.id, state);
    }

    pub fn hosts(&self, p: ProcessId) -> bool {
        self.local.contains_key(&p) || self.disconnected.contains_key(&p)
    }

    pub fn is_disconnected(&self, p: ProcessId) -> bool {
        self.disconnected.contains_key(&p)
    }

    /// Protocol state of a hosted process, connected or not.
    pub fn state(&self, p: ProcessId) -> Option<&ProcessState> {
        self.local
            .get(&p)
            .or_else(|| self.disconnected.get(&p).map(|d| &d.state))
    }

    pub fn local_mut(&mut self, p: ProcessId) -> Result<&mut ProcessState> {
        self.local.get_mut(&p).ok_or(Error::UnknownProcess(p))
    }

    /// Takes the disconnect checkpoint and starts queueing for `p`. Any
    /// buffered messages go to the head of the queue.
    pub fn on_disconnect(&mut self, p: ProcessId, now: u64) -> Result<CheckpointRecord> {
        let mut state = self.local.remove(&p).ok_or(Error::UnknownProcess(p))?;
        if state.c_state {
            let id = state.id;
            self.local.insert(id, state);
            return Err(Error::Protocol(format!("{id} disconnects while checkpointing")));
        }
        let checkpoint = disconnect_checkpoint(&state, now);
        let queue = std::mem::take(&mut state.buffer);
        self.disconnected.insert(
            p,
            DisconnectRecord {
                checkpoint: checkpoint.clone(),
                consumed: false,
                state,
                queue,
                since: now,
            },
        );
        Ok(checkpoint)
    }

    pub fn queue_app(&mut self, msg: AppMessage) -> Result<()> {
        let rec = self
            .disconnected
            .get_mut(&msg.dst)
            .ok_or(Error::NotDisconnected(msg.dst))?;
        rec.queue.push(msg);
        Ok(())
    }

    /// Answers a checkpoint request for a disconnected host from the state
    /// stored at disconnection.
    pub fn on_request_for_disconnected(
        &mut self,
        p: ProcessId,
        trigger: Trigger,
        minset: &BitVector,
        ws: Weight,
        now: u64,
    ) -> Result<OnBehalfOutcome> {
        let rec = self.disconnected.get_mut(&p).ok_or(Error::NotDisconnected(p))?;
        let fresh =
            !rec.state.closed.contains_key(&trigger) && rec.state.replied != Some(trigger) && !rec.state.c_state;
        let mut used = None;
        let mut synthesized = false;
        if fresh {
            if rec.consumed {
                rec.checkpoint = disconnect_checkpoint(&rec.state, now);
                rec.consumed = false;
                synthesized = true;
            }
            rec.state
                .adopt_checkpoint(rec.checkpoint.clone(), trigger, minset.clone())?;
            used = rec.state.tentative.clone();
        }
        // The station answers for the host, so willingness does not apply.
        let willing = std::mem::replace(&mut rec.state.mr, true);
        let request = rec.state.on_checkpoint_request(trigger, minset, ws, now);
        rec.state.mr = willing;
        Ok(OnBehalfOutcome {
            request: request?,
            used,
            synthesized,
        })
    }

    /// Moves a disconnected host out of this station. The caller admits the
    /// returned state at the new station and replays the queue in order.
    pub fn on_reconnect(&mut self, p: ProcessId) -> Result<(ProcessState, Vec<AppMessage>)> {
        let rec = self.disconnected.remove(&p).ok_or(Error::NotDisconnected(p))?;
        Ok((rec.state, rec.queue))
    }

    /// Applies a decision to every hosted process.
    pub fn fan_out_decision(
        &mut self,
        trigger: Trigger,
        outcome: Outcome,
        uminset: &BitVector,
    ) -> Result<Vec<FanoutEntry>> {
        let mut entries = Vec::new();
        for (p, state) in self.local.iter_mut() {
            entries.push(FanoutEntry {
                process: *p,
                disconnected: false,
                outcome: state.on_decision(trigger, outcome, uminset)?,
            });
        }
        for (p, rec) in self.disconnected.iter_mut() {
            let out = rec.state.on_decision(trigger, outcome, uminset)?;
            if out.promoted.is_some() {
                rec.consumed = true;
            }
            entries.push(FanoutEntry {
                process: *p,
                disconnected: true,
                outcome: out,
            });
        }
        self.g_chkpt = false;
        Ok(entries)
    }
}

fn disconnect_checkpoint(state: &ProcessState, now: u64) -> CheckpointRecord {
    CheckpointRecord {
        owner: state.id,
        csn: state.csn[state.id.index()].next(),
        kind: CheckpointKind::Disconnect,
        cause: CheckpointCause::Disconnect,
        trigger: None,
        ddv_snapshot: state.ddv(),
        app_state: state.app.clone(),
        logical_time: now,
    }
}
