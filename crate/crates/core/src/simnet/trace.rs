use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::protocol::{Action, DecisionReason, ReceiveCase, RequestKind};
use crate::types::{BitVector, CheckpointCause, CheckpointKind, Csn, MssId, Outcome, ProcessId, Trigger, Weight};

/// How an application message reached the application.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryPath {
    Direct,
    Buffer,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStart {
        n: usize,
        mss_count: usize,
        seed: u64,
        initial_csn: u64,
        placement: Vec<MssId>,
        fifo: bool,
        delay_min: u64,
        delay_max: u64,
        max_timeout: u64,
        horizon: u64,
    },
    AppSent {
        seq: u64,
        src: ProcessId,
        dst: ProcessId,
        requested_at: u64,
        c_state: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<Trigger>,
        piggyback_bytes: u64,
    },
    SendSuppressed {
        src: ProcessId,
        dst: ProcessId,
        reason: String,
    },
    AppArrived {
        seq: u64,
        src: ProcessId,
        dst: ProcessId,
        case: ReceiveCase,
        action: Action,
    },
    AppQueued {
        seq: u64,
        src: ProcessId,
        dst: ProcessId,
    },
    AppDelivered {
        seq: u64,
        src: ProcessId,
        dst: ProcessId,
        via: DeliveryPath,
    },
    CheckpointTaken {
        process: ProcessId,
        csn: Csn,
        kind: CheckpointKind,
        cause: CheckpointCause,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trigger: Option<Trigger>,
        ddv: BitVector,
    },
    /// A stored disconnect checkpoint now stands for the host in a session.
    CheckpointAdopted {
        process: ProcessId,
        csn: Csn,
        trigger: Trigger,
    },
    CheckpointPromoted {
        process: ProcessId,
        csn: Csn,
        trigger: Trigger,
    },
    CheckpointDiscarded {
        process: ProcessId,
        csn: Csn,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trigger: Option<Trigger>,
    },
    Initiated {
        trigger: Trigger,
        minset: BitVector,
        deadline: u64,
    },
    InitiationDiscarded {
        process: ProcessId,
        reason: String,
    },
    CReqSent {
        msg: u64,
        by: ProcessId,
        forwarded: bool,
        to: ProcessId,
        trigger: Trigger,
        weight: Weight,
    },
    CReqHandled {
        msg: u64,
        process: ProcessId,
        trigger: Trigger,
        weight: Weight,
        kind: RequestKind,
        on_behalf: bool,
    },
    CReqWithheld {
        msg: u64,
        process: ProcessId,
        trigger: Trigger,
        weight: Weight,
    },
    CRplySent {
        msg: u64,
        from: ProcessId,
        trigger: Trigger,
        weight: Weight,
        new_ddv: BitVector,
        mr: bool,
    },
    CRplyReceived {
        msg: u64,
        from: ProcessId,
        trigger: Trigger,
        weight: Weight,
        accepted: bool,
    },
    Decided {
        trigger: Trigger,
        outcome: Outcome,
        uminset: BitVector,
        reason: DecisionReason,
    },
    DecisionSent {
        msg: u64,
        trigger: Trigger,
        outcome: Outcome,
        to: MssId,
    },
    DecisionApplied {
        process: ProcessId,
        trigger: Trigger,
        outcome: Outcome,
        member: bool,
        /// The process had to be contacted: a member, or a holder of
        /// session state.
        notified: bool,
    },
    FanoutDone {
        mss: MssId,
        trigger: Trigger,
    },
    SessionClosed {
        trigger: Trigger,
    },
    TimerFired {
        trigger: Trigger,
    },
    Disconnected {
        process: ProcessId,
        mss: MssId,
    },
    Reconnected {
        process: ProcessId,
        from: MssId,
        to: MssId,
        replayed: usize,
    },
    Deferred {
        action: String,
        process: ProcessId,
    },
    Ignored {
        action: String,
        process: ProcessId,
        reason: String,
    },
    Failed {
        process: ProcessId,
    },
    Anomaly {
        process: ProcessId,
        trigger: Trigger,
        detail: String,
    },
    RunEnd {
        terminated: bool,
        horizon_hit: bool,
        open_sessions: usize,
        in_flight: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: u64,
    /// Index of the simulator event that produced this entry.
    pub step: u64,
    pub actor: String,
    pub event: TraceEvent,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceParseError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line).map_err(|e| TraceParseError {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(e);
        }
        Ok(Trace { entries })
    }

    /// 64-bit FNV-1a over the JSON Lines serialization.
    pub fn hash(&self) -> u64 {
        trace_hash(self.to_jsonl().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.entries.iter().map(|e| &e.event)
    }
}

pub fn trace_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}
