//! Per-process and coordinator state machines. Every operation mutates one
//! state value and returns the messages and records it produced, so the same
//! code runs under the simulator and in isolation.

mod initiator;
mod process;

pub use initiator::{DecisionReason, InitiatorState};
pub use process::{
    Action, AppMessage, DecisionOutcome, Initiation, Interval, ProcessState, ReceiveCase, ReceiveOutcome, Reply,
    RequestKind, RequestOutcome,
};
