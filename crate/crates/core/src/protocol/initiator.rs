use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BitVector, Outcome, Trigger, Weight};

/// Why a session was decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    Weight,
    Timeout,
}

/// Coordinator state of one session, kept at the initiator's support station.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitiatorState {
    pub trigger: Trigger,
    pub minset: BitVector,
    pub new_set: BitVector,
    pub uminset: BitVector,
    /// Weight collected so far, including what the initiator kept.
    pub weight: Weight,
    pub any_negative: bool,
    pub deadline: u64,
    pub decided: Option<(Outcome, DecisionReason)>,
}

impl InitiatorState {
    pub fn new(trigger: Trigger, minset: BitVector, retained: Weight, deadline: u64) -> Self {
        let n = minset.len();
        let mut ini = InitiatorState {
            trigger,
            uminset: minset.clone(),
            minset,
            new_set: BitVector::zeros(n),
            weight: retained,
            any_negative: false,
            deadline,
            decided: None,
        };
        ini.check_complete();
        ini
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.decided.map(|d| d.0)
    }

    fn check_complete(&mut self) {
        if self.decided.is_none() && self.weight.is_one() {
            let outcome = if self.any_negative {
                Outcome::Abort
            } else {
                Outcome::Commit
            };
            self.decided = Some((outcome, DecisionReason::Weight));
        }
    }

    /// Folds in one reply. Returns the decision if this reply completed the weight.
    pub fn on_checkpoint_reply(
        &mut self,
        trigger: Trigger,
        new_ddv: &BitVector,
        weight: Weight,
        mr: bool,
    ) -> Result<Option<Outcome>> {
        if self.decided.is_some() {
            return Err(Error::AlreadyDecided);
        }
        if trigger != self.trigger {
            return Err(Error::Protocol(format!(
                "reply for {trigger} reached session {}",
                self.trigger
            )));
        }
        self.new_set.merge_in(new_ddv)?;
        self.uminset = self.minset.merge(&self.new_set)?;
        self.weight = self.weight.accumulate(weight)?;
        self.any_negative |= !mr;
        self.check_complete();
        Ok(self.outcome())
    }

    /// Aborts the session if the deadline passed without full weight.
    pub fn on_timeout(&mut self, now: u64) -> Option<Outcome> {
        if self.decided.is_none() && now >= self.deadline {
            self.decided = Some((Outcome::Abort, DecisionReason::Timeout));
            return Some(Outcome::Abort);
        }
        None
    }
}
