//! Weight ledger over the control traffic of each session. Weights are
//! scaled to integers over 2^64 so that leaks past one stay representable.

use std::collections::BTreeMap;

use super::{Finding, FindingCode};
use crate::protocol::DecisionReason;
use crate::simnet::{Trace, TraceEvent};
use crate::types::{ProcessId, Trigger, Weight, MAX_LOG2_DENOMINATOR};

const ONE: i128 = 1 << MAX_LOG2_DENOMINATOR;

fn scaled(w: Weight) -> i128 {
    (w.numerator() as i128) << (MAX_LOG2_DENOMINATOR - w.log2_denominator())
}

#[derive(Default)]
struct Ledger {
    pool: i128,
    in_flight: BTreeMap<u64, i128>,
    held: BTreeMap<ProcessId, i128>,
    withheld: i128,
    absorbed: i128,
    reported: bool,
}

impl Ledger {
    fn total(&self) -> i128 {
        self.pool
            + self.in_flight.values().sum::<i128>()
            + self.held.values().sum::<i128>()
            + self.withheld
            + self.absorbed
    }
}

struct Audit {
    ledgers: BTreeMap<Trigger, Ledger>,
    findings: Vec<Finding>,
}

impl Audit {
    fn leak(&mut self, t: Trigger, detail: String) {
        self.findings
            .push(Finding::new(FindingCode::WeightLeak, detail).session(t));
    }

    fn ledger(&mut self, t: Trigger) -> Option<&mut Ledger> {
        if !self.ledgers.contains_key(&t) {
            self.leak(t, "control traffic for an unknown session".into());
        }
        self.ledgers.get_mut(&t)
    }

    fn take(&mut self, t: Trigger, msg: u64, w: i128) -> Option<i128> {
        let got = self.ledger(t)?.in_flight.remove(&msg);
        match got {
            None => self.leak(t, format!("message {msg} carries weight that was never sent")),
            Some(v) if v != w => self.leak(t, format!("message {msg} changed weight in transit")),
            _ => {}
        }
        got
    }

    fn settle(&mut self) {
        let mut leaks = Vec::new();
        for (t, l) in self.ledgers.iter_mut() {
            if l.reported {
                continue;
            }
            let before = leaks.len();
            if l.total() != ONE {
                leaks.push((*t, "total weight differs from one".to_string()));
            }
            for (p, h) in &l.held {
                if *h != 0 {
                    leaks.push((*t, format!("{p} holds weight across steps")));
                }
            }
            if l.pool < 0 || l.in_flight.values().any(|v| *v <= 0) {
                leaks.push((*t, "negative weight".to_string()));
            }
            l.reported = leaks.len() > before;
        }
        for (t, d) in leaks {
            self.leak(t, d);
        }
        for l in self.ledgers.values_mut() {
            l.held.retain(|_, h| *h != 0);
        }
    }

    fn apply(&mut self, ev: &TraceEvent) {
        match ev {
            TraceEvent::Initiated { trigger, .. } => {
                let l = Ledger {
                    pool: ONE,
                    ..Ledger::default()
                };
                if self.ledgers.insert(*trigger, l).is_some() {
                    self.leak(*trigger, "session initiated twice".into());
                }
            }
            TraceEvent::CReqSent {
                msg,
                by,
                forwarded,
                trigger,
                weight,
                ..
            } => {
                let w = scaled(*weight);
                let Some(l) = self.ledger(*trigger) else { return };
                if *forwarded {
                    *l.held.entry(*by).or_insert(0) -= w;
                } else {
                    l.pool -= w;
                }
                l.in_flight.insert(*msg, w);
            }
            TraceEvent::CReqHandled {
                msg,
                process,
                trigger,
                weight,
                ..
            } => {
                let w = scaled(*weight);
                if let Some(v) = self.take(*trigger, *msg, w) {
                    let l = self.ledgers.get_mut(trigger).expect("ledger checked");
                    *l.held.entry(*process).or_insert(0) += v;
                }
            }
            TraceEvent::CReqWithheld {
                msg, trigger, weight, ..
            } => {
                let w = scaled(*weight);
                if let Some(v) = self.take(*trigger, *msg, w) {
                    self.ledgers.get_mut(trigger).expect("ledger checked").withheld += v;
                }
            }
            TraceEvent::CRplySent {
                msg,
                from,
                trigger,
                weight,
                ..
            } => {
                let w = scaled(*weight);
                let Some(l) = self.ledger(*trigger) else { return };
                *l.held.entry(*from).or_insert(0) -= w;
                l.in_flight.insert(*msg, w);
            }
            TraceEvent::CRplyReceived {
                msg,
                trigger,
                weight,
                accepted,
                ..
            } => {
                let w = scaled(*weight);
                if let Some(v) = self.take(*trigger, *msg, w) {
                    let l = self.ledgers.get_mut(trigger).expect("ledger checked");
                    if *accepted {
                        l.pool += v;
                    } else {
                        l.absorbed += v;
                    }
                }
            }
            TraceEvent::Decided {
                trigger,
                reason: DecisionReason::Weight,
                ..
            } => {
                let pool = self.ledger(*trigger).map(|l| l.pool);
                if pool.is_some_and(|p| p != ONE) {
                    self.leak(*trigger, "decided on weight without holding all of it".into());
                }
            }
            _ => {}
        }
    }
}

/// Replays the control traffic and checks that, at every step boundary,
/// each session's weight sums to one across the coordinator, messages in
/// flight, withheld requests and late replies, with nothing left at a
/// process.
pub fn audit_weights(trace: &Trace) -> Vec<Finding> {
    let mut a = Audit {
        ledgers: BTreeMap::new(),
        findings: Vec::new(),
    };
    let mut step = None;
    for e in &trace.entries {
        if step.is_some_and(|s| s != e.step) {
            a.settle();
        }
        step = Some(e.step);
        a.apply(&e.event);
    }
    a.settle();
    a.findings
}
