use minsnap_core::scenario::{fixture, fixture_text, load_scenario, FIXTURE_NAMES};
use minsnap_core::simnet::{run, TraceEvent};
use minsnap_core::types::{Csn, Outcome, ProcessId};
use minsnap_core::verifier;

#[test]
fn fixtures_load_and_round_trip() {
    for name in FIXTURE_NAMES {
        let s = fixture(name).unwrap();
        assert_eq!(s.name, *name);
        assert!(s.validate().is_ok(), "{name}");
        assert_eq!(load_scenario(&s.to_json()).unwrap(), s, "{name}");
        assert!(fixture_text(name).is_some());
    }
    assert!(fixture("missing").is_err());
}

#[test]
fn fixtures_are_clean_for_many_seeds() {
    for name in FIXTURE_NAMES {
        let s = fixture(name).unwrap();
        let reference = run(&s, 0).unwrap().trace;
        for seed in 1..10 {
            let r = run(&s, seed).unwrap();
            assert!(r.terminated && !r.horizon_hit, "{name}/{seed}");
            let rep = verifier::verify(&r.trace);
            assert!(rep.is_clean(), "{name}/{seed}: {:?}", rep.findings);
            // Fixture delays are fixed, so only the recorded seed differs.
            assert_eq!(r.trace.entries.len(), reference.entries.len(), "{name}/{seed}");
        }
    }
}

#[test]
fn example2_advances_the_committed_csn() {
    let r = run(&fixture("example2").unwrap(), 7).unwrap();
    for i in 1..=6 {
        assert_eq!(r.process(ProcessId(i)).csn[i as usize], Csn(2), "P{i}");
    }
    for i in [0u32, 7] {
        assert_eq!(r.process(ProcessId(i)).csn[i as usize], Csn(1), "P{i}");
    }
}

#[test]
fn abort_timeout_is_decided_by_the_timer() {
    let r = run(&fixture("abort-timeout").unwrap(), 7).unwrap();
    assert!(r.trace.events().any(|e| matches!(e, TraceEvent::TimerFired { .. })));
    assert!(r.trace.events().any(|e| matches!(
        e,
        TraceEvent::CReqWithheld {
            process: ProcessId(0),
            ..
        }
    )));
    let outcome = r.trace.events().find_map(|e| match e {
        TraceEvent::Decided { outcome, .. } => Some(*outcome),
        _ => None,
    });
    assert_eq!(outcome, Some(Outcome::Abort));
}

#[test]
fn abort_negative_is_decided_by_the_refusal() {
    let r = run(&fixture("abort-negative").unwrap(), 7).unwrap();
    let refused = r.trace.events().any(|e| {
        matches!(
            e,
            TraceEvent::CRplySent {
                from: ProcessId(1),
                mr: false,
                ..
            }
        )
    });
    assert!(refused);
    assert!(!r.trace.events().any(|e| matches!(e, TraceEvent::TimerFired { .. })));
}

#[test]
fn disconnect_reconnect_is_held_until_the_session_closes() {
    let r = run(&fixture("disconnect").unwrap(), 7).unwrap();
    let entries = &r.trace.entries;
    let deferred = entries
        .iter()
        .position(|e| matches!(e.event, TraceEvent::Deferred { .. }))
        .unwrap();
    let closed = entries
        .iter()
        .position(|e| matches!(e.event, TraceEvent::SessionClosed { .. }))
        .unwrap();
    let back = entries
        .iter()
        .position(|e| matches!(e.event, TraceEvent::Reconnected { .. }))
        .unwrap();
    assert!(deferred < closed && closed < back);
}
