//! Acceptance criteria. Run with `cargo test --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use minsnap_core::metrics::{self, compute_metrics};
use minsnap_core::protocol::RequestKind;
use minsnap_core::scenario::{fixture, load_scenario, CampaignParams, FIXTURE_NAMES};
use minsnap_core::simnet::{run, DeliveryPath, RunResult, TraceEvent};
use minsnap_core::types::{CheckpointCause, Csn, Outcome, ProcessId, Trigger};
use minsnap_core::verifier::{self, mutations, FindingCode};

const FIXTURE_SEED: u64 = 7;
const FIXTURE_TIME_LIMIT: Duration = Duration::from_secs(1);
const CAMPAIGN_MASTER_SEED: u64 = 20240601;
const CAMPAIGN_COUNT: usize = 1000;
const CAMPAIGN_TIME_LIMIT: Duration = Duration::from_secs(60);
const MIN_MUTATIONS: usize = 6;
const EXPECTED_QUEUED: usize = 3;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ids(v: &[u32]) -> BTreeSet<ProcessId> {
    v.iter().map(|i| ProcessId(*i)).collect()
}

fn sim(name: &str) -> RunResult {
    run(&fixture(name).unwrap(), FIXTURE_SEED).unwrap()
}

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn first_trigger(r: &RunResult) -> Trigger {
    r.trace
        .events()
        .find_map(|e| match e {
            TraceEvent::Initiated { trigger, .. } => Some(*trigger),
            _ => None,
        })
        .expect("a session")
}

fn decision(r: &RunResult) -> Option<(Outcome, BTreeSet<ProcessId>)> {
    r.trace.events().find_map(|e| match e {
        TraceEvent::Decided { outcome, uminset, .. } => Some((*outcome, uminset.members().collect())),
        _ => None,
    })
}

fn promoted(r: &RunResult) -> BTreeSet<ProcessId> {
    r.trace
        .events()
        .filter_map(|e| match e {
            TraceEvent::CheckpointPromoted { process, .. } => Some(*process),
            _ => None,
        })
        .collect()
}

fn forwards(r: &RunResult) -> BTreeMap<ProcessId, BTreeSet<ProcessId>> {
    let mut m: BTreeMap<ProcessId, BTreeSet<ProcessId>> = BTreeMap::new();
    for e in r.trace.events() {
        if let TraceEvent::CReqSent {
            by,
            forwarded: true,
            to,
            ..
        } = e
        {
            m.entry(*by).or_default().insert(*to);
        }
    }
    m
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let r = sim("example2");
    let report = verifier::verify(&r.trace);
    let elapsed = t0.elapsed();
    let (outcome, uminset) = decision(&r).ok_or("no decision")?;
    check(outcome == Outcome::Commit, format!("outcome {outcome:?}"))?;
    let want = ids(&[1, 2, 3, 4, 5, 6]);
    check(uminset == want, format!("uminset {uminset:?}"))?;
    let committed = promoted(&r);
    check(committed == want, format!("committed {committed:?}"))?;
    let permanent = r
        .trace
        .events()
        .filter(|e| matches!(e, TraceEvent::CheckpointPromoted { .. }))
        .count();
    check(permanent == 6, format!("{permanent} permanent checkpoints"))?;
    let fw = forwards(&r);
    let expected: BTreeMap<ProcessId, BTreeSet<ProcessId>> = [(ProcessId(3), ids(&[6])), (ProcessId(4), ids(&[5]))]
        .into_iter()
        .collect();
    check(fw == expected, format!("forwards {fw:?}"))?;
    let p4_tentatives = r
        .trace
        .events()
        .filter(|e| {
            matches!(
                e,
                TraceEvent::CheckpointTaken {
                    process: ProcessId(4),
                    trigger: Some(_),
                    ..
                }
            )
        })
        .count();
    check(p4_tentatives == 1, format!("P4 took {p4_tentatives} tentatives"))?;
    let dup_ok = r.trace.events().all(|e| match e {
        TraceEvent::CReqHandled {
            process: ProcessId(4),
            kind,
            ..
        } => {
            matches!(
                kind,
                RequestKind::Fresh | RequestKind::Duplicate | RequestKind::AlreadyCheckpointed
            )
        }
        _ => true,
    });
    check(dup_ok, "P4 handled a request unexpectedly")?;
    check(report.is_clean(), format!("findings {:?}", report.counts()))?;
    check(elapsed < FIXTURE_TIME_LIMIT, format!("took {elapsed:?}"))?;
    Ok(format!(
        "example2 commits {{P1..P6}}, 6 permanent, P3->P6 and P4->P5 only, {:.3} s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Verdict {
    let r = sim("example1");
    let (outcome, uminset) = decision(&r).ok_or("no decision")?;
    check(outcome == Outcome::Commit, format!("outcome {outcome:?}"))?;
    check(uminset == ids(&[0, 1, 2, 3, 4]), format!("uminset {uminset:?}"))?;
    let entries = &r.trace.entries;
    let m4 = r
        .trace
        .events()
        .find_map(|e| match e {
            TraceEvent::AppSent {
                seq,
                src: ProcessId(2),
                dst: ProcessId(4),
                ..
            } => Some(*seq),
            _ => None,
        })
        .ok_or("m4 not sent")?;
    let induced = entries
        .iter()
        .position(|e| {
            matches!(
                e.event,
                TraceEvent::CheckpointTaken {
                    process: ProcessId(4),
                    cause: CheckpointCause::Induced,
                    ..
                }
            )
        })
        .ok_or("P4 took no induced checkpoint")?;
    let delivered = entries
        .iter()
        .position(|e| matches!(e.event, TraceEvent::AppDelivered { seq, .. } if seq == m4))
        .ok_or("m4 never delivered")?;
    check(induced < delivered, "m4 delivered before P4's induced checkpoint")?;
    let m5 = r
        .trace
        .events()
        .find_map(|e| match e {
            TraceEvent::AppSent {
                seq,
                src: ProcessId(3),
                dst: ProcessId(5),
                ..
            } => Some(*seq),
            _ => None,
        })
        .ok_or("m5 not sent")?;
    let buffered = r.trace.events().any(|e| {
        matches!(e, TraceEvent::AppArrived { seq, action: minsnap_core::protocol::Action::Buffer, .. } if *seq == m5)
    });
    check(buffered, "m5 not buffered")?;
    let decided = entries
        .iter()
        .position(|e| matches!(e.event, TraceEvent::Decided { .. }))
        .unwrap();
    let m5_at = entries
        .iter()
        .position(|e| matches!(e.event, TraceEvent::AppDelivered { seq, via: DeliveryPath::Buffer, .. } if seq == m5))
        .ok_or("m5 never flushed")?;
    check(m5_at > decided, "m5 delivered before the commit")?;
    let quiet = r.trace.events().all(|e| {
        !matches!(e, TraceEvent::CheckpointTaken { process, .. } if *process == ProcessId(5) || *process == ProcessId(6))
    });
    check(quiet, "P5 or P6 took a checkpoint")?;
    let oracle = verifier::oracle_min_set(&verifier::Projection::from_trace(&r.trace), first_trigger(&r));
    let m = compute_metrics(&r.trace, first_trigger(&r), &oracle).map_err(|e| e.to_string())?;
    check(m.ckpts_useless == 0, format!("{} useless checkpoints", m.ckpts_useless))?;
    let report = verifier::verify(&r.trace);
    check(report.is_clean(), format!("findings {:?}", report.counts()))?;
    Ok("example1 uminset {P0..P4}, P4 induced before m4, m5 buffered until commit, P5/P6 untouched, 0 useless".into())
}

fn criterion_3() -> Verdict {
    let r = sim("tardy");
    let report = verifier::verify(&r.trace);
    let m = report.sessions[0].minimality.as_ref().ok_or("session not committed")?;
    let want: Vec<ProcessId> = ids(&[0, 1, 2, 3]).into_iter().collect();
    check(m.committed_set == want, format!("committed {:?}", m.committed_set))?;
    check(m.oracle_set == want, format!("oracle {:?}", m.oracle_set))?;
    let orphans = report.count(FindingCode::Orphan);
    check(orphans == 0, format!("{orphans} orphans"))?;
    check(report.is_clean(), format!("findings {:?}", report.counts()))?;
    Ok("tardy commits {P0..P3} = oracle set, 0 orphans".into())
}

/// Three processes each send one message to the initiator, nobody else
/// talks, then the initiator starts a session.
const BEST_CASE: &str = r#"{
  "version": 1, "name": "best-case", "n": 6, "mss_count": 2,
  "placement": [0, 0, 1, 1, 0, 1],
  "delay": { "min": 1, "max": 3 }, "horizon": 400,
  "events": [
    { "at": 1, "do": { "send": { "src": 1, "dst": 0 } } },
    { "at": 2, "do": { "send": { "src": 2, "dst": 0 } } },
    { "at": 3, "do": { "send": { "src": 3, "dst": 0 } } },
    { "at": 20, "do": { "initiate": { "process": 0 } } }
  ]
}"#;

fn criterion_4() -> Verdict {
    let s = load_scenario(BEST_CASE).map_err(|e| e.to_string())?;
    let r = run(&s, FIXTURE_SEED).map_err(|e| e.to_string())?;
    check(forwards(&r).is_empty(), "requests were forwarded")?;
    let trigger = first_trigger(&r);
    let oracle = verifier::oracle_min_set(&verifier::Projection::from_trace(&r.trace), trigger);
    let n_min = oracle.len();
    check(n_min == 4, format!("N_min {n_min}"))?;
    let m = compute_metrics(&r.trace, trigger, &oracle).map_err(|e| e.to_string())?;
    let want = n_min - 1;
    check(m.msgs_creq == want, format!("creq {}", m.msgs_creq))?;
    check(m.msgs_crply == want, format!("crply {}", m.msgs_crply))?;
    check(m.msgs_decision == want, format!("decision {}", m.msgs_decision))?;
    check(
        m.formula_messages_value == 3 * n_min,
        format!("formula {}", m.formula_messages_value),
    )?;
    check(m.formula_messages == "3 * N_min * C_air", "formula text")?;
    check(
        m.msgs_control_total == m.msgs_creq + m.msgs_crply + m.msgs_decision,
        "total inconsistent",
    )?;
    check(
        m.msgs_control_total + 3 == m.formula_messages_value,
        "literal and formula counts disagree",
    )?;
    check(m.blocking_ticks == 0, "blocking")?;
    Ok(format!(
        "best case N_min={n_min}: creq=crply=decision={want}, literal total {} vs formula 3*N_min={}",
        m.msgs_control_total, m.formula_messages_value
    ))
}

fn criterion_5() -> Verdict {
    let t0 = Instant::now();
    let rep = metrics::run_campaign(CAMPAIGN_MASTER_SEED, CAMPAIGN_COUNT, &CampaignParams::default());
    let elapsed = t0.elapsed();
    check(rep.entries.len() == CAMPAIGN_COUNT, "scenario count")?;
    check(rep.errors == 0, format!("{} simulation errors", rep.errors))?;
    let zero = [
        FindingCode::Orphan,
        FindingCode::Nonterm,
        FindingCode::DupTent,
        FindingCode::WeightLeak,
        FindingCode::BlockedSend,
        FindingCode::MissingCkpt,
    ];
    let bad: Vec<String> = zero
        .iter()
        .filter(|c| rep.totals[c] > 0)
        .map(|c| format!("{}={}", c.as_str(), rep.totals[c]))
        .collect();
    check(bad.is_empty(), format!("nonzero {bad:?}"))?;
    check(elapsed < CAMPAIGN_TIME_LIMIT, format!("took {elapsed:?}"))?;
    let disc = rep.entries.iter().filter(|e| e.disconnects).count();
    let refuse = rep.entries.iter().filter(|e| e.refuses).count();
    Ok(format!(
        "{CAMPAIGN_COUNT} scenarios ({} sessions, {} commits, {} aborts, {disc} with disconnects, {refuse} with mr=0) \
         in {:.1} s: 0 ORPHAN/NONTERM/DUP_TENT/WEIGHT_LEAK/BLOCKED_SEND/MISSING_CKPT; EXTRA_CKPT={} DISC_EXTRA={} USELESS_CKPT={}",
        rep.sessions,
        rep.commits,
        rep.aborts,
        elapsed.as_secs_f64(),
        rep.totals[&FindingCode::ExtraCkpt],
        rep.totals[&FindingCode::DiscExtra],
        rep.totals[&FindingCode::UselessCkpt],
    ))
}

fn criterion_6() -> Verdict {
    let mut notes = Vec::new();
    for name in ["abort-negative", "abort-timeout"] {
        let s = fixture(name).unwrap();
        let r = run(&s, FIXTURE_SEED).unwrap();
        let (outcome, _) = decision(&r).ok_or(format!("{name}: no decision"))?;
        check(outcome == Outcome::Abort, format!("{name}: {outcome:?}"))?;
        for p in &r.processes {
            check(
                p.tentative.is_none() && !p.c_state,
                format!("{name}: {} holds a tentative", p.id),
            )?;
            check(p.buffer.is_empty(), format!("{name}: {} still buffers", p.id))?;
            let initial = vec![Csn(s.initial_csn); s.n];
            check(p.csn == initial, format!("{name}: {} csn {:?}", p.id, p.csn))?;
        }
        let report = verifier::verify(&r.trace);
        check(
            report.count(FindingCode::Undelivered) == 0,
            format!("{name}: undelivered"),
        )?;
        check(
            report.count(FindingCode::DanglingTent) == 0,
            format!("{name}: dangling"),
        )?;
        let flushed = r
            .trace
            .events()
            .filter(|e| {
                matches!(
                    e,
                    TraceEvent::AppDelivered {
                        via: DeliveryPath::Buffer,
                        ..
                    }
                )
            })
            .count();
        notes.push(format!("{name} aborts ({flushed} buffered delivered)"));
    }
    Ok(format!("{}; no tentatives left, csn restored", notes.join(", ")))
}

fn criterion_7() -> Verdict {
    let r = sim("disconnect");
    let queued: Vec<u64> = r
        .trace
        .events()
        .filter_map(|e| match e {
            TraceEvent::AppQueued { seq, .. } => Some(*seq),
            _ => None,
        })
        .collect();
    check(queued.len() == EXPECTED_QUEUED, format!("{} queued", queued.len()))?;
    let replayed: Vec<u64> = r
        .trace
        .events()
        .filter_map(|e| match e {
            TraceEvent::AppDelivered {
                seq,
                via: DeliveryPath::Replay,
                ..
            } => Some(*seq),
            _ => None,
        })
        .collect();
    check(
        replayed == queued,
        format!("replayed {replayed:?} vs queued {queued:?}"),
    )?;
    let adopted = r.trace.events().find_map(|e| match e {
        TraceEvent::CheckpointAdopted { process, csn, trigger } => Some((*process, *csn, *trigger)),
        _ => None,
    });
    let (p, csn, trigger) = adopted.ok_or("no disconnect checkpoint stood in")?;
    let promoted = r.trace.events().any(|e| {
        matches!(e, TraceEvent::CheckpointPromoted { process, csn: c, trigger: t } if *process == p && *c == csn && *t == trigger)
    });
    check(promoted, "disconnect checkpoint not promoted")?;
    check(
        decision(&r).map(|d| d.0) == Some(Outcome::Commit),
        "session did not commit",
    )?;
    let report = verifier::verify(&r.trace);
    check(report.is_clean(), format!("findings {:?}", report.counts()))?;
    Ok(format!(
        "{EXPECTED_QUEUED} queued messages replayed in order; {p}'s disconnect checkpoint adopted and promoted"
    ))
}

fn criterion_8() -> Verdict {
    for name in FIXTURE_NAMES {
        let a = sim(name).trace;
        let b = sim(name).trace;
        check(a.to_jsonl() == b.to_jsonl(), format!("{name}: traces differ"))?;
    }
    let params = CampaignParams::default();
    let a = metrics::run_campaign(CAMPAIGN_MASTER_SEED, CAMPAIGN_COUNT, &params);
    let b = metrics::run_campaign(CAMPAIGN_MASTER_SEED, CAMPAIGN_COUNT, &params);
    check(a.aggregate_hash == b.aggregate_hash, "campaign hashes differ")?;
    check(a.entries == b.entries, "campaign entries differ")?;
    Ok(format!(
        "{} fixtures and the {CAMPAIGN_COUNT}-scenario campaign (hash {}) reproduce byte for byte",
        FIXTURE_NAMES.len(),
        a.aggregate_hash
    ))
}

fn criterion_9() -> Verdict {
    let suite = mutations::suite();
    check(suite.len() >= MIN_MUTATIONS, format!("only {} mutations", suite.len()))?;
    let mut missed = Vec::new();
    for m in &suite {
        let r = m.evaluate().map_err(|e| e.to_string())?;
        if !r.detected() {
            missed.push(format!("{} ({})", r.name, r.expect.as_str()));
        }
    }
    check(missed.is_empty(), format!("missed {missed:?}"))?;
    Ok(format!("{}/{} mutations detected", suite.len(), suite.len()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("example2 fixture", criterion_1),
        ("example1 fixture", criterion_2),
        ("tardy fixture", criterion_3),
        ("best-case cost accounting", criterion_4),
        ("randomized campaign", criterion_5),
        ("abort paths", criterion_6),
        ("disconnection", criterion_7),
        ("determinism", criterion_8),
        ("negative controls", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {} {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
