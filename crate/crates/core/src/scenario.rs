//! Scenario files, bundled fixtures and seeded workload generation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{MssId, ProcessId, MAX_PROCESSES};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("unknown fixture {name:?}; available: {avail}", name = .0, avail = FIXTURE_NAMES.join(", "))]
    UnknownFixture(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayBounds {
    pub min: u64,
    pub max: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EventAction {
    Send {
        src: ProcessId,
        dst: ProcessId,
        /// Fixed delivery delay overriding the random draw.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delay: Option<u64>,
    },
    Initiate {
        process: ProcessId,
    },
    Disconnect {
        process: ProcessId,
    },
    Reconnect {
        process: ProcessId,
        mss: MssId,
    },
    /// The process stops answering checkpoint requests.
    Fail {
        process: ProcessId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub at: u64,
    #[serde(rename = "do")]
    pub action: EventAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadParams {
    /// Overrides the run seed for workload generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub message_count: usize,
    pub initiation_count: usize,
    /// Per-process probability of one disconnect/reconnect pair.
    #[serde(default)]
    pub disconnect_rate: f64,
    /// Per-process probability of failing at a random time.
    #[serde(default)]
    pub failure_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub comment: String,
    pub n: usize,
    #[serde(default = "one")]
    pub mss_count: usize,
    /// Station of each process; empty means round robin.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub placement: Vec<MssId>,
    pub delay: DelayBounds,
    #[serde(default)]
    pub fifo: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_timeout: Option<u64>,
    pub horizon: u64,
    #[serde(default)]
    pub initial_csn: u64,
    /// Processes that answer checkpoint requests negatively.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refuse: Vec<ProcessId>,
    #[serde(default)]
    pub events: Vec<ScriptedEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_workload: Option<WorkloadParams>,
}

fn one() -> usize {
    1
}

impl Scenario {
    pub fn max_timeout(&self) -> u64 {
        self.max_timeout.unwrap_or(10 * self.delay.max.max(1) * self.n as u64)
    }

    pub fn placement_of(&self, p: ProcessId) -> MssId {
        self.placement
            .get(p.index())
            .copied()
            .unwrap_or(MssId((p.index() % self.mss_count.max(1)) as u32))
    }

    /// Scripted events followed by generated ones, ordered by time; events at
    /// the same time keep their listed order.
    pub fn expanded_events(&self, seed: u64) -> Vec<ScriptedEvent> {
        let mut events = self.events.clone();
        if let Some(params) = &self.random_workload {
            events.extend(generate_workload(self, params, params.seed.unwrap_or(seed)));
        }
        events.sort_by_key(|e| e.at);
        events
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        if self.version != SCENARIO_VERSION {
            errs.push(format!("version: expected {SCENARIO_VERSION}, found {}", self.version));
        }
        if self.n == 0 || self.n > MAX_PROCESSES {
            errs.push(format!("n: must be in 1..={MAX_PROCESSES}, found {}", self.n));
        }
        if self.mss_count == 0 {
            errs.push("mss_count: must be at least 1".into());
        }
        if !self.placement.is_empty() && self.placement.len() != self.n {
            errs.push(format!(
                "placement: needs {} entries, found {}",
                self.n,
                self.placement.len()
            ));
        }
        for (i, m) in self.placement.iter().enumerate() {
            if m.index() >= self.mss_count {
                errs.push(format!("placement[{i}]: {m} out of range"));
            }
        }
        if self.delay.min == 0 || self.delay.min > self.delay.max {
            errs.push(format!(
                "delay: need 1 <= min <= max, found [{}, {}]",
                self.delay.min, self.delay.max
            ));
        }
        if self.max_timeout == Some(0) {
            errs.push("max_timeout: must be positive".into());
        }
        if self.horizon == 0 {
            errs.push("horizon: must be positive".into());
        }
        let n = self.n;
        let check_p = |errs: &mut Vec<String>, ctx: &str, p: ProcessId| {
            if p.index() >= n {
                errs.push(format!("{ctx}: {p} out of range"));
            }
        };
        for (i, p) in self.refuse.iter().enumerate() {
            check_p(&mut errs, &format!("refuse[{i}]"), *p);
        }
        for (i, e) in self.events.iter().enumerate() {
            let ctx = format!("events[{i}]");
            if e.at >= self.horizon {
                errs.push(format!("{ctx}: time {} not before horizon {}", e.at, self.horizon));
            }
            match &e.action {
                EventAction::Send { src, dst, delay } => {
                    check_p(&mut errs, &ctx, *src);
                    check_p(&mut errs, &ctx, *dst);
                    if src == dst {
                        errs.push(format!("{ctx}: {src} sends to itself"));
                    }
                    if *delay == Some(0) {
                        errs.push(format!("{ctx}: delay must be positive"));
                    }
                }
                EventAction::Initiate { process }
                | EventAction::Disconnect { process }
                | EventAction::Fail { process } => check_p(&mut errs, &ctx, *process),
                EventAction::Reconnect { process, mss } => {
                    check_p(&mut errs, &ctx, *process);
                    if mss.index() >= self.mss_count {
                        errs.push(format!("{ctx}: {mss} out of range"));
                    }
                }
            }
        }
        if let Some(w) = &self.random_workload {
            for (name, rate) in [("disconnect_rate", w.disconnect_rate), ("failure_rate", w.failure_rate)] {
                if !(0.0..=1.0).contains(&rate) {
                    errs.push(format!("random_workload.{name}: must be in [0, 1], found {rate}"));
                }
            }
            if n < 2 && w.message_count > 0 {
                errs.push("random_workload: messages need at least two processes".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parses and validates scenario text.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

pub const FIXTURE_NAMES: &[&str] = &[
    "example1",
    "example2",
    "tardy",
    "disconnect",
    "abort-negative",
    "abort-timeout",
];

pub fn fixture_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "example1" => include_str!("../fixtures/example1.json"),
        "example2" => include_str!("../fixtures/example2.json"),
        "tardy" => include_str!("../fixtures/tardy.json"),
        "disconnect" => include_str!("../fixtures/disconnect.json"),
        "abort-negative" => include_str!("../fixtures/abort-negative.json"),
        "abort-timeout" => include_str!("../fixtures/abort-timeout.json"),
        _ => return None,
    })
}

pub fn fixture(name: &str) -> Result<Scenario, ScenarioError> {
    let text = fixture_text(name).ok_or_else(|| ScenarioError::UnknownFixture(name.into()))?;
    load_scenario(text)
}

/// Time between generated initiations: long enough for an unhindered
/// session to finish everywhere.
pub fn session_spacing(scenario: &Scenario) -> u64 {
    2 * (scenario.n as u64 + 4) * scenario.delay.max
}

/// Seeded random workload: uniform sends between distinct processes,
/// spaced initiations, optional disconnect/reconnect pairs and failures.
pub fn generate_workload(scenario: &Scenario, params: &WorkloadParams, seed: u64) -> Vec<ScriptedEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scenario.n as u32;
    let spacing = session_spacing(scenario);
    let mut events = Vec::new();

    let mut t = rng.gen_range(1..=spacing / 2 + 1);
    let mut last_initiation = 0;
    for _ in 0..params.initiation_count {
        let process = ProcessId(rng.gen_range(0..n));
        events.push(ScriptedEvent {
            at: t,
            action: EventAction::Initiate { process },
        });
        last_initiation = t;
        t += spacing + rng.gen_range(0..=spacing / 2);
    }
    let span = last_initiation + spacing;

    if n >= 2 {
        for _ in 0..params.message_count {
            let src = rng.gen_range(0..n);
            let dst = (src + rng.gen_range(1..n)) % n;
            events.push(ScriptedEvent {
                at: rng.gen_range(0..span),
                action: EventAction::Send {
                    src: ProcessId(src),
                    dst: ProcessId(dst),
                    delay: None,
                },
            });
        }
    }
    for p in 0..n {
        if params.disconnect_rate > 0.0 && rng.gen_bool(params.disconnect_rate) {
            let at = rng.gen_range(0..span);
            let back = at + rng.gen_range(1..=spacing);
            let mss = MssId(rng.gen_range(0..scenario.mss_count.max(1) as u32));
            events.push(ScriptedEvent {
                at,
                action: EventAction::Disconnect { process: ProcessId(p) },
            });
            events.push(ScriptedEvent {
                at: back,
                action: EventAction::Reconnect {
                    process: ProcessId(p),
                    mss,
                },
            });
        }
    }
    for p in 0..n {
        if params.failure_rate > 0.0 && rng.gen_bool(params.failure_rate) {
            let at = rng.gen_range(0..span);
            events.push(ScriptedEvent {
                at,
                action: EventAction::Fail { process: ProcessId(p) },
            });
        }
    }
    events.sort_by_key(|e| e.at);
    events
}

/// Shape of the randomized property campaign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignParams {
    pub n_min: usize,
    pub n_max: usize,
    pub max_messages: usize,
    pub max_initiations: usize,
    pub disconnect_share: f64,
    pub refuse_share: f64,
}

impl Default for CampaignParams {
    fn default() -> Self {
        CampaignParams {
            n_min: 3,
            n_max: 10,
            max_messages: 200,
            max_initiations: 3,
            disconnect_share: 0.10,
            refuse_share: 0.05,
        }
    }
}

/// Per-scenario seeds drawn from the master seed.
pub fn campaign_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.gen()).collect()
}

/// Builds one campaign scenario with its workload already expanded.
pub fn campaign_scenario(index: usize, seed: u64, params: &CampaignParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(params.n_min..=params.n_max);
    let mss_count = rng.gen_range(1..=3usize.min(n));
    let max_delay = rng.gen_range(1..=8u64);
    let min_delay = rng.gen_range(1..=max_delay);
    let disconnects = rng.gen_bool(params.disconnect_share);
    let refuses = rng.gen_bool(params.refuse_share);
    let mut scenario = Scenario {
        version: SCENARIO_VERSION,
        name: format!("campaign-{index}"),
        comment: String::new(),
        n,
        mss_count,
        placement: (0..n).map(|_| MssId(rng.gen_range(0..mss_count as u32))).collect(),
        delay: DelayBounds {
            min: min_delay,
            max: max_delay,
        },
        fifo: false,
        max_timeout: None,
        horizon: 1,
        initial_csn: 0,
        refuse: Vec::new(),
        events: Vec::new(),
        random_workload: None,
    };
    if refuses {
        scenario.refuse.push(ProcessId(rng.gen_range(0..n as u32)));
    }
    let workload = WorkloadParams {
        seed: None,
        message_count: rng.gen_range(0..=params.max_messages),
        initiation_count: rng.gen_range(1..=params.max_initiations),
        disconnect_rate: 0.0,
        failure_rate: 0.0,
    };
    let mut events = generate_workload(&scenario, &workload, rng.gen());
    if disconnects {
        let span = events.last().map(|e| e.at).unwrap_or(0) + 1;
        let p = ProcessId(rng.gen_range(0..n as u32));
        let at = rng.gen_range(0..span);
        let back = at + rng.gen_range(1..=session_spacing(&scenario));
        let mss = MssId(rng.gen_range(0..mss_count as u32));
        events.push(ScriptedEvent {
            at,
            action: EventAction::Disconnect { process: p },
        });
        events.push(ScriptedEvent {
            at: back,
            action: EventAction::Reconnect { process: p, mss },
        });
        events.sort_by_key(|e| e.at);
    }
    let last = events.last().map(|e| e.at).unwrap_or(0);
    scenario.horizon = last + 4 * scenario.max_timeout() + 10 * max_delay;
    scenario.events = events;
    scenario
}
