use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use minsnap_core::metrics::{self, CampaignReport, RunReport};
use minsnap_core::scenario::{self, CampaignParams, Scenario};
use minsnap_core::simnet::{self, Trace};

const EXIT_CLEAN: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_FINDINGS: u8 = 2;

#[derive(Parser)]
#[command(
    name = "minsnap",
    version,
    about = "Minimum-process coordinated checkpointing simulator and verifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file, a bundled fixture or a generated campaign.
    Run(RunArgs),
    /// Simulate and verify a batch of generated scenarios.
    Campaign(CampaignArgs),
    /// Re-verify a stored trace without simulating.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Seed; falls back to MINSNAP_SEED, then 0.
    #[arg(long, env = "MINSNAP_SEED")]
    seed: Option<u64>,
    /// Directory for trace, report and findings files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Exit with status 2 when the verifier reports any finding.
    #[arg(long)]
    fail_on_finding: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["scenario", "fixture", "campaign"])))]
struct RunArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(scenario::FIXTURE_NAMES))]
    fixture: Option<String>,
    /// Number of generated scenarios.
    #[arg(long, value_name = "N")]
    campaign: Option<usize>,
    /// Include verifier results in the report.
    #[arg(long)]
    verify: bool,
    /// Force FIFO channels.
    #[arg(long)]
    fifo: bool,
    #[arg(long, value_name = "TICKS")]
    max_timeout: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace in JSON Lines form.
    trace: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_ERROR);
        }
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Campaign(args) => cmd_campaign(args.count, &args.common),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn load(args: &RunArgs) -> Result<Scenario, String> {
    let mut s = match (&args.scenario, &args.fixture) {
        (Some(path), _) => scenario::load_scenario_file(path).map_err(|e| format!("{}: {e}", path.display()))?,
        (_, Some(name)) => scenario::fixture(name).map_err(|e| e.to_string())?,
        _ => unreachable!("input group is required"),
    };
    if args.fifo {
        s.fifo = true;
    }
    if let Some(t) = args.max_timeout {
        s.max_timeout = Some(t);
    }
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

fn cmd_run(args: RunArgs) -> Result<u8, String> {
    if let Some(count) = args.campaign {
        return cmd_campaign(count, &args.common);
    }
    let s = load(&args)?;
    let seed = args.common.seed.unwrap_or(0);
    let result = simnet::run(&s, seed).map_err(|e| e.to_string())?;
    let report = metrics::run_report(&s.name, seed, &result.trace);
    let verify = args.verify || args.common.fail_on_finding;
    emit_run(&report, &result.trace, verify, &args.common)
}

fn cmd_replay(args: ReplayArgs) -> Result<u8, String> {
    let text = fs::read_to_string(&args.trace).map_err(|e| format!("{}: {e}", args.trace.display()))?;
    let trace = Trace::from_jsonl(&text).map_err(|e| format!("{}: {e}", args.trace.display()))?;
    let seed = trace
        .events()
        .find_map(|e| match e {
            simnet::TraceEvent::RunStart { seed, .. } => Some(*seed),
            _ => None,
        })
        .ok_or_else(|| format!("{}: no run start entry", args.trace.display()))?;
    let name = args
        .trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = metrics::run_report(&name, seed, &trace);
    emit_run(&report, &trace, true, &args.common)
}

fn report_json(report: &RunReport, verify: bool) -> String {
    let mut v = serde_json::to_value(report).expect("report serializes");
    if !verify {
        v.as_object_mut().expect("object").remove("verification");
    }
    serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
}

fn report_csv(report: &RunReport) -> String {
    let mut out = metrics::csv_header() + "\n";
    for row in metrics::csv_rows(report) {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), String> {
    fs::write(dir.join(name), body).map_err(|e| format!("{}: {e}", dir.join(name).display()))
}

fn emit_run(report: &RunReport, trace: &Trace, verify: bool, common: &Common) -> Result<u8, String> {
    let body = match common.format {
        Format::Json => report_json(report, verify),
        Format::Csv => report_csv(report),
    };
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        write(dir, "trace.jsonl", &trace.to_jsonl())?;
        let file = match common.format {
            Format::Json => "report.json",
            Format::Csv => "report.csv",
        };
        write(dir, file, &body)?;
        if verify {
            let findings = serde_json::to_string_pretty(&report.verification.findings).expect("findings serialize");
            write(dir, "findings.json", &(findings + "\n"))?;
        }
    }
    print!("{body}");
    let dirty = verify && !report.verification.findings.is_empty();
    Ok(if dirty && common.fail_on_finding {
        EXIT_FINDINGS
    } else {
        EXIT_CLEAN
    })
}

fn campaign_csv(report: &CampaignReport) -> String {
    let mut out =
        String::from("index,seed,n,mss_count,disconnects,refuses,sessions,commits,aborts,findings,trace_hash\n");
    for e in &report.entries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            e.index,
            e.seed,
            e.n,
            e.mss_count,
            e.disconnects,
            e.refuses,
            e.sessions,
            e.commits,
            e.aborts,
            e.findings.values().sum::<usize>(),
            e.trace_hash.as_deref().unwrap_or("error"),
        ));
    }
    out
}

fn cmd_campaign(count: usize, common: &Common) -> Result<u8, String> {
    let seed = common.seed.unwrap_or(0);
    let report = metrics::run_campaign(seed, count, &CampaignParams::default());
    let body = match common.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        Format::Csv => campaign_csv(&report),
    };
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let file = match common.format {
            Format::Json => "campaign.json",
            Format::Csv => "campaign.csv",
        };
        write(dir, file, &body)?;
    }
    print!("{body}");
    if report.errors > 0 {
        return Err(format!("{} scenarios failed to simulate", report.errors));
    }
    let findings: usize = report.totals.values().sum();
    Ok(if findings > 0 && common.fail_on_finding {
        EXIT_FINDINGS
    } else {
        EXIT_CLEAN
    })
}
