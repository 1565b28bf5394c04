//! `spresso`: runs schedules against scenarios, checks the authentication and
//! privacy properties, cross-checks the knowledge procedures and fuzzes
//! schedules.
//!
//! Exit codes: 0 success, 1 property violation or oracle disagreement,
//! 2 malformed input, 3 a schedule command that does not induce a step,
//! 4 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use spresso_model::fixtures;
use spresso_model::fuzz::{self, Check, FuzzConfig};
use spresso_model::oracle::{run_oracle, Fault};
use spresso_model::parties::{Scenario, Variant};
use spresso_model::properties::{check_auth_a, check_auth_b, check_idp_privacy, service_tokens, Violation};
use spresso_model::runtime::{parse_trace, run_schedule, trace_jsonl, Schedule, System, Trace};

const EXIT_VIOLATION: u8 = 1;
const EXIT_MALFORMED: u8 = 2;
const EXIT_NOT_INDUCED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "spresso", version, about = "Dolev-Yao web model engine for SPRESSO")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a schedule and write its trace.
    Run(RunArgs),
    /// Run property checkers over schedules or traces.
    Check(CheckArgs),
    /// Cross-check derivability and static equivalence against brute force.
    Oracle(OracleArgs),
    /// Generate random schedules and check every run.
    Fuzz(FuzzArgs),
    /// Write the shipped fixture files.
    #[command(hide = true)]
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Auth,
    Privacy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    #[value(name = "authA")]
    AuthA,
    #[value(name = "authB")]
    AuthB,
    #[value(name = "privacy")]
    Privacy,
}

impl From<CheckArg> for Check {
    fn from(c: CheckArg) -> Check {
        match c {
            CheckArg::AuthA => Check::AuthA,
            CheckArg::AuthB => Check::AuthB,
            CheckArg::Privacy => Check::Privacy,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Defaults to `auth` when the scenario has a network attacker.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Challenge RP domains for the privacy variant, comma separated.
    #[arg(long, value_delimiter = ',')]
    challenge: Vec<String>,
    #[arg(long, default_value_t = fixtures::SEED)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    schedule: PathBuf,
    /// Trace output path (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, num_args = 1..)]
    schedule: Vec<PathBuf>,
    /// Trace files to check with the authentication checkers.
    #[arg(long, num_args = 1..)]
    trace: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    check: Vec<CheckArg>,
    /// Violations output path (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Number of knowledge bases.
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long, default_value_t = 500)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = fixtures::SEED)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct FuzzArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    /// Maximum number of moves per generated schedule.
    #[arg(long, default_value_t = 24)]
    depth: usize,
    #[arg(long, value_enum, value_delimiter = ',')]
    check: Vec<CheckArg>,
    /// Directory for counterexample schedules.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type Outcome = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fail(EXIT_IO, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::from_json(&read(path)?).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

fn load_schedule(path: &Path) -> Result<Schedule, Failure> {
    Schedule::from_json(&read(path)?).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

fn load_trace(path: &Path) -> Result<Trace, Failure> {
    parse_trace(&read(path)?).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

impl ScenarioArgs {
    fn load(&self) -> Result<(Scenario, Variant), Failure> {
        let sc = load_scenario(&self.scenario)?;
        let variant = match (self.variant, fixtures::default_variant(&sc)) {
            (None, v) => match (&v, self.challenge.first()) {
                (Variant::Privacy { .. }, Some(dr)) => Variant::Privacy { dr: dr.clone() },
                _ => v,
            },
            (Some(VariantArg::Auth), _) => Variant::Auth,
            (Some(VariantArg::Privacy), v) => match (self.challenge.first(), v) {
                (Some(dr), _) => Variant::Privacy { dr: dr.clone() },
                (None, Variant::Privacy { dr }) => Variant::Privacy { dr },
                (None, Variant::Auth) => return Err(fail(EXIT_MALFORMED, "privacy variant needs --challenge")),
            },
        };
        sc.validate_variant(&variant).map_err(|e| fail(EXIT_MALFORMED, e.to_string()))?;
        Ok((sc, variant))
    }

    fn challenge_pair(&self, sc: &Scenario) -> Result<(String, String), Failure> {
        match self.challenge.as_slice() {
            [] => Ok(fixtures::challenge_domains(sc)),
            [a, b] => Ok((a.clone(), b.clone())),
            _ => Err(fail(EXIT_MALFORMED, "--challenge takes two RP domains for the privacy check")),
        }
    }
}

fn system(sc: &Scenario, variant: &Variant) -> Result<System, Failure> {
    System::new(sc.clone(), variant.clone()).map_err(|e| fail(EXIT_MALFORMED, e.to_string()))
}

fn checks_or_default(checks: &[CheckArg], variant: &Variant) -> Vec<Check> {
    if !checks.is_empty() {
        return checks.iter().map(|&c| c.into()).collect();
    }
    match variant {
        Variant::Auth => vec![Check::AuthA, Check::AuthB],
        Variant::Privacy { .. } => vec![Check::Privacy],
    }
}

fn cmd_run(a: &RunArgs) -> Outcome {
    let (sc, variant) = a.scenario.load()?;
    let schedule = load_schedule(&a.schedule)?;
    let run = run_schedule(&system(&sc, &variant)?, &schedule, a.scenario.seed);
    if let Some(out) = &a.out {
        write(out, &trace_jsonl(&run))?;
    }
    let summary = json!({
        "status": run.end.status,
        "steps": run.end.steps,
        "protocol_messages": run.protocol_messages(),
        "service_tokens": service_tokens(&run.trace()).len(),
    });
    println!("{summary}");
    match run.not_induced() {
        Some(e) => Err(fail(EXIT_NOT_INDUCED, format!("not induced at step {}: {e}", run.end.steps + 1))),
        None => Ok(0),
    }
}

fn auth_violations(sc: &Scenario, trace: &Trace, checks: &[Check]) -> Result<Vec<Violation>, Failure> {
    let mut out = Vec::new();
    let err = |e: spresso_model::properties::PropertyError| fail(EXIT_MALFORMED, e.to_string());
    if checks.contains(&Check::AuthA) {
        out.extend(check_auth_a(sc, trace).map_err(err)?);
    }
    if checks.contains(&Check::AuthB) {
        out.extend(check_auth_b(sc, trace).map_err(err)?);
    }
    Ok(out)
}

fn cmd_check(a: &CheckArgs) -> Outcome {
    let (sc, variant) = a.scenario.load()?;
    let checks = checks_or_default(&a.check, &variant);
    let auth = checks.iter().any(|c| *c != Check::Privacy);
    if a.schedule.is_empty() && a.trace.is_empty() {
        return Err(fail(EXIT_MALFORMED, "nothing to check: pass --schedule or --trace"));
    }
    if checks.contains(&Check::Privacy) && !a.trace.is_empty() {
        return Err(fail(EXIT_MALFORMED, "the privacy check needs schedules, not traces"));
    }
    let mut violations = Vec::new();
    for path in &a.schedule {
        let schedule = load_schedule(path)?;
        let mut found = Vec::new();
        if auth {
            let run = run_schedule(&system(&sc, &Variant::Auth)?, &schedule, a.scenario.seed);
            found.extend(auth_violations(&sc, &run.trace(), &checks)?);
        }
        if checks.contains(&Check::Privacy) {
            let (d1, d2) = a.scenario.challenge_pair(&sc)?;
            let outcome = check_idp_privacy(&sc, &schedule, &d1, &d2, a.scenario.seed)
                .map_err(|e| fail(EXIT_MALFORMED, e.to_string()))?;
            found.extend(outcome.violation);
        }
        for v in found.iter_mut() {
            v.replay.schedule.get_or_insert_with(|| path.display().to_string());
        }
        violations.extend(found);
    }
    for path in &a.trace {
        violations.extend(auth_violations(&sc, &load_trace(path)?, &checks)?);
    }
    report_violations(&violations, a.out.as_deref())
}

fn report_violations(violations: &[Violation], out: Option<&Path>) -> Outcome {
    let lines: String = violations.iter().map(|v| v.to_json() + "\n").collect();
    print!("{lines}");
    if let Some(out) = out {
        write(out, &lines)?;
    }
    Ok(if violations.is_empty() { 0 } else { EXIT_VIOLATION })
}

fn cmd_oracle(a: &OracleArgs) -> Outcome {
    let fault = if a.inject_fault { Fault::NoSymmetricDecryption } else { Fault::None };
    let r = run_oracle(a.budget, a.frames, a.depth, a.seed, fault);
    let summary = json!({
        "knowledge_bases": r.knowledge_bases,
        "targets_checked": r.targets_checked,
        "kb_rejected": r.kb_rejected,
        "kb_disagreements": r.kb_disagreements,
        "frame_pairs": r.frame_pairs,
        "frames_equivalent": r.frames_equivalent,
        "frames_rejected": r.frames_rejected,
        "frame_disagreements": r.frame_disagreements,
        "invalid_distinguishers": r.invalid_distinguishers,
        "first_disagreement": r.first_disagreement,
    });
    println!("{summary}");
    Ok(if r.disagreements() == 0 { 0 } else { EXIT_VIOLATION })
}

fn cmd_fuzz(a: &FuzzArgs) -> Outcome {
    let (sc, variant) = a.scenario.load()?;
    if variant != fixtures::default_variant(&sc) {
        return Err(fail(EXIT_MALFORMED, "the fuzzer runs scenarios in their default variant"));
    }
    let cfg = FuzzConfig {
        budget: a.budget,
        seed: a.scenario.seed,
        max_moves: a.depth,
        checks: checks_or_default(&a.check, &variant),
    };
    let report = fuzz::fuzz(&sc, &cfg).map_err(|e| fail(EXIT_MALFORMED, e.to_string()))?;
    let mut persisted = Vec::new();
    if let Some(dir) = &a.out {
        for c in &report.counterexamples {
            let path = dir.join(format!("counterexample-{:05}.json", c.index));
            write(&path, &(c.schedule.to_json() + "\n"))?;
            let lines: String = c.violations.iter().map(|v| v.to_json() + "\n").collect();
            write(&dir.join(format!("counterexample-{:05}.violations.jsonl", c.index)), &lines)?;
            persisted.push(path.display().to_string());
        }
    }
    let summary = json!({
        "runs": report.runs,
        "steps": report.steps,
        "counterexamples": report.counterexamples.len(),
        "first": report.first_hit(),
        "persisted": persisted,
    });
    println!("{summary}");
    Ok(if report.counterexamples.is_empty() { 0 } else { EXIT_VIOLATION })
}

fn cmd_gen_fixtures(out: &Path) -> Outcome {
    for (rel, text) in fixtures::fixture_files() {
        write(&out.join(rel), &text)?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_MALFORMED } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Fuzz(a) => cmd_fuzz(a),
        Cmd::GenFixtures { out } => cmd_gen_fixtures(out),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("spresso: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
