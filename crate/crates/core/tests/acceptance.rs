//! Acceptance harness: one PASS/FAIL line per criterion, run against the
//! shipped fixture files. Exits nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use spresso_model::fixtures::{self, challenge_domains, MUTANTS, SEED};
use spresso_model::fuzz::{fuzz, Check, FuzzConfig, FuzzReport};
use spresso_model::knowledge::{derivable, static_equivalence};
use spresso_model::oracle::{run_oracle, Fault};
use spresso_model::parties::{identity_term, Scenario, Variant};
use spresso_model::properties::{check_auth_a, check_auth_b, check_idp_privacy, service_tokens, ViolationKind};
use spresso_model::runtime::{run_schedule, trace_jsonl, Schedule, System};
use spresso_model::{s, Term};

const HAPPY_PATH_MESSAGES: usize = 19;
const HAPPY_PATH_LIMIT: Duration = Duration::from_secs(1);
const MIN_HANDCRAFTED: usize = 20;
const AUTH_FUZZ_BUDGET: usize = 10_000;
const AUTH_LIMIT: Duration = Duration::from_secs(5 * 60);
const MUTANT_FUZZ_BUDGET: usize = 10_000;
const PRIVACY_FUZZ_BUDGET: usize = 5_000;
const PRIVACY_LIMIT: Duration = Duration::from_secs(10 * 60);
const ORACLE_KBS: usize = 1_000;
const ORACLE_FRAMES: usize = 500;
const ORACLE_DEPTH: usize = 4;
const FUZZ_SEED: u64 = 1;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn scenario(name: &str) -> Scenario {
    let text = std::fs::read_to_string(root().join("scenarios").join(format!("{name}.json"))).expect("scenario file");
    Scenario::from_json(&text).expect("valid scenario")
}

fn schedule(rel: &str) -> Schedule {
    let text = std::fs::read_to_string(root().join("schedules").join(rel)).expect("schedule file");
    Schedule::from_json(&text).expect("valid schedule")
}

fn suite(dir: &str) -> Vec<(String, Schedule)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(root().join("schedules").join(dir))
        .expect("suite directory")
        .map(|e| e.expect("entry").path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, Schedule::from_json(&std::fs::read_to_string(&p).unwrap()).unwrap())
        })
        .collect()
}

fn auth_kinds(sc: &Scenario, schedule: &Schedule) -> Vec<ViolationKind> {
    let system = System::new(sc.clone(), Variant::Auth).unwrap();
    let trace = run_schedule(&system, schedule, SEED).trace();
    let mut kinds: Vec<ViolationKind> = check_auth_a(sc, &trace).unwrap().into_iter().map(|v| v.kind).collect();
    kinds.extend(check_auth_b(sc, &trace).unwrap().into_iter().map(|v| v.kind));
    kinds.sort();
    kinds.dedup();
    kinds
}

fn privacy_distinguished(sc: &Scenario, schedule: &Schedule) -> bool {
    let (d1, d2) = challenge_domains(sc);
    !check_idp_privacy(sc, schedule, &d1, &d2, SEED).unwrap().is_ok()
}

fn fuzz_kinds(r: &FuzzReport) -> Vec<ViolationKind> {
    let mut kinds: Vec<ViolationKind> =
        r.counterexamples.iter().flat_map(|c| c.violations.iter().map(|v| v.kind)).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn happy_path() -> Verdict {
    let start = Instant::now();
    let sc = scenario("auth");
    let system = System::new(sc.clone(), Variant::Auth).unwrap();
    let run = run_schedule(&system, &schedule("happy-path.json"), SEED);
    let tokens = service_tokens(&run.trace());
    let elapsed = start.elapsed();
    let alice = identity_term("alice", "idp.com");
    let token_ok = tokens.len() == 1 && tokens[0].token.at(1).is_nonce() && tokens[0].token.at(2) == alice;
    let messages = run.protocol_messages();
    Verdict {
        pass: run.not_induced().is_none() && token_ok && messages == HAPPY_PATH_MESSAGES && elapsed < HAPPY_PATH_LIMIT,
        detail: format!(
            "service tokens {} (owner identity {}), protocol messages {messages} (expected {HAPPY_PATH_MESSAGES}), {elapsed:.2?} (limit {HAPPY_PATH_LIMIT:?})",
            tokens.len(),
            if token_ok { "ok" } else { "wrong" }
        ),
    }
}

fn auth_suite() -> Verdict {
    let start = Instant::now();
    let sc = scenario("auth");
    let handcrafted = suite("auth");
    let hand_violations: usize = handcrafted.iter().map(|(_, s)| auth_kinds(&sc, s).len()).sum();
    let report = fuzz(
        &sc,
        &FuzzConfig {
            checks: vec![Check::AuthA, Check::AuthB],
            ..FuzzConfig::for_scenario(&sc, AUTH_FUZZ_BUDGET, FUZZ_SEED)
        },
    )
    .unwrap();
    let elapsed = start.elapsed();
    Verdict {
        pass: handcrafted.len() >= MIN_HANDCRAFTED && hand_violations == 0 && report.runs == AUTH_FUZZ_BUDGET && report.counterexamples.is_empty() && elapsed < AUTH_LIMIT,
        detail: format!(
            "{} handcrafted with {hand_violations} violations, {} fuzzed ({} steps) with {} violations, {elapsed:.2?} (limit {AUTH_LIMIT:?})",
            handcrafted.len(),
            report.runs,
            report.steps,
            report.counterexamples.len()
        ),
    }
}

fn mutants() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, base) in MUTANTS {
        let sc = scenario(&format!("mutant-{name}"));
        let attack = schedule(&format!("mutants/{name}.json"));
        let (expected, got) = if base == "auth" {
            let expected = match name {
                "no_origin_check" => vec![ViolationKind::AuthB],
                _ => vec![ViolationKind::AuthA],
            };
            (expected, auth_kinds(&sc, &attack))
        } else {
            let got = if privacy_distinguished(&sc, &attack) { vec![ViolationKind::Privacy] } else { vec![] };
            (vec![ViolationKind::Privacy], got)
        };
        let honest = scenario(base);
        let honest_clean = if base == "auth" {
            auth_kinds(&honest, &attack).is_empty()
        } else {
            !privacy_distinguished(&honest, &attack)
        };
        let ok = got == expected && honest_clean;
        pass &= ok;
        parts.push(format!("{name} {:?}{}", got, if honest_clean { "" } else { " (also fires on the honest model)" }));
    }
    for (name, expected) in
        [("no_origin_check", ViolationKind::AuthB), ("redir_keeps_referrer", ViolationKind::Privacy)]
    {
        let sc = scenario(&format!("mutant-{name}"));
        let report = fuzz(&sc, &FuzzConfig::for_scenario(&sc, MUTANT_FUZZ_BUDGET, FUZZ_SEED)).unwrap();
        let kinds = fuzz_kinds(&report);
        let ok = kinds == vec![expected];
        pass &= ok;
        parts.push(format!("fuzz {name}: first hit {:?} of {}, kinds {kinds:?}", report.first_hit(), report.runs));
    }
    Verdict { pass, detail: parts.join("; ") }
}

fn privacy() -> Verdict {
    let start = Instant::now();
    let sc = scenario("privacy");
    let handcrafted = suite("privacy");
    let distinguished: Vec<&str> =
        handcrafted.iter().filter(|(_, s)| privacy_distinguished(&sc, s)).map(|(n, _)| n.as_str()).collect();
    let entries = ["location-bar", "href", "redirect"].iter().all(|e| handcrafted.iter().any(|(n, _)| n.contains(e)));
    let report = fuzz(&sc, &FuzzConfig::for_scenario(&sc, PRIVACY_FUZZ_BUDGET, FUZZ_SEED)).unwrap();
    let mutant = scenario("mutant-redir_keeps_referrer");
    let referer = privacy_distinguished(&mutant, &schedule("mutants/redir_keeps_referrer.json"));
    let elapsed = start.elapsed();
    Verdict {
        pass: handcrafted.len() >= MIN_HANDCRAFTED
            && distinguished.is_empty()
            && entries
            && report.runs == PRIVACY_FUZZ_BUDGET
            && report.counterexamples.is_empty()
            && referer
            && elapsed < PRIVACY_LIMIT,
        detail: format!(
            "{} handcrafted ({} distinguished{}), all entry kinds covered {entries}, {} fuzzed ({} steps) with {} distinguished, Referer mutant distinguished {referer}, {elapsed:.2?} (limit {PRIVACY_LIMIT:?})",
            handcrafted.len(),
            distinguished.len(),
            if distinguished.is_empty() { String::new() } else { format!(": {}", distinguished.join(", ")) },
            report.runs,
            report.steps,
            report.counterexamples.len()
        ),
    }
}

fn oracle() -> Verdict {
    let start = Instant::now();
    let r = run_oracle(ORACLE_KBS, ORACLE_FRAMES, ORACLE_DEPTH, FUZZ_SEED, Fault::None);
    Verdict {
        pass: r.knowledge_bases == ORACLE_KBS && r.frame_pairs == ORACLE_FRAMES && r.disagreements() == 0,
        detail: format!(
            "{} knowledge bases ({} targets), {} frame pairs ({} equivalent), {} disagreements, {:.2?}",
            r.knowledge_bases,
            r.targets_checked,
            r.frame_pairs,
            r.frames_equivalent,
            r.disagreements(),
            start.elapsed()
        ),
    }
}

fn worked_examples() -> Verdict {
    let k = |i| Term::fresh(1, i);
    let pk = |i| Term::pub_key(k(i));
    let abc = Term::seq(vec![s("a"), s("b"), s("c")]);
    let tau = Term::seq(vec![s("a"), s("b"), Term::seq(vec![s("c"), s("d"), Term::pair(s("e"), s("f"))])]);
    let p = Term::pair(Term::True, Term::Wild);
    let filtered = Term::seq(vec![
        Term::pair(Term::Bot, Term::True),
        Term::pair(Term::True, s("23")),
        Term::pair(s("a"), s("b")),
        Term::pair(Term::True, Term::Bot),
    ])
    .filter_by_pattern(&p);
    let checks: Vec<(&str, bool)> = vec![
        ("dec", Term::dec_a(Term::enc_a(s("x"), pk(1)), k(1)).normalize() == s("x")),
        ("decs", Term::dec_s(Term::enc_s(s("x"), k(2)), k(2)).normalize() == s("x")),
        ("checksig", Term::checksig(Term::sig(s("x"), k(1)), s("x"), pk(1)).normalize() == Term::True),
        ("proj", abc.proj(2).normalize() == s("b")),
        ("proj-out-of-range", abc.proj(4).normalize() == Term::Undef),
        ("proj-dec", Term::dec_a(Term::enc_a(Term::pair(s("a"), s("b")), pk(1)), k(1)).proj(1).normalize() == s("a")),
        ("derivation", derivable(&[Term::enc_a(abc.clone(), pk(1)), k(1)], &s("a"))),
        ("match", Term::pair(Term::True, s("42")).matches(&p) && !Term::pair(Term::Bot, s("42")).matches(&p)),
        ("filter", filtered == Term::seq(vec![Term::pair(Term::True, s("23")), Term::pair(Term::True, Term::Bot)])),
        ("pointer", tau.subterm_at(&[3, 1]) == s("c") && tau.subterm_at(&[3, 3, 1]) == s("e")),
        (
            "static-equivalence",
            static_equivalence(
                &Term::enc_a(Term::pair(s("r"), k(2)), pk(1)),
                &Term::enc_a(Term::pair(s("r'"), k(2)), pk(1)),
            )
            .is_ok(),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Verdict {
        pass: failed.is_empty(),
        detail: format!(
            "{} examples, failed: {}",
            checks.len(),
            if failed.is_empty() { "none".to_string() } else { failed.join(", ") }
        ),
    }
}

fn determinism() -> Verdict {
    let mut runs = 0;
    let mut differing = Vec::new();
    for (rel, _) in fixtures::fixture_files().into_iter().filter(|(r, _)| r.starts_with("schedules/")) {
        let scenario_name = if let Some(m) = rel.strip_prefix("schedules/mutants/") {
            format!("mutant-{}", m.trim_end_matches(".json"))
        } else if rel.starts_with("schedules/privacy/") {
            "privacy".to_string()
        } else {
            "auth".to_string()
        };
        let sc = scenario(&scenario_name);
        let system = System::new(sc.clone(), fixtures::default_variant(&sc)).unwrap();
        let sched = schedule(rel.trim_start_matches("schedules/"));
        let first = trace_jsonl(&run_schedule(&system, &sched, SEED));
        let second = trace_jsonl(&run_schedule(&system.clone(), &sched, SEED));
        runs += 1;
        if first != second {
            differing.push(rel);
        }
    }
    Verdict {
        pass: runs > 0 && differing.is_empty(),
        detail: format!("{runs} fixtures replayed twice, {} differ", differing.len()),
    }
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 7] = [
        ("1 happy path", happy_path),
        ("2 authentication suite", auth_suite),
        ("3 mutation suite", mutants),
        ("4 privacy suite", privacy),
        ("5 oracle equivalence", oracle),
        ("6 worked examples", worked_examples),
        ("7 determinism", determinism),
    ];
    let mut all = true;
    for (name, f) in criteria {
        let v = f();
        all &= v.pass;
        println!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if !all {
        std::process::exit(1);
    }
}
