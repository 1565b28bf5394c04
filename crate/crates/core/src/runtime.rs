//! Configurations, the lazy event and nonce sequences, web system commands,
//! induced processing steps, runs and their line-delimited JSON traces.

use serde::{Deserialize, Serialize};

use crate::browser::{self, BrowserConfig, Choices};
use crate::encode;
use crate::http;
use crate::parties::{self, Role, Scenario, ScenarioError, Senders, ServerOutcome, Variant};
use crate::scripts::ScriptEnv;
use crate::term::Term;

/// Version of the schedule and trace formats.
pub const FORMAT_VERSION: u32 = 1;

/// A web system command. Recipes and URLs use the canonical term encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    /// 1-based index into the waiting events.
    pub i: usize,
    /// 1-based index among the processes listening on the receiver.
    pub j: usize,
    /// Output recipe for attackers and corrupted parties, over `?x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(default = "one_u8", skip_serializing_if = "is_one_u8")]
    pub switch: u8,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub window: usize,
    /// Output recipe of the attacker script, over `?x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// 1-based identity chosen by the relying party script.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub identity: usize,
}

fn one() -> usize {
    1
}
fn one_u8() -> u8 {
    1
}
fn is_one(v: &usize) -> bool {
    *v == 1
}
fn is_one_u8(v: &u8) -> bool {
    *v == 1
}

impl Command {
    /// Delivers event `i` to listener `j` with default choices.
    pub fn deliver(i: usize, j: usize) -> Command {
        Command { i, j, process: None, switch: 1, window: 1, script: None, url: None, identity: 1 }
    }

    pub fn with_process(mut self, recipe: &Term) -> Command {
        self.process = Some(encode::to_text(recipe));
        self
    }

    pub fn with_script(mut self, recipe: &Term) -> Command {
        self.script = Some(encode::to_text(recipe));
        self
    }

    pub fn with_url(mut self, url: &Term) -> Command {
        self.switch = 2;
        self.url = Some(encode::to_text(url));
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub version: u32,
    pub commands: Vec<Command>,
}

impl Schedule {
    pub fn new(commands: Vec<Command>) -> Schedule {
        Schedule { version: FORMAT_VERSION, commands }
    }

    pub fn from_json(text: &str) -> Result<Schedule, String> {
        let s: Schedule = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if s.version != FORMAT_VERSION {
            return Err(format!("unsupported schedule version {}", s.version));
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

/// Why a command does not induce a processing step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("not-induced ({code}): {detail}")]
pub struct NotInduced {
    pub code: String,
    pub detail: String,
}

fn not_induced(code: &str, detail: impl Into<String>) -> NotInduced {
    NotInduced { code: code.into(), detail: detail.into() }
}

/// A process of the instantiated web system.
#[derive(Clone, Debug)]
pub struct Proc {
    pub name: String,
    pub role: Role,
    pub addresses: Vec<Term>,
}

/// The static part of a web system: processes in lexicographic order and
/// the parameters of the variant.
#[derive(Clone, Debug)]
pub struct System {
    pub scenario: Scenario,
    pub variant: Variant,
    pub procs: Vec<Proc>,
    /// Addresses interleaved by the trigger generator, sorted.
    pub trigger_addresses: Vec<Term>,
    dr: Option<Term>,
}

/// A configuration `(S, E, N)`. `E` is the materialized prefix followed by
/// the round-robin trigger generator at `trigger_cursor`; `N` is the
/// nonce sequence `n_{seed,counter+1}, …`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    pub states: Vec<Term>,
    pub pending: Vec<Term>,
    pub trigger_cursor: usize,
    pub seed: u64,
    pub nonce_counter: u64,
}

/// How the outputs of a step were chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    Honest,
    Attacker,
    Corrupted,
}

/// One induced processing step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub step: usize,
    pub command: Command,
    pub event: Term,
    pub process: usize,
    pub driver: Driver,
    pub outputs: Vec<Term>,
    pub postmessages: usize,
    pub state: Term,
}

impl System {
    pub fn new(scenario: Scenario, variant: Variant) -> Result<System, ScenarioError> {
        scenario.validate_variant(&variant)?;
        let mut procs: Vec<Proc> = scenario
            .processes
            .iter()
            .map(|p| Proc {
                name: p.name.clone(),
                role: p.role,
                addresses: p.addresses.iter().map(|a| Term::ip(a)).collect(),
            })
            .collect();
        procs.sort_by(|a, b| a.name.cmp(&b.name));
        let mut trigger_addresses: Vec<Term> = scenario.all_addresses().iter().map(|a| Term::ip(a)).collect();
        trigger_addresses.sort();
        let dr = match &variant {
            Variant::Privacy { dr } => Some(crate::term::s(dr)),
            Variant::Auth => None,
        };
        Ok(System { scenario, variant, procs, trigger_addresses, dr })
    }

    pub fn proc_index(&self, name: &str) -> Option<usize> {
        self.procs.iter().position(|p| p.name == name)
    }

    pub fn initial(&self, seed: u64) -> Configuration {
        let states = self
            .procs
            .iter()
            .map(|p| self.scenario.initial_state(self.scenario.process(&p.name).expect("declared"), &self.variant))
            .collect();
        Configuration { states, pending: Vec::new(), trigger_cursor: 0, seed, nonce_counter: 0 }
    }

    /// Processes listening on `addr`, in lexicographic order.
    pub fn listeners(&self, addr: &Term) -> Vec<usize> {
        (0..self.procs.len())
            .filter(|&k| {
                let p = &self.procs[k];
                p.role == Role::NetworkAttacker || p.addresses.contains(addr)
            })
            .collect()
    }

    /// Whether the state of process `k` is corrupted.
    pub fn is_corrupted(&self, k: usize, state: &Term) -> bool {
        state_corrupted(self.procs[k].role, state)
    }

    fn trigger(&self, n: usize) -> Term {
        let a = &self.trigger_addresses[n % self.trigger_addresses.len()];
        Term::seq(vec![a.clone(), a.clone(), crate::term::s(http::TRIGGER)])
    }

    /// The `i`-th waiting event, materializing triggers as needed.
    pub fn event_at(&self, c: &mut Configuration, i: usize) -> Option<Term> {
        if i == 0 {
            return None;
        }
        while c.pending.len() < i {
            c.pending.push(self.trigger(c.trigger_cursor));
            c.trigger_cursor += 1;
        }
        Some(c.pending[i - 1].clone())
    }

    /// The `i`-th waiting event without changing the configuration.
    pub fn peek_event(&self, c: &Configuration, i: usize) -> Option<Term> {
        if i == 0 {
            return None;
        }
        match c.pending.get(i - 1) {
            Some(e) => Some(e.clone()),
            None => Some(self.trigger(c.trigger_cursor + (i - 1 - c.pending.len()))),
        }
    }

    fn senders_of(&self, k: usize) -> Senders<'_> {
        match self.procs[k].role {
            Role::NetworkAttacker => Senders::Any,
            _ => Senders::OneOf(&self.procs[k].addresses),
        }
    }

    /// Applies a command. On success the configuration is advanced.
    pub fn apply(&self, c: &mut Configuration, cmd: &Command, step: usize) -> Result<StepRecord, NotInduced> {
        let mut work = c.clone();
        let e = self.event_at(&mut work, cmd.i).ok_or_else(|| not_induced("no-event", "event index 0"))?;
        let receiver = e.at(1);
        let ls = self.listeners(&receiver);
        let k = *ls.get(cmd.j.wrapping_sub(1)).ok_or_else(|| {
            not_induced("no-process", format!("no listener {} on {receiver} ({} listening)", cmd.j, ls.len()))
        })?;
        let parse = |field: &str, src: &Option<String>| -> Result<Term, NotInduced> {
            match src {
                None => Ok(Term::empty()),
                Some(t) => encode::parse(t).map_err(|err| not_induced("bad-recipe", format!("{field}: {err}"))),
            }
        };
        let process_recipe = parse("process", &cmd.process)?;
        let state = work.states[k].clone();
        let role = self.procs[k].role;
        let recipe_out = |new_state: Term, driver: Driver| -> Result<(Term, Vec<Term>, usize, Driver), NotInduced> {
            let x = Term::pair(e.clone(), new_state.clone());
            let out = parties::recipe_events(&process_recipe, &x, Senders::Corrupted(&receiver))
                .map_err(|err| not_induced("bad-recipe", err))?;
            Ok((new_state, out, 0, driver))
        };
        let server = |o: ServerOutcome| match o {
            ServerOutcome::Step { state, events } => Ok((state, events, 0, Driver::Honest)),
            ServerOutcome::Corrupted { state } => recipe_out(state, Driver::Corrupted),
        };
        let privacy = self.variant.is_privacy();
        let mutations = &self.scenario.mutations;
        let (new_state, outputs, postmessages, driver) = match role {
            Role::NetworkAttacker | Role::WebAttacker => {
                let (st, out) = parties::attacker_step(&state, &e, &process_recipe, self.senders_of(k))
                    .map_err(|err| not_induced("bad-recipe", err))?;
                (st, out, 0, Driver::Attacker)
            }
            Role::Browser => {
                let script_recipe = parse("script", &cmd.script)?;
                let url = match &cmd.url {
                    Some(u) => Some(encode::parse(u).map_err(|err| not_induced("bad-url", err.to_string()))?),
                    None => None,
                };
                let cfg = BrowserConfig { challenge_domain: self.dr.as_ref(), ignore_corruption: privacy };
                let choices = Choices {
                    switch: cmd.switch,
                    window: cmd.window,
                    url: url.as_ref(),
                    script: ScriptEnv {
                        mutations,
                        idp_script_enabled: !privacy,
                        attacker_recipe: &script_recipe,
                        identity_index: cmd.identity,
                    },
                };
                match browser::step(&state, &e, &cfg, &choices) {
                    browser::Outcome::Step { state, events, postmessages } => {
                        (state, events, postmessages, Driver::Honest)
                    }
                    browser::Outcome::Corrupted { state } => recipe_out(state, Driver::Corrupted)?,
                    browser::Outcome::NotInduced(msg) => {
                        let code = if msg.contains("window") {
                            "bad-window"
                        } else if msg.contains("url") {
                            "bad-url"
                        } else if msg.contains("identity") {
                            "bad-identity"
                        } else {
                            "bad-switch"
                        };
                        return Err(not_induced(code, msg));
                    }
                }
            }
            Role::Rp => server(parties::rp_step(&state, &e, mutations, privacy))?,
            Role::Idp => server(parties::idp_step(&state, &e, self.scenario.strict_auth, privacy))?,
            Role::Fwd => server(parties::fwd_step(&state, &e, privacy))?,
            Role::Dns => server(parties::dns_step(&state, &e))?,
        };
        let (new_state, outputs) = fill_placeholders(&mut work, new_state, outputs);
        work.states[k] = new_state.clone();
        work.pending.remove(cmd.i - 1);
        let mut pending = outputs.clone();
        pending.append(&mut work.pending);
        work.pending = pending;
        *c = work;
        Ok(StepRecord {
            step,
            command: cmd.clone(),
            event: e,
            process: k,
            driver,
            outputs,
            postmessages,
            state: new_state,
        })
    }
}

/// Whether a state of a process with the given role is corrupted.
pub fn state_corrupted(role: Role, state: &Term) -> bool {
    let f = match role {
        Role::Browser => browser::field::IS_CORRUPTED,
        Role::Rp => parties::rp::CORRUPT,
        Role::Idp => parties::idp::CORRUPT,
        Role::Fwd => 2,
        _ => return false,
    };
    state.at(f) != Term::Bot
}

/// Replaces every `ν_k` in the new state and outputs, in ascending `k`, by
/// the next nonces of the configuration.
fn fill_placeholders(c: &mut Configuration, state: Term, outputs: Vec<Term>) -> (Term, Vec<Term>) {
    let mut ks = std::collections::BTreeSet::new();
    let mut collect = |t: &Term| {
        if t.has_nu() {
            t.visit(&mut |u| {
                if let Term::Nu(k) = u {
                    ks.insert(*k);
                }
            });
        }
    };
    collect(&state);
    outputs.iter().for_each(&mut collect);
    if ks.is_empty() {
        return (state, outputs);
    }
    let map: std::collections::BTreeMap<u32, Term> = ks
        .into_iter()
        .map(|k| {
            c.nonce_counter += 1;
            (k, Term::fresh(c.seed, c.nonce_counter))
        })
        .collect();
    let mut f = |t: &Term| match t {
        Term::Nu(k) => map.get(k).cloned(),
        _ => None,
    };
    let state = state.map_atoms_raw(&mut f);
    let outputs = outputs.iter().map(|o| o.map_atoms_raw(&mut f)).collect();
    (state, outputs)
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEnd {
    pub status: String,
    /// Number of induced steps.
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<NotInduced>,
}

/// A finite run induced by a schedule.
#[derive(Clone, Debug)]
pub struct Run {
    pub system: System,
    pub initial: Configuration,
    pub records: Vec<StepRecord>,
    pub last: Configuration,
    pub end: RunEnd,
}

impl Run {
    pub fn not_induced(&self) -> Option<&NotInduced> {
        self.end.reason.as_ref()
    }

    /// Final state of a process.
    pub fn final_state(&self, name: &str) -> Option<&Term> {
        self.system.proc_index(name).map(|k| &self.last.states[k])
    }

    /// HTTP requests and responses emitted by honest steps plus delivered
    /// postMessages.
    pub fn protocol_messages(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.driver == Driver::Honest)
            .map(|r| r.postmessages + r.outputs.iter().filter(|o| http::classify_message(&o.at(3)).is_http()).count())
            .sum()
    }
}

impl Run {
    /// The trace of this run, as [`parse_trace`] would return it.
    pub fn trace(&self) -> Trace {
        Trace {
            scenario: self.system.scenario.name.clone(),
            variant: self.system.variant.clone(),
            seed: self.initial.seed,
            initial_states: self
                .system
                .procs
                .iter()
                .zip(&self.initial.states)
                .map(|(p, s)| (p.name.clone(), p.role, s.clone()))
                .collect(),
            steps: self
                .records
                .iter()
                .map(|r| TraceStep {
                    step: r.step,
                    command: r.command.clone(),
                    event: r.event.clone(),
                    process: self.system.procs[r.process].name.clone(),
                    driver: r.driver,
                    outputs: r.outputs.clone(),
                    postmessages: r.postmessages,
                    state: r.state.clone(),
                })
                .collect(),
            end: self.end.clone(),
        }
    }
}

/// Folds a schedule over the initial configuration, stopping at the first
/// command that does not induce a step.
pub fn run_schedule(system: &System, schedule: &Schedule, seed: u64) -> Run {
    let initial = system.initial(seed);
    let mut c = initial.clone();
    let mut records = Vec::new();
    let mut reason = None;
    for (n, cmd) in schedule.commands.iter().enumerate() {
        match system.apply(&mut c, cmd, n + 1) {
            Ok(r) => records.push(r),
            Err(e) => {
                reason = Some(e);
                break;
            }
        }
    }
    let end = RunEnd {
        status: if reason.is_some() { "not-induced".into() } else { "ok".into() },
        steps: records.len(),
        reason,
    };
    Run { system: system.clone(), initial, records, last: c, end }
}

/// `ρ(p)`: the final state of process `p`.
pub fn attacker_view(run: &Run, p: &str) -> Result<Term, String> {
    run.final_state(p).cloned().ok_or_else(|| format!("unknown process {p}"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderProc {
    name: String,
    role: Role,
    state: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum TraceLine {
    Header {
        version: u32,
        scenario: String,
        variant: Variant,
        seed: u64,
        processes: Vec<HeaderProc>,
    },
    Step {
        step: usize,
        command: Command,
        event_index: usize,
        event: String,
        process: String,
        driver: Driver,
        outputs: Vec<String>,
        postmessages: usize,
        state: String,
    },
    End(RunEnd),
}

/// A parsed trace: the data needed to replay or audit a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub initial_states: Vec<(String, Role, Term)>,
    pub steps: Vec<TraceStep>,
    pub end: RunEnd,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub step: usize,
    pub command: Command,
    pub event: Term,
    pub process: String,
    pub driver: Driver,
    pub outputs: Vec<Term>,
    pub postmessages: usize,
    pub state: Term,
}

/// Serializes a run as line-delimited JSON.
pub fn trace_jsonl(run: &Run) -> String {
    let mut lines = Vec::new();
    let header = TraceLine::Header {
        version: FORMAT_VERSION,
        scenario: run.system.scenario.name.clone(),
        variant: run.system.variant.clone(),
        seed: run.initial.seed,
        processes: run
            .system
            .procs
            .iter()
            .zip(&run.initial.states)
            .map(|(p, s)| HeaderProc { name: p.name.clone(), role: p.role, state: encode::to_text(s) })
            .collect(),
    };
    lines.push(header);
    for r in &run.records {
        lines.push(TraceLine::Step {
            step: r.step,
            command: r.command.clone(),
            event_index: r.command.i,
            event: encode::to_text(&r.event),
            process: run.system.procs[r.process].name.clone(),
            driver: r.driver,
            outputs: r.outputs.iter().map(encode::to_text).collect(),
            postmessages: r.postmessages,
            state: encode::to_text(&r.state),
        });
    }
    lines.push(TraceLine::End(run.end.clone()));
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(&l).expect("trace line serializes"));
        out.push('\n');
    }
    out
}

/// Parses a trace written by [`trace_jsonl`].
pub fn parse_trace(text: &str) -> Result<Trace, String> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut end = None;
    let term = |s: &str| encode::parse(s).map_err(|e| e.to_string());
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: TraceLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        match parsed {
            TraceLine::Header { version, scenario, variant, seed, processes } => {
                if version != FORMAT_VERSION {
                    return Err(format!("unsupported trace version {version}"));
                }
                let procs = processes
                    .into_iter()
                    .map(|p| Ok((p.name, p.role, term(&p.state)?)))
                    .collect::<Result<Vec<_>, String>>()?;
                header = Some((scenario, variant, seed, procs));
            }
            TraceLine::Step { step, command, event_index: _, event, process, driver, outputs, postmessages, state } => {
                steps.push(TraceStep {
                    step,
                    command,
                    event: term(&event)?,
                    process,
                    driver,
                    outputs: outputs.iter().map(|o| term(o)).collect::<Result<_, _>>()?,
                    postmessages,
                    state: term(&state)?,
                });
            }
            TraceLine::End(e) => end = Some(e),
        }
    }
    let (scenario, variant, seed, initial_states) = header.ok_or("missing header line")?;
    Ok(Trace { scenario, variant, seed, initial_states, steps, end: end.ok_or("missing end line")? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parties::{IdentityDecl, ProcessDecl};
    use crate::term::s;

    fn scenario() -> Scenario {
        let p = |name: &str, role, addr: &str, doms: &[&str]| ProcessDecl {
            name: name.into(),
            role,
            addresses: vec![addr.into()],
            domains: doms.iter().map(|d| d.to_string()).collect(),
            fwd_domain: None,
        };
        let mut rp = p("rp", Role::Rp, "10.0.2.1", &["rp.com"]);
        rp.fwd_domain = Some("fwd.com".into());
        Scenario {
            version: 1,
            name: "unit".into(),
            processes: vec![
                p("alice", Role::Browser, "10.0.1.1", &[]),
                rp,
                p("idp", Role::Idp, "10.0.3.1", &["idp.com"]),
                p("fwd", Role::Fwd, "10.0.4.1", &["fwd.com"]),
                p("attacker", Role::NetworkAttacker, "10.0.9.1", &["attacker.com"]),
            ],
            identities: vec![IdentityDecl { name: "alice".into(), domain: "idp.com".into(), owner: "alice".into() }],
            dns: Default::default(),
            mutations: Default::default(),
            strict_auth: false,
        }
    }

    fn system() -> System {
        System::new(scenario(), Variant::Auth).unwrap()
    }

    #[test]
    fn empty_schedule_gives_initial_configuration() {
        let sys = system();
        let run = run_schedule(&sys, &Schedule::new(vec![]), 7);
        assert_eq!(run.last, run.initial);
        assert_eq!(run.end.status, "ok");
        assert_eq!(attacker_view(&run, "attacker").unwrap(), run.initial.states[sys.proc_index("attacker").unwrap()]);
        assert!(attacker_view(&run, "nobody").is_err());
    }

    #[test]
    fn triggers_round_robin_over_sorted_addresses() {
        let sys = system();
        let c = sys.initial(1);
        let addrs: Vec<Term> = (1..=6).map(|i| sys.peek_event(&c, i).unwrap().at(1)).collect();
        assert_eq!(addrs[0], Term::ip("10.0.1.1"));
        assert_eq!(addrs[4], Term::ip("10.0.9.1"));
        assert_eq!(addrs[5], Term::ip("10.0.1.1"));
    }

    #[test]
    fn switch_two_trigger_opens_window_with_fresh_nonces() {
        let sys = system();
        let url = crate::scripts::https_url(&s("rp.com"), "/");
        let run = run_schedule(&sys, &Schedule::new(vec![Command::deliver(1, 1).with_url(&url)]), 5);
        assert_eq!(run.end.status, "ok");
        let b = run.final_state("alice").unwrap();
        assert!(!b.has_nu());
        assert_eq!(b.at(1).items().len(), 1);
        let ev = &run.last.pending[0];
        assert_eq!(ev.at(1), Term::ip("10.0.9.1"));
        assert_eq!(ev.at(3).at(1), s(http::DNS_RESOLVE));
        assert_eq!(run.last.nonce_counter, 3);
        assert_eq!(b.at(1).at(1).at(1), Term::fresh(5, 1));
    }

    #[test]
    fn not_induced_cases() {
        let sys = system();
        let cases = [
            (Command::deliver(1, 3), "no-process"),
            (Command::deliver(1, 1), "bad-window"),
            (Command::deliver(0, 1), "no-event"),
            (Command { url: Some("\"x\"".into()), switch: 2, ..Command::deliver(1, 1) }, "bad-url"),
            (Command::deliver(5, 1).with_process(&s("junk")), "bad-recipe"),
        ];
        for (cmd, code) in cases {
            let run = run_schedule(&sys, &Schedule::new(vec![cmd]), 1);
            assert_eq!(run.not_induced().map(|r| r.code.as_str()), Some(code));
            assert_eq!(run.last, run.initial);
        }
    }

    #[test]
    fn attacker_outputs_are_prepended() {
        let sys = system();
        let recipe = encode::parse("<<#ip\"10.0.2.1\", #ip\"10.0.9.1\", nu1>>").unwrap();
        let run = run_schedule(&sys, &Schedule::new(vec![Command::deliver(5, 1).with_process(&recipe)]), 3);
        assert_eq!(run.end.status, "ok");
        assert_eq!(run.last.pending[0].at(3), Term::fresh(3, 1));
        assert_eq!(run.last.pending.len(), 5);
        let a = run.final_state("attacker").unwrap();
        assert_eq!(a.at(2), Term::seq(vec![run.last.pending[0].clone()]));
    }

    #[test]
    fn trace_round_trips_and_replays_identically() {
        let sys = system();
        let url = crate::scripts::https_url(&s("rp.com"), "/");
        let sched = Schedule::new(vec![Command::deliver(1, 1).with_url(&url), Command::deliver(1, 1)]);
        let t1 = trace_jsonl(&run_schedule(&sys, &sched, 9));
        let t2 = trace_jsonl(&run_schedule(&sys, &sched, 9));
        assert_eq!(t1, t2);
        let parsed = parse_trace(&t1).unwrap();
        assert_eq!(parsed, run_schedule(&sys, &sched, 9).trace());
        assert_eq!(parsed.steps.len(), 2);
        assert_eq!(parsed.seed, 9);
        let sched2 = Schedule::from_json(&sched.to_json()).unwrap();
        assert_eq!(sched2, sched);
    }
}
