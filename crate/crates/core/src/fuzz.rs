//! Random schedule generation from a library of protocol-level moves, and
//! a parallel driver that feeds every generated run to the checkers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::builder::{recipe, Builder};
use crate::fixtures::{self, AttackerLogin, Entry};
use crate::http::{self, POST, SECURE};
use crate::parties::{identity_term, sign_key, Role, Scenario, Variant};
use crate::properties::{check_auth_a, check_auth_b, check_idp_privacy, PropertyError, Violation};
use crate::runtime::{run_schedule, Command, NotInduced, Schedule, System};
use crate::scripts::{self, https_url};
use crate::term::{s, Term};

/// Which checkers a fuzzing campaign runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    AuthA,
    AuthB,
    Privacy,
}

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub budget: usize,
    pub seed: u64,
    /// Upper bound on the number of moves per schedule.
    pub max_moves: usize,
    pub checks: Vec<Check>,
}

impl FuzzConfig {
    /// Checkers matching the scenario's variant.
    pub fn for_scenario(sc: &Scenario, budget: usize, seed: u64) -> FuzzConfig {
        let checks = match fixtures::default_variant(sc) {
            Variant::Auth => vec![Check::AuthA, Check::AuthB],
            Variant::Privacy { .. } => vec![Check::Privacy],
        };
        FuzzConfig { budget, seed, max_moves: 24, checks }
    }
}

/// A generated schedule on which some checker fired.
#[derive(Clone, Debug)]
pub struct Counterexample {
    pub index: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, Default)]
pub struct FuzzReport {
    pub runs: usize,
    pub steps: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl FuzzReport {
    /// Index of the first schedule with a violation.
    pub fn first_hit(&self) -> Option<usize> {
        self.counterexamples.first().map(|c| c.index)
    }
}

/// Seed of the `index`-th schedule of a campaign.
pub fn schedule_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64).rotate_left(17) ^ 0xD1B5_4A32_D192_ED03
}

/// What an attacker has learned so far while generating one schedule.
#[derive(Default)]
struct Memory {
    logins: Vec<(Term, AttackerLogin)>,
    leaked: Vec<Term>,
}

fn names(sc: &Scenario, pred: impl Fn(Role) -> bool) -> Vec<String> {
    sc.processes.iter().filter(|p| pred(p.role)).map(|p| p.name.clone()).collect()
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> Option<&'a T> {
    xs.choose(rng)
}

/// The attacker page state `⟨csrf, dialog, tagKey⟩` derived from a login.
fn page_state(sc: &Scenario, login: &(Term, AttackerLogin)) -> Term {
    let (email, l) = login;
    let domain = email.at(2);
    let attacker_governed = domain.as_str().and_then(|d| sc.domain_owner(d)).is_some_and(|p| p.role.is_attacker());
    let eia = if attacker_governed {
        let ia = Term::sig(
            Term::seq(vec![l.tag.clone(), email.clone(), l.fwd.clone()]),
            sign_key(domain.as_str().unwrap_or("")),
        );
        Term::enc_s(ia, l.ia_key.clone())
    } else {
        Term::enc_s(s("forged"), l.ia_key.clone())
    };
    let csrf = Term::dict(vec![(s("eia"), eia), (s("loginSessionToken"), l.token.clone())]);
    let params = Term::dict(vec![
        (s("email"), email.clone()),
        (s("tag"), l.tag.clone()),
        (s("iaKey"), l.ia_key.clone()),
        (s("FWDDomain"), l.fwd.clone()),
    ]);
    let dialog = http::url(SECURE, &domain, "/.well-known/spresso-login", params);
    Term::seq(vec![csrf, dialog, l.tag_key.clone()])
}

/// A random message event that was delivered earlier in the schedule.
fn past_message(b: &Builder, rng: &mut ChaCha8Rng) -> Option<Term> {
    let seen: Vec<Term> =
        b.records.iter().map(|r| r.event.clone()).filter(|e| !e.at(3).is_str(http::TRIGGER)).collect();
    pick(rng, &seen).cloned()
}

/// Windows of `browser` whose active document runs the attacker script.
fn attacker_windows(b: &Builder, browser: &str) -> Vec<usize> {
    (1..=b.window_count(browser)).filter(|&w| window_script(b, browser, w).is_str(scripts::ATT_SCRIPT)).collect()
}

fn window_script(b: &Builder, browser: &str, w: usize) -> Term {
    let st = b.state(browser);
    let ptr = crate::browser::subwindows(st)[w - 1].clone();
    let mut win = st.clone();
    for i in ptr {
        win = win.at(i);
    }
    match crate::browser::active_index(&win) {
        Some(j) => win.at(2).at(j).at(crate::browser::doc::SCRIPT),
        None => Term::Bot,
    }
}

fn window_nonces(b: &Builder, browser: &str) -> Vec<Term> {
    let st = b.state(browser);
    crate::browser::subwindows(st)
        .into_iter()
        .map(|ptr| {
            let mut t = st.clone();
            for i in ptr {
                t = t.at(i);
            }
            t.at(1)
        })
        .collect()
}

/// One attacker-script action in window `w` of `browser`.
fn attacker_script_move(b: &mut Builder, rng: &mut ChaCha8Rng, browser: &str, w: usize) -> Result<(), NotInduced> {
    let input = crate::browser::script_input(b.state(browser), w).ok_or_else(|| no("no document"))?;
    let st = input.at(scripts::input::SCRIPTSTATE);
    let out = |cmd: Term| fixtures::att_output(st.clone(), cmd);
    let rps: Vec<String> = b.system.scenario.with_role(Role::Rp).flat_map(|p| p.domains.clone()).collect();
    let atts: Vec<String> =
        b.system.scenario.processes.iter().filter(|p| p.role.is_attacker()).flat_map(|p| p.domains.clone()).collect();
    match rng.gen_range(0..6) {
        0 => {
            let csrf = st.at(1);
            if csrf == Term::Undef || csrf.as_seq().is_none() {
                return Err(no("no login material on the page"));
            }
            let rp = pick(rng, &rps).ok_or_else(|| no("no rp"))?;
            let cmd = Term::seq(vec![s(scripts::FORM), https_url(&s(rp), "/login"), s(POST), csrf, s(scripts::SELF)]);
            b.attacker_script(browser, w, &out(cmd))?;
        }
        1 => {
            let dialog = st.at(2);
            if !http::is_url(&dialog) {
                return Err(no("no dialog url on the page"));
            }
            let cmd = Term::seq(vec![s(scripts::HREF), dialog, s(scripts::BLANK), Term::Bot]);
            b.attacker_script(browser, w, &out(cmd))?;
        }
        2 => {
            let target = pick(rng, &window_nonces(b, browser)).cloned().ok_or_else(|| no("no window"))?;
            let cmd = Term::seq(vec![s(scripts::POSTMESSAGE), target, Term::pair(s("tagKey"), st.at(3)), Term::Bot]);
            b.attacker_script(browser, w, &out(cmd))?;
        }
        3 => {
            let inputs = input.at(scripts::input::SCRIPTINPUTS);
            let leak = inputs.items().iter().rev().find(|m| m.at(1).is_str(scripts::POSTMESSAGE)).map(|m| m.at(4));
            let leak = leak.ok_or_else(|| no("nothing to leak"))?;
            let d = pick(rng, &atts).ok_or_else(|| no("no attacker domain"))?;
            let url = http::url(SECURE, &s(d), "/leak", Term::dict(vec![(s("eia"), leak.at(2))]));
            let cmd = Term::seq(vec![s(scripts::HREF), url, s(scripts::BLANK), Term::Bot]);
            b.attacker_script(browser, w, &out(cmd))?;
        }
        4 => {
            let rp = pick(rng, &rps).ok_or_else(|| no("no rp"))?;
            let target = if rng.gen_bool(0.5) { s(scripts::SELF) } else { s(scripts::BLANK) };
            let cmd = Term::seq(vec![s(scripts::HREF), https_url(&s(rp), "/"), target, Term::Bot]);
            b.attacker_script(browser, w, &out(cmd))?;
        }
        _ => {
            let rp = pick(rng, &rps).ok_or_else(|| no("no rp"))?;
            let cmd = Term::seq(vec![s(scripts::IFRAME), https_url(&s(rp), "/"), s(scripts::SELF)]);
            b.attacker_script(browser, w, &out(cmd))?;
        }
    }
    Ok(())
}

fn no(detail: &str) -> NotInduced {
    NotInduced { code: "no-event".into(), detail: detail.into() }
}

/// Lets an attacker answer one pending HTTPS request to its domains.
fn attacker_answer(b: &mut Builder, rng: &mut ChaCha8Rng, mem: &mut Memory) -> Result<(), NotInduced> {
    let atts = names(&b.system.scenario, Role::is_attacker);
    let mut options = Vec::new();
    for att in &atts {
        for i in 1..=b.config.pending.len() {
            if let Some((r, _)) = b.attacker_open(att, i) {
                options.push((att.clone(), i, r));
            }
        }
    }
    let (att, i, request) = pick(rng, &options).cloned().ok_or_else(|| no("no request for an attacker"))?;
    let path = request.at(http::req::PATH);
    if path.is_str("/.well-known/spresso-info") {
        let doc = Term::dict(vec![(
            s("signkey"),
            Term::pub_key(sign_key(request.at(http::req::HOST).as_str().unwrap_or(""))),
        )]);
        b.attacker_respond(&att, i, Term::empty(), doc)?;
    } else if path.is_str("/.well-known/spresso-login") {
        let browser = names(&b.system.scenario, |r| r == Role::Browser);
        let browser = pick(rng, &browser).cloned().ok_or_else(|| no("no browser"))?;
        let win = b.window_count(&browser).max(1);
        fixtures::attacker_idp_dialog(b, &att, &browser, win)?;
    } else if path.is_str("/leak") {
        mem.leaked.push(request.at(http::req::PARAMS).dict_get(&s("eia")));
        b.attacker_respond(&att, i, Term::empty(), Term::empty())?;
    } else {
        let state = match mem.logins.last() {
            Some(l) if rng.gen_bool(0.8) => page_state(&b.system.scenario, l),
            _ => Term::empty(),
        };
        b.attacker_respond(&att, i, Term::empty(), Term::pair(s(scripts::ATT_SCRIPT), state))?;
    }
    Ok(())
}

/// One random move in the authentication variant.
fn auth_move(b: &mut Builder, rng: &mut ChaCha8Rng, mem: &mut Memory) -> Result<(), NotInduced> {
    let sc = b.system.scenario.clone();
    let browsers = names(&sc, |r| r == Role::Browser);
    let browser = pick(rng, &browsers).cloned().ok_or_else(|| no("no browser"))?;
    let rps: Vec<String> = sc.with_role(Role::Rp).flat_map(|p| p.domains.clone()).collect();
    let att_domains: Vec<String> =
        sc.processes.iter().filter(|p| p.role.is_attacker()).flat_map(|p| p.domains.clone()).collect();
    let att = names(&sc, |r| r == Role::NetworkAttacker).into_iter().next().ok_or_else(|| no("no attacker"))?;
    let weights = [3, 10, 6, 3, 1, 3, 3, 4, 3, 2, 1, 1, 1, 1, 1, 1];
    let choice = weighted(rng, &weights);
    match choice {
        0 => {
            let target = if rng.gen_bool(0.6) { pick(rng, &rps) } else { pick(rng, &att_domains) };
            let d = target.ok_or_else(|| no("no domain"))?;
            b.navigate(&browser, &https_url(&s(d), "/"))?;
        }
        1 => {
            let n = b.window_count(&browser);
            let ids = b.state(&browser).at(crate::browser::field::IDS).items().len().max(1);
            let window = rng.gen_range(1..=n.max(1));
            let identity = rng.gen_range(1..=ids);
            b.trigger(&browser, Command { window, identity, ..Command::deliver(0, 0) })?;
        }
        2 => {
            b.settle()?;
        }
        3 => {
            b.step_once()?;
        }
        4 => {
            let n = b.window_count(&browser);
            let window = rng.gen_range(1..=n.max(1));
            b.trigger(&browser, Command { switch: 3, window, ..Command::deliver(0, 0) })?;
        }
        5 => {
            let email = pick(rng, &sc.identities)
                .map(|id| identity_term(&id.name, &id.domain))
                .ok_or_else(|| no("no identity"))?;
            let rp = pick(rng, &rps).cloned().ok_or_else(|| no("no rp"))?;
            let l = fixtures::attacker_start_login(b, &att, &rp, email.clone())?;
            mem.logins.push((email, l));
        }
        6 => attacker_answer(b, rng, mem)?,
        7 => {
            let ws = attacker_windows(b, &browser);
            let w = *pick(rng, &ws).ok_or_else(|| no("no attacker page"))?;
            attacker_script_move(b, rng, &browser, w)?;
        }
        8 => {
            let d = pick(rng, &att_domains).cloned().ok_or_else(|| no("no attacker domain"))?;
            let owner = sc.domain_owner(&d).map(|p| p.name.clone()).ok_or_else(|| no("no owner"))?;
            let state = mem.logins.last().map(|l| page_state(&sc, l)).unwrap_or_else(Term::empty);
            fixtures::open_attacker_page(b, &browser, &owner, &d, state)?;
        }
        9 => {
            let login = mem.logins.last().cloned().ok_or_else(|| no("no attacker login"))?;
            let rp = pick(rng, &rps).cloned().ok_or_else(|| no("no rp"))?;
            let eia = match mem.leaked.last() {
                Some(e) if rng.gen_bool(0.7) => e.clone(),
                _ => page_state(&sc, &login).at(1).dict_get(&s("eia")),
            };
            let token = login.1.token;
            let k = fixtures::attacker_login(b, &att, &rp, &token, eia)?;
            fixtures::attacker_receive(b, &att, &k)?;
        }
        10 => {
            let i = b.find(|e| e.at(3).at(1).is_str(http::DNS_RESOLVE)).ok_or_else(|| no("no dns query"))?;
            let e = b.config.pending[i - 1].clone();
            let answer = Term::ip(&sc.process(&att).expect("declared").addresses[0]);
            let resp = http::dns_response(&e.at(3).at(2), &answer, &e.at(3).at(3));
            b.attacker_emit(&att, i, &[Term::seq(vec![e.at(2), e.at(1), resp])])?;
        }
        11 => {
            let n = b.config.pending.len();
            if n == 0 {
                return Err(no("nothing pending"));
            }
            let i = rng.gen_range(1..=n);
            let r = if rng.gen_bool(0.5) { recipe::forward() } else { recipe::silent() };
            b.deliver_to(i, &att, Some(&r))?;
        }
        12 => {
            let parties = names(&sc, |r| !r.is_attacker());
            let target = pick(rng, &parties).cloned().ok_or_else(|| no("no party"))?;
            let role = sc.process(&target).expect("declared").role;
            let kind = match role {
                Role::Browser if rng.gen_bool(0.5) => http::FULLCORRUPT,
                Role::Browser => http::CLOSECORRUPT,
                _ => http::CORRUPT,
            };
            fixtures::corrupt(b, &target, kind)?;
        }
        13 => {
            let past = past_message(b, rng).ok_or_else(|| no("nothing to replay"))?;
            let i = b.own_trigger(&att);
            b.attacker_emit(&att, i, &[past])?;
        }
        14 => {
            let past = past_message(b, rng).ok_or_else(|| no("nothing to spoof"))?;
            let honest: Vec<Term> = sc
                .processes
                .iter()
                .filter(|p| !p.role.is_attacker())
                .flat_map(|p| p.addresses.iter().map(|a| Term::ip(a)))
                .collect();
            let from = pick(rng, &honest).cloned().ok_or_else(|| no("no address"))?;
            let i = b.own_trigger(&att);
            b.attacker_emit(&att, i, &[Term::seq(vec![past.at(1), from, past.at(3)])])?;
        }
        _ => {
            let opened: Vec<(usize, Term)> =
                (1..=b.config.pending.len()).filter_map(|i| b.attacker_open(&att, i).map(|(r, _)| (i, r))).collect();
            let (i, r) = pick(rng, &opened).cloned().ok_or_else(|| no("no request to relay"))?;
            let rp = pick(rng, &rps).cloned().ok_or_else(|| no("no rp"))?;
            let text = |k| r.at(k).as_str().unwrap_or("").to_string();
            let (method, path) = (text(http::req::METHOD), text(http::req::PATH));
            let (params, headers, body) = (r.at(http::req::PARAMS), r.at(http::req::HEADERS), r.at(http::req::BODY));
            fixtures::att_request_on(b, &att, i, &rp, &method, &path, params, headers, body)?;
        }
    }
    Ok(())
}

/// One random move in the privacy variant.
fn privacy_move(b: &mut Builder, rng: &mut ChaCha8Rng, mem: &mut Memory) -> Result<(), NotInduced> {
    let sc = b.system.scenario.clone();
    let browser = names(&sc, |r| r == Role::Browser).into_iter().next().ok_or_else(|| no("no browser"))?;
    let web: Vec<(String, String)> = sc
        .processes
        .iter()
        .filter(|p| p.role == Role::WebAttacker)
        .flat_map(|p| p.domains.iter().map(move |d| (p.name.clone(), d.clone())))
        .collect();
    let weights = [3, 10, 6, 3, 4, 1, 2, 2];
    match weighted(rng, &weights) {
        0 => {
            let (att, d) = pick(rng, &web).cloned().ok_or_else(|| no("no web attacker"))?;
            let entry =
                *pick(rng, &[Entry::LocationBar, Entry::AttackerHref, Entry::LocationRedirect]).expect("nonempty");
            fixtures::reach_challenge(b, entry, &att, &d)?;
        }
        1 => {
            let n = b.window_count(&browser);
            let window = rng.gen_range(1..=n.max(1));
            b.run_script(&browser, window)?;
        }
        2 => {
            b.settle()?;
        }
        3 => {
            b.step_once()?;
        }
        4 => attacker_answer(b, rng, mem)?,
        5 => {
            let n = b.window_count(&browser);
            let window = rng.gen_range(1..=n.max(1));
            b.trigger(&browser, Command { switch: 3, window, ..Command::deliver(0, 0) })?;
        }
        6 => {
            let (att, d) = pick(rng, &web).cloned().ok_or_else(|| no("no web attacker"))?;
            fixtures::open_attacker_page(b, &browser, &att, &d, Term::empty())?;
        }
        _ => {
            let ws = attacker_windows(b, &browser);
            let w = *pick(rng, &ws).ok_or_else(|| no("no attacker page"))?;
            attacker_script_move(b, rng, &browser, w)?;
        }
    }
    Ok(())
}

fn weighted(rng: &mut ChaCha8Rng, weights: &[u32]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut x = rng.gen_range(0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Generates the schedule with the given seed.
pub fn generate(system: &System, seed: u64, max_moves: usize) -> Schedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(system, fixtures::SEED);
    let mut mem = Memory::default();
    let privacy = system.variant.is_privacy();
    let moves = rng.gen_range(1..=max_moves.max(1));
    for _ in 0..moves {
        // A move that is not possible in the current configuration leaves
        // the prefix built so far in place.
        let _ = if privacy { privacy_move(&mut b, &mut rng, &mut mem) } else { auth_move(&mut b, &mut rng, &mut mem) };
    }
    b.schedule()
}

/// Violations of the selected checkers on one schedule.
pub fn check_schedule(
    sc: &Scenario,
    schedule: &Schedule,
    checks: &[Check],
) -> Result<(Vec<Violation>, usize), PropertyError> {
    let mut out = Vec::new();
    let mut steps = 0;
    if checks.iter().any(|c| matches!(c, Check::AuthA | Check::AuthB)) {
        let system = System::new(sc.clone(), Variant::Auth).map_err(|e| PropertyError::Scenario(e.to_string()))?;
        let run = run_schedule(&system, schedule, fixtures::SEED);
        steps += run.records.len();
        let trace = run.trace();
        if checks.contains(&Check::AuthA) {
            out.extend(check_auth_a(sc, &trace)?);
        }
        if checks.contains(&Check::AuthB) {
            out.extend(check_auth_b(sc, &trace)?);
        }
    }
    if checks.contains(&Check::Privacy) {
        let (d1, d2) = fixtures::challenge_domains(sc);
        let o = check_idp_privacy(sc, schedule, &d1, &d2, fixtures::SEED)?;
        steps += o.runs.0.records.len();
        out.extend(o.violation);
    }
    Ok((out, steps))
}

/// Runs a campaign: `budget` generated schedules, checked in parallel.
/// The report is independent of the number of threads.
pub fn fuzz(sc: &Scenario, cfg: &FuzzConfig) -> Result<FuzzReport, PropertyError> {
    let variant = fixtures::default_variant(sc);
    let system = System::new(sc.clone(), variant).map_err(|e| PropertyError::Scenario(e.to_string()))?;
    let results: Vec<Result<(Counterexample, usize), PropertyError>> = (0..cfg.budget)
        .into_par_iter()
        .map(|index| {
            let seed = schedule_seed(cfg.seed, index);
            let schedule = generate(&system, seed, cfg.max_moves);
            let (violations, steps) = check_schedule(sc, &schedule, &cfg.checks)?;
            Ok((Counterexample { index, seed, schedule, violations }, steps))
        })
        .collect();
    let mut report = FuzzReport::default();
    for r in results {
        let (candidate, steps) = r?;
        report.runs += 1;
        report.steps += steps;
        if !candidate.violations.is_empty() {
            report.counterexamples.push(candidate);
        }
    }
    Ok(report)
}
