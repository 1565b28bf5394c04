//! Shipped scenarios, hand-written schedules and the attack schedules for
//! the protocol mutants. The files under `fixtures/` are generated from
//! this module.

use std::collections::BTreeMap;

use crate::browser::CHALLENGE_DOMAIN;
use crate::builder::Builder;
use crate::http::{self, req, POST, SECURE};
use crate::parties::{identity_term, sign_key, IdentityDecl, ProcessDecl, Role, Scenario, Variant};
use crate::runtime::{Command, NotInduced, Schedule, System};
use crate::scripts::{self, https_url, Mutations};
use crate::term::{s, Term};

/// Seed used by all shipped schedules.
pub const SEED: u64 = 1;

fn proc(name: &str, role: Role, addr: &str, domains: &[&str]) -> ProcessDecl {
    ProcessDecl {
        name: name.into(),
        role,
        addresses: vec![addr.into()],
        domains: domains.iter().map(|d| d.to_string()).collect(),
        fwd_domain: None,
    }
}

fn rp(name: &str, addr: &str, domain: &str, fwd: &str) -> ProcessDecl {
    ProcessDecl { fwd_domain: Some(fwd.into()), ..proc(name, Role::Rp, addr, &[domain]) }
}

fn identity(name: &str, domain: &str, owner: &str) -> IdentityDecl {
    IdentityDecl { name: name.into(), domain: domain.into(), owner: owner.into() }
}

fn dns_of(processes: &[ProcessDecl]) -> BTreeMap<String, String> {
    processes.iter().flat_map(|p| p.domains.iter().map(move |d| (d.clone(), p.addresses[0].clone()))).collect()
}

/// The authentication scenario: two browsers, one RP, one IdP, one
/// forwarder and the network attacker, which also acts as DNS server.
pub fn auth_scenario() -> Scenario {
    let processes = vec![
        proc("alice", Role::Browser, "10.0.1.1", &[]),
        proc("bob", Role::Browser, "10.0.1.2", &[]),
        rp("rp", "10.0.2.1", "rp.com", "fwd.com"),
        proc("idp", Role::Idp, "10.0.3.1", &["idp.com"]),
        proc("fwd", Role::Fwd, "10.0.4.1", &["fwd.com"]),
        proc("attacker", Role::NetworkAttacker, "10.0.9.1", &["attacker.com"]),
    ];
    Scenario {
        version: 1,
        name: "auth".into(),
        dns: dns_of(&processes),
        processes,
        identities: vec![
            identity("alice", "idp.com", "alice"),
            identity("bob", "idp.com", "bob"),
            identity("eve", "attacker.com", "bob"),
        ],
        mutations: Mutations::default(),
        strict_auth: false,
    }
}

/// The privacy scenario: one challenge browser whose identity is governed
/// by a web attacker, two RPs sharing a forwarder, and an honest DNS server.
pub fn privacy_scenario() -> Scenario {
    let processes = vec![
        proc("alice", Role::Browser, "10.0.1.1", &[]),
        rp("rp1", "10.0.2.1", "rp1.com", "fwd.com"),
        rp("rp2", "10.0.2.2", "rp2.com", "fwd.com"),
        proc("fwd", Role::Fwd, "10.0.4.1", &["fwd.com"]),
        proc("attacker", Role::WebAttacker, "10.0.9.1", &["attacker.com"]),
        proc("mallory", Role::WebAttacker, "10.0.9.2", &["mallory.com"]),
    ];
    let dns = dns_of(&processes);
    let mut processes = processes;
    processes.push(proc("dns", Role::Dns, "10.0.5.1", &[]));
    Scenario {
        version: 1,
        name: "privacy".into(),
        dns,
        processes,
        identities: vec![identity("alice", "attacker.com", "alice")],
        mutations: Mutations::default(),
        strict_auth: false,
    }
}

/// A scenario with one mutation switched on and a matching name.
pub fn mutant(base: Scenario, name: &str) -> Scenario {
    let mut sc = base;
    match name {
        "no_origin_check" => sc.mutations.no_origin_check = true,
        "fwd_unrestricted_eia" => sc.mutations.fwd_unrestricted_eia = true,
        "skip_checksig" => sc.mutations.skip_checksig = true,
        "redir_keeps_referrer" => sc.mutations.redir_keeps_referrer = true,
        other => panic!("unknown mutant {other}"),
    }
    sc.name = format!("{}-{name}", sc.name);
    sc
}

/// The four shipped mutants with the variant they are attacked in.
pub const MUTANTS: [(&str, &str); 4] = [
    ("no_origin_check", "auth"),
    ("fwd_unrestricted_eia", "auth"),
    ("skip_checksig", "auth"),
    ("redir_keeps_referrer", "privacy"),
];

/// A step of a hand-written schedule.
pub type Script = fn(&mut Builder) -> Result<(), NotInduced>;

/// Runs `f` and keeps the prefix of commands that could be built. Attack
/// attempts against the honest model stop where an honest party refuses.
pub fn build(
    system: &System,
    f: impl FnOnce(&mut Builder) -> Result<(), NotInduced>,
) -> (Schedule, Option<NotInduced>) {
    let mut b = Builder::new(system, SEED);
    let r = f(&mut b).err();
    (b.schedule(), r)
}

fn ip(system: &System, name: &str) -> Term {
    system.procs[system.proc_index(name).expect("declared process")].addresses[0].clone()
}

fn no_event(detail: &str) -> NotInduced {
    NotInduced { code: "no-event".into(), detail: detail.into() }
}

/// Sends an HTTPS request from attacker `att` (handling its own trigger).
/// The symmetric key is also sent to the attacker itself so that it stays
/// in its state. Returns the key.
pub fn att_request(
    b: &mut Builder,
    att: &str,
    domain: &str,
    method: &str,
    path: &str,
    params: Term,
    headers: Term,
    body: Term,
) -> Result<Term, NotInduced> {
    let i = b.own_trigger(att);
    att_request_on(b, att, i, domain, method, path, params, headers, body)
}

/// Like [`att_request`] but handling event `i`.
pub fn att_request_on(
    b: &mut Builder,
    att: &str,
    i: usize,
    domain: &str,
    method: &str,
    path: &str,
    params: Term,
    headers: Term,
    body: Term,
) -> Result<Term, NotInduced> {
    let a = ip(b.system, att);
    let to = Term::ip(b.system.scenario.dns.get(domain).ok_or_else(|| no_event("unknown domain"))?);
    let request = http::request(Term::Nu(1), &s(method), &s(domain), &s(path), params, headers, body);
    let msg = Term::enc_a(Term::pair(request, Term::Nu(2)), Term::pub_key(crate::parties::ssl_key(domain)));
    let memo = Term::seq(vec![a.clone(), a.clone(), Term::Nu(2)]);
    let r = b.attacker_emit(att, i, &[Term::seq(vec![to, a, msg]), memo])?;
    Ok(r.outputs[1].at(3))
}

/// Index and plaintext of a pending response for attacker `att` under `key`.
pub fn att_response(b: &Builder, att: &str, key: &Term) -> Option<(usize, Term)> {
    let a = ip(b.system, att);
    b.config.pending.iter().enumerate().find_map(|(n, e)| {
        if e.at(1) != a {
            return None;
        }
        let plain = Term::dec_s(e.at(3), key.clone());
        http::is_response(&plain).then_some((n + 1, plain))
    })
}

/// Index and plaintext of a pending HTTPS request for attacker `att`.
pub fn att_incoming(b: &Builder, att: &str, path: &str) -> Option<(usize, Term)> {
    (1..=b.config.pending.len()).find_map(|i| {
        let (r, _) = b.attacker_open(att, i)?;
        r.at(req::PATH).is_str(path).then_some((i, r))
    })
}

/// Session material an attacker obtains by starting a login at an RP.
#[derive(Clone, Debug)]
pub struct AttackerLogin {
    pub token: Term,
    pub tag_key: Term,
    pub tag: Term,
    pub ia_key: Term,
    pub fwd: Term,
}

/// Attacker `att` starts a login at `rp_domain` for `email` and fetches the
/// redirection target, answering a well-known document request for its own
/// domains on the way.
pub fn attacker_start_login(
    b: &mut Builder,
    att: &str,
    rp_domain: &str,
    email: Term,
) -> Result<AttackerLogin, NotInduced> {
    let origin = Term::dict(vec![(s(http::H_ORIGIN), http::origin(&s(rp_domain), SECURE))]);
    let k = att_request(b, att, rp_domain, POST, "/startLogin", Term::empty(), origin, email.clone())?;
    b.settle()?;
    if let Some((i, _)) = att_incoming(b, att, "/.well-known/spresso-info") {
        let domain = email.at(2);
        let doc = Term::dict(vec![(s("signkey"), Term::pub_key(sign_key(domain.as_str().unwrap_or(""))))]);
        b.attacker_respond(att, i, Term::empty(), doc)?;
        b.settle()?;
    }
    let (i, resp) = att_response(b, att, &k).ok_or_else(|| no_event("no startLogin response"))?;
    let body = resp.at(http::resp::BODY);
    let token = body.dict_get(&s("loginSessionToken"));
    let tag_key = body.dict_get(&s("tagKey"));
    let params = Term::dict(vec![(s("loginSessionToken"), token.clone())]);
    let k2 = att_request_on(b, att, i, rp_domain, http::GET, "/redir", params, Term::empty(), Term::empty())?;
    b.settle()?;
    let resp = attacker_receive(b, att, &k2)?;
    let url = resp.at(http::resp::BODY).at(2);
    let p = url.at(5);
    Ok(AttackerLogin {
        token,
        tag_key,
        tag: p.dict_get(&s("tag")),
        ia_key: p.dict_get(&s("iaKey")),
        fwd: p.dict_get(&s("FWDDomain")),
    })
}

/// Attacker posts `/login` to `rp_domain` with a forged Origin header.
pub fn attacker_login(
    b: &mut Builder,
    att: &str,
    rp_domain: &str,
    token: &Term,
    eia: Term,
) -> Result<Term, NotInduced> {
    let origin = Term::dict(vec![(s(http::H_ORIGIN), http::origin(&s(rp_domain), SECURE))]);
    let body = Term::dict(vec![(s("eia"), eia), (s("loginSessionToken"), token.clone())]);
    let k = att_request(b, att, rp_domain, POST, "/login", Term::empty(), origin, body)?;
    b.settle()?;
    Ok(k)
}

/// Lets the attacker receive the pending response under `key`, learning it.
pub fn attacker_receive(b: &mut Builder, att: &str, key: &Term) -> Result<Term, NotInduced> {
    let (i, resp) = att_response(b, att, key).ok_or_else(|| no_event("no response for the attacker"))?;
    b.deliver_to(i, att, Some(&Term::empty()))?;
    Ok(resp)
}

/// Browser `browser` opens a page of attacker `att` that runs the attacker
/// script with `state` as its initial script state. The page is loaded in
/// a new window, whose index is returned.
pub fn open_attacker_page(
    b: &mut Builder,
    browser: &str,
    att: &str,
    domain: &str,
    state: Term,
) -> Result<usize, NotInduced> {
    let win = b.window_count(browser) + 1;
    b.navigate(browser, &https_url(&s(domain), "/"))?;
    b.settle()?;
    let (i, _) = att_incoming(b, att, "/").ok_or_else(|| no_event("no page request"))?;
    b.attacker_respond(att, i, Term::empty(), Term::pair(s(scripts::ATT_SCRIPT), state))?;
    b.settle()?;
    Ok(win)
}

/// An attacker script output issuing `command` with the current state.
pub fn att_output(input_state: Term, command: Term) -> Term {
    Term::seq(vec![input_state, Term::empty(), Term::empty(), Term::empty(), command])
}

fn window_nonce(b: &Builder, browser: &str, window: usize) -> Term {
    let st = b.state(browser);
    let ptr = crate::browser::subwindows(st)[window - 1].clone();
    let mut t = st.clone();
    for i in ptr {
        t = t.at(i);
    }
    t.at(1)
}

/// The attacker process owning `domain`, if any.
fn attacker_owning(b: &Builder, domain: &Term) -> Option<String> {
    let d = domain.as_str()?;
    b.system.scenario.domain_owner(d).filter(|p| p.role.is_attacker()).map(|p| p.name.clone())
}

/// The login of `browser` with identity `identity` (1-based) on the RP page
/// loaded in window `win`, up to the point where the RP page holds the
/// EIA. An attacker governing the identity serves the well-known document
/// and the login dialog.
pub fn login_until_eia(b: &mut Builder, browser: &str, win: usize, identity: usize) -> Result<(), NotInduced> {
    let email = b.state(browser).at(crate::browser::field::IDS).at(identity);
    let governor = attacker_owning(b, &email.at(2));
    b.trigger(browser, Command { window: win, identity, ..Command::deliver(0, 0) })?;
    b.settle()?;
    if let Some(att) = &governor {
        if let Some((i, _)) = att_incoming(b, att, "/.well-known/spresso-info") {
            let doc = Term::dict(vec![(s("signkey"), Term::pub_key(sign_key(email.at(2).as_str().unwrap_or(""))))]);
            b.attacker_respond(att, i, Term::empty(), doc)?;
            b.settle()?;
        }
    }
    b.run_script(browser, win)?;
    b.settle()?;
    let dialog = b.window_count(browser);
    b.run_script(browser, dialog)?;
    b.settle()?;
    match &governor {
        Some(att) => attacker_idp_dialog(b, att, browser, dialog)?,
        None => {
            b.run_script(browser, dialog)?;
            b.settle()?;
            b.run_script(browser, dialog)?;
            b.settle()?;
        }
    }
    let fwd = b.window_count(browser);
    b.run_script(browser, fwd)?;
    b.run_script(browser, win)?;
    b.run_script(browser, fwd)?;
    Ok(())
}

/// The login of `browser` at `rp_domain` in a new window.
pub fn login(b: &mut Builder, browser: &str, rp_domain: &str, identity: usize) -> Result<(), NotInduced> {
    let win = b.window_count(browser) + 1;
    b.navigate(browser, &https_url(&s(rp_domain), "/"))?;
    b.settle()?;
    login_until_eia(b, browser, win, identity)?;
    b.run_script(browser, win)?;
    b.settle()?;
    Ok(())
}

/// Attack on an RP without the `/login` Origin check: the attacker starts a
/// login for its own identity and lets the victim's browser submit it.
pub fn attack_no_origin_check(b: &mut Builder) -> Result<(), NotInduced> {
    let eve = identity_term("eve", "attacker.com");
    let l = attacker_start_login(b, "attacker", "rp.com", eve.clone())?;
    let ia = Term::sig(Term::seq(vec![l.tag.clone(), eve, l.fwd.clone()]), sign_key("attacker.com"));
    let eia = Term::enc_s(ia, l.ia_key.clone());
    let data = Term::dict(vec![(s("eia"), eia), (s("loginSessionToken"), l.token.clone())]);
    let win = open_attacker_page(b, "alice", "attacker", "attacker.com", data.clone())?;
    let cmd =
        Term::seq(vec![s(scripts::FORM), https_url(&s("rp.com"), "/login"), s(POST), data.clone(), s(scripts::SELF)]);
    b.attacker_script("alice", win, &att_output(data, cmd))?;
    b.settle()?;
    Ok(())
}

/// Attack on a forwarder that posts the EIA to any origin: the attacker
/// starts a login for the victim's identity, opens the login dialog from
/// its own page and catches the EIA.
pub fn attack_fwd_unrestricted(b: &mut Builder) -> Result<(), NotInduced> {
    let alice = identity_term("alice", "idp.com");
    let l = attacker_start_login(b, "attacker", "rp.com", alice)?;
    let params = Term::dict(vec![
        (s("email"), identity_term("alice", "idp.com")),
        (s("tag"), l.tag.clone()),
        (s("iaKey"), l.ia_key.clone()),
        (s("FWDDomain"), l.fwd.clone()),
    ]);
    let dialog = http::url(SECURE, &s("idp.com"), "/.well-known/spresso-login", params);
    let page = Term::pair(dialog.clone(), l.tag_key.clone());
    let win = open_attacker_page(b, "alice", "attacker", "attacker.com", page.clone())?;
    let open = Term::seq(vec![s(scripts::HREF), dialog, s(scripts::BLANK), Term::Bot]);
    b.attacker_script("alice", win, &att_output(page.clone(), open))?;
    b.settle()?;
    let dwin = b.window_count("alice");
    b.run_script("alice", dwin)?;
    b.settle()?;
    b.run_script("alice", dwin)?;
    b.settle()?;
    let fwin = b.window_count("alice");
    b.run_script("alice", fwin)?;
    let fnonce = window_nonce(b, "alice", fwin);
    let tk = Term::seq(vec![s(scripts::POSTMESSAGE), fnonce, Term::pair(s("tagKey"), l.tag_key.clone()), Term::Bot]);
    b.attacker_script("alice", win, &att_output(page.clone(), tk))?;
    b.run_script("alice", fwin)?;
    let inputs =
        crate::browser::script_input(b.state("alice"), win).expect("window exists").at(scripts::input::SCRIPTINPUTS);
    let eia = inputs
        .items()
        .iter()
        .find(|m| m.at(4).at(1).is_str("eia"))
        .map(|m| m.at(4).at(2))
        .ok_or_else(|| no_event("the EIA did not reach the attacker page"))?;
    let leak = http::url(SECURE, &s("attacker.com"), "/leak", Term::dict(vec![(s("eia"), eia.clone())]));
    let cmd = Term::seq(vec![s(scripts::HREF), leak, s(scripts::BLANK), Term::Bot]);
    b.attacker_script("alice", win, &att_output(page, cmd))?;
    b.settle()?;
    let (i, _) = att_incoming(b, "attacker", "/leak").ok_or_else(|| no_event("no leak request"))?;
    b.attacker_respond("attacker", i, Term::empty(), Term::empty())?;
    let k = attacker_login(b, "attacker", "rp.com", &l.token, eia)?;
    attacker_receive(b, "attacker", &k)?;
    Ok(())
}

/// Attack on an RP that does not verify the identity assertion: the attacker
/// starts a login for the victim's identity and submits garbage.
pub fn attack_skip_checksig(b: &mut Builder) -> Result<(), NotInduced> {
    let alice = identity_term("alice", "idp.com");
    let l = attacker_start_login(b, "attacker", "rp.com", alice)?;
    let eia = Term::enc_s(s("forged"), l.ia_key.clone());
    let k = attacker_login(b, "attacker", "rp.com", &l.token, eia)?;
    attacker_receive(b, "attacker", &k)?;
    Ok(())
}

/// The web attacker governing the challenge browser's identity serves the
/// login dialog and completes the login: its page frames the forwarder with
/// a valid EIA.
pub fn attacker_idp_dialog(b: &mut Builder, att: &str, browser: &str, dialog_window: usize) -> Result<(), NotInduced> {
    let (i, request) =
        att_incoming(b, att, "/.well-known/spresso-login").ok_or_else(|| no_event("no dialog request"))?;
    let p = request.at(req::PARAMS);
    let email = p.dict_get(&s("email"));
    let domain = email.at(2);
    let ia = Term::sig(
        Term::seq(vec![p.dict_get(&s("tag")), email.clone(), p.dict_get(&s("FWDDomain"))]),
        sign_key(domain.as_str().unwrap_or("")),
    );
    let eia = Term::enc_s(ia, p.dict_get(&s("iaKey")));
    let fwd_url = http::url(
        SECURE,
        &p.dict_get(&s("FWDDomain")),
        "/",
        Term::dict(vec![(s("tag"), p.dict_get(&s("tag"))), (s("eia"), eia)]),
    );
    b.attacker_respond(att, i, Term::empty(), Term::pair(s(scripts::ATT_SCRIPT), fwd_url.clone()))?;
    b.settle()?;
    let cmd = Term::seq(vec![s(scripts::IFRAME), fwd_url.clone(), s(scripts::SELF)]);
    b.attacker_script(browser, dialog_window, &att_output(fwd_url, cmd))?;
    b.settle()?;
    Ok(())
}

/// How the challenge browser reaches the challenge domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entry {
    LocationBar,
    AttackerHref,
    LocationRedirect,
}

/// The challenge browser loads the challenge page, returning its window.
pub fn reach_challenge(b: &mut Builder, entry: Entry, att: &str, att_domain: &str) -> Result<usize, NotInduced> {
    let challenge = https_url(&s(CHALLENGE_DOMAIN), "/");
    match entry {
        Entry::LocationBar => {
            let win = b.window_count("alice") + 1;
            b.navigate("alice", &challenge)?;
            b.settle()?;
            Ok(win)
        }
        Entry::AttackerHref => {
            let win = open_attacker_page(b, "alice", att, att_domain, challenge.clone())?;
            let cmd = Term::seq(vec![s(scripts::HREF), challenge.clone(), s(scripts::SELF), Term::Bot]);
            b.attacker_script("alice", win, &att_output(challenge, cmd))?;
            b.settle()?;
            Ok(win)
        }
        Entry::LocationRedirect => {
            let win = b.window_count("alice") + 1;
            b.navigate("alice", &https_url(&s(att_domain), "/"))?;
            b.settle()?;
            let (i, _) = att_incoming(b, att, "/").ok_or_else(|| no_event("no page request"))?;
            let loc = Term::dict(vec![(s(http::H_LOCATION), challenge)]);
            let (request, key) = b.attacker_open(att, i).expect("checked");
            let e = b.config.pending[i - 1].clone();
            let resp = Term::enc_s(http::response(request.at(req::NONCE), "303", loc, Term::empty()), key);
            b.attacker_emit(att, i, &[Term::seq(vec![e.at(2), e.at(1), resp])])?;
            b.settle()?;
            Ok(win)
        }
    }
}

/// The full privacy login through the challenge domain.
pub fn privacy_login(b: &mut Builder, entry: Entry) -> Result<(), NotInduced> {
    let win = reach_challenge(b, entry, "attacker", "attacker.com")?;
    login_until_eia(b, "alice", win, 1)?;
    b.run_script("alice", win)?;
    b.settle()?;
    Ok(())
}

/// The happy path: one honest login in the authentication scenario.
pub fn happy_path(b: &mut Builder) -> Result<(), NotInduced> {
    login(b, "alice", "rp.com", 1)
}

/// Hand-written schedules for the authentication scenario.
pub fn auth_suite() -> Vec<(&'static str, Script)> {
    vec![
        ("happy-path", happy_path),
        ("bob-login", |b| login(b, "bob", "rp.com", 1)),
        ("bob-login-attacker-identity", |b| login(b, "bob", "rp.com", 2)),
        ("two-logins-cache-hit", |b| {
            login(b, "alice", "rp.com", 1)?;
            login(b, "alice", "rp.com", 1)
        }),
        ("alice-then-bob", |b| {
            login(b, "alice", "rp.com", 1)?;
            login(b, "bob", "rp.com", 1)
        }),
        ("reload-after-login", |b| {
            login(b, "alice", "rp.com", 1)?;
            b.trigger("alice", Command { switch: 3, ..Command::deliver(0, 0) })?;
            b.settle()?;
            Ok(())
        }),
        ("origin-attack-on-honest-rp", attack_no_origin_check),
        ("fwd-attack-on-honest-fwd", attack_fwd_unrestricted),
        ("forged-eia-on-honest-rp", attack_skip_checksig),
        ("attacker-logs-in-as-eve", |b| {
            let eve = identity_term("eve", "attacker.com");
            let l = attacker_start_login(b, "attacker", "rp.com", eve.clone())?;
            let ia = Term::sig(Term::seq(vec![l.tag.clone(), eve, l.fwd.clone()]), sign_key("attacker.com"));
            let k = attacker_login(b, "attacker", "rp.com", &l.token, Term::enc_s(ia, l.ia_key))?;
            attacker_receive(b, "attacker", &k).map(|_| ())
        }),
        ("replay-login-request", |b| {
            let win = b.window_count("alice") + 1;
            b.navigate("alice", &https_url(&s("rp.com"), "/"))?;
            b.settle()?;
            login_until_eia(b, "alice", win, 1)?;
            b.run_script("alice", win)?;
            let rp = ip(b.system, "rp");
            let i = b
                .settle_until(|e| e.at(1) == rp && !e.at(3).at(1).is_str(http::DNS_RESOLVED))?
                .ok_or_else(|| no_event("no login request"))?;
            b.deliver_to(i, "attacker", Some(&crate::builder::recipe::forward()))?;
            b.settle()?;
            let login =
                b.records.iter().rev().find(|r| r.process == b.system.proc_index("attacker").expect("declared"));
            let login = login.map(|r| r.event.clone()).ok_or_else(|| no_event("no intercepted request"))?;
            let i = b.own_trigger("attacker");
            b.attacker_emit("attacker", i, &[login])?;
            b.settle()?;
            Ok(())
        }),
        ("full-corrupt-after-login", |b| {
            login(b, "alice", "rp.com", 1)?;
            corrupt(b, "alice", http::FULLCORRUPT)
        }),
        ("close-corrupt-after-login", |b| {
            login(b, "alice", "rp.com", 1)?;
            corrupt(b, "alice", http::CLOSECORRUPT)
        }),
        ("corrupt-idp-after-login", |b| {
            login(b, "alice", "rp.com", 1)?;
            corrupt(b, "idp", http::CORRUPT)
        }),
        ("corrupt-fwd-then-login", |b| {
            corrupt(b, "fwd", http::CORRUPT)?;
            login(b, "alice", "rp.com", 1)
        }),
        ("corrupt-rp-after-login", |b| {
            login(b, "alice", "rp.com", 1)?;
            corrupt(b, "rp", http::CORRUPT)
        }),
        ("visit-attacker-then-login", |b| {
            open_attacker_page(b, "alice", "attacker", "attacker.com", Term::empty())?;
            login(b, "alice", "rp.com", 1)
        }),
        ("dns-spoof-rp", |b| {
            b.navigate("alice", &https_url(&s("rp.com"), "/"))?;
            let i = b.find(|e| e.at(3).at(1).is_str(http::DNS_RESOLVE)).ok_or_else(|| no_event("no dns query"))?;
            b.attacker_emit("attacker", i, &[dns_event(b, i, "10.0.9.1")])?;
            let j = b.find(|e| e.at(1) == Term::ip("10.0.1.1")).ok_or_else(|| no_event("no dns answer"))?;
            b.deliver_to(j, "alice", None)?;
            let k = b.find(|e| e.at(1) == Term::ip("10.0.9.1")).ok_or_else(|| no_event("no request"))?;
            b.deliver_to(k, "attacker", Some(&crate::builder::recipe::silent()))?;
            Ok(())
        }),
        ("attacker-relays-traffic", |b| {
            let win = b.window_count("alice") + 1;
            b.navigate("alice", &https_url(&s("rp.com"), "/"))?;
            b.settle()?;
            b.trigger("alice", Command { window: win, ..Command::deliver(0, 0) })?;
            b.settle()?;
            let i = b.find(|e| e.at(1) == Term::ip("10.0.1.1") && !e.at(3).is_str(http::TRIGGER));
            if let Some(i) = i {
                b.deliver_to(i, "attacker", Some(&crate::builder::recipe::forward()))?;
            }
            b.settle()?;
            Ok(())
        }),
        ("dropped-start-login-response", |b| {
            b.navigate("alice", &https_url(&s("rp.com"), "/"))?;
            b.settle()?;
            b.run_script("alice", 1)?;
            b.settle()?;
            let i = b.find(|e| e.at(1) == Term::ip("10.0.1.1") && !e.at(3).is_str(http::TRIGGER));
            if let Some(i) = i {
                b.deliver_to(i, "attacker", Some(&Term::empty()))?;
            }
            b.run_script("alice", 1)?;
            Ok(())
        }),
        ("interleaved-logins", |b| {
            b.navigate("alice", &https_url(&s("rp.com"), "/"))?;
            b.navigate("bob", &https_url(&s("rp.com"), "/"))?;
            b.settle()?;
            b.run_script("bob", 1)?;
            b.run_script("alice", 1)?;
            b.settle()?;
            for w in [1, 2, 2, 2] {
                b.run_script("alice", w)?;
                b.run_script("bob", w)?;
                b.settle()?;
            }
            for w in [3, 1, 3, 1] {
                b.run_script("bob", w)?;
                b.run_script("alice", w)?;
            }
            b.settle()?;
            Ok(())
        }),
        ("login-with-idp-session", |b| {
            login(b, "alice", "rp.com", 1)?;
            login(b, "alice", "rp.com", 1)?;
            login(b, "bob", "rp.com", 2)
        }),
    ]
}

fn dns_event(b: &Builder, i: usize, answer: &str) -> Term {
    let e = &b.config.pending[i - 1];
    let m = e.at(3);
    Term::seq(vec![e.at(2), e.at(1), http::dns_response(&m.at(2), &Term::ip(answer), &m.at(3))])
}

/// Attacker sends a corruption message to `target`, which processes it.
pub fn corrupt(b: &mut Builder, target: &str, kind: &str) -> Result<(), NotInduced> {
    let a = ip(b.system, "attacker");
    let to = ip(b.system, target);
    let i = b.own_trigger("attacker");
    b.attacker_emit("attacker", i, &[Term::seq(vec![to.clone(), a, s(kind)])])?;
    let j = b.find(|e| e.at(1) == to && e.at(3).is_str(kind)).ok_or_else(|| no_event("corruption lost"))?;
    b.deliver_to(j, target, None)?;
    Ok(())
}

/// Hand-written schedules for the privacy scenario.
pub fn privacy_suite() -> Vec<(&'static str, Script)> {
    vec![
        ("challenge-location-bar", |b| privacy_login(b, Entry::LocationBar)),
        ("challenge-attacker-href", |b| privacy_login(b, Entry::AttackerHref)),
        ("challenge-location-redirect", |b| privacy_login(b, Entry::LocationRedirect)),
        ("challenge-page-only", |b| reach_challenge(b, Entry::LocationBar, "attacker", "attacker.com").map(|_| ())),
        ("challenge-href-page-only", |b| {
            reach_challenge(b, Entry::AttackerHref, "attacker", "attacker.com").map(|_| ())
        }),
        ("challenge-redirect-page-only", |b| {
            reach_challenge(b, Entry::LocationRedirect, "attacker", "attacker.com").map(|_| ())
        }),
        ("challenge-via-mallory-href", |b| {
            reach_challenge(b, Entry::AttackerHref, "mallory", "mallory.com").map(|_| ())
        }),
        ("challenge-via-mallory-redirect", |b| {
            reach_challenge(b, Entry::LocationRedirect, "mallory", "mallory.com").map(|_| ())
        }),
        ("start-login-only", |b| {
            let w = reach_challenge(b, Entry::LocationBar, "attacker", "attacker.com")?;
            b.trigger("alice", Command { window: w, ..Command::deliver(0, 0) })?;
            b.settle()?;
            Ok(())
        }),
        ("up-to-redir", |b| {
            let w = reach_challenge(b, Entry::LocationBar, "attacker", "attacker.com")?;
            b.trigger("alice", Command { window: w, ..Command::deliver(0, 0) })?;
            b.settle()?;
            b.run_script("alice", w)?;
            b.settle()?;
            Ok(())
        }),
        ("up-to-dialog-request", |b| {
            let w = reach_challenge(b, Entry::AttackerHref, "attacker", "attacker.com")?;
            b.trigger("alice", Command { window: w, ..Command::deliver(0, 0) })?;
            b.settle()?;
            b.run_script("alice", w)?;
            b.settle()?;
            let d = b.window_count("alice");
            b.run_script("alice", d)?;
            b.settle()?;
            Ok(())
        }),
        ("dialog-served-no-frame", |b| {
            let w = reach_challenge(b, Entry::LocationRedirect, "attacker", "attacker.com")?;
            b.trigger("alice", Command { window: w, ..Command::deliver(0, 0) })?;
            b.settle()?;
            b.run_script("alice", w)?;
            b.settle()?;
            let d = b.window_count("alice");
            b.run_script("alice", d)?;
            b.settle()?;
            let (i, _) =
                att_incoming(b, "attacker", "/.well-known/spresso-login").ok_or_else(|| no_event("no dialog"))?;
            b.attacker_respond("attacker", i, Term::empty(), Term::pair(s(scripts::ATT_SCRIPT), Term::empty()))?;
            b.settle()?;
            Ok(())
        }),
        ("login-then-reload", |b| {
            privacy_login(b, Entry::LocationBar)?;
            b.trigger("alice", Command { switch: 3, ..Command::deliver(0, 0) })?;
            b.settle()?;
            Ok(())
        }),
        ("login-then-visit-mallory", |b| {
            privacy_login(b, Entry::LocationBar)?;
            open_attacker_page(b, "alice", "mallory", "mallory.com", Term::empty()).map(|_| ())
        }),
        ("visit-mallory-then-login", |b| {
            open_attacker_page(b, "alice", "mallory", "mallory.com", Term::empty())?;
            privacy_login(b, Entry::LocationBar)
        }),
        ("visit-attacker-then-login", |b| {
            open_attacker_page(b, "alice", "attacker", "attacker.com", Term::empty())?;
            privacy_login(b, Entry::AttackerHref)
        }),
        ("second-challenge-navigation", |b| {
            privacy_login(b, Entry::LocationBar)?;
            reach_challenge(b, Entry::LocationBar, "attacker", "attacker.com").map(|_| ())
        }),
        ("attacker-page-probes-rps", |b| {
            let w = open_attacker_page(b, "alice", "attacker", "attacker.com", Term::empty())?;
            let cmd = Term::seq(vec![s(scripts::IFRAME), https_url(&s("rp1.com"), "/"), s(scripts::SELF)]);
            b.attacker_script("alice", w, &att_output(Term::empty(), cmd))?;
            b.settle()?;
            Ok(())
        }),
        ("attacker-opens-rp2-directly", |b| {
            let w = open_attacker_page(b, "alice", "mallory", "mallory.com", Term::empty())?;
            let cmd = Term::seq(vec![s(scripts::HREF), https_url(&s("rp2.com"), "/"), s(scripts::BLANK), Term::Bot]);
            b.attacker_script("alice", w, &att_output(Term::empty(), cmd))?;
            b.settle()?;
            privacy_login(b, Entry::LocationRedirect)
        }),
        ("fwd-frame-without-tagkey", |b| {
            let w = reach_challenge(b, Entry::LocationBar, "attacker", "attacker.com")?;
            b.trigger("alice", Command { window: w, ..Command::deliver(0, 0) })?;
            b.settle()?;
            b.run_script("alice", w)?;
            b.settle()?;
            let d = b.window_count("alice");
            b.run_script("alice", d)?;
            b.settle()?;
            attacker_idp_dialog(b, "attacker", "alice", d)?;
            let f = b.window_count("alice");
            b.run_script("alice", f)?;
            Ok(())
        }),
        ("empty", |_| Ok(())),
    ]
}

/// The attack schedule for a mutant.
pub fn mutant_attack(name: &str) -> Script {
    match name {
        "no_origin_check" => attack_no_origin_check,
        "fwd_unrestricted_eia" => attack_fwd_unrestricted,
        "skip_checksig" => attack_skip_checksig,
        "redir_keeps_referrer" => |b| privacy_login(b, Entry::LocationBar),
        other => panic!("unknown mutant {other}"),
    }
}

/// The variant a fixture schedule runs in: authentication, or privacy with
/// the first RP domain as challenge.
pub fn default_variant(sc: &Scenario) -> Variant {
    if sc.with_role(Role::NetworkAttacker).next().is_some() {
        Variant::Auth
    } else {
        let dr = sc.with_role(Role::Rp).flat_map(|p| p.domains.first().cloned()).next().unwrap_or_default();
        Variant::Privacy { dr }
    }
}

/// The two challenge domains of a privacy scenario.
pub fn challenge_domains(sc: &Scenario) -> (String, String) {
    let d: Vec<String> = sc.with_role(Role::Rp).flat_map(|p| p.domains.first().cloned()).collect();
    (d[0].clone(), d[1].clone())
}

/// Builds `script` against `scenario` in its default variant.
pub fn build_schedule(scenario: &Scenario, script: Script) -> (Schedule, Option<NotInduced>) {
    let system = System::new(scenario.clone(), default_variant(scenario)).expect("shipped scenarios are valid");
    build(&system, script)
}

/// Every shipped fixture file as `(relative path, contents)`: scenarios,
/// the happy path, both handcrafted suites and the mutant attacks.
pub fn fixture_files() -> Vec<(String, String)> {
    let mut files = Vec::new();
    let auth = auth_scenario();
    let privacy = privacy_scenario();
    files.push(("scenarios/auth.json".to_string(), auth.to_json()));
    files.push(("scenarios/privacy.json".to_string(), privacy.to_json()));
    files.push(("schedules/happy-path.json".to_string(), build_schedule(&auth, happy_path).0.to_json()));
    for (name, script) in auth_suite() {
        files.push((format!("schedules/auth/{name}.json"), build_schedule(&auth, script).0.to_json()));
    }
    for (name, script) in privacy_suite() {
        files.push((format!("schedules/privacy/{name}.json"), build_schedule(&privacy, script).0.to_json()));
    }
    for (name, base) in MUTANTS {
        let sc = mutant(if base == "auth" { auth.clone() } else { privacy.clone() }, name);
        files.push((format!("schedules/mutants/{name}.json"), build_schedule(&sc, mutant_attack(name)).0.to_json()));
        files.push((format!("scenarios/mutant-{name}.json"), sc.to_json()));
    }
    for (_, text) in files.iter_mut() {
        text.push('\n');
    }
    files
}
