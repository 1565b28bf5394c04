//! Server-side atomic processes (relying parties, identity providers,
//! forwarders, DNS servers, attackers) and the scenario wiring that fixes
//! their domains, addresses, keys and identities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::browser;
use crate::http::{self, req, GET, HTTP_RESP, POST, SECURE};
use crate::knowledge::eval_x;
use crate::scripts::{self, Mutations};
use crate::term::{s, Term};

/// Version of the scenario document format.
pub const SCENARIO_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Browser,
    Rp,
    Idp,
    Fwd,
    Dns,
    NetworkAttacker,
    WebAttacker,
}

impl Role {
    pub fn is_attacker(self) -> bool {
        matches!(self, Role::NetworkAttacker | Role::WebAttacker)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDecl {
    pub name: String,
    pub role: Role,
    pub addresses: Vec<String>,
    #[serde(default)]
    pub domains: Vec<String>,
    /// Forwarder domain configured at a relying party.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwd_domain: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityDecl {
    pub name: String,
    pub domain: String,
    /// Name of the browser owning the identity.
    pub owner: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub processes: Vec<ProcessDecl>,
    pub identities: Vec<IdentityDecl>,
    /// Domain to address table served by DNS.
    pub dns: BTreeMap<String, String>,
    #[serde(default)]
    pub mutations: Mutations,
    /// Reads the IdP password check as a requirement on both credentials.
    #[serde(default)]
    pub strict_auth: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid-scenario: {0}")]
    Invalid(String),
    #[error("invalid-challenge-domains: {0}")]
    ChallengeDomain(String),
}

/// Which web system is instantiated from a scenario.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Auth,
    Privacy { dr: String },
}

impl Variant {
    pub fn is_privacy(&self) -> bool {
        matches!(self, Variant::Privacy { .. })
    }
}

/// Private SSL key of a domain.
pub fn ssl_key(domain: &str) -> Term {
    Term::named(&format!("ssl:{domain}"))
}

/// Signing key of an IdP process, or of an attacker domain.
pub fn sign_key(owner: &str) -> Term {
    Term::named(&format!("sign:{owner}"))
}

/// Secret of an identity.
pub fn secret_of(id: &IdentityDecl) -> Term {
    Term::named(&format!("pw:{}@{}", id.name, id.domain))
}

/// The identity term `⟨name, domain⟩`.
pub fn identity_term(name: &str, domain: &str) -> Term {
    Term::pair(s(name), s(domain))
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn process(&self, name: &str) -> Option<&ProcessDecl> {
        self.processes.iter().find(|p| p.name == name)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ProcessDecl> {
        self.processes.iter().filter(move |p| p.role == role)
    }

    /// The process owning `domain`.
    pub fn domain_owner(&self, domain: &str) -> Option<&ProcessDecl> {
        self.processes.iter().find(|p| p.domains.iter().any(|d| d == domain))
    }

    pub fn all_domains(&self) -> BTreeSet<String> {
        self.processes.iter().flat_map(|p| p.domains.iter().cloned()).collect()
    }

    pub fn all_addresses(&self) -> BTreeSet<String> {
        self.processes.iter().flat_map(|p| p.addresses.iter().cloned()).collect()
    }

    /// Structural checks independent of the variant.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return invalid(format!("unsupported version {}", self.version));
        }
        let mut names = BTreeSet::new();
        let mut addr_owner: BTreeMap<&str, &str> = BTreeMap::new();
        let mut dom_owner: BTreeMap<&str, &str> = BTreeMap::new();
        for p in &self.processes {
            if !names.insert(p.name.as_str()) {
                return invalid(format!("duplicate process {}", p.name));
            }
            if p.addresses.is_empty() {
                return invalid(format!("process {} has no address", p.name));
            }
            for a in &p.addresses {
                if let Some(o) = addr_owner.insert(a, &p.name) {
                    if o != p.name {
                        return invalid(format!("address {a} shared by {o} and {}", p.name));
                    }
                }
            }
            for d in &p.domains {
                if d == browser::CHALLENGE_DOMAIN {
                    return invalid("CHALLENGE is not a registrable domain");
                }
                if let Some(o) = dom_owner.insert(d, &p.name) {
                    return invalid(format!("domain {d} owned by {o} and {}", p.name));
                }
            }
            match p.role {
                Role::Rp => {
                    let Some(f) = &p.fwd_domain else {
                        return invalid(format!("relying party {} lacks fwd_domain", p.name));
                    };
                    if p.domains.is_empty() {
                        return invalid(format!("relying party {} has no domain", p.name));
                    }
                    if !self.processes.iter().any(|q| q.role == Role::Fwd && q.domains.contains(f)) {
                        return invalid(format!("fwd_domain {f} of {} is not a forwarder domain", p.name));
                    }
                }
                Role::Idp | Role::Fwd if p.domains.is_empty() => {
                    return invalid(format!("process {} has no domain", p.name));
                }
                Role::Browser | Role::Dns if !p.domains.is_empty() => {
                    return invalid(format!("process {} cannot own domains", p.name));
                }
                _ if p.fwd_domain.is_some() => {
                    return invalid(format!("fwd_domain only applies to relying parties ({})", p.name));
                }
                _ => {}
            }
        }
        let mut ids = BTreeSet::new();
        let mut per_origin = BTreeSet::new();
        for id in &self.identities {
            if !ids.insert((id.name.as_str(), id.domain.as_str())) {
                return invalid(format!("duplicate identity {}@{}", id.name, id.domain));
            }
            match self.process(&id.owner) {
                Some(p) if p.role == Role::Browser => {}
                _ => return invalid(format!("owner {} of {}@{} is not a browser", id.owner, id.name, id.domain)),
            }
            match self.domain_owner(&id.domain) {
                Some(p) if p.role == Role::Idp || p.role.is_attacker() => {}
                _ => return invalid(format!("identity domain {} is not governed by an IdP or attacker", id.domain)),
            }
            if !per_origin.insert((id.owner.as_str(), id.domain.as_str())) {
                return invalid(format!("browser {} owns two identities at {}", id.owner, id.domain));
            }
        }
        for (d, a) in &self.dns {
            if d == browser::CHALLENGE_DOMAIN {
                return invalid("CHALLENGE must not be listed in the DNS table");
            }
            if !addr_owner.contains_key(a.as_str()) {
                return invalid(format!("DNS entry {d} points to unknown address {a}"));
            }
        }
        Ok(())
    }

    /// Checks the constraints of a variant.
    pub fn validate_variant(&self, variant: &Variant) -> Result<(), ScenarioError> {
        self.validate()?;
        let count = |r| self.with_role(r).count();
        match variant {
            Variant::Auth => {
                if count(Role::NetworkAttacker) != 1 {
                    return invalid("auth variant needs exactly one network attacker");
                }
                if count(Role::WebAttacker) != 0 || count(Role::Dns) != 0 {
                    return invalid("auth variant admits no web attackers and no DNS server");
                }
            }
            Variant::Privacy { dr } => {
                if count(Role::NetworkAttacker) != 0 {
                    return invalid("privacy variant admits no network attacker");
                }
                if count(Role::WebAttacker) == 0 {
                    return invalid("privacy variant needs a web attacker");
                }
                if count(Role::Dns) != 1 || count(Role::Fwd) != 1 || count(Role::Rp) != 2 {
                    return invalid("privacy variant needs one DNS server, one forwarder and two relying parties");
                }
                if count(Role::Idp) != 0 {
                    return invalid("privacy variant subsumes IdPs into web attackers");
                }
                let browsers: Vec<_> = self.with_role(Role::Browser).collect();
                if browsers.len() != 1 {
                    return invalid("privacy variant needs exactly one browser");
                }
                let owned: Vec<_> = self.identities.iter().filter(|i| i.owner == browsers[0].name).collect();
                if owned.len() != 1 {
                    return invalid("the challenge browser must own exactly one identity");
                }
                if !self.domain_owner(&owned[0].domain).is_some_and(|p| p.role == Role::WebAttacker) {
                    return invalid("the browser's identity must be governed by an attacker");
                }
                let fwd = self.with_role(Role::Fwd).next().expect("one forwarder");
                if fwd.domains.len() != 1 {
                    return invalid("the forwarder owns exactly one domain");
                }
                for r in self.with_role(Role::Rp) {
                    if r.domains.len() != 1 || r.fwd_domain.as_deref() != Some(&fwd.domains[0]) {
                        return invalid("each relying party owns one domain and uses the forwarder");
                    }
                }
                if !self.with_role(Role::Rp).any(|r| r.domains[0] == *dr) {
                    return Err(ScenarioError::ChallengeDomain(format!("{dr} is not a relying party domain")));
                }
            }
        }
        Ok(())
    }

    /// The distinguished attacker of the privacy variant.
    pub fn distinguished_attacker(&self) -> Option<&ProcessDecl> {
        self.with_role(Role::WebAttacker).min_by(|a, b| a.name.cmp(&b.name))
    }

    fn dns_address(&self, variant: &Variant) -> Term {
        let role = if variant.is_privacy() { Role::Dns } else { Role::NetworkAttacker };
        self.with_role(role).next().map(|p| Term::ip(&p.addresses[0])).unwrap_or(Term::Bot)
    }

    fn key_mapping(&self) -> Term {
        Term::dict(self.all_domains().iter().map(|d| (s(d), Term::pub_key(ssl_key(d)))).collect())
    }

    fn sslkeys(p: &ProcessDecl) -> Term {
        Term::dict(p.domains.iter().map(|d| (s(d), ssl_key(d))).collect())
    }

    fn wk_doc(key: Term) -> Term {
        Term::dict(vec![(s("signkey"), Term::pub_key(key))])
    }

    /// Initial state of a process under a variant.
    pub fn initial_state(&self, p: &ProcessDecl, variant: &Variant) -> Term {
        match p.role {
            Role::Browser => {
                let owned: Vec<&IdentityDecl> = self.identities.iter().filter(|i| i.owner == p.name).collect();
                let ids = Term::seq(owned.iter().map(|i| identity_term(&i.name, &i.domain)).collect());
                let secrets =
                    Term::dict(owned.iter().map(|i| (http::origin(&s(&i.domain), SECURE), secret_of(i))).collect());
                browser::initial_state(
                    ids,
                    secrets,
                    self.key_mapping(),
                    self.dns_address(variant),
                    variant.is_privacy(),
                )
            }
            Role::Rp => {
                let wk_cache = if variant.is_privacy() {
                    Term::dict(self.dns.keys().map(|d| (s(d), Self::wk_doc(sign_key(d)))).collect())
                } else {
                    Term::empty()
                };
                Term::seq(vec![
                    self.dns_address(variant),
                    s(p.fwd_domain.as_deref().unwrap_or("")),
                    self.key_mapping(),
                    Self::sslkeys(p),
                    Term::empty(),
                    Term::empty(),
                    Term::empty(),
                    Term::empty(),
                    wk_cache,
                    Term::Bot,
                ])
            }
            Role::Idp => {
                let users = Term::dict(
                    self.identities
                        .iter()
                        .filter(|i| p.domains.contains(&i.domain))
                        .map(|i| (identity_term(&i.name, &i.domain), secret_of(i)))
                        .collect(),
                );
                Term::seq(vec![Self::sslkeys(p), users, sign_key(&p.name), Term::empty(), Term::Bot])
            }
            Role::Fwd => Term::seq(vec![Self::sslkeys(p), Term::Bot]),
            Role::Dns => Term::seq(vec![Term::dict(self.dns.iter().map(|(d, a)| (s(d), Term::ip(a))).collect())]),
            Role::NetworkAttacker | Role::WebAttacker => {
                let attdoms =
                    Term::seq(p.domains.iter().map(|d| Term::seq(vec![s(d), ssl_key(d), sign_key(d)])).collect());
                let sslkeys =
                    Term::seq(self.all_domains().iter().map(|d| Term::pair(s(d), Term::pub_key(ssl_key(d)))).collect());
                let signkeys = Term::seq(
                    self.with_role(Role::Idp)
                        .flat_map(|i| i.domains.iter().map(move |d| Term::pair(s(d), Term::pub_key(sign_key(&i.name)))))
                        .collect(),
                );
                Term::seq(vec![attdoms, sslkeys, signkeys])
            }
        }
    }
}

/// Result of a server step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ServerOutcome {
    Step {
        state: Term,
        events: Vec<Term>,
    },
    /// The party is corrupted: the input was recorded and the output is
    /// chosen by a recipe.
    Corrupted {
        state: Term,
    },
}

fn stop(state: Term) -> ServerOutcome {
    ServerOutcome::Step { state, events: Vec::new() }
}

fn emit(state: Term, ev: Term) -> ServerOutcome {
    ServerOutcome::Step { state, events: vec![ev] }
}

/// Shared corruption handling. Returns `Some` when the input is consumed.
fn corruption(s: &Term, e: &Term, corrupt_field: usize, ignore: bool) -> Option<ServerOutcome> {
    let m = e.at(3);
    if ignore && m.is_str(http::CORRUPT) {
        return Some(stop(s.clone()));
    }
    if s.at(corrupt_field) != Term::Bot || m.is_str(http::CORRUPT) {
        let rec = Term::pair(e.clone(), s.at(corrupt_field));
        return Some(ServerOutcome::Corrupted { state: s.with_field(corrupt_field, rec) });
    }
    None
}

/// Decrypts an HTTPS request under one of the `sslkeys` and checks that it
/// is addressed to the matching domain. Returns `(request, key, inDomain)`.
fn https_request(m: &Term, sslkeys: &Term) -> Option<(Term, Term, Term)> {
    sslkeys.items().iter().find_map(|entry| {
        let (request, key) = http::https_unwrap_request(m, &entry.at(2)).ok()?;
        (request.at(req::HOST) == entry.at(1)).then(|| (request, key, entry.at(1)))
    })
}

fn response(n: &Term, headers: Term, body: Term, key: &Term) -> Term {
    Term::enc_s(http::response(n.clone(), "200", headers, body), key.clone())
}

/// Field positions of the relying party state.
pub mod rp {
    pub const DNS_ADDRESS: usize = 1;
    pub const FWD_DOMAIN: usize = 2;
    pub const KEY_MAPPING: usize = 3;
    pub const SSLKEYS: usize = 4;
    pub const PENDING_DNS: usize = 5;
    pub const PENDING_REQUESTS: usize = 6;
    pub const LOGIN_SESSIONS: usize = 7;
    pub const SERVICE_TOKENS: usize = 8;
    pub const WK_CACHE: usize = 9;
    pub const CORRUPT: usize = 10;
}

/// Field positions of the identity provider state.
pub mod idp {
    pub const SSLKEYS: usize = 1;
    pub const USERS: usize = 2;
    pub const SIGNKEY: usize = 3;
    pub const SESSIONS: usize = 4;
    pub const CORRUPT: usize = 5;
}

fn is_identity(t: &Term) -> bool {
    t.as_seq().is_some_and(|f| f.len() == 2 && f[0].as_str().is_some() && f[1].as_str().is_some())
}

/// `SENDSTARTLOGINRESPONSE`.
fn send_start_login_response(
    a: &Term,
    f: &Term,
    k: &Term,
    n: &Term,
    email: &Term,
    in_domain: &Term,
    st: Term,
) -> ServerOutcome {
    let rp_nonce = Term::Nu(1);
    let tag_key = Term::Nu(2);
    let ia_key = Term::Nu(3);
    let token = Term::Nu(4);
    let tag = Term::enc_s(Term::pair(in_domain.clone(), rp_nonce.clone()), tag_key.clone());
    let record = Term::seq(vec![email.clone(), rp_nonce, ia_key, tag]);
    let st = st.with_field(rp::LOGIN_SESSIONS, st.at(rp::LOGIN_SESSIONS).dict_put(token.clone(), record));
    let body = Term::dict(vec![
        (s("tagKey"), tag_key),
        (s("loginSessionToken"), token),
        (s("FWDDomain"), st.at(rp::FWD_DOMAIN)),
    ]);
    emit(st, Term::seq(vec![f.clone(), a.clone(), response(n, Term::empty(), body, k)]))
}

/// The relying party relation.
pub fn rp_step(st: &Term, e: &Term, mutations: &Mutations, ignore_corruption: bool) -> ServerOutcome {
    if let Some(o) = corruption(st, e, rp::CORRUPT, ignore_corruption) {
        return o;
    }
    let (a, f, m) = (e.at(1), e.at(2), e.at(3));
    let pending = st.at(rp::PENDING_REQUESTS);
    for entry in pending.items() {
        if entry.items().len() != 4 || entry.at(4) != f {
            continue;
        }
        let plain = Term::dec_s(m.clone(), entry.at(3));
        if !plain.at(1).is_str(HTTP_RESP) {
            continue;
        }
        let request = entry.at(2);
        if plain.at(http::resp::NONCE) != request.at(req::NONCE) {
            return stop(st.clone());
        }
        let s1 = st.with_field(rp::PENDING_REQUESTS, pending.remove_item(entry));
        let reference = entry.at(1);
        if reference.items().len() != 6 {
            return stop(st.clone());
        }
        let r = reference.items();
        let s1 = s1
            .with_field(rp::WK_CACHE, s1.at(rp::WK_CACHE).dict_put(request.at(req::HOST), plain.at(http::resp::BODY)));
        return send_start_login_response(&r[0], &r[1], &r[2], &r[3], &r[4], &r[5], s1);
    }
    if m.items().len() == 4 && m.at(1).is_str(http::DNS_RESOLVED) {
        let (domain, result, n) = (m.at(2), m.at(3), m.at(4));
        let pd = st.at(rp::PENDING_DNS);
        if !pd.dict_has(&n) || !result.is_ip() || pd.dict_get(&n).at(2).at(req::HOST) != domain {
            return stop(st.clone());
        }
        let rec = pd.dict_get(&n);
        let (reference, message) = (rec.at(1), rec.at(2));
        let entry = Term::seq(vec![reference, message.clone(), Term::Nu(5), result.clone()]);
        let key = st.at(rp::KEY_MAPPING).dict_get(&message.at(req::HOST));
        let out = Term::enc_a(Term::pair(message, Term::Nu(5)), key);
        let s1 =
            st.with_field(rp::PENDING_REQUESTS, pending.push(entry)).with_field(rp::PENDING_DNS, pd.dict_remove(&n));
        return emit(s1, Term::seq(vec![result, a, out]));
    }
    let Some((request, k, in_domain)) = https_request(&m, &st.at(rp::SSLKEYS)) else {
        return stop(st.clone());
    };
    let n = request.at(req::NONCE);
    let method = request.at(req::METHOD);
    let path = request.at(req::PATH);
    let headers = request.at(req::HEADERS);
    let body = request.at(req::BODY);
    let reply =
        |s1: Term, body: Term| emit(s1, Term::seq(vec![f.clone(), a.clone(), response(&n, Term::empty(), body, &k)]));
    if path.is_str("/") {
        return reply(st.clone(), Term::pair(s(scripts::SCRIPT_RP), scripts::rp_initial_state()));
    }
    if path.is_str("/startLogin") && method.is_str(POST) {
        if !is_identity(&body) {
            return stop(st.clone());
        }
        let domain = body.at(2);
        if st.at(rp::WK_CACHE).dict_has(&domain) {
            return send_start_login_response(&a, &f, &k, &n, &body, &in_domain, st.clone());
        }
        let message = http::request(
            Term::Nu(6),
            &s(GET),
            &domain,
            &s("/.well-known/spresso-info"),
            Term::empty(),
            Term::empty(),
            Term::empty(),
        );
        let reference = Term::seq(vec![a.clone(), f.clone(), k.clone(), n.clone(), body.clone(), in_domain]);
        let pd = st.at(rp::PENDING_DNS).dict_put(Term::Nu(6), Term::pair(reference, message));
        let s1 = st.with_field(rp::PENDING_DNS, pd);
        let ev = Term::seq(vec![st.at(rp::DNS_ADDRESS), a.clone(), http::dns_request(&domain, Term::Nu(6))]);
        return emit(s1, ev);
    }
    if path.is_str("/redir") && method.is_str(GET) {
        let key = s("loginSessionToken");
        let mut token = body.dict_get(&key);
        if token == Term::empty() {
            token = request.at(req::PARAMS).dict_get(&key);
        }
        let session = st.at(rp::LOGIN_SESSIONS).dict_get(&token);
        if session == Term::empty() {
            return stop(st.clone());
        }
        let email = session.at(1);
        let params = Term::dict(vec![
            (s("email"), email.clone()),
            (s("tag"), session.at(4)),
            (s("iaKey"), session.at(3)),
            (s("FWDDomain"), st.at(rp::FWD_DOMAIN)),
        ]);
        let url = http::url(SECURE, &email.at(2), "/.well-known/spresso-login", params);
        return reply(st.clone(), Term::pair(s(scripts::SCRIPT_RP_REDIR), url));
    }
    if path.is_str("/login") && method.is_str(POST) {
        let key = s("loginSessionToken");
        let origin_ok = headers.dict_get(&s(http::H_ORIGIN)) == http::origin(&in_domain, SECURE);
        if (!origin_ok && !mutations.no_origin_check) || body.dict_get(&key) == Term::empty() {
            return stop(st.clone());
        }
        let token = body.dict_get(&key);
        let session = st.at(rp::LOGIN_SESSIONS).dict_get(&token);
        if session == Term::empty() {
            return stop(st.clone());
        }
        let s1 = st.with_field(rp::LOGIN_SESSIONS, st.at(rp::LOGIN_SESSIONS).dict_remove(&token));
        let ia = Term::dec_s(body.dict_get(&s("eia")), session.at(3));
        let expected = Term::seq(vec![session.at(4), session.at(1), s1.at(rp::FWD_DOMAIN)]);
        let vk = s1.at(rp::WK_CACHE).dict_get(&session.at(1).at(2)).dict_get(&s("signkey"));
        if !mutations.skip_checksig && Term::checksig(ia, expected, vk) != Term::True {
            return stop(st.clone());
        }
        let token = Term::pair(Term::Nu(7), session.at(1));
        let s1 = s1.with_field(rp::SERVICE_TOKENS, s1.at(rp::SERVICE_TOKENS).push(token.clone()));
        return reply(s1, token);
    }
    stop(st.clone())
}

/// The identity provider relation.
pub fn idp_step(st: &Term, e: &Term, strict_auth: bool, ignore_corruption: bool) -> ServerOutcome {
    if let Some(o) = corruption(st, e, idp::CORRUPT, ignore_corruption) {
        return o;
    }
    let (a, f, m) = (e.at(1), e.at(2), e.at(3));
    let Some((request, k, _)) = https_request(&m, &st.at(idp::SSLKEYS)) else {
        return stop(st.clone());
    };
    let n = request.at(req::NONCE);
    let path = request.at(req::PATH);
    let headers = request.at(req::HEADERS);
    let body = request.at(req::BODY);
    let out = |s1: Term, h: Term, b: Term| emit(s1, Term::seq(vec![f.clone(), a.clone(), response(&n, h, b, &k)]));
    let session_id = headers.dict_get(&s(http::H_COOKIE)).dict_get(&s("sessionid"));
    if path.is_str("/.well-known/spresso-info") {
        return out(st.clone(), Term::empty(), Scenario::wk_doc(st.at(idp::SIGNKEY)));
    }
    if path.is_str("/.well-known/spresso-login") {
        let email = st.at(idp::SESSIONS).dict_get(&session_id);
        return out(st.clone(), Term::empty(), Term::pair(s(scripts::SCRIPT_IDP), scripts::idp_initial_state(email)));
    }
    if path.is_str("/sign") && request.at(req::METHOD).is_str(POST) {
        let logged_in_as = st.at(idp::SESSIONS).dict_get(&session_id);
        let email = body.dict_get(&s("email"));
        let bad_email = email != logged_in_as;
        let bad_password = body.dict_get(&s("password")) != st.at(idp::USERS).dict_get(&email);
        let reject = if strict_auth { bad_email || bad_password } else { bad_email && bad_password };
        if reject {
            return stop(st.clone());
        }
        let ia = Term::sig(
            Term::seq(vec![body.dict_get(&s("tag")), email.clone(), body.dict_get(&s("FWDDomain"))]),
            st.at(idp::SIGNKEY),
        );
        let sid = Term::Nu(8);
        let s1 = st.with_field(idp::SESSIONS, st.at(idp::SESSIONS).dict_put(sid.clone(), email));
        let set_cookie = Term::dict(vec![(
            s(http::H_SET_COOKIE),
            Term::seq(vec![http::cookie(s("sessionid"), sid, true, true, true)]),
        )]);
        return out(s1, set_cookie, ia);
    }
    stop(st.clone())
}

/// The forwarder relation.
pub fn fwd_step(st: &Term, e: &Term, ignore_corruption: bool) -> ServerOutcome {
    if let Some(o) = corruption(st, e, 2, ignore_corruption) {
        return o;
    }
    let (a, f, m) = (e.at(1), e.at(2), e.at(3));
    let Some((request, k, _)) = https_request(&m, &st.at(1)) else {
        return stop(st.clone());
    };
    let body = Term::pair(s(scripts::SCRIPT_FWD), s("start"));
    emit(st.clone(), Term::seq(vec![f, a, response(&request.at(req::NONCE), Term::empty(), body, &k)]))
}

/// The DNS server relation.
pub fn dns_step(st: &Term, e: &Term) -> ServerOutcome {
    let (a, f, m) = (e.at(1), e.at(2), e.at(3));
    let table = st.at(1);
    if m.items().len() == 3 && m.at(1).is_str(http::DNS_RESOLVE) && table.dict_has(&m.at(2)) {
        let answer = http::dns_response(&m.at(2), &table.dict_get(&m.at(2)), &m.at(3));
        return emit(st.clone(), Term::seq(vec![f, a, answer]));
    }
    stop(st.clone())
}

/// Which sender addresses a recipe-driven process may use.
#[derive(Clone, Copy, Debug)]
pub enum Senders<'a> {
    Any,
    OneOf(&'a [Term]),
    /// A corrupted party: at most one event, sent from the receiving address.
    Corrupted(&'a Term),
}

/// Evaluates an output recipe over `x` into an event sequence and checks
/// the sender constraints.
pub fn recipe_events(recipe: &Term, x: &Term, senders: Senders) -> Result<Vec<Term>, String> {
    if recipe.has_nonce() {
        return Err("recipe contains a nonce".into());
    }
    if recipe.has_lam() {
        return Err("recipe contains a script placeholder".into());
    }
    let out = eval_x(recipe, x).map_err(|e| e.to_string())?;
    let Some(events) = out.as_seq() else {
        return Err(format!("recipe output {out} is not an event sequence"));
    };
    for ev in events {
        let ok = ev.items().len() == 3
            && ev.at(1).is_ip()
            && ev.at(2).is_ip()
            && ev.at(3).is_ground()
            && !ev.at(3).has_lam();
        if !ok {
            return Err(format!("recipe output element {ev} is not an event"));
        }
        let sender = ev.at(2);
        let allowed = match senders {
            Senders::Any => true,
            Senders::OneOf(addrs) => addrs.contains(&sender),
            Senders::Corrupted(a) => &sender == a,
        };
        if !allowed {
            return Err(format!("sender {sender} is not available to this process"));
        }
    }
    if matches!(senders, Senders::Corrupted(_)) && events.len() > 1 {
        return Err("a corrupted party emits at most one event per step".into());
    }
    Ok(events.to_vec())
}

/// Attacker step: records `⟨e, E, s⟩`.
pub fn attacker_step(st: &Term, e: &Term, recipe: &Term, senders: Senders) -> Result<(Term, Vec<Term>), String> {
    let x = Term::pair(e.clone(), st.clone());
    let events = recipe_events(recipe, &x, senders)?;
    let state = Term::seq(vec![e.clone(), Term::seq(events.clone()), st.clone()]);
    Ok((state, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn auth_scenario() -> Scenario {
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
            name: "t".into(),
            processes: vec![
                p("alice", Role::Browser, "10.0.1.1", &[]),
                rp,
                p("idp", Role::Idp, "10.0.3.1", &["idp.com"]),
                p("fwd", Role::Fwd, "10.0.4.1", &["fwd.com"]),
                p("attacker", Role::NetworkAttacker, "10.0.9.1", &["attacker.com"]),
            ],
            identities: vec![IdentityDecl { name: "alice".into(), domain: "idp.com".into(), owner: "alice".into() }],
            dns: [
                ("rp.com", "10.0.2.1"),
                ("idp.com", "10.0.3.1"),
                ("fwd.com", "10.0.4.1"),
                ("attacker.com", "10.0.9.1"),
            ]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
            mutations: Mutations::default(),
            strict_auth: false,
        }
    }

    fn https(req: Term, key: &str, dom: &str) -> Term {
        http::https_wrap_request(&req, &Term::named(key), &Term::pub_key(ssl_key(dom))).unwrap()
    }

    fn ev(m: Term) -> Term {
        Term::seq(vec![Term::ip("10.0.2.1"), Term::ip("10.0.1.1"), m])
    }

    fn one(o: ServerOutcome) -> (Term, Term) {
        match o {
            ServerOutcome::Step { state, mut events } if events.len() == 1 => (state, events.remove(0)),
            other => panic!("{other:?}"),
        }
    }

    fn rp_state(sc: &Scenario) -> Term {
        sc.initial_state(sc.process("rp").unwrap(), &Variant::Auth)
    }

    fn req(method: &str, host: &str, path: &str, params: Term, headers: Term, body: Term) -> Term {
        http::request(Term::named("n"), &s(method), &s(host), &s(path), params, headers, body)
    }

    #[test]
    fn scenario_round_trips_and_validates() {
        let sc = auth_scenario();
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
        sc.validate_variant(&Variant::Auth).unwrap();
        assert!(sc.validate_variant(&Variant::Privacy { dr: "rp.com".into() }).is_err());
        let mut bad = sc.clone();
        bad.processes[1].addresses = vec!["10.0.1.1".into()];
        assert!(matches!(bad.validate(), Err(ScenarioError::Invalid(_))));
        let text = sc.to_json().replace("\"strict_auth\"", "\"bogus\"");
        assert!(Scenario::from_json(&text).is_err());
    }

    #[test]
    fn rp_serves_index_and_rejects_foreign_keys() {
        let sc = auth_scenario();
        let st = rp_state(&sc);
        let (st2, out) = one(rp_step(
            &st,
            &ev(https(req("GET", "rp.com", "/", Term::empty(), Term::empty(), Term::empty()), "k", "rp.com")),
            &Mutations::default(),
            false,
        ));
        assert_eq!(st2, st);
        let r = Term::dec_s(out.at(3), Term::named("k"));
        assert_eq!(r.at(5), Term::pair(s(scripts::SCRIPT_RP), scripts::rp_initial_state()));
        let wrong = https(req("GET", "idp.com", "/", Term::empty(), Term::empty(), Term::empty()), "k", "rp.com");
        assert_eq!(rp_step(&st, &ev(wrong), &Mutations::default(), false), stop(st.clone()));
    }

    #[test]
    fn start_login_hit_creates_session() {
        let sc = auth_scenario();
        let st = rp_state(&sc);
        let st = st.with_field(rp::WK_CACHE, Term::dict(vec![(s("idp.com"), s("doc"))]));
        let id = identity_term("alice", "idp.com");
        let m = https(req("POST", "rp.com", "/startLogin", Term::empty(), Term::empty(), id.clone()), "k", "rp.com");
        let (st2, out) = one(rp_step(&st, &ev(m), &Mutations::default(), false));
        let body = Term::dec_s(out.at(3), Term::named("k")).at(5);
        assert_eq!(
            body,
            Term::dict(vec![
                (s("tagKey"), Term::Nu(2)),
                (s("loginSessionToken"), Term::Nu(4)),
                (s("FWDDomain"), s("fwd.com"))
            ])
        );
        let tag = Term::enc_s(Term::pair(s("rp.com"), Term::Nu(1)), Term::Nu(2));
        assert_eq!(
            st2.at(rp::LOGIN_SESSIONS).dict_get(&Term::Nu(4)),
            Term::seq(vec![id, Term::Nu(1), Term::Nu(3), tag])
        );
    }

    #[test]
    fn start_login_miss_fetches_support_document() {
        let sc = auth_scenario();
        let st = rp_state(&sc);
        let id = identity_term("alice", "idp.com");
        let m = https(req("POST", "rp.com", "/startLogin", Term::empty(), Term::empty(), id.clone()), "k", "rp.com");
        let (st2, out) = one(rp_step(&st, &ev(m), &Mutations::default(), false));
        assert_eq!(
            out,
            Term::seq(vec![Term::ip("10.0.9.1"), Term::ip("10.0.2.1"), http::dns_request(&s("idp.com"), Term::Nu(6))])
        );
        let st2 = st2.replace(&mut |t| (t == &Term::Nu(6)).then(|| Term::named("q")));
        let (st3, out) = one(rp_step(
            &st2,
            &ev(http::dns_response(&s("idp.com"), &Term::ip("10.0.3.1"), &Term::named("q"))),
            &Mutations::default(),
            false,
        ));
        assert_eq!(out.at(1), Term::ip("10.0.3.1"));
        let st3 = st3.replace(&mut |t| (t == &Term::Nu(5)).then(|| Term::named("rk")));
        let idp = sc.initial_state(sc.process("idp").unwrap(), &Variant::Auth);
        let out_ev = Term::seq(vec![
            Term::ip("10.0.3.1"),
            Term::ip("10.0.2.1"),
            out.at(3).replace(&mut |t| (t == &Term::Nu(5)).then(|| Term::named("rk"))),
        ]);
        let (_, answer) = one(idp_step(&idp, &out_ev, false, false));
        let back = Term::seq(vec![Term::ip("10.0.2.1"), Term::ip("10.0.3.1"), answer.at(3)]);
        let (st4, out) = one(rp_step(&st3, &back, &Mutations::default(), false));
        assert_eq!(out.at(1), Term::ip("10.0.1.1"));
        assert_eq!(
            st4.at(rp::WK_CACHE).dict_get(&s("idp.com")).dict_get(&s("signkey")),
            Term::pub_key(sign_key("idp"))
        );
        assert_eq!(st4.at(rp::PENDING_REQUESTS), Term::empty());
    }

    fn login_fixture(mutations: &Mutations, origin: Term, eia_ok: bool) -> ServerOutcome {
        let sc = auth_scenario();
        let id = identity_term("alice", "idp.com");
        let tag = s("tag");
        let st = rp_state(&sc)
            .with_field(rp::WK_CACHE, Term::dict(vec![(s("idp.com"), Scenario::wk_doc(sign_key("idp")))]))
            .with_field(
                rp::LOGIN_SESSIONS,
                Term::dict(vec![(
                    Term::named("t"),
                    Term::seq(vec![id.clone(), Term::named("rn"), Term::named("ik"), tag.clone()]),
                )]),
            );
        let signer = if eia_ok { sign_key("idp") } else { Term::named("forged") };
        let ia = Term::sig(Term::seq(vec![tag, id, s("fwd.com")]), signer);
        let body = Term::dict(vec![
            (s("eia"), Term::enc_s(ia, Term::named("ik"))),
            (s("loginSessionToken"), Term::named("t")),
        ]);
        let headers = Term::dict(vec![(s(http::H_ORIGIN), origin)]);
        let m = https(req("POST", "rp.com", "/login", Term::empty(), headers, body), "k", "rp.com");
        rp_step(&st, &ev(m), mutations, false)
    }

    #[test]
    fn login_checks_origin_and_signature() {
        let good = http::origin(&s("rp.com"), SECURE);
        let bad = http::origin(&s("attacker.com"), SECURE);
        let (st, out) = one(login_fixture(&Mutations::default(), good.clone(), true));
        let token = Term::pair(Term::Nu(7), identity_term("alice", "idp.com"));
        assert_eq!(st.at(rp::SERVICE_TOKENS), Term::seq(vec![token.clone()]));
        assert_eq!(st.at(rp::LOGIN_SESSIONS), Term::empty());
        assert_eq!(Term::dec_s(out.at(3), Term::named("k")).at(5), token);
        assert!(
            matches!(login_fixture(&Mutations::default(), bad.clone(), true), ServerOutcome::Step { events, .. } if events.is_empty())
        );
        assert!(
            matches!(login_fixture(&Mutations::default(), good.clone(), false), ServerOutcome::Step { events, .. } if events.is_empty())
        );
        let m = Mutations { no_origin_check: true, ..Default::default() };
        assert!(matches!(login_fixture(&m, bad, true), ServerOutcome::Step { events, .. } if events.len() == 1));
        let m = Mutations { skip_checksig: true, ..Default::default() };
        assert!(matches!(login_fixture(&m, good, false), ServerOutcome::Step { events, .. } if events.len() == 1));
    }

    #[test]
    fn redir_reads_token_from_parameters() {
        let sc = auth_scenario();
        let id = identity_term("alice", "idp.com");
        let st = rp_state(&sc).with_field(
            rp::LOGIN_SESSIONS,
            Term::dict(vec![(
                Term::named("t"),
                Term::seq(vec![id.clone(), Term::named("rn"), Term::named("ik"), s("tag")]),
            )]),
        );
        let params = Term::dict(vec![(s("loginSessionToken"), Term::named("t"))]);
        let m = https(req("GET", "rp.com", "/redir", params, Term::empty(), Term::empty()), "k", "rp.com");
        let (_, out) = one(rp_step(&st, &ev(m), &Mutations::default(), false));
        let body = Term::dec_s(out.at(3), Term::named("k")).at(5);
        assert_eq!(body.at(1), s(scripts::SCRIPT_RP_REDIR));
        let url = body.at(2);
        assert_eq!(url.at(3), s("idp.com"));
        assert_eq!(url.at(4), s("/.well-known/spresso-login"));
        assert_eq!(url.at(5).dict_get(&s("iaKey")), Term::named("ik"));
        let m = https(req("GET", "rp.com", "/redir", Term::empty(), Term::empty(), Term::empty()), "k", "rp.com");
        assert_eq!(rp_step(&st, &ev(m), &Mutations::default(), false), stop(st.clone()));
    }

    #[test]
    fn idp_signs_with_password_or_session() {
        let sc = auth_scenario();
        let st = sc.initial_state(sc.process("idp").unwrap(), &Variant::Auth);
        let id = identity_term("alice", "idp.com");
        let body = |pw: Term| {
            Term::dict(vec![
                (s("email"), id.clone()),
                (s("password"), pw),
                (s("tag"), s("tag")),
                (s("FWDDomain"), s("fwd.com")),
            ])
        };
        let sign = |b: Term, strict: bool, cookie: Term| {
            let h = Term::dict(vec![(s(http::H_COOKIE), cookie)]);
            let m = https(req("POST", "idp.com", "/sign", Term::empty(), h, b), "k", "idp.com");
            idp_step(&st, &ev(m), strict, false)
        };
        let secret = secret_of(&sc.identities[0]);
        let (st2, out) = one(sign(body(secret.clone()), false, Term::empty()));
        let r = Term::dec_s(out.at(3), Term::named("k"));
        assert_eq!(r.at(5), Term::sig(Term::seq(vec![s("tag"), id.clone(), s("fwd.com")]), sign_key("idp")));
        assert_eq!(
            r.at(4).dict_get(&s(http::H_SET_COOKIE)),
            Term::seq(vec![http::cookie(s("sessionid"), Term::Nu(8), true, true, true)])
        );
        assert_eq!(st2.at(idp::SESSIONS).dict_get(&Term::Nu(8)), id);
        assert!(
            matches!(sign(body(s("wrong")), false, Term::empty()), ServerOutcome::Step { events, .. } if events.is_empty())
        );
        let logged = st.with_field(idp::SESSIONS, Term::dict(vec![(Term::named("sid"), id.clone())]));
        let h = Term::dict(vec![(s(http::H_COOKIE), Term::dict(vec![(s("sessionid"), Term::named("sid"))]))]);
        let m = https(req("POST", "idp.com", "/sign", Term::empty(), h, body(s("wrong"))), "k", "idp.com");
        assert!(
            matches!(idp_step(&logged, &ev(m.clone()), false, false), ServerOutcome::Step { events, .. } if events.len() == 1)
        );
        assert!(
            matches!(idp_step(&logged, &ev(m), true, false), ServerOutcome::Step { events, .. } if events.is_empty())
        );
    }

    #[test]
    fn idp_serves_support_document_and_dialog() {
        let sc = auth_scenario();
        let st = sc.initial_state(sc.process("idp").unwrap(), &Variant::Auth);
        let m = https(
            req("GET", "idp.com", "/.well-known/spresso-info", Term::empty(), Term::empty(), Term::empty()),
            "k",
            "idp.com",
        );
        let (_, out) = one(idp_step(&st, &ev(m), false, false));
        assert_eq!(
            Term::dec_s(out.at(3), Term::named("k")).at(5),
            Term::seq(vec![Term::pair(s("signkey"), Term::pub_key(sign_key("idp")))])
        );
        let m = https(
            req("GET", "idp.com", "/.well-known/spresso-login", Term::empty(), Term::empty(), Term::empty()),
            "k",
            "idp.com",
        );
        let (_, out) = one(idp_step(&st, &ev(m), false, false));
        assert_eq!(
            Term::dec_s(out.at(3), Term::named("k")).at(5),
            Term::pair(s(scripts::SCRIPT_IDP), scripts::idp_initial_state(Term::empty()))
        );
    }

    #[test]
    fn fwd_is_stateless_and_corruptible() {
        let sc = auth_scenario();
        let st = sc.initial_state(sc.process("fwd").unwrap(), &Variant::Auth);
        let m = https(req("GET", "fwd.com", "/", Term::empty(), Term::empty(), Term::empty()), "k", "fwd.com");
        let (st2, out) = one(fwd_step(&st, &ev(m), false));
        assert_eq!(st2, st);
        assert_eq!(Term::dec_s(out.at(3), Term::named("k")).at(5), Term::pair(s(scripts::SCRIPT_FWD), s("start")));
        assert!(matches!(fwd_step(&st, &ev(s(http::CORRUPT)), false), ServerOutcome::Corrupted { .. }));
        assert_eq!(fwd_step(&st, &ev(s(http::CORRUPT)), true), stop(st));
    }

    #[test]
    fn dns_answers_known_domains_only() {
        let mut sc = auth_scenario();
        sc.processes[4].role = Role::WebAttacker;
        sc.processes.push(ProcessDecl {
            name: "dns".into(),
            role: Role::Dns,
            addresses: vec!["10.0.0.53".into()],
            domains: vec![],
            fwd_domain: None,
        });
        let st = sc.initial_state(sc.process("dns").unwrap(), &Variant::Auth);
        let q = |d: &str| {
            Term::seq(vec![Term::ip("10.0.0.53"), Term::ip("10.0.1.1"), http::dns_request(&s(d), Term::named("n"))])
        };
        let (_, out) = one(dns_step(&st, &q("rp.com")));
        assert_eq!(
            out,
            Term::seq(vec![
                Term::ip("10.0.1.1"),
                Term::ip("10.0.0.53"),
                http::dns_response(&s("rp.com"), &Term::ip("10.0.2.1"), &Term::named("n"))
            ])
        );
        assert_eq!(dns_step(&st, &q("nowhere.com")), stop(st.clone()));
    }

    #[test]
    fn attacker_records_and_checks_senders() {
        let st = s("s0");
        let e = ev(s("hello"));
        let echo = crate::encode::parse("<<#ip\"10.0.3.1\", #ip\"10.0.9.1\", proj3(proj1(?x))>>").unwrap();
        let own = [Term::ip("10.0.9.1")];
        let (st2, evs) = attacker_step(&st, &e, &echo, Senders::OneOf(&own)).unwrap();
        assert_eq!(evs[0].at(3), s("hello"));
        assert_eq!(st2, Term::seq(vec![e.clone(), Term::seq(evs), st.clone()]));
        let other = [Term::ip("10.0.9.2")];
        assert!(attacker_step(&st, &e, &echo, Senders::OneOf(&other)).is_err());
        assert!(attacker_step(&st, &e, &echo, Senders::Any).is_ok());
        assert!(attacker_step(&st, &e, &s("x"), Senders::Any).is_err());
        assert!(attacker_step(&st, &e, &Term::seq(vec![Term::named("n")]), Senders::Any).is_err());
        let (st3, evs) = attacker_step(&st, &e, &Term::empty(), Senders::Any).unwrap();
        assert!(evs.is_empty());
        assert_eq!(st3.at(1), e);
    }
}
