//! Checkers for the authentication properties A and B over traces, and for
//! IdP privacy over paired runs with different challenge domains.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::browser;
use crate::encode;
use crate::http::{self, req};
use crate::knowledge::{static_equivalence, Distinguisher, Saturation};
use crate::parties::{self, identity_term, Role, Scenario, ScenarioError, Variant};
use crate::runtime::{run_schedule, state_corrupted, Driver, Run, Schedule, System, Trace};
use crate::term::Term;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    #[serde(rename = "auth-A")]
    AuthA,
    #[serde(rename = "auth-B")]
    AuthB,
    #[serde(rename = "privacy")]
    Privacy,
}

/// Where to look to reproduce a violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replay {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub step: usize,
    /// The offending token, request or distinguishing recipes, as term text.
    pub term: String,
    pub narrative: String,
    pub replay: Replay,
}

impl Violation {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("violation serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PropertyError {
    #[error("wrong-variant: {0}")]
    WrongVariant(String),
    #[error("invalid-challenge-domains: {0}")]
    InvalidChallengeDomains(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// A service token recorded by a relying party together with the event
/// whose processing created it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceTokenRecord {
    pub token: Term,
    pub rp: String,
    pub step: usize,
    pub request_event: Term,
}

fn require_auth(trace: &Trace) -> Result<(), PropertyError> {
    match trace.variant {
        Variant::Auth => Ok(()),
        _ => Err(PropertyError::WrongVariant("authentication checkers need an auth-variant trace".into())),
    }
}

fn replay(trace: &Trace, step: usize) -> Replay {
    Replay { scenario: trace.scenario.clone(), variant: trace.variant.clone(), seed: trace.seed, step, schedule: None }
}

/// Current states of all processes while walking a trace.
struct Walk<'a> {
    names: BTreeMap<&'a str, usize>,
    roles: Vec<Role>,
    states: Vec<Term>,
}

impl<'a> Walk<'a> {
    fn new(trace: &'a Trace) -> Walk<'a> {
        Walk {
            names: trace.initial_states.iter().enumerate().map(|(k, (n, _, _))| (n.as_str(), k)).collect(),
            roles: trace.initial_states.iter().map(|(_, r, _)| *r).collect(),
            states: trace.initial_states.iter().map(|(_, _, s)| s.clone()).collect(),
        }
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.names.get(name).copied()
    }

    fn state(&self, name: &str) -> Option<&Term> {
        self.index(name).map(|k| &self.states[k])
    }

    fn honest(&self, name: &str) -> bool {
        self.index(name).is_some_and(|k| !state_corrupted(self.roles[k], &self.states[k]))
    }
}

/// Honest relying parties whose forwarder is honest, given current states.
fn checked_rps<'a>(sc: &'a Scenario, w: &Walk) -> Vec<&'a str> {
    sc.with_role(Role::Rp)
        .filter(|rp| w.honest(&rp.name))
        .filter(|rp| {
            rp.fwd_domain
                .as_deref()
                .and_then(|d| sc.domain_owner(d))
                .is_some_and(|f| f.role == Role::Fwd && w.honest(&f.name))
        })
        .map(|rp| rp.name.as_str())
        .collect()
}

fn owner_of(sc: &Scenario, identity: &Term) -> Option<String> {
    sc.identities.iter().find(|id| identity_term(&id.name, &id.domain) == *identity).map(|id| id.owner.clone())
}

/// Property A: no service token of an honest relying party becomes
/// derivable for the attacker unless the identity's browser is fully
/// corrupted or its governor is not an honest identity provider.
pub fn check_auth_a(sc: &Scenario, trace: &Trace) -> Result<Vec<Violation>, PropertyError> {
    require_auth(trace)?;
    let mut w = Walk::new(trace);
    let mut know = Saturation::new();
    let mut facts = 0usize;
    let mut learn = |know: &mut Saturation, t: &Term| {
        facts += 1;
        know.add(t.clone(), Term::var(&format!("k{facts}")));
    };
    for (k, role) in w.roles.iter().enumerate() {
        if role.is_attacker() || state_corrupted(*role, &w.states[k]) {
            learn(&mut know, &w.states[k]);
        }
    }
    let mut reported = BTreeSet::new();
    let mut out = Vec::new();
    for st in &trace.steps {
        let Some(k) = w.index(&st.process) else { continue };
        w.states[k] = st.state.clone();
        if w.roles[k].is_attacker() {
            learn(&mut know, &st.event);
            for o in &st.outputs {
                learn(&mut know, o);
            }
        } else if st.driver == Driver::Corrupted || state_corrupted(w.roles[k], &st.state) {
            learn(&mut know, &st.state);
        }
        for rp in checked_rps(sc, &w) {
            let tokens = w.state(rp).expect("declared").at(parties::rp::SERVICE_TOKENS);
            for token in tokens.items() {
                if reported.contains(token) || !know.derivable(token) {
                    continue;
                }
                let identity = token.at(2);
                let owner = owner_of(sc, &identity);
                let owner_full = owner
                    .as_deref()
                    .and_then(|b| w.state(b))
                    .is_some_and(|s| s.at(browser::field::IS_CORRUPTED).is_str(http::FULLCORRUPT));
                let governor_honest = identity
                    .at(2)
                    .as_str()
                    .and_then(|d| sc.domain_owner(d))
                    .is_some_and(|g| g.role == Role::Idp && w.honest(&g.name));
                if owner_full || !governor_honest {
                    continue;
                }
                reported.insert(token.clone());
                out.push(Violation {
                    kind: ViolationKind::AuthA,
                    step: st.step,
                    term: encode::to_text(token),
                    narrative: format!(
                        "service token issued by {rp} for identity {identity} owned by {} is derivable by the attacker after step {}",
                        owner.unwrap_or_else(|| "nobody".into()),
                        st.step
                    ),
                    replay: replay(trace, st.step),
                });
            }
        }
    }
    Ok(out)
}

/// Service tokens in the order relying parties created them.
pub fn service_tokens(trace: &Trace) -> Vec<ServiceTokenRecord> {
    let mut w = Walk::new(trace);
    let mut out = Vec::new();
    for st in &trace.steps {
        let Some(k) = w.index(&st.process) else { continue };
        if w.roles[k] == Role::Rp && st.driver == Driver::Honest {
            let before = w.states[k].at(parties::rp::SERVICE_TOKENS).items().len();
            let after = st.state.at(parties::rp::SERVICE_TOKENS);
            for token in &after.items()[before.min(after.items().len())..] {
                out.push(ServiceTokenRecord {
                    token: token.clone(),
                    rp: st.process.clone(),
                    step: st.step,
                    request_event: st.event.clone(),
                });
            }
        }
        w.states[k] = st.state.clone();
    }
    out
}

/// Property B: a service token whose request was sent by a browser that is
/// still honest names an identity that browser owns.
pub fn check_auth_b(sc: &Scenario, trace: &Trace) -> Result<Vec<Violation>, PropertyError> {
    require_auth(trace)?;
    let mut w = Walk::new(trace);
    let mut sent_by: BTreeMap<Term, String> = BTreeMap::new();
    let records: BTreeMap<usize, Vec<ServiceTokenRecord>> =
        service_tokens(trace).into_iter().fold(BTreeMap::new(), |mut m, r| {
            m.entry(r.step).or_insert_with(Vec::new).push(r);
            m
        });
    let mut out = Vec::new();
    for st in &trace.steps {
        let Some(k) = w.index(&st.process) else { continue };
        w.states[k] = st.state.clone();
        if w.roles[k] == Role::Browser && st.driver == Driver::Honest {
            for o in &st.outputs {
                sent_by.entry(o.at(3)).or_insert_with(|| st.process.clone());
            }
        }
        for r in records.get(&st.step).into_iter().flatten() {
            let Some(b) = sent_by.get(&r.request_event.at(3)) else { continue };
            if !w.honest(b) {
                continue;
            }
            let identity = r.token.at(2);
            if owner_of(sc, &identity).as_deref() == Some(b.as_str()) {
                continue;
            }
            out.push(Violation {
                kind: ViolationKind::AuthB,
                step: st.step,
                term: encode::to_text(&r.token),
                narrative: format!(
                    "{} issued a service token for identity {identity} on a login request sent by browser {b}, which does not own it",
                    r.rp
                ),
                replay: replay(trace, st.step),
            });
        }
    }
    Ok(out)
}

/// Result of a paired privacy run.
#[derive(Clone, Debug)]
pub struct PrivacyOutcome {
    pub runs: (Run, Run),
    pub violation: Option<Violation>,
    pub distinguisher: Option<Distinguisher>,
}

impl PrivacyOutcome {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }
}

/// Runs the schedule against both challenge domains under the same seed and
/// compares the final views of the distinguished attacker.
pub fn check_idp_privacy(
    sc: &Scenario,
    schedule: &Schedule,
    dr1: &str,
    dr2: &str,
    seed: u64,
) -> Result<PrivacyOutcome, PropertyError> {
    let rps: BTreeSet<&str> = sc.with_role(Role::Rp).flat_map(|p| p.domains.iter().map(String::as_str)).collect();
    if dr1 == dr2 || !rps.contains(dr1) || !rps.contains(dr2) {
        return Err(PropertyError::InvalidChallengeDomains(format!(
            "{dr1} and {dr2} must be the two relying party domains"
        )));
    }
    let system = |dr: &str| {
        System::new(sc.clone(), Variant::Privacy { dr: dr.into() }).map_err(|e| match e {
            ScenarioError::ChallengeDomain(m) => PropertyError::InvalidChallengeDomains(m),
            ScenarioError::Invalid(m) => PropertyError::Scenario(m),
        })
    };
    let (s1, s2) = (system(dr1)?, system(dr2)?);
    let (r1, r2) = rayon::join(|| run_schedule(&s1, schedule, seed), || run_schedule(&s2, schedule, seed));
    let attacker = sc.distinguished_attacker().expect("validated").name.clone();
    let rep = |step| Replay {
        scenario: sc.name.clone(),
        variant: Variant::Privacy { dr: dr1.into() },
        seed,
        step,
        schedule: None,
    };
    if r1.end.status != r2.end.status || r1.end.steps != r2.end.steps {
        let step = r1.end.steps.min(r2.end.steps) + 1;
        let violation = Violation {
            kind: ViolationKind::Privacy,
            step,
            term: String::new(),
            narrative: format!(
                "the schedule behaves differently: with {dr1} the run ends {} after {} steps, with {dr2} it ends {} after {} steps",
                r1.end.status, r1.end.steps, r2.end.status, r2.end.steps
            ),
            replay: rep(step),
        };
        return Ok(PrivacyOutcome { runs: (r1, r2), violation: Some(violation), distinguisher: None });
    }
    let v1 = r1.final_state(&attacker).expect("declared").clone();
    let v2 = r2.final_state(&attacker).expect("declared").clone();
    match static_equivalence(&v1, &v2) {
        Ok(()) => Ok(PrivacyOutcome { runs: (r1, r2), violation: None, distinguisher: None }),
        Err(d) => {
            let step = r1.end.steps;
            let violation = Violation {
                kind: ViolationKind::Privacy,
                step,
                term: format!("{} = {}", encode::to_text(&d.m), encode::to_text(&d.n)),
                narrative: format!(
                    "the views of {attacker} are not statically equivalent: the test holds {} with {dr1} and {} with {dr2}",
                    if d.m1 == d.n1 { "true" } else { "false" },
                    if d.m2 == d.n2 { "true" } else { "false" },
                ),
                replay: rep(step),
            };
            Ok(PrivacyOutcome { runs: (r1, r2), violation: Some(violation), distinguisher: Some(d) })
        }
    }
}

/// The `/login` request carried by a service token record, when it can be
/// decrypted with the issuing relying party's keys.
pub fn corresponding_request(trace: &Trace, rec: &ServiceTokenRecord) -> Option<Term> {
    let (_, _, st) = trace.initial_states.iter().find(|(n, _, _)| *n == rec.rp)?;
    st.at(parties::rp::SSLKEYS).items().iter().find_map(|entry| {
        let (request, _) = http::https_unwrap_request(&rec.request_event.at(3), &entry.at(2)).ok()?;
        (request.at(req::PATH).is_str("/login") && request.at(req::METHOD).is_str(http::POST)).then_some(request)
    })
}
