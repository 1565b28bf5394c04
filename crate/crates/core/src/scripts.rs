//! The scripting processes run inside browser documents: the relying party
//! index and redirection pages, the IdP login dialog, the forwarder page and
//! the attacker script, together with the tree helper functions they use.
//!
//! A script maps its input term to an output term
//! `⟨scriptstate', cookies', localStorage', sessionStorage', command⟩` that
//! may contain script placeholders `λ_k`.

use crate::http::{self, POST, SECURE};
use crate::knowledge::eval_x;
use crate::term::{s, Term};

pub const ATT_SCRIPT: &str = "att_script";
pub const SCRIPT_RP: &str = "script_rp";
pub const SCRIPT_RP_REDIR: &str = "script_rp_redir";
pub const SCRIPT_IDP: &str = "script_idp";
pub const SCRIPT_FWD: &str = "script_fwd";

pub const HREF: &str = "HREF";
pub const IFRAME: &str = "IFRAME";
pub const FORM: &str = "FORM";
pub const SETSCRIPT: &str = "SETSCRIPT";
pub const SETSCRIPTSTATE: &str = "SETSCRIPTSTATE";
pub const XHR: &str = "XMLHTTPREQUEST";
pub const BACK: &str = "BACK";
pub const FORWARD: &str = "FORWARD";
pub const CLOSE: &str = "CLOSE";
pub const POSTMESSAGE: &str = "POSTMESSAGE";
pub const BLANK: &str = "_BLANK";
pub const SELF: &str = "_SELF";

/// Field positions of the script input term.
pub mod input {
    pub const TREE: usize = 1;
    pub const DOCNONCE: usize = 2;
    pub const SCRIPTSTATE: usize = 3;
    pub const SCRIPTINPUTS: usize = 4;
    pub const COOKIES: usize = 5;
    pub const LOCAL_STORAGE: usize = 6;
    pub const SESSION_STORAGE: usize = 7;
    pub const IDS: usize = 8;
    pub const SECRET: usize = 9;
}

/// Protocol deviations that turn the honest model into one of the shipped
/// mutants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mutations {
    /// The RP accepts `/login` requests without checking the Origin header.
    pub no_origin_check: bool,
    /// The forwarder posts the EIA without restricting the receiver origin.
    pub fwd_unrestricted_eia: bool,
    /// The RP accepts any identity assertion without checking its signature.
    pub skip_checksig: bool,
    /// The redirection page navigates without suppressing the Referer header.
    pub redir_keeps_referrer: bool,
}

impl Mutations {
    pub fn any(&self) -> bool {
        self.no_origin_check || self.fwd_unrestricted_eia || self.skip_checksig || self.redir_keeps_referrer
    }
}

/// Engine-side parameters of one script invocation.
#[derive(Clone, Copy, Debug)]
pub struct ScriptEnv<'a> {
    pub mutations: &'a Mutations,
    /// Whether `script_idp` belongs to the script set of the web system.
    pub idp_script_enabled: bool,
    /// Output recipe of the attacker script over the input variable `x`.
    pub attacker_recipe: &'a Term,
    /// 1-based index of the identity chosen by `script_rp`.
    pub identity_index: usize,
}

/// Result of looking up and running a script.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptResult {
    Output(Term),
    /// The script string does not denote a script of the web system.
    Unknown,
    /// The engine-supplied choice does not exist.
    BadChoice(String),
}

/// Runs the script named `name` on `input`.
pub fn run_script(name: &Term, input: &Term, env: &ScriptEnv) -> ScriptResult {
    match name.as_str() {
        Some(ATT_SCRIPT) => ScriptResult::Output(att_script(input, env.attacker_recipe)),
        Some(SCRIPT_RP) => script_rp(input, env.identity_index),
        Some(SCRIPT_RP_REDIR) => ScriptResult::Output(script_rp_redir(input, env.mutations)),
        Some(SCRIPT_IDP) if env.idp_script_enabled => ScriptResult::Output(script_idp(input)),
        Some(SCRIPT_FWD) => ScriptResult::Output(script_fwd(input, env.mutations)),
        _ => ScriptResult::Unknown,
    }
}

fn output(input: &Term, state: Term, command: Term) -> Term {
    Term::seq(vec![
        state,
        input.at(input::COOKIES),
        input.at(input::LOCAL_STORAGE),
        input.at(input::SESSION_STORAGE),
        command,
    ])
}

/// `URL^d_path`: the HTTPS URL of `path` at domain `d` without parameters.
pub fn https_url(d: &Term, path: &str) -> Term {
    http::url(SECURE, d, path, Term::empty())
}

// Tree helpers. Trees are cleaned window lists: each window is
// ⟨nonce, documents, opener⟩ whose documents hold at most the active
// document, either full ⟨nonce, location, referrer, script, scriptstate,
// scriptinputs, subwindows, active⟩ or limited ⟨nonce, subwindows⟩.

fn doc_subwindows(doc: &Term) -> Term {
    match doc.as_seq().map(|f| f.len()) {
        Some(8) => doc.at(7),
        Some(2) => doc.at(2),
        _ => Term::empty(),
    }
}

fn window_active_doc(w: &Term) -> Option<Term> {
    let docs = w.at(2);
    docs.items().iter().find(|d| d.as_seq().is_some_and(|f| f.len() == 2 || f[7] == Term::True)).cloned()
}

/// Visits every window of the tree in pre-order together with its parent
/// window (if any).
fn walk_windows<'a>(list: &'a Term, parent: Option<&'a Term>, f: &mut dyn FnMut(&'a Term, Option<&'a Term>)) {
    for w in list.items() {
        f(w, parent);
        for d in w.items().get(1).map(|ds| ds.items()).unwrap_or(&[]) {
            if let Some(fields) = d.as_seq() {
                let subs = match fields.len() {
                    8 => &fields[6],
                    2 => &fields[1],
                    _ => continue,
                };
                walk_windows(subs, Some(w), f);
            }
        }
    }
}

/// The window containing the document `docnonce`, with its parent window.
fn find_doc_window<'a>(tree: &'a Term, docnonce: &Term) -> Option<(&'a Term, Option<&'a Term>)> {
    let mut found = None;
    walk_windows(tree, None, &mut |w, p| {
        if found.is_none() && w.at(2).items().iter().any(|d| &d.at(1) == docnonce) {
            found = Some((w, p));
        }
    });
    found
}

fn find_doc(tree: &Term, docnonce: &Term) -> Option<Term> {
    let (w, _) = find_doc_window(tree, docnonce)?;
    w.at(2).items().iter().find(|d| &d.at(1) == docnonce).cloned()
}

/// `PARENTWINDOW`: the active document of the parent window, or `docnonce`.
pub fn parent_window(tree: &Term, docnonce: &Term) -> Term {
    match find_doc_window(tree, docnonce) {
        Some((_, Some(p))) => window_active_doc(p).map(|d| d.at(1)).unwrap_or_else(|| docnonce.clone()),
        _ => docnonce.clone(),
    }
}

/// `SUBWINDOWS`: the subwindows of a document, `⟨⟩` when not in the tree.
pub fn subwindows_of(tree: &Term, docnonce: &Term) -> Term {
    find_doc(tree, docnonce).map(|d| doc_subwindows(&d)).unwrap_or_else(Term::empty)
}

/// `AUXWINDOW`: the active document of the first window opened by the
/// window of `docnonce`, or `docnonce`.
pub fn aux_window(tree: &Term, docnonce: &Term) -> Term {
    let Some((w, _)) = find_doc_window(tree, docnonce) else {
        return docnonce.clone();
    };
    let wn = w.at(1);
    let mut result = None;
    walk_windows(tree, None, &mut |x, _| {
        if result.is_none() && x.at(3) == wn {
            result = window_active_doc(x).map(|d| d.at(1));
        }
    });
    result.unwrap_or_else(|| docnonce.clone())
}

/// `OPENERWINDOW`: the opener of the window containing `docnonce`, `♦` when
/// the document is not in the tree.
pub fn opener_window(tree: &Term, docnonce: &Term) -> Term {
    find_doc_window(tree, docnonce).map(|(w, _)| w.at(3)).unwrap_or(Term::Undef)
}

/// `GETWINDOW`: the nonce of the window containing `docnonce`, `♦` if absent.
pub fn get_window_of(tree: &Term, docnonce: &Term) -> Term {
    find_doc_window(tree, docnonce).map(|(w, _)| w.at(1)).unwrap_or(Term::Undef)
}

/// `GETORIGIN`: the origin of a (full) document, `♦` if absent.
pub fn get_origin(tree: &Term, docnonce: &Term) -> Term {
    match find_doc(tree, docnonce) {
        Some(d) if d.items().len() == 8 => {
            let loc = d.at(2);
            Term::pair(loc.at(3), loc.at(2))
        }
        _ => Term::Undef,
    }
}

/// `GETPARAMETERS`: the URL parameters of a (full) document, `♦` if absent.
pub fn get_parameters(tree: &Term, docnonce: &Term) -> Term {
    match find_doc(tree, docnonce) {
        Some(d) if d.items().len() == 8 => d.at(2).at(5),
        _ => Term::Undef,
    }
}

/// `CHOOSEINPUT`: the first input matching `pattern`, `⊥` if none.
pub fn choose_input(inputs: &Term, pattern: &Term) -> Term {
    inputs.items().iter().find(|t| t.matches(pattern)).cloned().unwrap_or(Term::Bot)
}

// script_rp scriptstate: ⟨q, loginSessionToken, refXHR, tagKey, FWDDomain⟩,
// extended by the chosen identity as sixth field.
mod rp_state {
    pub const Q: usize = 1;
    pub const LOGIN_SESSION_TOKEN: usize = 2;
    pub const REF_XHR: usize = 3;
    pub const TAG_KEY: usize = 4;
    pub const FWD_DOMAIN: usize = 5;
    pub const EMAIL: usize = 6;
}

/// `initState_rp`.
pub fn rp_initial_state() -> Term {
    Term::seq(vec![s("start"), Term::Bot, Term::Bot, Term::Bot, Term::Bot])
}

fn set_field(t: &Term, i: usize, v: Term) -> Term {
    let mut items = t.items().to_vec();
    while items.len() < i {
        items.push(Term::Bot);
    }
    items[i - 1] = v;
    Term::seq(items)
}

/// The relying party index page.
pub fn script_rp(input: &Term, identity_index: usize) -> ScriptResult {
    use rp_state::*;
    let tree = input.at(input::TREE);
    let docnonce = input.at(input::DOCNONCE);
    let inputs = input.at(input::SCRIPTINPUTS);
    let mut st = input.at(input::SCRIPTSTATE);
    let mut command = Term::empty();
    let origin = get_origin(&tree, &docnonce);
    let domain = origin.at(1);
    let fwd_origin = |st: &Term| Term::pair(st.at(FWD_DOMAIN), s(SECURE));
    let fwd_window = || subwindows_of(&tree, &aux_window(&tree, &docnonce)).at(1).at(1);
    match st.at(Q).as_str() {
        Some("start") => {
            let ids = input.at(input::IDS);
            let email = match ids.items().get(identity_index.wrapping_sub(1)) {
                Some(e) => e.clone(),
                None => {
                    return ScriptResult::BadChoice(format!(
                        "identity index {identity_index} out of range 1..={}",
                        ids.items().len()
                    ))
                }
            };
            st = set_field(&st, EMAIL, email.clone());
            st = set_field(&st, REF_XHR, Term::Lam(1));
            command = Term::seq(vec![s(XHR), https_url(&domain, "/startLogin"), s(POST), email, Term::Lam(1)]);
            st = set_field(&st, Q, s("expectStartLoginResponse"));
        }
        Some("expectStartLoginResponse") => {
            let pattern = Term::seq(vec![s(XHR), Term::Wild, st.at(REF_XHR)]);
            let inp = choose_input(&inputs, &pattern);
            if inp != Term::Bot {
                let body = inp.at(2);
                st = set_field(&st, LOGIN_SESSION_TOKEN, body.dict_get(&s("loginSessionToken")));
                st = set_field(&st, TAG_KEY, body.dict_get(&s("tagKey")));
                st = set_field(&st, FWD_DOMAIN, body.dict_get(&s("FWDDomain")));
                let params = Term::dict(vec![(s("loginSessionToken"), st.at(LOGIN_SESSION_TOKEN))]);
                command = Term::seq(vec![s(HREF), http::url(SECURE, &domain, "/redir", params), s(BLANK), Term::Bot]);
                st = set_field(&st, Q, s("expectFWDReady"));
            }
        }
        Some("expectFWDReady") => {
            let fwn = fwd_window();
            let pattern = Term::seq(vec![s(POSTMESSAGE), fwn.clone(), fwd_origin(&st), s("ready")]);
            if choose_input(&inputs, &pattern) != Term::Bot {
                command =
                    Term::seq(vec![s(POSTMESSAGE), fwn, Term::pair(s("tagKey"), st.at(TAG_KEY)), fwd_origin(&st)]);
                st = set_field(&st, Q, s("expectEIA"));
            }
        }
        Some("expectEIA") => {
            let fwn = fwd_window();
            let pattern = Term::seq(vec![s(POSTMESSAGE), fwn, fwd_origin(&st), Term::pair(s("eia"), Term::Wild)]);
            let inp = choose_input(&inputs, &pattern);
            if inp != Term::Bot {
                let eia = inp.at(4).at(2);
                st = set_field(&st, REF_XHR, Term::Lam(1));
                let body = Term::dict(vec![(s("eia"), eia), (s("loginSessionToken"), st.at(LOGIN_SESSION_TOKEN))]);
                command = Term::seq(vec![s(XHR), https_url(&domain, "/login"), s(POST), body, Term::Lam(1)]);
                st = set_field(&st, Q, s("expectServiceToken"));
            }
        }
        _ => {}
    }
    ScriptResult::Output(output(input, st, command))
}

/// The relying party redirection page: navigates its own window to the URL
/// held as scriptstate with the Referer suppressed.
pub fn script_rp_redir(input: &Term, mutations: &Mutations) -> Term {
    let st = input.at(input::SCRIPTSTATE);
    let noreferrer = Term::boolean(!mutations.redir_keeps_referrer);
    let command = Term::seq(vec![s(HREF), st.clone(), Term::Bot, noreferrer]);
    output(input, st, command)
}

/// `⟨start, email⟩`: initial scriptstate of the login dialog.
pub fn idp_initial_state(email: Term) -> Term {
    Term::seq(vec![s("start"), email, Term::empty()])
}

/// The IdP login dialog.
pub fn script_idp(input: &Term) -> Term {
    let tree = input.at(input::TREE);
    let docnonce = input.at(input::DOCNONCE);
    let mut st = input.at(input::SCRIPTSTATE);
    let mut command = Term::empty();
    let origin = get_origin(&tree, &docnonce);
    let params = get_parameters(&tree, &docnonce);
    match st.at(1).as_str() {
        Some("start") => {
            let body = Term::dict(vec![
                (s("email"), params.dict_get(&s("email"))),
                (s("password"), input.at(input::SECRET)),
                (s("tag"), params.dict_get(&s("tag"))),
                (s("FWDDomain"), params.dict_get(&s("FWDDomain"))),
            ]);
            command = Term::seq(vec![s(XHR), https_url(&origin.at(1), "/sign"), s(POST), body, Term::Bot]);
            st = set_field(&st, 1, s("expectIA"));
        }
        Some("expectIA") => {
            let pattern = Term::seq(vec![s(XHR), Term::Wild, Term::Wild]);
            let inp = choose_input(&input.at(input::SCRIPTINPUTS), &pattern);
            if inp != Term::Bot {
                let ia_key = params.dict_get(&s("iaKey"));
                let fwd = params.dict_get(&s("FWDDomain"));
                let tag = params.dict_get(&s("tag"));
                let eia = Term::enc_s(inp.at(2), ia_key);
                let url = http::url(SECURE, &fwd, "/", Term::dict(vec![(s("tag"), tag), (s("eia"), eia)]));
                command = Term::seq(vec![s(IFRAME), url, s(SELF)]);
                st = set_field(&st, 1, s("stop"));
            }
        }
        _ => {}
    }
    output(input, st, command)
}

/// The forwarder page.
pub fn script_fwd(input: &Term, mutations: &Mutations) -> Term {
    let tree = input.at(input::TREE);
    let docnonce = input.at(input::DOCNONCE);
    let mut st = input.at(input::SCRIPTSTATE);
    let mut command = Term::empty();
    let target = opener_window(&tree, &parent_window(&tree, &docnonce));
    match st.as_str() {
        Some("start") => {
            command = Term::seq(vec![s(POSTMESSAGE), target, s("ready"), Term::Bot]);
            st = s("expectTagKey");
        }
        Some("expectTagKey") => {
            let pattern =
                Term::seq(vec![s(POSTMESSAGE), target.clone(), Term::Wild, Term::pair(s("tagKey"), Term::Wild)]);
            let inp = choose_input(&input.at(input::SCRIPTINPUTS), &pattern);
            if inp != Term::Bot {
                let tag_key = inp.at(4).at(2);
                let params = get_parameters(&tree, &docnonce);
                let tag = params.dict_get(&s("tag"));
                let eia = params.dict_get(&s("eia"));
                let rp_origin = Term::pair(Term::dec_s(tag, tag_key).proj(1), s(SECURE));
                let receiver = if mutations.fwd_unrestricted_eia { Term::Bot } else { rp_origin };
                command = Term::seq(vec![s(POSTMESSAGE), target, Term::pair(s("eia"), eia), receiver]);
                st = s("stop");
            }
        }
        _ => {}
    }
    output(input, st, command)
}

/// The attacker script: its output is the recipe evaluated on the input.
pub fn att_script(input: &Term, recipe: &Term) -> Term {
    eval_x(recipe, input).unwrap_or_else(|_| Term::empty())
}
