//! The web browser atomic process: state layout, window and document
//! pointers, the helper functions over the window tree, and the main
//! input-processing algorithm with SEND, RUNSCRIPT and PROCESSRESPONSE.
//!
//! States are plain terms. Fresh values are produced as process
//! placeholders `ν_k` following the fixed placeholder list of the browser
//! model; the runtime replaces them by nonces after each step.

use crate::http::{self, req, resp, GET, HEAD, HTTP_RESP, POST, SECURE};
use crate::scripts::{self, ScriptEnv, ScriptResult};
use crate::term::{s as sv, Term};

/// Field positions of the browser state.
pub mod field {
    pub const WINDOWS: usize = 1;
    pub const IDS: usize = 2;
    pub const SECRETS: usize = 3;
    pub const COOKIES: usize = 4;
    pub const LOCAL_STORAGE: usize = 5;
    pub const SESSION_STORAGE: usize = 6;
    pub const KEY_MAPPING: usize = 7;
    pub const STS: usize = 8;
    pub const DNS_ADDRESS: usize = 9;
    pub const PENDING_DNS: usize = 10;
    pub const PENDING_REQUESTS: usize = 11;
    pub const IS_CORRUPTED: usize = 12;
    /// Present only in challenge browsers.
    pub const CHALLENGE: usize = 13;
}

/// Field positions of documents.
pub mod doc {
    pub const NONCE: usize = 1;
    pub const LOCATION: usize = 2;
    pub const REFERRER: usize = 3;
    pub const SCRIPT: usize = 4;
    pub const SCRIPTSTATE: usize = 5;
    pub const SCRIPTINPUTS: usize = 6;
    pub const SUBWINDOWS: usize = 7;
    pub const ACTIVE: usize = 8;
}

/// The domain that challenge browsers redirect to their parameter domain.
pub const CHALLENGE_DOMAIN: &str = "CHALLENGE";

/// A pointer into the browser state: a path of 1-based sequence indices.
pub type Ptr = Vec<usize>;

/// Builds an initial browser state.
#[allow(clippy::too_many_arguments)]
pub fn initial_state(ids: Term, secrets: Term, key_mapping: Term, dns_address: Term, challenge: bool) -> Term {
    let mut f = vec![
        Term::empty(),
        ids,
        secrets,
        Term::empty(),
        Term::empty(),
        Term::empty(),
        key_mapping,
        Term::empty(),
        dns_address,
        Term::empty(),
        Term::empty(),
        Term::Bot,
    ];
    if challenge {
        f.push(Term::True);
    }
    Term::seq(f)
}

/// Static parameters of a browser process.
#[derive(Clone, Copy, Debug)]
pub struct BrowserConfig<'a> {
    /// Parameter domain `dr` of a challenge browser.
    pub challenge_domain: Option<&'a Term>,
    /// Whether corruption messages are ignored.
    pub ignore_corruption: bool,
}

/// Engine-supplied choices for a TRIGGER message.
#[derive(Clone, Copy, Debug)]
pub struct Choices<'a> {
    pub switch: u8,
    pub window: usize,
    pub url: Option<&'a Term>,
    pub script: ScriptEnv<'a>,
}

/// Result of one browser step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// A regular step: new state and output events, with the number of
    /// postMessages delivered into documents.
    Step { state: Term, events: Vec<Term>, postmessages: usize },
    /// The browser is corrupted: the input was recorded into the state and
    /// the outputs are chosen by the attacker.
    Corrupted { state: Term },
    /// The engine choices do not denote a processing step.
    NotInduced(String),
}

struct Stop {
    state: Term,
    events: Vec<Term>,
    postmessages: usize,
}

fn stop(state: Term) -> Stop {
    Stop { state, events: Vec::new(), postmessages: 0 }
}

fn get(t: &Term, p: &[usize]) -> Term {
    t.subterm_at(p)
}

fn set(t: &Term, p: &[usize], v: Term) -> Term {
    t.set_subterm(p, v).expect("browser pointer resolves")
}

fn cat(p: &[usize], q: &[usize]) -> Ptr {
    let mut v = p.to_vec();
    v.extend_from_slice(q);
    v
}

/// `d.origin` of a full document.
pub fn doc_origin(d: &Term) -> Term {
    let loc = d.at(doc::LOCATION);
    Term::pair(loc.at(3), loc.at(2))
}

/// 1-based index of the active document of a window term.
pub fn active_index(w: &Term) -> Option<usize> {
    w.at(2).items().iter().position(|d| d.at(doc::ACTIVE) == Term::True).map(|i| i + 1)
}

fn active_doc_ptr(s: &Term, w: &[usize]) -> Option<Ptr> {
    active_index(&get(s, w)).map(|j| cat(w, &[2, j]))
}

fn active_origin(s: &Term, w: &[usize]) -> Option<Term> {
    active_doc_ptr(s, w).map(|d| doc_origin(&get(s, &d)))
}

fn window_nonce(s: &Term, w: &[usize]) -> Term {
    get(s, &cat(w, &[1]))
}

/// `Subwindows(s)`: pointers to all windows reachable through active
/// documents, in depth-first pre-order.
pub fn subwindows(s: &Term) -> Vec<Ptr> {
    fn walk(s: &Term, list: Ptr, out: &mut Vec<Ptr>) {
        let n = get(s, &list).items().len();
        for i in 1..=n {
            let wp = cat(&list, &[i]);
            out.push(wp.clone());
            if let Some(j) = active_index(&get(s, &wp)) {
                walk(s, cat(&wp, &[2, j, doc::SUBWINDOWS]), out);
            }
        }
    }
    let mut out = Vec::new();
    walk(s, vec![field::WINDOWS], &mut out);
    out
}

/// The window pointer containing the window `w`, if `w` is a subwindow.
fn parent(w: &[usize]) -> Option<Ptr> {
    (w.len() > 2).then(|| w[..w.len() - 4].to_vec())
}

fn is_strict_ancestor(a: &[usize], w: &[usize]) -> bool {
    let mut cur = parent(w);
    while let Some(p) = cur {
        if p == a {
            return true;
        }
        cur = parent(&p);
    }
    false
}

/// `Clean(s, d)`: the window list with inactive documents removed and
/// documents not same-origin with `d` replaced by limited documents.
pub fn clean(s: &Term, d: &Term) -> Term {
    fn clean_list(list: &Term, origin: &Term) -> Term {
        Term::seq(
            list.items()
                .iter()
                .map(|w| {
                    let docs = match active_index(w) {
                        Some(j) => Term::seq(vec![clean_doc(&w.at(2).at(j), origin)]),
                        None => Term::empty(),
                    };
                    Term::seq(vec![w.at(1), docs, w.at(3)])
                })
                .collect(),
        )
    }
    fn clean_doc(d: &Term, origin: &Term) -> Term {
        let subs = clean_list(&d.at(doc::SUBWINDOWS), origin);
        if &doc_origin(d) == origin {
            d.with_field(doc::SUBWINDOWS, subs)
        } else {
            Term::pair(d.at(doc::NONCE), subs)
        }
    }
    clean_list(&s.at(field::WINDOWS), &doc_origin(d))
}

/// `NavigableWindows(w, s)` in tree order.
pub fn navigable_windows(w: &[usize], s: &Term) -> Vec<Ptr> {
    let all = subwindows(s);
    let ow = active_origin(s, w);
    let same = |p: &[usize]| ow.is_some() && active_origin(s, p) == ow;
    let mut inset = vec![false; all.len()];
    loop {
        let mut changed = false;
        for (k, wp) in all.iter().enumerate() {
            if inset[k] {
                continue;
            }
            let top = wp.len() == 2;
            let mut ok = same(wp) || (top && is_strict_ancestor(wp, w));
            if !ok {
                let mut cur = parent(wp);
                while let Some(p) = cur {
                    if same(&p) {
                        ok = true;
                        break;
                    }
                    cur = parent(&p);
                }
            }
            if !ok {
                let opener = get(s, &cat(wp, &[3]));
                ok = all.iter().zip(&inset).any(|(p, &i)| i && window_nonce(s, p) == opener);
            }
            if ok {
                inset[k] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    all.into_iter().zip(inset).filter(|(_, i)| *i).map(|(p, _)| p).collect()
}

/// `GETNAVIGABLEWINDOW`: the window navigated by a script in `w`.
pub fn get_navigable_window(w: &[usize], window: &Term, noreferrer: &Term, s: Term) -> (Ptr, Term) {
    if window.is_str(scripts::BLANK) {
        let opener = if *noreferrer == Term::Bot { window_nonce(&s, w) } else { Term::Bot };
        let nw = Term::seq(vec![Term::Nu(9), Term::empty(), opener]);
        let windows = s.at(field::WINDOWS).push(nw);
        let len = windows.items().len();
        return (vec![field::WINDOWS, len], s.with_field(field::WINDOWS, windows));
    }
    let found = navigable_windows(w, &s).into_iter().find(|p| &window_nonce(&s, p) == window);
    (found.unwrap_or_else(|| w.to_vec()), s)
}

/// `GETWINDOW`: a same-origin window with the given nonce, or `w`.
pub fn get_window(w: &[usize], window: &Term, s: &Term) -> Ptr {
    match subwindows(s).into_iter().find(|p| &window_nonce(s, p) == window) {
        Some(p) => {
            let o = active_origin(s, &p);
            if o.is_some() && o == active_origin(s, w) {
                p
            } else {
                w.to_vec()
            }
        }
        None => w.to_vec(),
    }
}

/// `CANCELNAV`: drops pending requests and DNS lookups of window `n`.
pub fn cancel_nav(n: &Term, s: Term) -> Term {
    let pr = Term::seq(
        s.at(field::PENDING_REQUESTS)
            .items()
            .iter()
            .filter(|e| !(e.items().len() == 4 && &e.at(1) == n))
            .cloned()
            .collect(),
    );
    let pd = Term::seq(
        s.at(field::PENDING_DNS)
            .items()
            .iter()
            .filter(|e| !(e.at(2).items().len() == 3 && &e.at(2).at(1) == n))
            .cloned()
            .collect(),
    );
    s.with_field(field::PENDING_REQUESTS, pr).with_field(field::PENDING_DNS, pd)
}

fn cookie_flag(c: &Term, i: usize) -> Term {
    c.at(2).at(i)
}

/// `CookieMerge(old, new)`. Malformed entries of `new` are ignored.
pub fn cookie_merge(old: &Term, new: &Term) -> Term {
    let mut newc: Vec<Term> = Vec::new();
    for c in new.items().iter().filter(|c| http::is_cookie(c) && cookie_flag(c, 4) != Term::True) {
        newc.retain(|x| x.at(1) != c.at(1));
        newc.push(c.clone());
    }
    let mut m: Vec<Term> = Vec::new();
    for o in old.items() {
        match newc.iter().find(|n| n.at(1) == o.at(1)) {
            Some(n) if cookie_flag(o, 4) == Term::Bot => m.push(n.clone()),
            _ => m.push(o.clone()),
        }
    }
    for n in &newc {
        if !old.items().iter().any(|o| o.at(1) == n.at(1)) {
            m.push(n.clone());
        }
    }
    Term::seq(m)
}

/// `AddCookie(old, c)`.
pub fn add_cookie(old: &Term, c: &Term) -> Term {
    let mut m: Vec<Term> = old.items().iter().filter(|x| x.at(1) != c.at(1)).cloned().collect();
    m.push(c.clone());
    Term::seq(m)
}

struct Ctx<'a> {
    a: &'a Term,
    f: &'a Term,
    /// The state the step started from.
    s: &'a Term,
    cfg: &'a BrowserConfig<'a>,
}

/// `SEND`: adds headers, records the request under `ν8` and asks the DNS
/// server for the host.
pub fn send(
    a: &Term,
    cfg: &BrowserConfig,
    reference: Term,
    message: Term,
    protocol: &Term,
    origin: Term,
    referrer: Term,
    s: Term,
) -> (Term, Vec<Term>) {
    let mut s = s;
    let mut message = message;
    let mut protocol = protocol.clone();
    if s.items().len() >= field::CHALLENGE
        && message.at(req::HOST).is_str(CHALLENGE_DOMAIN)
        && s.at(field::CHALLENGE) != Term::Bot
    {
        if let Some(dr) = cfg.challenge_domain {
            message = message.with_field(req::HOST, dr.clone());
            s = s.with_field(field::CHALLENGE, Term::Bot);
        }
    }
    let host = message.at(req::HOST);
    if s.at(field::STS).contains_item(&host) {
        protocol = sv(SECURE);
    }
    let cookies = Term::seq(
        s.at(field::COOKIES)
            .dict_get(&host)
            .items()
            .iter()
            .filter(|c| cookie_flag(c, 2) != Term::True || protocol.is_str(SECURE))
            .map(|c| Term::pair(c.at(1), c.at(2).at(1)))
            .collect(),
    );
    let mut headers = message.at(req::HEADERS).dict_put(sv(http::H_COOKIE), cookies);
    if origin != Term::Bot {
        headers = headers.dict_put(sv(http::H_ORIGIN), origin);
    }
    if referrer != Term::Bot {
        headers = headers.dict_put(sv(http::H_REFERER), referrer);
    }
    message = message.with_field(req::HEADERS, headers);
    let pd = s.at(field::PENDING_DNS).dict_put(Term::Nu(8), Term::seq(vec![reference, message, protocol]));
    let s = s.with_field(field::PENDING_DNS, pd);
    let ev = Term::seq(vec![s.at(field::DNS_ADDRESS), a.clone(), http::dns_request(&host, Term::Nu(8))]);
    (s, vec![ev])
}

fn send_stop(
    ctx: &Ctx,
    reference: Term,
    message: Term,
    protocol: &Term,
    origin: Term,
    referrer: Term,
    s: Term,
) -> Stop {
    let (state, events) = send(ctx.a, ctx.cfg, reference, message, protocol, origin, referrer, s);
    Stop { state, events, postmessages: 0 }
}

fn get_request(nonce: Term, method: &Term, url: &Term, params: Term, body: Term) -> Term {
    http::request(nonce, method, &url.at(3), &url.at(4), params, Term::empty(), body)
}

fn replace_lambdas(t: &Term) -> Term {
    t.map_atoms_raw(&mut |x| match x {
        Term::Lam(k) => Some(Term::Nu(9 + k)),
        _ => None,
    })
}

/// `RUNSCRIPT` on the active document `d` of window `w`.
/// The input of the script of document `d` in window `w`, with the origin,
/// top-level window key and document it was built from.
fn build_script_input(s: &Term, w: &[usize], d: &[usize]) -> (Term, Term, Term, Term) {
    let document = get(s, d);
    let origin = doc_origin(&document);
    let host = origin.at(1);
    let tree = clean(s, &document);
    let cookies = Term::seq(
        s.at(field::COOKIES)
            .dict_get(&host)
            .items()
            .iter()
            .filter(|c| {
                cookie_flag(c, 4) == Term::Bot && (cookie_flag(c, 2) != Term::True || origin.at(2).is_str(SECURE))
            })
            .map(|c| Term::pair(c.at(1), c.at(2).at(1)))
            .collect(),
    );
    let tlw = window_nonce(s, &w[..2]);
    let ss_key = Term::pair(origin.clone(), tlw);
    let session_storage = s.at(field::SESSION_STORAGE).dict_get(&ss_key);
    let local_storage = s.at(field::LOCAL_STORAGE).dict_get(&origin);
    let secret = s.at(field::SECRETS).dict_get(&origin);
    let input = Term::seq(vec![
        tree,
        document.at(doc::NONCE),
        document.at(doc::SCRIPTSTATE),
        document.at(doc::SCRIPTINPUTS),
        cookies,
        local_storage,
        session_storage,
        s.at(field::IDS),
        secret,
    ]);
    (input, origin, ss_key, document)
}

/// The input the script of the active document of window `window` (in
/// window order) would receive, if that window has an active document.
pub fn script_input(s: &Term, window: usize) -> Option<Term> {
    let w = choose_window(s, window).ok()?;
    let d = active_doc_ptr(s, &w)?;
    Some(build_script_input(s, &w, &d).0)
}

fn run_script(ctx: &Ctx, w: &[usize], d: &[usize], s: Term, env: &ScriptEnv) -> Result<Stop, String> {
    let (input, origin, ss_key, document) = build_script_input(&s, w, d);
    let host = origin.at(1);
    let out = match scripts::run_script(&document.at(doc::SCRIPT), &input, env) {
        ScriptResult::Output(o) => o,
        ScriptResult::Unknown => return Ok(stop(s)),
        ScriptResult::BadChoice(msg) => return Err(msg),
    };
    if out.as_seq().map(|f| f.len()) != Some(5) {
        return Ok(stop(s));
    }
    let out = replace_lambdas(&out);
    let merged = cookie_merge(&s.at(field::COOKIES).dict_get(&host), &out.at(2));
    let s = s
        .with_field(field::COOKIES, s.at(field::COOKIES).dict_put(host.clone(), merged))
        .with_field(field::LOCAL_STORAGE, s.at(field::LOCAL_STORAGE).dict_put(origin.clone(), out.at(3)));
    let s = s.with_field(field::SESSION_STORAGE, s.at(field::SESSION_STORAGE).dict_put(ss_key, out.at(4)));
    let s = set(&s, &cat(d, &[doc::SCRIPTSTATE]), out.at(1));
    let command = out.at(5);
    let location = document.at(doc::LOCATION);
    let cmd = command.items();
    let kind = cmd.first().and_then(|c| c.as_str()).unwrap_or("");
    Ok(match (kind, cmd.len()) {
        (scripts::HREF, 4) => {
            let (url, hrefwindow, noreferrer) = (&cmd[1], &cmd[2], &cmd[3]);
            if !http::is_url(url) {
                return Ok(stop(s));
            }
            let (wp, s) = get_navigable_window(w, hrefwindow, noreferrer, s);
            let request = get_request(Term::Nu(4), &sv(GET), url, url.at(5), Term::empty());
            let referrer = if *noreferrer == Term::Bot { location } else { Term::Bot };
            let wn = window_nonce(&s, &wp);
            let s = cancel_nav(&wn, s);
            send_stop(ctx, wn, request, &url.at(2), Term::Bot, referrer, s)
        }
        (scripts::IFRAME, 3) => {
            let (url, window) = (&cmd[1], &cmd[2]);
            if !http::is_url(url) {
                return Ok(stop(s));
            }
            let wp = get_window(w, window, &s);
            let request = get_request(Term::Nu(4), &sv(GET), url, url.at(5), Term::empty());
            let Some(ad) = active_doc_ptr(&s, &wp) else {
                return Ok(stop(s));
            };
            let referrer = get(&s, &cat(&ad, &[doc::LOCATION]));
            let sp = cat(&ad, &[doc::SUBWINDOWS]);
            let subs = get(&s, &sp).push(Term::seq(vec![Term::Nu(5), Term::empty(), Term::Bot]));
            let s = set(&s, &sp, subs);
            send_stop(ctx, Term::Nu(5), request, &url.at(2), Term::Bot, referrer, s)
        }
        (scripts::FORM, 5) => {
            let (url, method, data, hrefwindow) = (&cmd[1], &cmd[2], &cmd[3], &cmd[4]);
            if !(method.is_str(GET) || method.is_str(POST)) || !http::is_url(url) {
                return Ok(stop(s));
            }
            let (wp, s) = get_navigable_window(w, hrefwindow, &Term::Bot, s);
            let (body, params, origin) = if method.is_str(GET) {
                (Term::empty(), data.clone(), Term::Bot)
            } else {
                (data.clone(), url.at(5), origin)
            };
            let request = get_request(Term::Nu(4), method, url, params, body);
            let wn = window_nonce(&s, &wp);
            let s = cancel_nav(&wn, s);
            send_stop(ctx, wn, request, &url.at(2), origin, location, s)
        }
        (scripts::SETSCRIPT, 3) | (scripts::SETSCRIPTSTATE, 3) => {
            let wp = get_window(w, &cmd[1], &s);
            let Some(ad) = active_doc_ptr(&s, &wp) else {
                return Ok(stop(s));
            };
            let f = if kind == scripts::SETSCRIPT { doc::SCRIPT } else { doc::SCRIPTSTATE };
            stop(set(&s, &cat(&ad, &[f]), cmd[2].clone()))
        }
        (scripts::XHR, 5) => {
            let (url, method, data, xhrref) = (&cmd[1], &cmd[2], &cmd[3], &cmd[4]);
            let forbidden = ["CONNECT", "TRACE", "TRACK"].iter().any(|m| method.is_str(m));
            let ref_ok = matches!(xhrref, Term::Nonce(_) | Term::Nu(_) | Term::Bot);
            if forbidden || !ref_ok || !http::is_method(method) || !http::is_url(url) {
                return Ok(stop(s));
            }
            if url.at(3) != origin.at(1) || url.at(2) != origin.at(2) {
                return Ok(stop(s));
            }
            let (data, origin) = if method.is_str(GET) || method.is_str(HEAD) {
                (Term::empty(), Term::Bot)
            } else {
                (data.clone(), origin)
            };
            let request = get_request(Term::Nu(4), method, url, url.at(5), data);
            let reference = Term::pair(document.at(doc::NONCE), xhrref.clone());
            send_stop(ctx, reference, request, &url.at(2), origin, location, s)
        }
        (scripts::BACK, 2) | (scripts::FORWARD, 2) => {
            let (wp, s) = get_navigable_window(w, &cmd[1], &Term::Bot, s);
            let docs = get(&s, &cat(&wp, &[2]));
            let n = docs.items().len();
            let target = match active_index(&get(&s, &wp)) {
                Some(j) if kind == scripts::BACK && j > 1 => Some((j, j - 1)),
                Some(j) if kind == scripts::FORWARD && j < n => Some((j, j + 1)),
                _ => None,
            };
            match target {
                Some((from, to)) => {
                    let s = set(&s, &cat(&wp, &[2, from, doc::ACTIVE]), Term::Bot);
                    let s = set(&s, &cat(&wp, &[2, to, doc::ACTIVE]), Term::True);
                    let wn = window_nonce(&s, &wp);
                    stop(cancel_nav(&wn, s))
                }
                None => stop(s),
            }
        }
        (scripts::CLOSE, 2) => {
            let (wp, s) = get_navigable_window(w, &cmd[1], &Term::Bot, s);
            let (list, idx) = wp.split_at(wp.len() - 1);
            let mut items = get(&s, list).items().to_vec();
            items.remove(idx[0] - 1);
            stop(set(&s, list, Term::seq(items)))
        }
        (scripts::POSTMESSAGE, 4) => {
            let (window, message, pm_origin) = (&cmd[1], &cmd[2], &cmd[3]);
            let Some(wp) = subwindows(&s).into_iter().find(|p| &window_nonce(&s, p) == window) else {
                return Ok(stop(s));
            };
            let Some(ad) = active_doc_ptr(&s, &wp) else {
                return Ok(stop(s));
            };
            if *pm_origin != Term::Bot && doc_origin(&get(&s, &ad)) != *pm_origin {
                return Ok(stop(s));
            }
            let ip = cat(&ad, &[doc::SCRIPTINPUTS]);
            let entry = Term::seq(vec![sv(scripts::POSTMESSAGE), window_nonce(&s, w), origin, message.clone()]);
            let inputs = get(&s, &ip).push(entry);
            Stop { state: set(&s, &ip, inputs), events: Vec::new(), postmessages: 1 }
        }
        _ => stop(s),
    })
}

/// `PROCESSRESPONSE`.
fn process_response(ctx: &Ctx, response: &Term, reference: &Term, request: &Term, protocol: &str, s: Term) -> Stop {
    let mut s = s;
    let headers = response.at(resp::HEADERS);
    let host = request.at(req::HOST);
    if headers.dict_has(&sv(http::H_SET_COOKIE)) {
        for c in headers.dict_get(&sv(http::H_SET_COOKIE)).items() {
            if http::is_cookie(c) {
                let jar = add_cookie(&s.at(field::COOKIES).dict_get(&host), c);
                s = s.with_field(field::COOKIES, s.at(field::COOKIES).dict_put(host.clone(), jar));
            }
        }
    }
    if headers.dict_has(&sv(http::H_STS)) && protocol == SECURE && !s.at(field::STS).contains_item(&host) {
        s = s.with_field(field::STS, s.at(field::STS).push(host.clone()));
    }
    let rh = request.at(req::HEADERS);
    let referrer = if rh.dict_has(&sv(http::H_REFERER)) { rh.dict_get(&sv(http::H_REFERER)) } else { Term::Bot };
    let status = response.at(resp::STATUS);
    let window = subwindows(&s).into_iter().find(|p| &window_nonce(&s, p) == reference);
    if headers.dict_has(&sv(http::H_LOCATION)) && (status.is_str("303") || status.is_str("307")) {
        let url = headers.dict_get(&sv(http::H_LOCATION));
        let mut method = request.at(req::METHOD);
        let mut body = request.at(req::BODY);
        let origin = if rh.dict_has(&sv(http::H_ORIGIN)) {
            Term::pair(rh.dict_get(&sv(http::H_ORIGIN)), Term::pair(host.clone(), sv(protocol)))
        } else {
            Term::Bot
        };
        if status.is_str("303") && !(method.is_str(GET) || method.is_str(HEAD)) {
            method = sv(GET);
            body = Term::empty();
        }
        if window.is_none() {
            return stop(ctx.s.clone());
        }
        if !http::is_url(&url) {
            return stop(s);
        }
        let r = get_request(Term::Nu(6), &method, &url, url.at(5), body);
        return send_stop(ctx, reference.clone(), r, &url.at(2), origin, referrer, s);
    }
    if let Some(wp) = window {
        let location =
            Term::seq(vec![sv(http::URL), sv(protocol), host, request.at(req::PATH), request.at(req::PARAMS)]);
        let body = response.at(resp::BODY);
        if !body.matches(&Term::pair(Term::Wild, Term::Wild)) {
            return stop(s);
        }
        let d = Term::seq(vec![
            Term::Nu(7),
            location,
            referrer,
            body.at(1),
            body.at(2),
            Term::empty(),
            Term::empty(),
            Term::True,
        ]);
        let dp = cat(&wp, &[2]);
        let docs = get(&s, &dp);
        let new_docs = match active_index(&get(&s, &wp)) {
            None => Term::seq(vec![d]),
            Some(i) => {
                let mut items = docs.items()[..i].to_vec();
                items[i - 1] = items[i - 1].with_field(doc::ACTIVE, Term::Bot);
                items.push(d);
                Term::seq(items)
            }
        };
        return stop(set(&s, &dp, new_docs));
    }
    let target = reference.at(1);
    let doc_ptr = subwindows(&s)
        .into_iter()
        .filter_map(|p| active_doc_ptr(&s, &p))
        .find(|d| get(&s, &cat(d, &[doc::NONCE])) == target);
    if let Some(d) = doc_ptr {
        let ip = cat(&d, &[doc::SCRIPTINPUTS]);
        let entry = Term::seq(vec![sv(scripts::XHR), response.at(resp::BODY), reference.at(2)]);
        let inputs = get(&s, &ip).push(entry);
        s = set(&s, &ip, inputs);
    }
    stop(s)
}

fn choose_window(s: &Term, index: usize) -> Result<Ptr, String> {
    let all = subwindows(s);
    all.get(index.wrapping_sub(1))
        .cloned()
        .ok_or_else(|| format!("window index {index} out of range 1..={}", all.len()))
}

/// The main algorithm of the browser for input event `⟨a, f, m⟩`.
pub fn step(state: &Term, event: &Term, cfg: &BrowserConfig, choices: &Choices) -> Outcome {
    let a = event.at(1);
    let f = event.at(2);
    let m = event.at(3);
    let ctx = Ctx { a: &a, f: &f, s: state, cfg };
    match main(&ctx, &m, choices) {
        Ok(Main::Stop(st)) => Outcome::Step { state: st.state, events: st.events, postmessages: st.postmessages },
        Ok(Main::Corrupted(state)) => Outcome::Corrupted { state },
        Err(e) => Outcome::NotInduced(e),
    }
}

enum Main {
    Stop(Stop),
    Corrupted(Term),
}

fn main(ctx: &Ctx, m: &Term, ch: &Choices) -> Result<Main, String> {
    let s0 = ctx.s;
    let s = s0.clone();
    if s.at(field::IS_CORRUPTED) != Term::Bot {
        let pr = Term::pair(m.clone(), s.at(field::PENDING_REQUESTS));
        return Ok(Main::Corrupted(s.with_field(field::PENDING_REQUESTS, pr)));
    }
    let done = |st: Stop| Ok(Main::Stop(st));
    if m.is_str(http::TRIGGER) {
        return match ch.switch {
            1 => {
                let w = choose_window(&s, ch.window)?;
                let Some(d) = active_doc_ptr(&s, &w) else {
                    return done(stop(s));
                };
                done(run_script(ctx, &w, &d, s, &ch.script)?)
            }
            2 => {
                let url = ch.url.filter(|u| http::is_url(u)).ok_or("switch 2 needs a well-formed url")?;
                let windows = s.at(field::WINDOWS).push(Term::seq(vec![Term::Nu(1), Term::empty(), Term::Bot]));
                let s = s.with_field(field::WINDOWS, windows);
                let request = get_request(Term::Nu(2), &sv(GET), url, url.at(5), Term::empty());
                done(send_stop(ctx, Term::Nu(1), request, &url.at(2), Term::Bot, Term::Bot, s))
            }
            3 => {
                let w = choose_window(&s, ch.window)?;
                let Some(d) = active_doc_ptr(&s, &w) else {
                    return done(stop(s));
                };
                let document = get(&s, &d);
                let url = document.at(doc::LOCATION);
                let request = get_request(Term::Nu(2), &sv(GET), &url, url.at(5), Term::empty());
                let wn = window_nonce(&s, &w);
                let s = cancel_nav(&wn, s);
                done(send_stop(ctx, wn, request, &url.at(2), Term::Bot, document.at(doc::REFERRER), s))
            }
            k => Err(format!("switch {k} is not one of 1, 2, 3")),
        };
    }
    if m.is_str(http::FULLCORRUPT) || m.is_str(http::CLOSECORRUPT) {
        if ctx.cfg.ignore_corruption {
            return done(stop(s));
        }
        if m.is_str(http::FULLCORRUPT) {
            return done(stop(s.with_field(field::IS_CORRUPTED, sv(http::FULLCORRUPT))));
        }
        let cookies = Term::seq(
            s.at(field::COOKIES)
                .items()
                .iter()
                .map(|e| {
                    let kept = e.at(2).items().iter().filter(|c| cookie_flag(c, 3) == Term::Bot).cloned().collect();
                    Term::pair(e.at(1), Term::seq(kept))
                })
                .collect(),
        );
        let s = s
            .with_field(field::SECRETS, Term::empty())
            .with_field(field::WINDOWS, Term::empty())
            .with_field(field::PENDING_DNS, Term::empty())
            .with_field(field::PENDING_REQUESTS, Term::empty())
            .with_field(field::SESSION_STORAGE, Term::empty())
            .with_field(field::COOKIES, cookies)
            .with_field(field::IS_CORRUPTED, sv(http::CLOSECORRUPT));
        return done(stop(s));
    }
    let pending = s.at(field::PENDING_REQUESTS);
    for entry in pending.items() {
        if entry.items().len() != 4 || &entry.at(4) != ctx.f {
            continue;
        }
        let key = entry.at(3);
        let plain = Term::dec_s(m.clone(), key);
        if plain.at(1).is_str(HTTP_RESP) {
            let request = entry.at(2);
            if plain.at(resp::NONCE) != request.at(req::NONCE) {
                return done(stop(s0.clone()));
            }
            let s = s.with_field(field::PENDING_REQUESTS, pending.remove_item(entry));
            return done(process_response(ctx, &plain, &entry.at(1), &request, SECURE, s));
        }
    }
    if m.at(1).is_str(HTTP_RESP) {
        let found = pending.items().iter().find(|e| {
            e.items().len() == 4
                && e.at(3) == Term::Bot
                && &e.at(4) == ctx.f
                && m.at(resp::NONCE) == e.at(2).at(req::NONCE)
        });
        if let Some(entry) = found {
            let s = s.with_field(field::PENDING_REQUESTS, pending.remove_item(entry));
            return done(process_response(ctx, m, &entry.at(1), &entry.at(2), http::PLAIN, s));
        }
    }
    if m.items().len() == 4 && m.at(1).is_str(http::DNS_RESOLVED) {
        let (domain, result, n) = (m.at(2), m.at(3), m.at(4));
        let pd = s.at(field::PENDING_DNS);
        if !pd.dict_has(&n) || !result.is_ip() || pd.dict_get(&n).at(2).at(req::HOST) != domain {
            return done(stop(s0.clone()));
        }
        let rec = pd.dict_get(&n);
        let (reference, message, protocol) = (rec.at(1), rec.at(2), rec.at(3));
        let (entry, out) = if protocol.is_str(SECURE) {
            let key = s.at(field::KEY_MAPPING).dict_get(&message.at(req::HOST));
            let enc = Term::enc_a(Term::pair(message.clone(), Term::Nu(3)), key);
            (Term::seq(vec![reference, message, Term::Nu(3), result.clone()]), enc)
        } else {
            (Term::seq(vec![reference, message.clone(), Term::Bot, result.clone()]), message)
        };
        let s = s
            .with_field(field::PENDING_REQUESTS, s.at(field::PENDING_REQUESTS).push(entry))
            .with_field(field::PENDING_DNS, pd.dict_remove(&n));
        let ev = Term::seq(vec![result, ctx.a.clone(), out]);
        return done(Stop { state: s, events: vec![ev], postmessages: 0 });
    }
    done(stop(s0.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scripts::Mutations;

    const A: &str = "10.0.0.1";
    const DNS: &str = "10.0.0.53";

    fn base() -> Term {
        let km = Term::dict(vec![(sv("rp.com"), Term::pub_key(Term::named("ssl:rp.com")))]);
        initial_state(Term::empty(), Term::empty(), km, Term::ip(DNS), false)
    }

    fn cfg() -> BrowserConfig<'static> {
        BrowserConfig { challenge_domain: None, ignore_corruption: false }
    }

    static MUT: Mutations = Mutations {
        no_origin_check: false,
        fwd_unrestricted_eia: false,
        skip_checksig: false,
        redir_keeps_referrer: false,
    };

    fn env(recipe: &Term) -> ScriptEnv<'_> {
        ScriptEnv { mutations: &MUT, idp_script_enabled: true, attacker_recipe: recipe, identity_index: 1 }
    }

    fn ev(m: Term) -> Term {
        Term::seq(vec![Term::ip(A), Term::ip("10.9.9.9"), m])
    }

    fn run(state: &Term, m: Term, switch: u8, window: usize, url: Option<&Term>, recipe: &Term) -> Outcome {
        let ch = Choices { switch, window, url, script: env(recipe) };
        step(state, &ev(m), &cfg(), &ch)
    }

    fn ok(o: Outcome) -> (Term, Vec<Term>, usize) {
        match o {
            Outcome::Step { state, events, postmessages } => (state, events, postmessages),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn document(n: &str, loc: Term, script: &str) -> Term {
        Term::seq(vec![
            Term::named(n),
            loc,
            Term::Bot,
            sv(script),
            Term::empty(),
            Term::empty(),
            Term::empty(),
            Term::True,
        ])
    }

    fn with_window(st: &Term, w: &str, d: Term, opener: Term) -> Term {
        let win = Term::seq(vec![Term::named(w), Term::seq(vec![d]), opener]);
        st.with_field(field::WINDOWS, st.at(field::WINDOWS).push(win))
    }

    #[test]
    fn full_corrupt_sets_flag_without_output() {
        let (st, evs, _) = ok(run(&base(), sv(http::FULLCORRUPT), 1, 1, None, &Term::empty()));
        assert_eq!(st.at(field::IS_CORRUPTED), sv(http::FULLCORRUPT));
        assert!(evs.is_empty());
        match run(&st, sv("anything"), 1, 1, None, &Term::empty()) {
            Outcome::Corrupted { state } => {
                assert_eq!(state.at(field::PENDING_REQUESTS).at(1), sv("anything"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn close_corrupt_wipes_session_data() {
        let mut st = with_window(&base(), "w", document("d", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let jar = Term::seq(vec![
            http::cookie(sv("persist"), sv("1"), true, false, false),
            http::cookie(sv("sess"), sv("2"), true, true, false),
        ]);
        st = st
            .with_field(field::COOKIES, Term::dict(vec![(sv("rp.com"), jar)]))
            .with_field(field::SECRETS, Term::dict(vec![(sv("o"), Term::named("pw"))]))
            .with_field(field::PENDING_DNS, Term::dict(vec![(Term::named("x"), sv("y"))]))
            .with_field(field::SESSION_STORAGE, Term::dict(vec![(sv("k"), sv("v"))]));
        let (st, evs, _) = ok(run(&st, sv(http::CLOSECORRUPT), 1, 1, None, &Term::empty()));
        assert!(evs.is_empty());
        for f in [field::SECRETS, field::WINDOWS, field::PENDING_DNS, field::PENDING_REQUESTS, field::SESSION_STORAGE] {
            assert_eq!(st.at(f), Term::empty());
        }
        let kept = st.at(field::COOKIES).dict_get(&sv("rp.com"));
        assert_eq!(kept.items().len(), 1);
        assert_eq!(kept.at(1).at(1), sv("persist"));
        assert_eq!(st.at(field::IS_CORRUPTED), sv(http::CLOSECORRUPT));
    }

    #[test]
    fn switch_two_opens_window_and_resolves_host() {
        let url = scripts::https_url(&sv("rp.com"), "/");
        let (st, evs, _) = ok(run(&base(), sv(http::TRIGGER), 2, 1, Some(&url), &Term::empty()));
        assert_eq!(st.at(field::WINDOWS).at(1), Term::seq(vec![Term::Nu(1), Term::empty(), Term::Bot]));
        assert_eq!(
            evs,
            vec![Term::seq(vec![Term::ip(DNS), Term::ip(A), http::dns_request(&sv("rp.com"), Term::Nu(8))])]
        );
        let rec = st.at(field::PENDING_DNS).dict_get(&Term::Nu(8));
        assert_eq!(rec.at(1), Term::Nu(1));
        assert_eq!(rec.at(2).at(req::NONCE), Term::Nu(2));
        assert_eq!(rec.at(3), sv(SECURE));
        assert!(matches!(
            run(&base(), sv(http::TRIGGER), 2, 1, Some(&sv("nope")), &Term::empty()),
            Outcome::NotInduced(_)
        ));
    }

    #[test]
    fn window_index_beyond_tree_is_not_induced() {
        assert!(matches!(run(&base(), sv(http::TRIGGER), 1, 1, None, &Term::empty()), Outcome::NotInduced(_)));
        assert!(matches!(run(&base(), sv(http::TRIGGER), 3, 1, None, &Term::empty()), Outcome::NotInduced(_)));
    }

    #[test]
    fn dns_response_moves_request_to_pending_requests() {
        let url = scripts::https_url(&sv("rp.com"), "/");
        let (st, _, _) = ok(run(&base(), sv(http::TRIGGER), 2, 1, Some(&url), &Term::empty()));
        let n = Term::named("n8");
        let st = crate::term::Term::replace(&st, &mut |t| (t == &Term::Nu(8)).then(|| n.clone()));
        let rec = st.at(field::PENDING_DNS).dict_get(&n);
        let addr = Term::ip("10.0.0.2");
        let (st2, evs, _) = ok(run(&st, http::dns_response(&sv("rp.com"), &addr, &n), 1, 1, None, &Term::empty()));
        let key = Term::pub_key(Term::named("ssl:rp.com"));
        assert_eq!(
            evs,
            vec![Term::seq(vec![addr.clone(), Term::ip(A), Term::enc_a(Term::pair(rec.at(2), Term::Nu(3)), key)])]
        );
        assert_eq!(
            st2.at(field::PENDING_REQUESTS),
            Term::seq(vec![Term::seq(vec![rec.at(1), rec.at(2), Term::Nu(3), addr.clone()])])
        );
        assert_eq!(st2.at(field::PENDING_DNS), Term::empty());
        let (_, evs, _) = ok(run(&st, http::dns_response(&sv("evil.com"), &addr, &n), 1, 1, None, &Term::empty()));
        assert!(evs.is_empty());
        let (same, evs, _) = ok(run(&st, http::dns_response(&sv("rp.com"), &sv("x"), &n), 1, 1, None, &Term::empty()));
        assert!(evs.is_empty());
        assert_eq!(same, st);
    }

    fn pending_https(st: &Term, reference: Term, request: Term, key: Term, from: &str) -> Term {
        let e = Term::seq(vec![reference, request, key, Term::ip(from)]);
        st.with_field(field::PENDING_REQUESTS, st.at(field::PENDING_REQUESTS).push(e))
    }

    fn respond(st: &Term, response: Term, key: &Term) -> Outcome {
        let ev = Term::seq(vec![Term::ip(A), Term::ip("10.0.0.2"), Term::enc_s(response, key.clone())]);
        let r = Term::empty();
        step(st, &ev, &cfg(), &Choices { switch: 1, window: 1, url: None, script: env(&r) })
    }

    #[test]
    fn response_loads_document_and_truncates_forward_history() {
        let loc = scripts::https_url(&sv("rp.com"), "/");
        let d1 = document("d1", loc.clone(), "x").with_field(doc::ACTIVE, Term::Bot);
        let d2 = document("d2", loc.clone(), "x");
        let d3 = document("d3", loc.clone(), "x").with_field(doc::ACTIVE, Term::Bot);
        let win = Term::seq(vec![Term::named("w"), Term::seq(vec![d1, d2, d3]), Term::Bot]);
        let st = base().with_field(field::WINDOWS, Term::seq(vec![win]));
        let k = Term::named("k");
        let rq = http::request(
            Term::named("rn"),
            &sv(GET),
            &sv("rp.com"),
            &sv("/next"),
            Term::empty(),
            Term::empty(),
            Term::empty(),
        );
        let st = pending_https(&st, Term::named("w"), rq, k.clone(), "10.0.0.2");
        let body = Term::pair(sv("script_rp"), sv("init"));
        let (st, evs, _) = ok(respond(&st, http::response(Term::named("rn"), "200", Term::empty(), body), &k));
        assert!(evs.is_empty());
        let docs = st.at(field::WINDOWS).at(1).at(2);
        assert_eq!(docs.items().len(), 3);
        assert_eq!(docs.at(2).at(doc::ACTIVE), Term::Bot);
        let nd = docs.at(3);
        assert_eq!(nd.at(doc::NONCE), Term::Nu(7));
        assert_eq!(nd.at(doc::SCRIPT), sv("script_rp"));
        assert_eq!(nd.at(doc::LOCATION), http::url(SECURE, &sv("rp.com"), "/next", Term::empty()));
        assert_eq!(st.at(field::PENDING_REQUESTS), Term::empty());
    }

    #[test]
    fn response_with_wrong_nonce_is_dropped() {
        let st = with_window(&base(), "w", document("d", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let k = Term::named("k");
        let rq = http::request(
            Term::named("rn"),
            &sv(GET),
            &sv("rp.com"),
            &sv("/"),
            Term::empty(),
            Term::empty(),
            Term::empty(),
        );
        let st = pending_https(&st, Term::named("w"), rq, k.clone(), "10.0.0.2");
        let (st2, _, _) =
            ok(respond(&st, http::response(Term::named("other"), "200", Term::empty(), Term::empty()), &k));
        assert_eq!(st2, st);
    }

    #[test]
    fn redirect_303_rewrites_post_to_get() {
        let st = with_window(&base(), "w", document("d", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let k = Term::named("k");
        let headers = Term::dict(vec![
            (sv(http::H_ORIGIN), http::origin(&sv("rp.com"), SECURE)),
            (sv(http::H_REFERER), sv("ref")),
        ]);
        let rq =
            http::request(Term::named("rn"), &sv(POST), &sv("rp.com"), &sv("/"), Term::empty(), headers, sv("data"));
        let st = pending_https(&st, Term::named("w"), rq, k.clone(), "10.0.0.2");
        let target = scripts::https_url(&sv("idp.com"), "/x");
        let rh = Term::dict(vec![(sv(http::H_LOCATION), target)]);
        let (st2, evs, _) = ok(respond(&st, http::response(Term::named("rn"), "303", rh.clone(), Term::empty()), &k));
        assert_eq!(evs.len(), 1);
        let rec = st2.at(field::PENDING_DNS).dict_get(&Term::Nu(8));
        let out = rec.at(2);
        assert_eq!(out.at(req::METHOD), sv(GET));
        assert_eq!(out.at(req::BODY), Term::empty());
        assert_eq!(out.at(req::NONCE), Term::Nu(6));
        assert_eq!(out.at(req::HOST), sv("idp.com"));
        assert_eq!(out.at(req::HEADERS).dict_get(&sv(http::H_REFERER)), sv("ref"));
        assert_eq!(
            out.at(req::HEADERS).dict_get(&sv(http::H_ORIGIN)),
            Term::pair(http::origin(&sv("rp.com"), SECURE), http::origin(&sv("rp.com"), SECURE))
        );
        // 307 keeps the method and body
        let st = pending_https(
            &st,
            Term::named("w"),
            st.at(field::PENDING_REQUESTS).at(1).at(2),
            Term::named("k2"),
            "10.0.0.2",
        );
        let st = st.with_field(field::PENDING_REQUESTS, Term::seq(vec![st.at(field::PENDING_REQUESTS).at(2)]));
        let (st3, _, _) =
            ok(respond(&st, http::response(Term::named("rn"), "307", rh, Term::empty()), &Term::named("k2")));
        let out = st3.at(field::PENDING_DNS).dict_get(&Term::Nu(8)).at(2);
        assert_eq!(out.at(req::METHOD), sv(POST));
        assert_eq!(out.at(req::BODY), sv("data"));
    }

    #[test]
    fn xhr_redirects_are_not_followed() {
        let st = with_window(&base(), "w", document("d", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let k = Term::named("k");
        let rq = http::request(
            Term::named("rn"),
            &sv(GET),
            &sv("rp.com"),
            &sv("/"),
            Term::empty(),
            Term::empty(),
            Term::empty(),
        );
        let st = pending_https(&st, Term::pair(Term::named("d"), Term::named("x")), rq, k.clone(), "10.0.0.2");
        let rh = Term::dict(vec![(sv(http::H_LOCATION), scripts::https_url(&sv("idp.com"), "/x"))]);
        let (st2, evs, _) = ok(respond(&st, http::response(Term::named("rn"), "303", rh, Term::empty()), &k));
        assert!(evs.is_empty());
        assert_eq!(st2, st);
    }

    #[test]
    fn xhr_response_is_appended_to_scriptinputs() {
        let st = with_window(&base(), "w", document("d", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let k = Term::named("k");
        let rq = http::request(
            Term::named("rn"),
            &sv(POST),
            &sv("rp.com"),
            &sv("/"),
            Term::empty(),
            Term::empty(),
            Term::empty(),
        );
        let st = pending_https(&st, Term::pair(Term::named("d"), Term::named("x")), rq, k.clone(), "10.0.0.2");
        let rh = Term::dict(vec![
            (sv(http::H_SET_COOKIE), Term::seq(vec![http::cookie(sv("sid"), sv("v"), true, true, true), sv("junk")])),
            (sv(http::H_STS), Term::True),
        ]);
        let (st2, _, _) = ok(respond(&st, http::response(Term::named("rn"), "200", rh, sv("B")), &k));
        let d = st2.at(field::WINDOWS).at(1).at(2).at(1);
        assert_eq!(
            d.at(doc::SCRIPTINPUTS),
            Term::seq(vec![Term::seq(vec![sv(scripts::XHR), sv("B"), Term::named("x")])])
        );
        assert_eq!(st2.at(field::COOKIES).dict_get(&sv("rp.com")).items().len(), 1);
        assert_eq!(st2.at(field::STS), Term::seq(vec![sv("rp.com")]));
    }

    #[test]
    fn send_applies_sts_and_cookie_rules() {
        let jar = Term::seq(vec![
            http::cookie(sv("sec"), sv("1"), true, false, false),
            http::cookie(sv("lax"), sv("2"), false, false, true),
        ]);
        let st = base().with_field(field::COOKIES, Term::dict(vec![(sv("rp.com"), jar)]));
        let rq = http::request(
            Term::named("r"),
            &sv(GET),
            &sv("rp.com"),
            &sv("/"),
            Term::empty(),
            Term::empty(),
            Term::empty(),
        );
        let (st1, _) = send(
            &Term::ip(A),
            &cfg(),
            Term::named("w"),
            rq.clone(),
            &sv(http::PLAIN),
            Term::Bot,
            Term::Bot,
            st.clone(),
        );
        let rec = st1.at(field::PENDING_DNS).dict_get(&Term::Nu(8));
        assert_eq!(rec.at(3), sv(http::PLAIN));
        let h = rec.at(2).at(req::HEADERS);
        assert_eq!(h.dict_get(&sv(http::H_COOKIE)), Term::seq(vec![Term::pair(sv("lax"), sv("2"))]));
        assert!(!h.dict_has(&sv(http::H_REFERER)));
        assert!(!h.dict_has(&sv(http::H_ORIGIN)));
        let st = st.with_field(field::STS, Term::seq(vec![sv("rp.com")]));
        let (st2, _) = send(&Term::ip(A), &cfg(), Term::named("w"), rq, &sv(http::PLAIN), sv("o"), sv("r"), st);
        let rec = st2.at(field::PENDING_DNS).dict_get(&Term::Nu(8));
        assert_eq!(rec.at(3), sv(SECURE));
        let h = rec.at(2).at(req::HEADERS);
        assert_eq!(h.dict_get(&sv(http::H_COOKIE)).items().len(), 2);
        assert_eq!(h.dict_get(&sv(http::H_ORIGIN)), sv("o"));
        assert_eq!(h.dict_get(&sv(http::H_REFERER)), sv("r"));
    }

    #[test]
    fn challenge_hook_rewrites_first_request_only() {
        let dr = sv("rp1.com");
        let c = BrowserConfig { challenge_domain: Some(&dr), ignore_corruption: true };
        let st = initial_state(Term::empty(), Term::empty(), Term::empty(), Term::ip(DNS), true);
        let rq = http::request(
            Term::named("r"),
            &sv(GET),
            &sv(CHALLENGE_DOMAIN),
            &sv("/"),
            Term::empty(),
            Term::empty(),
            Term::empty(),
        );
        let (st1, evs) = send(&Term::ip(A), &c, Term::named("w"), rq.clone(), &sv(SECURE), Term::Bot, Term::Bot, st);
        assert_eq!(evs[0].at(3).at(2), dr);
        assert_eq!(st1.at(field::CHALLENGE), Term::Bot);
        let st1 = st1.with_field(field::PENDING_DNS, Term::empty());
        let (_, evs) = send(&Term::ip(A), &c, Term::named("w"), rq, &sv(SECURE), Term::Bot, Term::Bot, st1);
        assert_eq!(evs[0].at(3).at(2), sv(CHALLENGE_DOMAIN));
    }

    #[test]
    fn cookie_merge_rules() {
        let old = Term::seq(vec![
            http::cookie(sv("a"), sv("old"), false, false, false),
            http::cookie(sv("h"), sv("old"), false, false, true),
        ]);
        let new = Term::seq(vec![
            http::cookie(sv("a"), sv("first"), false, false, false),
            http::cookie(sv("a"), sv("new"), false, false, false),
            http::cookie(sv("h"), sv("new"), false, false, false),
            http::cookie(sv("x"), sv("ho"), false, false, true),
            Term::pair(sv("y"), sv("not a cookie")),
            http::cookie(sv("b"), sv("b"), false, false, false),
        ]);
        let m = cookie_merge(&old, &new);
        let names: Vec<(Term, Term)> = m.items().iter().map(|c| (c.at(1), c.at(2).at(1))).collect();
        assert_eq!(names, vec![(sv("a"), sv("new")), (sv("h"), sv("old")), (sv("b"), sv("b"))]);
        let added = add_cookie(&old, &http::cookie(sv("a"), sv("z"), true, true, true));
        assert_eq!(added.items().len(), 2);
        assert_eq!(added.at(2).at(2).at(1), sv("z"));
    }

    fn attacker_page(st: &Term) -> Term {
        with_window(st, "w", document("d", scripts::https_url(&sv("att.com"), "/"), scripts::ATT_SCRIPT), Term::Bot)
    }

    fn recipe(cmd: &str) -> Term {
        crate::encode::parse(&format!("<proj3(?x), proj5(?x), proj6(?x), proj7(?x), {cmd}>")).unwrap()
    }

    #[test]
    fn href_sets_referrer_unless_suppressed() {
        let st = attacker_page(&base());
        let url = scripts::https_url(&sv("rp.com"), "/p");
        for (nr, expect) in [(Term::Bot, true), (Term::True, false)] {
            let r = Term::seq(vec![
                Term::raw(crate::term::Sym::Proj(3), vec![Term::var("x")]),
                Term::empty(),
                Term::empty(),
                Term::empty(),
                Term::seq(vec![sv(scripts::HREF), url.clone(), sv(scripts::BLANK), nr]),
            ]);
            let (st2, evs, _) = ok(run(&st, sv(http::TRIGGER), 1, 1, None, &r));
            assert_eq!(evs.len(), 1);
            let rec = st2.at(field::PENDING_DNS).dict_get(&Term::Nu(8));
            assert_eq!(rec.at(1), Term::Nu(9));
            let h = rec.at(2).at(req::HEADERS);
            assert_eq!(h.dict_has(&sv(http::H_REFERER)), expect);
            let nw = st2.at(field::WINDOWS).at(2);
            let opener = if expect { Term::named("w") } else { Term::Bot };
            assert_eq!(nw, Term::seq(vec![Term::Nu(9), Term::empty(), opener]));
        }
    }

    #[test]
    fn xhr_to_other_origin_stops() {
        let st = attacker_page(&base());
        let cmd = "<\"XMLHTTPREQUEST\", <\"URL\", \"S\", \"rp.com\", \"/\", <>>, \"POST\", \"x\", lam1>";
        let (st2, evs, _) = ok(run(&st, sv(http::TRIGGER), 1, 1, None, &recipe(cmd)));
        assert!(evs.is_empty());
        assert_eq!(st2.at(field::PENDING_DNS), Term::empty());
        let cmd = "<\"XMLHTTPREQUEST\", <\"URL\", \"S\", \"att.com\", \"/\", <>>, \"POST\", \"x\", lam1>";
        let (st3, evs, _) = ok(run(&st, sv(http::TRIGGER), 1, 1, None, &recipe(cmd)));
        assert_eq!(evs.len(), 1);
        let rec = st3.at(field::PENDING_DNS).dict_get(&Term::Nu(8));
        assert_eq!(rec.at(1), Term::pair(Term::named("d"), Term::Nu(10)));
        assert_eq!(rec.at(2).at(req::HEADERS).dict_get(&sv(http::H_ORIGIN)), http::origin(&sv("att.com"), SECURE));
        let cmd = "<\"XMLHTTPREQUEST\", <\"URL\", \"S\", \"att.com\", \"/\", <>>, \"TRACE\", \"x\", lam1>";
        let (_, evs, _) = ok(run(&st, sv(http::TRIGGER), 1, 1, None, &recipe(cmd)));
        assert!(evs.is_empty());
    }

    #[test]
    fn postmessage_respects_origin_restriction() {
        let st = attacker_page(&base());
        let st = with_window(&st, "w2", document("d2", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let wrong = "<\"POSTMESSAGE\", k:\"w2\", \"hi\", <\"other.com\", \"S\">>";
        let (st2, _, pm) = ok(run(&st, sv(http::TRIGGER), 1, 1, None, &recipe(wrong)));
        assert_eq!(pm, 0);
        assert_eq!(st2.at(field::WINDOWS).at(2), st.at(field::WINDOWS).at(2));
        let right = "<\"POSTMESSAGE\", k:\"w2\", \"hi\", <\"rp.com\", \"S\">>";
        let (st3, _, pm) = ok(run(&st, sv(http::TRIGGER), 1, 1, None, &recipe(right)));
        assert_eq!(pm, 1);
        assert_eq!(
            st3.at(field::WINDOWS).at(2).at(2).at(1).at(doc::SCRIPTINPUTS),
            Term::seq(vec![Term::seq(vec![
                sv(scripts::POSTMESSAGE),
                Term::named("w"),
                http::origin(&sv("att.com"), SECURE),
                sv("hi")
            ])])
        );
    }

    #[test]
    fn script_output_commits_state_and_replaces_lambdas() {
        let st = attacker_page(&base());
        let r = crate::encode::parse("<<lam1, lam2>, <<\"c\", <\"v\", bot, bot, bot>>>, \"ls\", \"ss\", <>>").unwrap();
        let (st2, _, _) = ok(run(&st, sv(http::TRIGGER), 1, 1, None, &r));
        let d = st2.at(field::WINDOWS).at(1).at(2).at(1);
        assert_eq!(d.at(doc::SCRIPTSTATE), Term::pair(Term::Nu(10), Term::Nu(11)));
        let o = http::origin(&sv("att.com"), SECURE);
        assert_eq!(st2.at(field::LOCAL_STORAGE).dict_get(&o), sv("ls"));
        assert_eq!(st2.at(field::SESSION_STORAGE).dict_get(&Term::pair(o, Term::named("w"))), sv("ss"));
        assert_eq!(st2.at(field::COOKIES).dict_get(&sv("att.com")).items().len(), 1);
    }

    #[test]
    fn clean_limits_cross_origin_documents() {
        let st = attacker_page(&base());
        let st = with_window(&st, "w2", document("d2", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let t = clean(&st, &st.at(field::WINDOWS).at(1).at(2).at(1));
        assert_eq!(t.at(1).at(2).at(1).items().len(), 8);
        assert_eq!(t.at(2).at(2).at(1), Term::pair(Term::named("d2"), Term::empty()));
    }

    #[test]
    fn navigable_windows_follow_openers_and_ancestry() {
        let st = attacker_page(&base());
        let st = with_window(&st, "w2", document("d2", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::named("w"));
        let st = with_window(&st, "w3", document("d3", scripts::https_url(&sv("rp.com"), "/"), "x"), Term::Bot);
        let nav = navigable_windows(&[1, 1], &st);
        assert_eq!(nav, vec![vec![1, 1], vec![1, 2]]);
        let (p, _) = get_navigable_window(&[1, 1], &Term::named("w3"), &Term::Bot, st.clone());
        assert_eq!(p, vec![1, 1]);
        let (p, _) = get_navigable_window(&[1, 1], &Term::named("w2"), &Term::Bot, st.clone());
        assert_eq!(p, vec![1, 2]);
        assert_eq!(get_window(&[1, 1], &Term::named("w2"), &st), vec![1, 1]);
    }

    #[test]
    fn cancel_nav_removes_requests_of_window() {
        let st = base()
            .with_field(
                field::PENDING_REQUESTS,
                Term::seq(vec![
                    Term::seq(vec![Term::named("w"), sv("r"), Term::Bot, Term::ip("1.1.1.1")]),
                    Term::seq(vec![Term::named("v"), sv("r"), Term::Bot, Term::ip("1.1.1.1")]),
                ]),
            )
            .with_field(
                field::PENDING_DNS,
                Term::dict(vec![
                    (Term::named("x"), Term::seq(vec![Term::named("w"), sv("m"), sv("S")])),
                    (Term::named("y"), Term::seq(vec![Term::named("v"), sv("m"), sv("S")])),
                ]),
            );
        let st = cancel_nav(&Term::named("w"), st);
        assert_eq!(st.at(field::PENDING_REQUESTS).items().len(), 1);
        assert_eq!(st.at(field::PENDING_DNS).dict_keys(), vec![Term::named("y")]);
    }
}
