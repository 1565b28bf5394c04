//! Incremental schedule construction: commands are chosen by describing the
//! wanted event and receiver, and the builder works out the indices.

use crate::encode;
use crate::http;
use crate::knowledge::Saturation;
use crate::parties::{ssl_key, Role};
use crate::runtime::{Command, Configuration, NotInduced, Schedule, StepRecord, System};
use crate::term::{s, Term};

/// Output recipes over `x = ⟨e, s⟩` used by hand-written schedules and the
/// fuzzer.
pub mod recipe {
    use super::*;

    /// `e = π1(x)`.
    pub fn event() -> Term {
        Term::var("x").proj(1)
    }

    /// The message of the input event.
    pub fn message() -> Term {
        event().proj(3)
    }

    /// No output.
    pub fn silent() -> Term {
        Term::empty()
    }

    /// Re-emits the input event unchanged.
    pub fn forward() -> Term {
        Term::seq(vec![event()])
    }

    /// Sends the input message from `from` to `to`.
    pub fn send_message(to: &Term, from: &Term) -> Term {
        Term::seq(vec![Term::seq(vec![to.clone(), from.clone(), message()])])
    }

    /// Sends an arbitrary message term built over `x`.
    pub fn send(to: &Term, from: &Term, m: Term) -> Term {
        Term::seq(vec![Term::seq(vec![to.clone(), from.clone(), m])])
    }

    /// Answers a DNS request with `ip`.
    pub fn dns_answer(ip: &Term) -> Term {
        let m = message();
        let resp = http::dns_response(&m.proj(2), ip, &m.proj(3));
        Term::seq(vec![Term::seq(vec![event().proj(2), event().proj(1), resp])])
    }

    /// Sends a corruption message to `to`.
    pub fn corrupt(to: &Term, from: &Term, kind: &str) -> Term {
        send(to, from, s(kind))
    }
}

/// Builds a schedule while executing it.
pub struct Builder<'a> {
    pub system: &'a System,
    pub config: Configuration,
    pub commands: Vec<Command>,
    pub records: Vec<StepRecord>,
}

impl<'a> Builder<'a> {
    pub fn new(system: &'a System, seed: u64) -> Builder<'a> {
        Builder { system, config: system.initial(seed), commands: Vec::new(), records: Vec::new() }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.commands.clone())
    }

    pub fn state(&self, name: &str) -> &Term {
        &self.config.states[self.system.proc_index(name).expect("declared process")]
    }

    /// Applies a command and records it.
    pub fn apply(&mut self, cmd: Command) -> Result<&StepRecord, NotInduced> {
        let r = self.system.apply(&mut self.config, &cmd, self.commands.len() + 1)?;
        self.commands.push(cmd);
        self.records.push(r);
        Ok(self.records.last().expect("just pushed"))
    }

    /// 1-based index of the first materialized event satisfying `pred`.
    pub fn find(&self, pred: impl Fn(&Term) -> bool) -> Option<usize> {
        self.config.pending.iter().position(pred).map(|p| p + 1)
    }

    /// 1-based index of the next trigger event for `addr`, possibly beyond
    /// the materialized prefix.
    pub fn trigger_index(&self, addr: &Term) -> usize {
        let is_trigger = |e: &Term| e.at(1) == *addr && e.at(3).is_str(http::TRIGGER);
        if let Some(i) = self.find(is_trigger) {
            return i;
        }
        let mut i = self.config.pending.len() + 1;
        loop {
            let e = self.system.peek_event(&self.config, i).expect("index positive");
            if is_trigger(&e) {
                return i;
            }
            i += 1;
        }
    }

    /// Makes sure event `i` is materialized.
    pub fn materialize(&mut self, i: usize) {
        self.system.event_at(&mut self.config, i);
    }

    /// The trigger event index for the first address of `name`.
    pub fn own_trigger(&mut self, name: &str) -> usize {
        let i = self.trigger_index(&self.first_address(name));
        self.materialize(i);
        i
    }

    /// 1-based listener index of process `name` on `addr`.
    pub fn listener(&self, addr: &Term, name: &str) -> Option<usize> {
        let k = self.system.proc_index(name)?;
        self.system.listeners(addr).iter().position(|&l| l == k).map(|p| p + 1)
    }

    /// The first listener on `addr` that is not an attacker.
    pub fn honest_listener(&self, addr: &Term) -> Option<(usize, String)> {
        self.system
            .listeners(addr)
            .iter()
            .enumerate()
            .find(|(_, &k)| !self.system.procs[k].role.is_attacker())
            .map(|(p, &k)| (p + 1, self.system.procs[k].name.clone()))
    }

    fn first_address(&self, name: &str) -> Term {
        self.system.procs[self.system.proc_index(name).expect("declared process")].addresses[0].clone()
    }

    /// Triggers `process` with the given command template.
    pub fn trigger(&mut self, process: &str, template: Command) -> Result<&StepRecord, NotInduced> {
        let addr = self.first_address(process);
        let i = self.trigger_index(&addr);
        let j = self.listener(&addr, process).expect("process listens on its address");
        self.apply(Command { i, j, ..template })
    }

    /// Navigates the location bar of a new window of `browser` to `url`.
    pub fn navigate(&mut self, browser: &str, url: &Term) -> Result<&StepRecord, NotInduced> {
        self.trigger(browser, Command::deliver(0, 0).with_url(url))
    }

    /// Runs the script of window `window` of `browser`.
    pub fn run_script(&mut self, browser: &str, window: usize) -> Result<&StepRecord, NotInduced> {
        self.trigger(browser, Command { window, ..Command::deliver(0, 0) })
    }

    /// Runs the attacker script in window `window` of `browser`.
    pub fn run_attacker_script(
        &mut self,
        browser: &str,
        window: usize,
        recipe: &Term,
    ) -> Result<&StepRecord, NotInduced> {
        self.trigger(browser, Command { window, ..Command::deliver(0, 0) }.with_script(recipe))
    }

    /// Delivers event `i` to process `name` with an output recipe.
    pub fn deliver_to(
        &mut self,
        i: usize,
        name: &str,
        process_recipe: Option<&Term>,
    ) -> Result<&StepRecord, NotInduced> {
        self.materialize(i);
        let addr = self.config.pending[i - 1].at(1);
        let j = self.listener(&addr, name).ok_or_else(|| NotInduced {
            code: "no-process".into(),
            detail: format!("{name} does not listen on {addr}"),
        })?;
        let mut cmd = Command::deliver(i, j);
        if let Some(r) = process_recipe {
            cmd.process = Some(encode::to_text(r));
        }
        self.apply(cmd)
    }

    /// Lets the named attacker process handle the first event satisfying
    /// `pred` with `recipe`.
    pub fn attacker(
        &mut self,
        name: &str,
        pred: impl Fn(&Term) -> bool,
        recipe: &Term,
    ) -> Result<&StepRecord, NotInduced> {
        let i = self
            .find(pred)
            .ok_or_else(|| NotInduced { code: "no-event".into(), detail: "no matching event".into() })?;
        self.deliver_to(i, name, Some(recipe))
    }

    fn network_attacker(&self) -> Option<String> {
        self.system.procs.iter().find(|p| p.role == Role::NetworkAttacker).map(|p| p.name.clone())
    }

    /// Handles the first waiting non-trigger event that has an honest
    /// receiver or is a DNS query the network attacker can answer from the
    /// scenario table. Returns whether an event was handled.
    pub fn step_once(&mut self) -> Result<bool, NotInduced> {
        for i in 1..=self.config.pending.len() {
            let e = self.config.pending[i - 1].clone();
            if e.at(3).is_str(http::TRIGGER) {
                continue;
            }
            if let Some((j, _)) = self.honest_listener(&e.at(1)) {
                self.apply(Command::deliver(i, j))?;
                return Ok(true);
            }
            let m = e.at(3);
            if m.at(1).is_str(http::DNS_RESOLVE) {
                if let (Some(att), Some(domain)) = (self.network_attacker(), m.at(2).as_str()) {
                    if let Some(ip) = self.system.scenario.dns.get(domain) {
                        let r = recipe::dns_answer(&Term::ip(ip));
                        self.deliver_to(i, &att, Some(&r))?;
                        return Ok(true);
                    }
                }
            }
        }
        Ok(false)
    }

    /// Like [`Builder::settle`] but stops as soon as a waiting event
    /// satisfies `pred`, returning its index.
    pub fn settle_until(&mut self, pred: impl Fn(&Term) -> bool) -> Result<Option<usize>, NotInduced> {
        loop {
            if let Some(i) = self.find(&pred) {
                return Ok(Some(i));
            }
            if !self.step_once()? {
                return Ok(None);
            }
        }
    }

    /// Repeats [`Builder::step_once`] until no event is handled.
    pub fn settle(&mut self) -> Result<&mut Self, NotInduced> {
        while self.step_once()? {}
        Ok(self)
    }
}

/// A recipe over `x` evaluating to the sequence of `targets`, with `ν`
/// placeholders standing for fresh values.
pub fn synth_recipe(x: &Term, targets: &[Term]) -> Result<Term, NotInduced> {
    let mut k = Saturation::with_placeholders(true, false);
    k.add(x.clone(), Term::var("x"));
    let parts = targets
        .iter()
        .map(|t| {
            k.synth(t).ok_or_else(|| NotInduced {
                code: "bad-recipe".into(),
                detail: format!("{t} is not derivable from the view"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Term::seq(parts))
}

impl Builder<'_> {
    /// `⟨e, s⟩` for attacker `name` receiving event `i`.
    pub fn attacker_input(&self, name: &str, i: usize) -> Term {
        Term::pair(self.config.pending[i - 1].clone(), self.state(name).clone())
    }

    /// Lets attacker `name` handle event `i` and emit exactly `events`.
    pub fn attacker_emit(&mut self, name: &str, i: usize, events: &[Term]) -> Result<&StepRecord, NotInduced> {
        self.materialize(i);
        let r = synth_recipe(&self.attacker_input(name, i), events)?;
        self.deliver_to(i, name, Some(&r))
    }

    /// Decrypts an HTTPS request in event `i` with the key of one of the
    /// attacker's domains, returning the request and its response key.
    pub fn attacker_open(&self, name: &str, i: usize) -> Option<(Term, Term)> {
        let decl = self.system.scenario.process(name)?;
        let m = self.config.pending.get(i.checked_sub(1)?)?.at(3);
        decl.domains.iter().find_map(|d| http::https_unwrap_request(&m, &ssl_key(d)).ok())
    }

    /// Lets attacker `name` answer the HTTPS request in event `i` with a
    /// `200` response carrying `headers` and `body`.
    pub fn attacker_respond(
        &mut self,
        name: &str,
        i: usize,
        headers: Term,
        body: Term,
    ) -> Result<&StepRecord, NotInduced> {
        let (request, key) = self.attacker_open(name, i).ok_or_else(|| NotInduced {
            code: "bad-recipe".into(),
            detail: "not an HTTPS request to an attacker domain".into(),
        })?;
        let e = self.config.pending[i - 1].clone();
        let resp = Term::enc_s(http::response(request.at(http::req::NONCE), "200", headers, body), key);
        self.attacker_emit(name, i, &[Term::seq(vec![e.at(2), e.at(1), resp])])
    }

    /// Runs the attacker script in window `window` of `browser` with a recipe
    /// producing `output` from the script input.
    pub fn attacker_script(&mut self, browser: &str, window: usize, output: &Term) -> Result<&StepRecord, NotInduced> {
        let input = crate::browser::script_input(self.state(browser), window).ok_or_else(|| NotInduced {
            code: "bad-window".into(),
            detail: format!("window {window} has no document"),
        })?;
        let mut k = Saturation::with_placeholders(false, false);
        k.add(input, Term::var("x"));
        let r = k.synth(output).ok_or_else(|| NotInduced {
            code: "bad-recipe".into(),
            detail: format!("{output} is not derivable by the script"),
        })?;
        self.run_attacker_script(browser, window, &r)
    }
}

impl Builder<'_> {
    /// Number of windows (including subwindows) of a browser.
    pub fn window_count(&self, browser: &str) -> usize {
        let st = self.state(browser);
        crate::browser::subwindows(st).len()
    }
}
