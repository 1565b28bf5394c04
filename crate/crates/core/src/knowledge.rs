//! Attacker reasoning: recipe evaluation, derivability and static equivalence.

use crate::term::{Sym, Term};
use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::BuildHasherDefault;

/// Hash map with a fixed hasher so that runs never depend on process-level
/// randomness.
pub type DetMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;
/// Hash set with a fixed hasher.
pub type DetSet<K> = HashSet<K, BuildHasherDefault<DefaultHasher>>;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum KnowledgeError {
    #[error("unbound-recipe-var: {0}")]
    UnboundRecipeVar(String),
}

/// Substitutes recipe variables and normalizes. Variables `x1..xn` index the
/// facts unless `bindings` provides them; placeholders pass through.
pub fn eval_recipe(facts: &[Term], recipe: &Term, bindings: &HashMap<String, Term>) -> Result<Term, KnowledgeError> {
    let mut missing = None;
    let out = recipe.map_atoms(&mut |a| match a {
        Term::Var(v) => {
            if let Some(b) = bindings.get(&**v) {
                return Some(b.clone());
            }
            let idx = v.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()).filter(|&i| i >= 1 && i <= facts.len());
            match idx {
                Some(i) => Some(facts[i - 1].clone()),
                None => {
                    missing.get_or_insert_with(|| v.to_string());
                    None
                }
            }
        }
        _ => None,
    });
    match missing {
        Some(v) => Err(KnowledgeError::UnboundRecipeVar(v)),
        None => Ok(out),
    }
}

/// Evaluates a recipe over the single input variable `x`.
pub fn eval_x(recipe: &Term, x: &Term) -> Result<Term, KnowledgeError> {
    let mut missing = None;
    let out = recipe.map_atoms(&mut |a| match a {
        Term::Var(v) if &**v == "x" => Some(x.clone()),
        Term::Var(v) => {
            missing.get_or_insert_with(|| v.to_string());
            None
        }
        _ => None,
    });
    match missing {
        Some(v) => Err(KnowledgeError::UnboundRecipeVar(v)),
        None => Ok(out),
    }
}

/// Position in the saturation journal, used to undo tentative facts.
#[derive(Clone, Debug)]
pub struct Mark {
    known_len: usize,
    pending: Vec<Term>,
}

/// Incrementally saturated knowledge: every value reachable by analysis
/// (projection and decryption with synthesizable keys) mapped to a recipe.
#[derive(Clone, Debug, Default)]
pub struct Saturation {
    known: DetMap<Term, Term>,
    order: Vec<Term>,
    pending: Vec<Term>,
    allow_nu: bool,
    allow_lam: bool,
}

impl Saturation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Saturation in which process placeholders (`allow_nu`) or script
    /// placeholders (`allow_lam`) count as freely available atoms.
    pub fn with_placeholders(allow_nu: bool, allow_lam: bool) -> Self {
        Saturation { allow_nu, allow_lam, ..Self::default() }
    }

    /// Knowledge over facts bound to `x1..xn`.
    pub fn from_facts(facts: &[Term]) -> Self {
        let mut s = Self::new();
        for (i, f) in facts.iter().enumerate() {
            s.add(f.clone(), Term::var(&format!("x{}", i + 1)));
        }
        s
    }

    pub fn mark(&self) -> Mark {
        Mark { known_len: self.order.len(), pending: self.pending.clone() }
    }

    pub fn rollback(&mut self, m: Mark) {
        for t in self.order.drain(m.known_len..) {
            self.known.remove(&t);
        }
        self.pending = m.pending;
    }

    /// Analyzed values in insertion order.
    pub fn values(&self) -> &[Term] {
        &self.order
    }

    pub fn recipe_of(&self, v: &Term) -> Option<&Term> {
        self.known.get(v)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Adds a fact with its recipe and saturates.
    pub fn add(&mut self, value: Term, recipe: Term) {
        let mut work = vec![(value, recipe)];
        loop {
            while let Some((v, r)) = work.pop() {
                if self.known.contains_key(&v) {
                    continue;
                }
                self.analyze(&v, &r, &mut work);
                self.known.insert(v.clone(), r);
                self.order.push(v);
            }
            let mut progressed = false;
            let mut i = 0;
            while i < self.pending.len() {
                let c = self.pending[i].clone();
                if let Some(next) = self.try_decrypt(&c) {
                    self.pending.swap_remove(i);
                    work.push(next);
                    progressed = true;
                } else {
                    i += 1;
                }
            }
            if !progressed {
                break;
            }
        }
    }

    fn try_decrypt(&self, c: &Term) -> Option<(Term, Term)> {
        let rc = self.known.get(c)?;
        match c.node() {
            Some((Sym::EncA, a)) => {
                let k = a[1].node().filter(|(s, _)| *s == Sym::Pub)?.1[0].clone();
                let rk = self.synth(&k)?;
                Some((a[0].clone(), Term::raw(Sym::DecA, vec![rc.clone(), rk])))
            }
            Some((Sym::EncS, a)) => {
                let rk = self.synth(&a[1])?;
                Some((a[0].clone(), Term::raw(Sym::DecS, vec![rc.clone(), rk])))
            }
            _ => None,
        }
    }

    fn analyze(&mut self, v: &Term, r: &Term, work: &mut Vec<(Term, Term)>) {
        match v.node() {
            Some((Sym::Seq, items)) => {
                for (i, it) in items.iter().enumerate() {
                    work.push((it.clone(), Term::raw(Sym::Proj(i as u32 + 1), vec![r.clone()])));
                }
            }
            Some((Sym::EncA, a)) => {
                if let Some((Sym::Pub, pk)) = a[1].node() {
                    match self.synth(&pk[0]) {
                        Some(rk) => work.push((a[0].clone(), Term::raw(Sym::DecA, vec![r.clone(), rk]))),
                        None => self.pending.push(v.clone()),
                    }
                }
            }
            Some((Sym::EncS, a)) => match self.synth(&a[1]) {
                Some(rk) => work.push((a[0].clone(), Term::raw(Sym::DecS, vec![r.clone(), rk]))),
                None => self.pending.push(v.clone()),
            },
            _ => {}
        }
    }

    /// A recipe producing `t` from the facts, if one exists.
    pub fn synth(&self, t: &Term) -> Option<Term> {
        if let Some(r) = self.known.get(t) {
            return Some(r.clone());
        }
        match t {
            Term::Str(_) | Term::Ip(_) | Term::True | Term::Bot | Term::Undef => Some(t.clone()),
            Term::Nu(_) if self.allow_nu => Some(t.clone()),
            Term::Lam(_) if self.allow_lam => Some(t.clone()),
            Term::Node(n) => {
                let mut rs = Vec::with_capacity(n.args().len());
                for a in n.args() {
                    rs.push(self.synth(a)?);
                }
                Some(Term::raw(n.sym(), rs))
            }
            _ => None,
        }
    }

    pub fn derivable(&self, t: &Term) -> bool {
        self.synth(t).is_some()
    }
}

/// `t ∈ d(facts)`.
pub fn derivable(facts: &[Term], target: &Term) -> bool {
    Saturation::from_facts(facts).derivable(target)
}

/// A recipe over `x1..xn` deriving `target`, if any.
pub fn recipe_for(facts: &[Term], target: &Term) -> Option<Term> {
    Saturation::from_facts(facts).synth(target)
}

/// Subterms of all given terms, plus their constants.
pub fn subterms(terms: &[Term]) -> DetSet<Term> {
    let mut out = DetSet::default();
    for t in terms {
        t.visit(&mut |u| {
            out.insert(u.clone());
        });
    }
    out
}

/// Result of the brute-force derivability oracle.
#[derive(Clone, Debug)]
pub struct Enumeration {
    /// Values obtained by recipes of depth at most the requested bound.
    pub values: DetSet<Term>,
    /// Whether one more level adds nothing, i.e. the set is the full closure
    /// within the relevant universe.
    pub converged: bool,
}

/// Brute-force oracle: applies every symbol of the signature to every
/// combination of values of the previous level, `depth` times, keeping only
/// results inside `St(facts ∪ targets)` plus the constants in play.
pub fn enumerate_derivable(facts: &[Term], depth: usize, targets: &[Term]) -> Enumeration {
    let mut all: Vec<Term> = facts.to_vec();
    all.extend(targets.iter().cloned());
    let universe = subterms(&all);
    let mut cur: DetSet<Term> = facts.iter().cloned().collect();
    for u in &universe {
        if u.is_constant() {
            cur.insert(u.clone());
        }
    }
    let step = |cur: &DetSet<Term>| -> DetSet<Term> {
        let mut next = cur.clone();
        let vals: Vec<&Term> = cur.iter().collect();
        // constructors, target-directed over the universe
        for u in &universe {
            if let Some((_, args)) = u.node() {
                if args.iter().all(|a| cur.contains(a)) {
                    next.insert(u.clone());
                }
            }
        }
        // destructors over all pairs
        for c in &vals {
            if let Some(items) = c.as_seq() {
                for i in 1..=items.len() as u32 + 1 {
                    let r = c.proj(i);
                    if universe.contains(&r) || r.is_constant() {
                        next.insert(r);
                    }
                }
            }
            for k in &vals {
                for r in [Term::dec_a((*c).clone(), (*k).clone()), Term::dec_s((*c).clone(), (*k).clone())] {
                    if universe.contains(&r) {
                        next.insert(r);
                    }
                }
            }
        }
        next
    };
    for _ in 0..depth {
        cur = step(&cur);
    }
    let converged = step(&cur).len() == cur.len();
    Enumeration { values: cur, converged }
}

/// A pair of tests `M`, `N` over `x` that tells two views apart, with their
/// evaluations on both sides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Distinguisher {
    pub m: Term,
    pub n: Term,
    pub m1: Term,
    pub n1: Term,
    pub m2: Term,
    pub n2: Term,
}

impl Distinguisher {
    fn build(m: Term, n: Term, t1: &Term, t2: &Term) -> Distinguisher {
        let ev = |r: &Term, t: &Term| eval_x(r, t).expect("recipes only use x");
        Distinguisher { m1: ev(&m, t1), n1: ev(&n, t1), m2: ev(&m, t2), n2: ev(&n, t2), m, n }
    }

    /// A distinguisher is genuine when the equality test answers differently.
    pub fn is_valid(&self) -> bool {
        (self.m1 == self.n1) != (self.m2 == self.n2) && !self.m.has_nonce() && !self.n.has_nonce()
    }
}

struct Frame {
    rows: Vec<(Term, Term, Term)>,
    idx: [DetMap<Term, usize>; 2],
}

impl Frame {
    fn val(&self, row: usize, side: usize) -> &Term {
        if side == 0 {
            &self.rows[row].1
        } else {
            &self.rows[row].2
        }
    }

    /// Recipe for `t` on `side`, composed from rows and public constants.
    fn synth(&self, side: usize, t: &Term) -> Option<Term> {
        if let Some(&r) = self.idx[side].get(t) {
            return Some(self.rows[r].0.clone());
        }
        self.compose(side, t)
    }

    /// Like [`Frame::synth`] but never uses a row for `t` itself.
    fn compose(&self, side: usize, t: &Term) -> Option<Term> {
        match t {
            Term::Str(_) | Term::Ip(_) | Term::True | Term::Bot | Term::Undef => Some(t.clone()),
            Term::Node(n) => {
                let mut rs = Vec::with_capacity(n.args().len());
                for a in n.args() {
                    rs.push(self.synth(side, a)?);
                }
                Some(Term::raw(n.sym(), rs))
            }
            _ => None,
        }
    }
}

/// Decides static equivalence of two views, returning a distinguisher when
/// they are not equivalent.
pub fn static_equivalence(t1: &Term, t2: &Term) -> Result<(), Distinguisher> {
    let x = Term::var("x");
    let mut f = Frame { rows: Vec::new(), idx: [DetMap::default(), DetMap::default()] };
    let mut queue: Vec<usize> = Vec::new();
    let mut pending: Vec<usize> = Vec::new();

    let insert = |f: &mut Frame, queue: &mut Vec<usize>, r: Term, v1: Term, v2: Term| -> Result<(), (Term, Term)> {
        match (f.idx[0].get(&v1), f.idx[1].get(&v2)) {
            (Some(&a), Some(&b)) if a == b => Ok(()),
            (Some(&a), _) => Err((f.rows[a].0.clone(), r)),
            (None, Some(&b)) => Err((f.rows[b].0.clone(), r)),
            (None, None) => {
                let id = f.rows.len();
                f.idx[0].insert(v1.clone(), id);
                f.idx[1].insert(v2.clone(), id);
                f.rows.push((r, v1, v2));
                queue.push(id);
                Ok(())
            }
        }
    };

    let fail = |m: Term, n: Term| Err(Distinguisher::build(m, n, t1, t2));

    if let Err((m, n)) = insert(&mut f, &mut queue, x.clone(), t1.clone(), t2.clone()) {
        return fail(m, n);
    }

    // Attempts the decryption of a row from `side`; returns whether the row
    // is finished (decrypted or never decryptable).
    let try_dec = |f: &mut Frame, queue: &mut Vec<usize>, row: usize, side: usize| -> Result<bool, (Term, Term)> {
        let v = f.val(row, side).clone();
        let other = f.val(row, 1 - side).clone();
        let r = f.rows[row].0.clone();
        let (sym, key) = match v.node() {
            Some((Sym::EncA, a)) => match a[1].node() {
                Some((Sym::Pub, pk)) => (Sym::DecA, pk[0].clone()),
                _ => return Ok(true),
            },
            Some((Sym::EncS, a)) => (Sym::DecS, a[1].clone()),
            _ => return Ok(true),
        };
        let Some(rk) = f.synth(side, &key) else {
            return Ok(false);
        };
        let k_other = eval_x(&rk, if side == 0 { t2 } else { t1 }).unwrap();
        let plain = v.node().unwrap().1[0].clone();
        let stuck = Term::raw(sym, vec![other.clone(), k_other.clone()]);
        let plain_other = Term::app(sym, vec![other.clone(), k_other]);
        let reduced_other = plain_other != stuck;
        let dec_recipe = Term::raw(sym, vec![r.clone(), rk.clone()]);
        if !reduced_other {
            let reenc = if sym == Sym::DecA {
                Term::raw(Sym::EncA, vec![dec_recipe, Term::raw(Sym::Pub, vec![rk])])
            } else {
                Term::raw(Sym::EncS, vec![dec_recipe, rk])
            };
            return Err((reenc, r));
        }
        let (v1, v2) = if side == 0 { (plain, plain_other) } else { (plain_other, plain) };
        insert(f, queue, dec_recipe, v1, v2)?;
        Ok(true)
    };

    loop {
        while let Some(row) = queue.pop() {
            let (r, v1, v2) = f.rows[row].clone();
            // sequences
            match (v1.as_seq(), v2.as_seq()) {
                (Some(a), Some(b)) if a.len() == b.len() => {
                    for i in 0..a.len() {
                        let pr = Term::raw(Sym::Proj(i as u32 + 1), vec![r.clone()]);
                        if let Err((m, n)) = insert(&mut f, &mut queue, pr, a[i].clone(), b[i].clone()) {
                            return fail(m, n);
                        }
                    }
                }
                (Some(a), _) | (_, Some(a)) => {
                    if a.is_empty() {
                        return fail(r.clone(), Term::raw(Sym::Seq, Vec::new()));
                    }
                    let n = a.len();
                    let projs = (1..=n as u32).map(|i| Term::raw(Sym::Proj(i), vec![r.clone()])).collect();
                    return fail(r.clone(), Term::raw(Sym::Seq, projs));
                }
                _ => {}
            }
            pending.push(row);
        }
        let mut progressed = false;
        let mut keep = Vec::new();
        for row in std::mem::take(&mut pending) {
            let mut done = true;
            for side in 0..2 {
                match try_dec(&mut f, &mut queue, row, side) {
                    Err((m, n)) => return fail(m, n),
                    Ok(d) => done &= d,
                }
            }
            if done {
                progressed = true;
            } else {
                keep.push(row);
            }
        }
        pending = keep;
        if !progressed && queue.is_empty() {
            break;
        }
    }

    // composition consistency and signature tests
    for row in 0..f.rows.len() {
        let r = f.rows[row].0.clone();
        for side in 0..2 {
            let v = f.val(row, side).clone();
            let want = f.val(row, 1 - side).clone();
            let other_view = if side == 0 { t2 } else { t1 };
            if !v.is_constant() {
                if let Some(c) = f.compose(side, &v) {
                    if eval_x(&c, other_view).unwrap() != want {
                        return fail(r, c);
                    }
                }
            } else if v != want {
                return fail(r, v);
            }
            if let Some((Sym::Sig, a)) = v.node() {
                let pk = Term::pub_key(a[1].clone());
                if let (Some(rm), Some(rpk)) = (f.synth(side, &a[0]), f.synth(side, &pk)) {
                    let test = Term::raw(Sym::CheckSig, vec![r.clone(), rm, rpk]);
                    if eval_x(&test, other_view).unwrap() != Term::True {
                        return fail(test, Term::True);
                    }
                }
            }
        }
    }
    Ok(())
}

/// `t1 ≈ t2`.
pub fn statically_equivalent(t1: &Term, t2: &Term) -> bool {
    static_equivalence(t1, t2).is_ok()
}

/// Result of the brute-force distinguisher search.
#[derive(Clone, Debug)]
pub struct PairSearch {
    /// A pair of test results witnessing non-equivalence, if found.
    pub witness: Option<((Term, Term), (Term, Term))>,
    pub converged: bool,
}

/// Bounded distinguisher search over pairs of evaluations. Every value pair
/// reachable by tests of depth at most `depth` (restricted to those where one
/// side is a subterm of a view or a constant) is collected; the views are
/// distinguishable exactly when the collected relation is not a bijection.
pub fn brute_force_distinguisher(t1: &Term, t2: &Term, depth: usize) -> PairSearch {
    let st = [subterms(std::slice::from_ref(t1)), subterms(std::slice::from_ref(t2))];
    let relevant =
        |p: &(Term, Term)| st[0].contains(&p.0) || st[1].contains(&p.1) || p.0.is_constant() || p.1.is_constant();
    let mut pairs: Vec<(Term, Term)> = vec![(t1.clone(), t2.clone())];
    let mut seen: DetSet<(Term, Term)> = pairs.iter().cloned().collect();
    for side in 0..2 {
        for u in &st[side] {
            if u.is_constant() && seen.insert((u.clone(), u.clone())) {
                pairs.push((u.clone(), u.clone()));
            }
        }
    }
    let check = |pairs: &[(Term, Term)]| -> Option<((Term, Term), (Term, Term))> {
        let mut l: DetMap<&Term, &(Term, Term)> = DetMap::default();
        let mut r: DetMap<&Term, &(Term, Term)> = DetMap::default();
        for p in pairs {
            if let Some(q) = l.insert(&p.0, p) {
                if q.1 != p.1 {
                    return Some((q.clone(), p.clone()));
                }
            }
            if let Some(q) = r.insert(&p.1, p) {
                if q.0 != p.0 {
                    return Some((q.clone(), p.clone()));
                }
            }
        }
        None
    };
    let step = |pairs: &Vec<(Term, Term)>, seen: &mut DetSet<(Term, Term)>| -> Vec<(Term, Term)> {
        let mut out = Vec::new();
        let mut add = |p: (Term, Term), out: &mut Vec<(Term, Term)>| {
            if relevant(&p) && !seen.contains(&p) {
                seen.insert(p.clone());
                out.push(p);
            }
        };
        let by_side = |side: usize, v: &Term| pairs.iter().find(|p| if side == 0 { &p.0 == v } else { &p.1 == v });
        // target-directed constructors
        for side in 0..2 {
            for u in &st[side] {
                if let Some((sym, args)) = u.node() {
                    let mut others = Vec::new();
                    for a in args {
                        match by_side(side, a) {
                            Some(p) => others.push(if side == 0 { p.1.clone() } else { p.0.clone() }),
                            None => break,
                        }
                    }
                    if others.len() == args.len() {
                        let o = Term::app(sym, others);
                        let p = if side == 0 { (u.clone(), o) } else { (o, u.clone()) };
                        add(p, &mut out);
                    }
                }
            }
        }
        // destructors
        for c in pairs {
            let n = c.0.items().len().max(c.1.items().len());
            if c.0.is_seq() || c.1.is_seq() {
                for i in 1..=n as u32 {
                    add((c.0.proj(i), c.1.proj(i)), &mut out);
                }
            }
            let cipher = |t: &Term| matches!(t.node(), Some((Sym::EncA | Sym::EncS, _)));
            if cipher(&c.0) || cipher(&c.1) {
                for k in pairs {
                    add((Term::dec_a(c.0.clone(), k.0.clone()), Term::dec_a(c.1.clone(), k.1.clone())), &mut out);
                    add((Term::dec_s(c.0.clone(), k.0.clone()), Term::dec_s(c.1.clone(), k.1.clone())), &mut out);
                }
            }
            let sig = |t: &Term| matches!(t.node(), Some((Sym::Sig, _)));
            if sig(&c.0) || sig(&c.1) {
                for m in pairs {
                    for k in pairs {
                        add(
                            (
                                Term::checksig(c.0.clone(), m.0.clone(), k.0.clone()),
                                Term::checksig(c.1.clone(), m.1.clone(), k.1.clone()),
                            ),
                            &mut out,
                        );
                    }
                }
            }
        }
        out
    };
    for _ in 0..depth {
        if let Some(w) = check(&pairs) {
            return PairSearch { witness: Some(w), converged: true };
        }
        let new = step(&pairs, &mut seen);
        pairs.extend(new);
    }
    if let Some(w) = check(&pairs) {
        return PairSearch { witness: Some(w), converged: true };
    }
    let mut probe = seen.clone();
    let converged = step(&pairs, &mut probe).is_empty();
    PairSearch { witness: None, converged }
}
