//! Symbolic terms over the model signature, the equational theory, pattern
//! matching, subterm paths and term dictionaries.
//!
//! Terms are immutable and cheap to clone. Compound nodes cache a structural
//! hash and a few flags so that equality checks, hashing and normalization of
//! already-normal subtrees are constant time.

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// An opaque nonce. Fresh nonces come from the run's nonce sequence, named
/// nonces are the long-lived secrets fixed by a scenario (keys, passwords).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Nonce {
    Fresh { seed: u64, index: u64 },
    Named(Arc<str>),
}

/// Function symbols of the signature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    Seq,
    Pub,
    EncA,
    DecA,
    EncS,
    DecS,
    Sig,
    CheckSig,
    /// `proj_i` with a 1-based index.
    Proj(u32),
}

impl Sym {
    /// Fixed arity of the symbol, `None` for variadic sequences.
    pub fn arity(self) -> Option<usize> {
        match self {
            Sym::Seq => None,
            Sym::Pub | Sym::Proj(_) => Some(1),
            Sym::EncA | Sym::DecA | Sym::EncS | Sym::DecS | Sym::Sig => Some(2),
            Sym::CheckSig => Some(3),
        }
    }

    /// Destructor symbols are the left-hand heads of the rewrite rules.
    pub fn is_destructor(self) -> bool {
        matches!(self, Sym::DecA | Sym::DecS | Sym::CheckSig | Sym::Proj(_))
    }
}

const F_NU: u8 = 1;
const F_LAM: u8 = 2;
const F_VAR: u8 = 4;
const F_NOT_NORMAL: u8 = 8;
const F_NONCE: u8 = 16;

/// A compound term `sym(args...)`.
#[derive(Debug)]
pub struct Node {
    sym: Sym,
    args: Box<[Term]>,
    hash: u64,
    flags: u8,
}

impl Node {
    pub fn sym(&self) -> Sym {
        self.sym
    }
    pub fn args(&self) -> &[Term] {
        &self.args
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self, other) || (self.hash == other.hash && self.sym == other.sym && self.args == other.args)
    }
}
impl Eq for Node {}

impl Hash for Node {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.hash);
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        if std::ptr::eq(self, other) {
            return Ordering::Equal;
        }
        self.sym.cmp(&other.sym).then_with(|| self.args.cmp(&other.args))
    }
}

/// A term of the model. See the README for the textual encoding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Str(Arc<str>),
    Ip(Arc<str>),
    True,
    Bot,
    Undef,
    Nonce(Nonce),
    /// Process placeholder `ν_k`.
    Nu(u32),
    /// Script placeholder `λ_k`.
    Lam(u32),
    /// Recipe or pattern variable.
    Var(Arc<str>),
    /// Pattern wildcard.
    Wild,
    Node(Arc<Node>),
}

/// Errors of term operations.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TermError {
    #[error("path-miss")]
    PathMiss,
}

fn hash_of(t: &Term) -> u64 {
    match t {
        Term::Node(n) => n.hash,
        _ => {
            let mut h = DefaultHasher::new();
            t.hash(&mut h);
            h.finish()
        }
    }
}

fn atom_flags(t: &Term) -> u8 {
    match t {
        Term::Node(n) => n.flags,
        Term::Nu(_) => F_NU,
        Term::Lam(_) => F_LAM,
        Term::Var(_) | Term::Wild => F_VAR,
        Term::Nonce(_) => F_NONCE,
        _ => 0,
    }
}

/// Root reduction for a node whose arguments are already in normal form.
/// Returns `None` when the root is not a redex.
fn reduce_root(sym: Sym, args: &[Term]) -> Option<Term> {
    match sym {
        Sym::DecA => {
            let (m, k) = (&args[0], &args[1]);
            if let Some((Sym::EncA, ea)) = m.node() {
                if let Some((Sym::Pub, pa)) = ea[1].node() {
                    if &pa[0] == k {
                        return Some(ea[0].clone());
                    }
                }
            }
            None
        }
        Sym::DecS => {
            let (m, k) = (&args[0], &args[1]);
            if let Some((Sym::EncS, ea)) = m.node() {
                if &ea[1] == k {
                    return Some(ea[0].clone());
                }
            }
            None
        }
        Sym::CheckSig => {
            if let Some((Sym::Sig, sa)) = args[0].node() {
                if let Some((Sym::Pub, pa)) = args[2].node() {
                    if sa[0] == args[1] && sa[1] == pa[0] {
                        return Some(Term::True);
                    }
                }
            }
            None
        }
        Sym::Proj(i) => match args[0].node() {
            Some((Sym::Seq, items)) => Some(items.get((i as usize).wrapping_sub(1)).cloned().unwrap_or(Term::Undef)),
            _ => None,
        },
        _ => None,
    }
}

impl Term {
    /// Builds `sym(args)` without reducing anything. Used for recipes and by the
    /// parser so that destructor applications survive until evaluation.
    pub fn raw(sym: Sym, args: Vec<Term>) -> Term {
        if let Some(a) = sym.arity() {
            assert_eq!(a, args.len(), "arity mismatch for {sym:?}");
        }
        if let Sym::Proj(i) = sym {
            assert!(i >= 1, "projection index starts at 1");
        }
        let mut h = DefaultHasher::new();
        sym.hash(&mut h);
        let mut flags = 0u8;
        for a in &args {
            h.write_u64(hash_of(a));
            flags |= atom_flags(a);
        }
        if flags & F_NOT_NORMAL == 0 && reduce_root(sym, &args).is_some() {
            flags |= F_NOT_NORMAL;
        }
        Term::Node(Arc::new(Node { sym, args: args.into_boxed_slice(), hash: h.finish(), flags }))
    }

    /// Builds `sym(args)` and reduces the root. Arguments that are not in normal
    /// form are normalized first, so the result is always normal.
    pub fn app(sym: Sym, args: Vec<Term>) -> Term {
        let args: Vec<Term> =
            if args.iter().any(|a| !a.is_normal()) { args.iter().map(|a| a.normalize()).collect() } else { args };
        if let Some(r) = reduce_root(sym, &args) {
            return r;
        }
        Term::raw(sym, args)
    }

    pub fn str(s: &str) -> Term {
        Term::Str(Arc::from(s))
    }
    pub fn ip(s: &str) -> Term {
        Term::Ip(Arc::from(s))
    }
    pub fn var(s: &str) -> Term {
        Term::Var(Arc::from(s))
    }
    pub fn named(s: &str) -> Term {
        Term::Nonce(Nonce::Named(Arc::from(s)))
    }
    pub fn fresh(seed: u64, index: u64) -> Term {
        Term::Nonce(Nonce::Fresh { seed, index })
    }
    pub fn seq(items: Vec<Term>) -> Term {
        Term::app(Sym::Seq, items)
    }
    pub fn empty() -> Term {
        Term::seq(Vec::new())
    }
    pub fn pair(a: Term, b: Term) -> Term {
        Term::seq(vec![a, b])
    }
    pub fn pub_key(k: Term) -> Term {
        Term::app(Sym::Pub, vec![k])
    }
    pub fn enc_a(m: Term, k: Term) -> Term {
        Term::app(Sym::EncA, vec![m, k])
    }
    pub fn dec_a(m: Term, k: Term) -> Term {
        Term::app(Sym::DecA, vec![m, k])
    }
    pub fn enc_s(m: Term, k: Term) -> Term {
        Term::app(Sym::EncS, vec![m, k])
    }
    pub fn dec_s(m: Term, k: Term) -> Term {
        Term::app(Sym::DecS, vec![m, k])
    }
    pub fn sig(m: Term, k: Term) -> Term {
        Term::app(Sym::Sig, vec![m, k])
    }
    pub fn checksig(s: Term, m: Term, pk: Term) -> Term {
        Term::app(Sym::CheckSig, vec![s, m, pk])
    }
    /// `proj_i(t)`: the i-th element of a sequence, `♦` when out of range and a
    /// stuck projection for non-sequences.
    pub fn proj(&self, i: u32) -> Term {
        Term::app(Sym::Proj(i), vec![self.clone()])
    }
    pub fn boolean(b: bool) -> Term {
        if b {
            Term::True
        } else {
            Term::Bot
        }
    }

    /// The symbol and arguments of a compound term.
    pub fn node(&self) -> Option<(Sym, &[Term])> {
        match self {
            Term::Node(n) => Some((n.sym, &n.args)),
            _ => None,
        }
    }

    /// Elements of a sequence term.
    pub fn as_seq(&self) -> Option<&[Term]> {
        match self.node() {
            Some((Sym::Seq, a)) => Some(a),
            _ => None,
        }
    }

    pub fn is_seq(&self) -> bool {
        self.as_seq().is_some()
    }

    /// Sequence elements, or an empty slice for anything else.
    pub fn items(&self) -> &[Term] {
        self.as_seq().unwrap_or(&[])
    }

    /// 1-based element access for sequences without building a projection.
    pub fn at(&self, i: usize) -> Term {
        match self.as_seq() {
            Some(items) => items.get(i.wrapping_sub(1)).cloned().unwrap_or(Term::Undef),
            None => Term::Undef,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Term::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_str(&self, s: &str) -> bool {
        matches!(self, Term::Str(x) if &**x == s)
    }

    pub fn is_nonce(&self) -> bool {
        matches!(self, Term::Nonce(_))
    }

    pub fn is_ip(&self) -> bool {
        matches!(self, Term::Ip(_))
    }

    /// Public constants of the signature (strings, addresses, booleans, `♦`).
    pub fn is_constant(&self) -> bool {
        matches!(self, Term::Str(_) | Term::Ip(_) | Term::True | Term::Bot | Term::Undef)
    }

    fn flags(&self) -> u8 {
        atom_flags(self)
    }

    pub fn is_normal(&self) -> bool {
        self.flags() & F_NOT_NORMAL == 0
    }
    /// No variables and no wildcards.
    pub fn is_ground(&self) -> bool {
        self.flags() & F_VAR == 0
    }
    pub fn has_placeholders(&self) -> bool {
        self.flags() & (F_NU | F_LAM) != 0
    }
    pub fn has_nu(&self) -> bool {
        self.flags() & F_NU != 0
    }
    pub fn has_lam(&self) -> bool {
        self.flags() & F_LAM != 0
    }
    pub fn has_nonce(&self) -> bool {
        self.flags() & F_NONCE != 0
    }
    /// Ground and placeholder free.
    pub fn is_message(&self) -> bool {
        self.flags() & (F_VAR | F_NU | F_LAM) == 0
    }

    /// The unique normal form under the rewrite rules.
    pub fn normalize(&self) -> Term {
        if self.is_normal() {
            return self.clone();
        }
        match self {
            Term::Node(n) => {
                let args: Vec<Term> = n.args.iter().map(|a| a.normalize()).collect();
                match reduce_root(n.sym, &args) {
                    Some(r) => r,
                    None => Term::raw(n.sym, args),
                }
            }
            _ => self.clone(),
        }
    }

    /// Equality modulo the equational theory.
    pub fn equiv(&self, other: &Term) -> bool {
        self.normalize() == other.normalize()
    }

    /// Number of symbol and atom occurrences.
    pub fn size(&self) -> usize {
        match self {
            Term::Node(n) => 1 + n.args.iter().map(|a| a.size()).sum::<usize>(),
            _ => 1,
        }
    }

    /// Height of the term, atoms have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Term::Node(n) => 1 + n.args.iter().map(|a| a.depth()).max().unwrap_or(0),
            _ => 0,
        }
    }

    /// Visits every subterm in pre-order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Term)) {
        f(self);
        if let Term::Node(n) = self {
            for a in n.args.iter() {
                a.visit(f);
            }
        }
    }

    /// Rebuilds the term bottom-up, replacing atoms through `f`; compound nodes
    /// are re-normalized.
    pub fn map_atoms(&self, f: &mut dyn FnMut(&Term) -> Option<Term>) -> Term {
        match self {
            Term::Node(n) => {
                let args: Vec<Term> = n.args.iter().map(|a| a.map_atoms(f)).collect();
                Term::app(n.sym, args)
            }
            _ => f(self).unwrap_or_else(|| self.clone()),
        }
    }

    /// Like [`Term::map_atoms`] but keeps the result unreduced.
    pub fn map_atoms_raw(&self, f: &mut dyn FnMut(&Term) -> Option<Term>) -> Term {
        match self {
            Term::Node(n) => {
                let args: Vec<Term> = n.args.iter().map(|a| a.map_atoms_raw(f)).collect();
                Term::raw(n.sym, args)
            }
            _ => f(self).unwrap_or_else(|| self.clone()),
        }
    }

    /// Replaces the subterms selected by `f` (checked top-down).
    pub fn replace(&self, f: &mut dyn FnMut(&Term) -> Option<Term>) -> Term {
        if let Some(r) = f(self) {
            return r;
        }
        match self {
            Term::Node(n) => {
                let args: Vec<Term> = n.args.iter().map(|a| a.replace(f)).collect();
                Term::app(n.sym, args)
            }
            _ => self.clone(),
        }
    }

    /// Substitutes every occurrence of `from` by `to` and normalizes.
    pub fn substitute(&self, from: &Term, to: &Term) -> Term {
        self.replace(&mut |t| if t == from { Some(to.clone()) } else { None })
    }

    /// Largest placeholder index of the given kind.
    pub fn max_placeholder(&self, lam: bool) -> u32 {
        let mut m = 0;
        if !(if lam { self.has_lam() } else { self.has_nu() }) {
            return 0;
        }
        self.visit(&mut |t| match t {
            Term::Nu(k) if !lam => m = m.max(*k),
            Term::Lam(k) if lam => m = m.max(*k),
            _ => {}
        });
        m
    }

    /// `τ.p`: follows a 1-based path through sequences, `♦` on failure.
    pub fn subterm_at(&self, path: &[usize]) -> Term {
        let mut cur = self;
        for &i in path {
            match cur.as_seq().and_then(|items| items.get(i.wrapping_sub(1))) {
                Some(next) => cur = next,
                None => return Term::Undef,
            }
        }
        cur.clone()
    }

    /// Returns the term with the subterm at `path` replaced by `v`.
    pub fn set_subterm(&self, path: &[usize], v: Term) -> Result<Term, TermError> {
        let Some((&first, rest)) = path.split_first() else {
            return Ok(v);
        };
        let items = self.as_seq().ok_or(TermError::PathMiss)?;
        if first == 0 || first > items.len() {
            return Err(TermError::PathMiss);
        }
        let mut new_items = items.to_vec();
        new_items[first - 1] = items[first - 1].set_subterm(rest, v)?;
        Ok(Term::seq(new_items))
    }

    /// Sets the 1-based field `i` of a sequence, panicking when absent. Used for
    /// the fixed-shape state records built by this crate.
    pub fn with_field(&self, i: usize, v: Term) -> Term {
        self.set_subterm(&[i], v).expect("state record field")
    }

    /// Pattern matching with independently matching wildcards and variables
    /// treated as wildcards.
    pub fn matches(&self, pattern: &Term) -> bool {
        match pattern {
            Term::Wild | Term::Var(_) => true,
            Term::Node(p) => match self {
                Term::Node(n) => {
                    if std::ptr::eq(&**n, &**p) {
                        return true;
                    }
                    n.sym == p.sym
                        && n.args.len() == p.args.len()
                        && n.args.iter().zip(p.args.iter()).all(|(a, b)| a.matches(b))
                }
                _ => false,
            },
            _ => self == pattern,
        }
    }

    /// Keeps the immediate children of a sequence that match `pattern`; any
    /// other input yields the empty sequence.
    pub fn filter_by_pattern(&self, pattern: &Term) -> Term {
        match self.as_seq() {
            Some(items) => Term::seq(items.iter().filter(|t| t.matches(pattern)).cloned().collect()),
            None => Term::empty(),
        }
    }

    /// `t ∈ s` for a sequence `s`.
    pub fn contains_item(&self, t: &Term) -> bool {
        self.items().iter().any(|x| x == t)
    }

    /// `s +⟨⟩ t`: appends an element to a sequence (a non-sequence is treated
    /// as empty).
    pub fn push(&self, t: Term) -> Term {
        let mut v = self.items().to_vec();
        v.push(t);
        Term::seq(v)
    }

    /// `s −⟨⟩ t`: removes the first occurrence of an element.
    pub fn remove_item(&self, t: &Term) -> Term {
        let mut v = self.items().to_vec();
        if let Some(p) = v.iter().position(|x| x == t) {
            v.remove(p);
        }
        Term::seq(v)
    }

    // Dictionaries: sequences of ⟨key, value⟩ pairs with unique keys.

    fn dict_pos(&self, k: &Term) -> Option<usize> {
        self.items().iter().position(|e| e.as_seq().is_some_and(|p| p.len() == 2 && &p[0] == k))
    }

    /// `d[k]`, or `⟨⟩` when the key is absent.
    pub fn dict_get(&self, k: &Term) -> Term {
        match self.dict_pos(k) {
            Some(p) => self.items()[p].at(2),
            None => Term::empty(),
        }
    }

    pub fn dict_has(&self, k: &Term) -> bool {
        self.dict_pos(k).is_some()
    }

    /// `d[k] := v`: replaces in place or appends.
    pub fn dict_put(&self, k: Term, v: Term) -> Term {
        let mut items = self.items().to_vec();
        let entry = Term::pair(k.clone(), v);
        match self.dict_pos(&k) {
            Some(p) => items[p] = entry,
            None => items.push(entry),
        }
        Term::seq(items)
    }

    /// `d − k`: removes the entry for `k`.
    pub fn dict_remove(&self, k: &Term) -> Term {
        match self.dict_pos(k) {
            Some(p) => {
                let mut items = self.items().to_vec();
                items.remove(p);
                Term::seq(items)
            }
            None => self.clone(),
        }
    }

    /// Keys of a dictionary in order.
    pub fn dict_keys(&self) -> Vec<Term> {
        self.items().iter().filter_map(|e| e.as_seq().filter(|p| p.len() == 2).map(|p| p[0].clone())).collect()
    }

    /// Builds a dictionary from pairs.
    pub fn dict(entries: Vec<(Term, Term)>) -> Term {
        let mut d = Term::empty();
        for (k, v) in entries {
            d = d.dict_put(k, v);
        }
        d
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::encode::to_text(self))
    }
}

/// Shorthand for string constants.
pub fn s(x: &str) -> Term {
    Term::str(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_destructor_is_not_normal_until_normalized() {
        let k = Term::named("k");
        let r = Term::raw(Sym::DecA, vec![Term::enc_a(s("m"), Term::pub_key(k.clone())), k.clone()]);
        assert!(!r.is_normal());
        assert_eq!(r.normalize(), s("m"));
    }

    #[test]
    fn mismatched_key_stays_stuck() {
        let t = Term::dec_a(Term::enc_a(s("m"), Term::pub_key(Term::named("k"))), Term::named("j"));
        assert!(matches!(t.node(), Some((Sym::DecA, _))));
        assert!(t.is_normal());
    }

    #[test]
    fn hash_and_eq_agree_for_rebuilt_terms() {
        use std::collections::HashSet;
        let a = Term::seq(vec![s("a"), Term::fresh(1, 2)]);
        let b = Term::seq(vec![s("a"), Term::fresh(1, 2)]);
        let mut set = HashSet::new();
        set.insert(a);
        assert!(set.contains(&b));
    }

    #[test]
    fn flags_track_placeholders_and_variables() {
        let t = Term::seq(vec![Term::Nu(1), s("x")]);
        assert!(t.has_nu() && !t.is_message() && t.is_ground());
        let p = Term::seq(vec![Term::Wild]);
        assert!(!p.is_ground());
        assert!(Term::seq(vec![s("a")]).is_message());
    }

    #[test]
    fn dictionary_put_replaces_in_place() {
        let d = Term::dict(vec![(s("a"), s("1")), (s("b"), s("2"))]);
        let d2 = d.dict_put(s("a"), s("3"));
        assert_eq!(d2.dict_keys(), vec![s("a"), s("b")]);
        assert_eq!(d2.dict_get(&s("a")), s("3"));
    }

    #[test]
    fn max_placeholder_by_kind() {
        let t = Term::seq(vec![Term::Nu(3), Term::Lam(5), Term::Nu(1)]);
        assert_eq!(t.max_placeholder(false), 3);
        assert_eq!(t.max_placeholder(true), 5);
    }
}
