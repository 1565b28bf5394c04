//! Randomized cross-checks of the knowledge procedures against the
//! brute-force enumerations.

use crate::knowledge::{brute_force_distinguisher, enumerate_derivable, static_equivalence, subterms, Saturation};
use crate::term::{s, Term};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deliberate fault used to check that disagreements are detected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Derivability ignores symmetric decryption.
    NoSymmetricDecryption,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleReport {
    pub knowledge_bases: usize,
    pub targets_checked: usize,
    pub kb_rejected: usize,
    pub kb_disagreements: usize,
    pub frame_pairs: usize,
    pub frames_equivalent: usize,
    pub frames_rejected: usize,
    pub frame_disagreements: usize,
    pub invalid_distinguishers: usize,
    pub first_disagreement: Option<String>,
}

impl OracleReport {
    pub fn disagreements(&self) -> usize {
        self.kb_disagreements + self.frame_disagreements + self.invalid_distinguishers
    }
}

struct Gen {
    rng: ChaCha8Rng,
    nonces: Vec<Term>,
    consts: Vec<Term>,
}

impl Gen {
    fn new(seed: u64) -> Self {
        Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            nonces: (1..=5).map(|i| Term::fresh(900, i)).collect(),
            consts: vec![s("a"), s("b")],
        }
    }

    fn atom(&mut self) -> Term {
        if self.rng.gen_bool(0.75) {
            self.nonces.choose(&mut self.rng).unwrap().clone()
        } else {
            self.consts.choose(&mut self.rng).unwrap().clone()
        }
    }

    fn key(&mut self) -> Term {
        if self.rng.gen_bool(0.85) {
            self.nonces.choose(&mut self.rng).unwrap().clone()
        } else {
            Term::pair(self.atom(), self.atom())
        }
    }

    fn term(&mut self, depth: usize) -> Term {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.atom();
        }
        match self.rng.gen_range(0..7) {
            0 | 1 => {
                let n = self.rng.gen_range(0..=3);
                Term::seq((0..n).map(|_| self.term(depth - 1)).collect())
            }
            2 => {
                let k = self.key();
                Term::enc_a(self.term(depth - 1), Term::pub_key(k))
            }
            3 => {
                let k = self.key();
                Term::enc_s(self.term(depth - 1), k)
            }
            4 => {
                let k = self.key();
                Term::sig(self.term(depth - 1), k)
            }
            5 => Term::pub_key(self.key()),
            _ => {
                let k = self.key();
                Term::dec_s(self.atom(), k)
            }
        }
    }

    fn kb(&mut self) -> Vec<Term> {
        let n = self.rng.gen_range(1..=6);
        (0..n).map(|_| self.term(3)).collect()
    }

    fn mutate(&mut self, t: &Term) -> Term {
        match self.rng.gen_range(0..5) {
            0 => t.clone(),
            1 => {
                // consistent renaming of one nonce into a fresh one
                let from = self.nonces.choose(&mut self.rng).unwrap().clone();
                let to = Term::fresh(901, 1);
                t.substitute(&from, &to)
            }
            2 => {
                // swap two nonces
                let a = self.nonces.choose(&mut self.rng).unwrap().clone();
                let b = self.nonces.choose(&mut self.rng).unwrap().clone();
                let tmp = Term::fresh(902, 0);
                t.substitute(&a, &tmp).substitute(&b, &a).substitute(&tmp, &b)
            }
            3 => {
                // replace a single occurrence of some subterm
                let subs: Vec<Term> = subterms(std::slice::from_ref(t)).into_iter().collect();
                let mut subs = subs;
                subs.sort();
                let target = subs.choose(&mut self.rng).unwrap().clone();
                let repl = self.term(1);
                let mut done = false;
                t.replace(&mut |u| {
                    if !done && *u == target {
                        done = true;
                        Some(repl.clone())
                    } else {
                        None
                    }
                })
            }
            _ => self.term(3),
        }
    }
}

fn faulty_derivable(facts: &[Term], t: &Term) -> bool {
    // analysis without symmetric decryption
    let stripped: Vec<Term> = facts
        .iter()
        .map(|f| {
            f.replace(&mut |u| match u.node() {
                Some((crate::term::Sym::EncS, _)) => Some(Term::fresh(903, 0)),
                _ => None,
            })
        })
        .collect();
    Saturation::from_facts(&stripped).derivable(t)
}

/// Cross-checks derivability on `kbs` accepted knowledge bases and static
/// equivalence on `frames` accepted frame pairs. Instances whose brute-force
/// closure does not converge within `depth` levels are rejected and counted.
pub fn run_oracle(kbs: usize, frames: usize, depth: usize, seed: u64, fault: Fault) -> OracleReport {
    let mut g = Gen::new(seed);
    let mut rep = OracleReport::default();
    let max_attempts = 50 * (kbs + frames) + 100;
    let mut attempts = 0;
    while rep.knowledge_bases < kbs && attempts < max_attempts {
        attempts += 1;
        let kb = g.kb();
        let extra: Vec<Term> = (0..3).map(|_| g.term(2)).collect();
        let mut targets: Vec<Term> = subterms(&kb).into_iter().collect();
        targets.extend(extra.iter().cloned());
        targets.sort();
        targets.dedup();
        let en = enumerate_derivable(&kb, depth, &extra);
        if !en.converged {
            rep.kb_rejected += 1;
            continue;
        }
        rep.knowledge_bases += 1;
        let sat = Saturation::from_facts(&kb);
        for t in &targets {
            if !t.is_message() {
                continue;
            }
            rep.targets_checked += 1;
            let fast = match fault {
                Fault::None => sat.derivable(t),
                Fault::NoSymmetricDecryption => faulty_derivable(&kb, t),
            };
            let slow = en.values.contains(t);
            if fast != slow {
                rep.kb_disagreements += 1;
                rep.first_disagreement.get_or_insert_with(|| {
                    format!(
                        "derivability of {t} from [{}]: saturation={fast} enumeration={slow}",
                        kb.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
                    )
                });
            }
        }
    }
    attempts = 0;
    while rep.frame_pairs < frames && attempts < max_attempts {
        attempts += 1;
        let n = g.rng.gen_range(1..=5);
        let f1: Vec<Term> = (0..n).map(|_| g.term(3)).collect();
        let t1 = Term::seq(f1);
        let t2 = g.mutate(&t1);
        let bf = brute_force_distinguisher(&t1, &t2, depth);
        if bf.witness.is_none() && !bf.converged {
            rep.frames_rejected += 1;
            continue;
        }
        rep.frame_pairs += 1;
        let fast = static_equivalence(&t1, &t2);
        if let Err(d) = &fast {
            if !d.is_valid() {
                rep.invalid_distinguishers += 1;
                rep.first_disagreement.get_or_insert_with(|| format!("invalid distinguisher for {t1} / {t2}: {d:?}"));
            }
        }
        let fast_eq = fast.is_ok();
        let slow_eq = bf.witness.is_none();
        if fast_eq {
            rep.frames_equivalent += 1;
        }
        if fast_eq != slow_eq {
            rep.frame_disagreements += 1;
            rep.first_disagreement.get_or_insert_with(|| {
                format!(
                    "static equivalence of {t1} / {t2}: saturation={fast_eq} search={slow_eq} witness={:?}",
                    bf.witness
                )
            });
        }
    }
    rep
}
