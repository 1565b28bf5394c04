//! Worked examples of the term algebra with concrete values.

use spresso_model::knowledge::{derivable, static_equivalence};
use spresso_model::{s, Term};

fn k(i: u64) -> Term {
    Term::fresh(1, i)
}

#[test]
fn asymmetric_decryption_rule() {
    let t = Term::dec_a(Term::enc_a(s("x"), Term::pub_key(k(1))), k(1));
    assert_eq!(t.normalize(), s("x"));
}

#[test]
fn symmetric_decryption_rule() {
    let t = Term::dec_s(Term::enc_s(s("x"), k(2)), k(2));
    assert_eq!(t.normalize(), s("x"));
}

#[test]
fn signature_check_rule() {
    let t = Term::checksig(Term::sig(s("x"), k(1)), s("x"), Term::pub_key(k(1)));
    assert_eq!(t.normalize(), Term::True);
    let wrong = Term::checksig(Term::sig(s("x"), k(1)), s("x"), Term::pub_key(k(2)));
    assert_ne!(wrong.normalize(), Term::True);
}

#[test]
fn projection_rules() {
    let t = Term::seq(vec![s("x1"), s("x2"), s("x3")]);
    for i in 1..=3 {
        assert_eq!(t.proj(i).normalize(), s(&format!("x{i}")));
    }
    assert_eq!(t.proj(4).normalize(), Term::Undef);
    assert_eq!(t.proj(0).normalize(), Term::Undef);
}

#[test]
fn projection_of_decrypted_pair() {
    let t = Term::dec_a(Term::enc_a(Term::pair(s("a"), s("b")), Term::pub_key(k(1))), k(1)).proj(1);
    assert_eq!(t.normalize(), s("a"));
}

#[test]
fn decrypting_an_encrypted_request() {
    let r = Term::seq(vec![
        s("HTTPReq"),
        k(3),
        s("GET"),
        s("example.com"),
        s("/show"),
        Term::dict(vec![(s("p"), s("1"))]),
        Term::empty(),
        Term::empty(),
    ]);
    let request = Term::enc_a(Term::pair(r.clone(), k(4)), Term::pub_key(k(5)));
    assert!(Term::dec_a(request, k(5)).normalize().equiv(&Term::pair(r, k(4))));
}

#[test]
fn derivation_with_empty_nonce_set() {
    let facts = [Term::enc_a(Term::seq(vec![s("a"), s("b"), s("c")]), Term::pub_key(k(1))), k(1)];
    assert!(derivable(&facts, &s("a")));
    let secret = Term::enc_a(Term::seq(vec![k(7), s("b"), s("c")]), Term::pub_key(k(1)));
    assert!(!derivable(std::slice::from_ref(&secret), &k(7)));
    assert!(derivable(&[secret, k(1)], &k(7)));
}

#[test]
fn pattern_matching_and_filter() {
    let p = Term::pair(Term::True, Term::Wild);
    assert!(Term::pair(Term::True, s("42")).matches(&p));
    assert!(!Term::pair(Term::Bot, s("42")).matches(&p));
    let t = Term::seq(vec![
        Term::pair(Term::Bot, Term::True),
        Term::pair(Term::True, s("23")),
        Term::pair(s("a"), s("b")),
        Term::pair(Term::True, Term::Bot),
    ]);
    let expected = Term::seq(vec![Term::pair(Term::True, s("23")), Term::pair(Term::True, Term::Bot)]);
    assert_eq!(t.filter_by_pattern(&p), expected);
}

#[test]
fn subterm_pointer() {
    let tau = Term::seq(vec![s("a"), s("b"), Term::seq(vec![s("c"), s("d"), Term::pair(s("e"), s("f"))])]);
    assert_eq!(tau.subterm_at(&[3, 1]), s("c"));
    assert_eq!(tau.proj(3).proj(1).normalize(), s("c"));
    assert_eq!(tau.subterm_at(&[3]).subterm_at(&[3, 1]), s("e"));
    assert_eq!(tau.subterm_at(&[3, 3, 1]), s("e"));
}

#[test]
fn url_component_update() {
    let u = Term::seq(vec![s("URL"), s("a"), s("b"), s("c"), s("d")]);
    assert_eq!(u.at(2), s("a"));
    assert_eq!(u.with_field(4, s("e")), Term::seq(vec![s("URL"), s("a"), s("b"), s("e"), s("d")]));
}

#[test]
fn encrypted_requests_with_unknown_key_are_statically_equivalent() {
    let (key, k_sym) = (k(1), k(2));
    let t1 = Term::enc_a(Term::pair(s("r"), k_sym.clone()), Term::pub_key(key.clone()));
    let t2 = Term::enc_a(Term::pair(s("r'"), k_sym), Term::pub_key(key.clone()));
    assert!(static_equivalence(&t1, &t2).is_ok());
    let with_key = |t: &Term| Term::pair(t.clone(), key.clone());
    assert!(static_equivalence(&with_key(&t1), &with_key(&t2)).is_err());
}
