//! Canonical text encoding of terms.
//!
//! ```text
//! term    := string | "#ip" string | "true" | "bot" | "undef"
//!          | "n:" digits "." digits | "k:" string
//!          | "nu" digits | "lam" digits | "?" ident | "*"
//!          | "<" [ term { "," term } ] ">"
//!          | fname "(" term { "," term } ")"
//! fname   := "pub" | "enca" | "deca" | "encs" | "decs" | "sig" | "checksig"
//!          | "proj" digits
//! string  := '"' { char | "\\\"" | "\\\\" | "\\n" | "\\t" | "\\x" hex hex } '"'
//! ident   := { letter | digit | "_" | "@" | "." | "-" }+
//! ```
//!
//! Encoding never inserts whitespace; the parser skips ASCII whitespace between
//! tokens. Parsing does not reduce destructor applications, so recipes survive
//! a round trip unchanged.

use crate::term::{Nonce, Sym, Term};
use std::fmt::Write;

/// Parse failure with the byte offset where it happened.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("term parse error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn sym_name(sym: Sym) -> String {
    match sym {
        Sym::Seq => String::new(),
        Sym::Pub => "pub".into(),
        Sym::EncA => "enca".into(),
        Sym::DecA => "deca".into(),
        Sym::EncS => "encs".into(),
        Sym::DecS => "decs".into(),
        Sym::Sig => "sig".into(),
        Sym::CheckSig => "checksig".into(),
        Sym::Proj(i) => format!("proj{i}"),
    }
}

fn write_term(out: &mut String, t: &Term) {
    match t {
        Term::Str(s) => write_string(out, s),
        Term::Ip(s) => {
            out.push_str("#ip");
            write_string(out, s);
        }
        Term::True => out.push_str("true"),
        Term::Bot => out.push_str("bot"),
        Term::Undef => out.push_str("undef"),
        Term::Nonce(Nonce::Fresh { seed, index }) => {
            let _ = write!(out, "n:{seed}.{index}");
        }
        Term::Nonce(Nonce::Named(n)) => {
            out.push_str("k:");
            write_string(out, n);
        }
        Term::Nu(k) => {
            let _ = write!(out, "nu{k}");
        }
        Term::Lam(k) => {
            let _ = write!(out, "lam{k}");
        }
        Term::Var(v) => {
            out.push('?');
            out.push_str(v);
        }
        Term::Wild => out.push('*'),
        Term::Node(n) => {
            let (open, close) = if n.sym() == Sym::Seq {
                ('<', '>')
            } else {
                out.push_str(&sym_name(n.sym()));
                ('(', ')')
            };
            out.push(open);
            for (i, a) in n.args().iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_term(out, a);
            }
            out.push(close);
        }
    }
}

/// Encodes a term in the canonical text form.
pub fn to_text(t: &Term) -> String {
    let mut out = String::new();
    write_term(&mut out, t);
    out
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { pos: self.pos, msg: msg.into() })
    }

    fn ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> Result<(), ParseError> {
        self.ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s.as_bytes())
    }

    fn digits(&mut self) -> Result<u64, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected digits");
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap().parse().or_else(|_| self.err("number out of range"))
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.eat(b'"')?;
        let mut bytes = Vec::new();
        loop {
            match self.peek() {
                None => return self.err("unterminated string"),
                Some(b'"') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(b'"') => bytes.push(b'"'),
                        Some(b'\\') => bytes.push(b'\\'),
                        Some(b'n') => bytes.push(b'\n'),
                        Some(b't') => bytes.push(b'\t'),
                        Some(b'x') => {
                            let h = self
                                .src
                                .get(self.pos + 1..self.pos + 3)
                                .and_then(|h| std::str::from_utf8(h).ok())
                                .and_then(|h| u8::from_str_radix(h, 16).ok());
                            match h {
                                Some(b) => {
                                    bytes.push(b);
                                    self.pos += 2;
                                }
                                None => return self.err("bad \\x escape"),
                            }
                        }
                        _ => return self.err("bad escape"),
                    }
                    self.pos += 1;
                }
                Some(c) => {
                    bytes.push(c);
                    self.pos += 1;
                }
            }
        }
        String::from_utf8(bytes).or_else(|_| self.err("invalid utf-8 in string"))
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || b"_@.-".contains(&c)) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected identifier");
        }
        Ok(String::from_utf8(self.src[start..self.pos].to_vec()).unwrap())
    }

    fn args(&mut self, close: u8) -> Result<Vec<Term>, ParseError> {
        let mut args = Vec::new();
        self.ws();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.term()?);
            self.ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(args);
                }
                _ => return self.err(format!("expected ',' or '{}'", close as char)),
            }
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        self.ws();
        let Some(c) = self.peek() else {
            return self.err("unexpected end of input");
        };
        match c {
            b'"' => Ok(Term::str(&self.string()?)),
            b'*' => {
                self.pos += 1;
                Ok(Term::Wild)
            }
            b'?' => {
                self.pos += 1;
                Ok(Term::var(&self.ident()?))
            }
            b'<' => {
                self.pos += 1;
                let args = self.args(b'>')?;
                Ok(Term::raw(Sym::Seq, args))
            }
            b'#' => {
                if !self.starts_with("#ip") {
                    return self.err("expected #ip");
                }
                self.pos += 3;
                Ok(Term::ip(&self.string()?))
            }
            _ if self.starts_with("n:") => {
                self.pos += 2;
                let seed = self.digits()?;
                self.eat(b'.')?;
                let index = self.digits()?;
                Ok(Term::fresh(seed, index))
            }
            _ if self.starts_with("k:") => {
                self.pos += 2;
                Ok(Term::named(&self.string()?))
            }
            _ if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let word = word.to_string();
                match word.as_str() {
                    "true" => return Ok(Term::True),
                    "bot" => return Ok(Term::Bot),
                    "undef" => return Ok(Term::Undef),
                    _ => {}
                }
                let numbered = |prefix: &str| -> Option<u32> {
                    word.strip_prefix(prefix)
                        .filter(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
                        .and_then(|r| r.parse().ok())
                };
                if let Some(k) = numbered("nu") {
                    if k == 0 {
                        self.pos = start;
                        return self.err("placeholder index starts at 1");
                    }
                    return Ok(Term::Nu(k));
                }
                if let Some(k) = numbered("lam") {
                    if k == 0 {
                        self.pos = start;
                        return self.err("placeholder index starts at 1");
                    }
                    return Ok(Term::Lam(k));
                }
                let sym = match word.as_str() {
                    "pub" => Sym::Pub,
                    "enca" => Sym::EncA,
                    "deca" => Sym::DecA,
                    "encs" => Sym::EncS,
                    "decs" => Sym::DecS,
                    "sig" => Sym::Sig,
                    "checksig" => Sym::CheckSig,
                    w => match numbered("proj") {
                        Some(i) if i >= 1 => Sym::Proj(i),
                        _ => {
                            self.pos = start;
                            return self.err(format!("unknown symbol '{w}'"));
                        }
                    },
                };
                self.eat(b'(')?;
                let args = self.args(b')')?;
                if sym.arity() != Some(args.len()) {
                    self.pos = start;
                    return self.err(format!("wrong arity for '{word}'"));
                }
                Ok(Term::raw(sym, args))
            }
            _ => self.err(format!("unexpected character '{}'", c as char)),
        }
    }
}

/// Parses a term without applying any reduction.
pub fn parse(src: &str) -> Result<Term, ParseError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let t = p.term()?;
    p.ws();
    if p.pos != p.src.len() {
        return p.err("trailing input");
    }
    Ok(t)
}

/// Parses a term and returns its normal form.
pub fn parse_normal(src: &str) -> Result<Term, ParseError> {
    parse(src).map(|t| t.normalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_of_every_construct() {
        let src = r#"<"a\"b",#ip"1.2.3.4",true,bot,undef,n:3.17,k:"ssl:rp",nu2,lam4,?x1,*,pub(k:"a"),enca(<>,pub(k:"a")),deca(?x,k:"a"),encs("m",n:1.1),decs(?x,?y),sig("m",k:"s"),checksig(?x,"m",pub(k:"s")),proj12(?x)>"#;
        let t = parse(src).unwrap();
        assert_eq!(to_text(&t), src);
    }

    #[test]
    fn whitespace_is_skipped() {
        assert_eq!(parse(" < \"a\" , nu1 > ").unwrap(), Term::seq(vec![Term::str("a"), Term::Nu(1)]));
    }

    #[test]
    fn parse_keeps_redexes_until_normalized() {
        let t = parse("proj1(<\"a\",\"b\">)").unwrap();
        assert!(!t.is_normal());
        assert_eq!(parse_normal("proj1(<\"a\",\"b\">)").unwrap(), Term::str("a"));
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(parse("<\"a\",").unwrap_err().pos, 5);
        assert!(parse("foo(\"a\")").is_err());
        assert!(parse("pub(\"a\",\"b\")").is_err());
        assert!(parse("nu0").is_err());
        assert!(parse("proj0(<>)").is_err());
        assert!(parse("\"a\" x").is_err());
    }

    #[test]
    fn control_characters_are_escaped() {
        let t = Term::str("a\u{1}b\n");
        assert_eq!(to_text(&t), "\"a\\x01b\\n\"");
        assert_eq!(parse(&to_text(&t)).unwrap(), t);
    }
}
