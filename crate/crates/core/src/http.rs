//! Typed views over URLs, origins, cookies, HTTP(S) and DNS message terms.

use crate::term::{s, Sym, Term};

pub const HTTP_REQ: &str = "HTTPReq";
pub const HTTP_RESP: &str = "HTTPResp";
pub const URL: &str = "URL";
pub const PLAIN: &str = "P";
pub const SECURE: &str = "S";
pub const GET: &str = "GET";
pub const POST: &str = "POST";
pub const HEAD: &str = "HEAD";
pub const DNS_RESOLVE: &str = "DNSResolve";
pub const DNS_RESOLVED: &str = "DNSResolved";
pub const TRIGGER: &str = "TRIGGER";
pub const CORRUPT: &str = "CORRUPT";
pub const FULLCORRUPT: &str = "FULLCORRUPT";
pub const CLOSECORRUPT: &str = "CLOSECORRUPT";
pub const H_ORIGIN: &str = "Origin";
pub const H_SET_COOKIE: &str = "Set-Cookie";
pub const H_COOKIE: &str = "Cookie";
pub const H_LOCATION: &str = "Location";
pub const H_REFERER: &str = "Referer";
pub const H_STS: &str = "Strict-Transport-Security";

/// The HTTP methods of the model.
pub const METHODS: [&str; 6] = ["GET", "HEAD", "POST", "CONNECT", "TRACE", "TRACK"];

pub fn is_method(t: &Term) -> bool {
    METHODS.iter().any(|m| t.is_str(m))
}

pub fn is_protocol(t: &Term) -> bool {
    t.is_str(PLAIN) || t.is_str(SECURE)
}

/// Domains are string constants.
pub fn is_domain(t: &Term) -> bool {
    matches!(t, Term::Str(_))
}

/// `⟨URL, protocol, host, path, parameters⟩`.
pub fn url(protocol: &str, host: &Term, path: &str, params: Term) -> Term {
    Term::seq(vec![s(URL), s(protocol), host.clone(), s(path), params])
}

/// Whether `t` has the shape of a URL.
pub fn is_url(t: &Term) -> bool {
    match t.as_seq() {
        Some(f) => {
            f.len() == 5
                && f[0].is_str(URL)
                && is_protocol(&f[1])
                && is_domain(&f[2])
                && matches!(f[3], Term::Str(_))
                && f[4].is_seq()
        }
        None => false,
    }
}

/// Borrowed view of a URL term.
#[derive(Clone, Debug)]
pub struct Url<'a> {
    pub protocol: &'a Term,
    pub host: &'a Term,
    pub path: &'a Term,
    pub params: &'a Term,
}

impl<'a> Url<'a> {
    pub fn view(t: &'a Term) -> Option<Url<'a>> {
        if !is_url(t) {
            return None;
        }
        let f = t.as_seq()?;
        Some(Url { protocol: &f[1], host: &f[2], path: &f[3], params: &f[4] })
    }

    pub fn origin(&self) -> Term {
        Term::pair(self.host.clone(), self.protocol.clone())
    }
}

/// `⟨host, protocol⟩`.
pub fn origin(host: &Term, protocol: &str) -> Term {
    Term::pair(host.clone(), s(protocol))
}

pub fn is_origin(t: &Term) -> bool {
    t.as_seq().is_some_and(|f| f.len() == 2 && is_domain(&f[0]) && is_protocol(&f[1]))
}

/// `⟨name, ⟨value, secure, session, httpOnly⟩⟩` with boolean flags.
pub fn is_cookie(t: &Term) -> bool {
    match t.as_seq() {
        Some(f) if f.len() == 2 => match f[1].as_seq() {
            Some(c) => c.len() == 4 && c[1..].iter().all(|b| matches!(b, Term::True | Term::Bot)),
            None => false,
        },
        _ => false,
    }
}

pub fn cookie(name: Term, value: Term, secure: bool, session: bool, http_only: bool) -> Term {
    Term::pair(name, Term::seq(vec![value, Term::boolean(secure), Term::boolean(session), Term::boolean(http_only)]))
}

/// `⟨HTTPReq, nonce, method, host, path, parameters, headers, body⟩`.
#[allow(clippy::too_many_arguments)]
pub fn request(nonce: Term, method: &Term, host: &Term, path: &Term, params: Term, headers: Term, body: Term) -> Term {
    Term::seq(vec![s(HTTP_REQ), nonce, method.clone(), host.clone(), path.clone(), params, headers, body])
}

/// `⟨HTTPResp, nonce, status, headers, body⟩`.
pub fn response(nonce: Term, status: &str, headers: Term, body: Term) -> Term {
    Term::seq(vec![s(HTTP_RESP), nonce, s(status), headers, body])
}

/// Field indices of HTTP requests and responses.
pub mod req {
    pub const NONCE: usize = 2;
    pub const METHOD: usize = 3;
    pub const HOST: usize = 4;
    pub const PATH: usize = 5;
    pub const PARAMS: usize = 6;
    pub const HEADERS: usize = 7;
    pub const BODY: usize = 8;
}
pub mod resp {
    pub const NONCE: usize = 2;
    pub const STATUS: usize = 3;
    pub const HEADERS: usize = 4;
    pub const BODY: usize = 5;
}

pub fn is_request(t: &Term) -> bool {
    t.as_seq().is_some_and(|f| {
        f.len() == 8
            && f[0].is_str(HTTP_REQ)
            && is_method(&f[2])
            && is_domain(&f[3])
            && matches!(f[4], Term::Str(_))
            && f[5].is_seq()
            && f[6].is_seq()
    })
}

pub fn is_response(t: &Term) -> bool {
    t.as_seq().is_some_and(|f| f.len() == 5 && f[0].is_str(HTTP_RESP) && matches!(f[2], Term::Str(_)) && f[3].is_seq())
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum HttpError {
    #[error("not-http-request")]
    NotHttpRequest,
    #[error("not-http-response")]
    NotHttpResponse,
    #[error("undecryptable")]
    Undecryptable,
}

/// `enc_a(⟨req, sym⟩, pubkey)`.
pub fn https_wrap_request(req: &Term, sym: &Term, pubkey: &Term) -> Result<Term, HttpError> {
    if !is_request(req) {
        return Err(HttpError::NotHttpRequest);
    }
    Ok(Term::enc_a(Term::pair(req.clone(), sym.clone()), pubkey.clone()))
}

/// Decrypts an HTTPS request and returns the request and its response key.
pub fn https_unwrap_request(m: &Term, privkey: &Term) -> Result<(Term, Term), HttpError> {
    let p = Term::dec_a(m.clone(), privkey.clone());
    match p.as_seq() {
        Some(f) if f.len() == 2 && is_request(&f[0]) => Ok((f[0].clone(), f[1].clone())),
        _ => Err(HttpError::Undecryptable),
    }
}

/// `enc_s(resp, sym)`.
pub fn https_wrap_response(resp: &Term, sym: &Term) -> Result<Term, HttpError> {
    if !is_response(resp) {
        return Err(HttpError::NotHttpResponse);
    }
    Ok(Term::enc_s(resp.clone(), sym.clone()))
}

pub fn https_unwrap_response(m: &Term, sym: &Term) -> Result<Term, HttpError> {
    let p = Term::dec_s(m.clone(), sym.clone());
    if is_response(&p) {
        Ok(p)
    } else {
        Err(HttpError::Undecryptable)
    }
}

/// `⟨DNSResolve, domain, n⟩`.
pub fn dns_request(domain: &Term, n: Term) -> Term {
    Term::seq(vec![s(DNS_RESOLVE), domain.clone(), n])
}

/// `⟨DNSResolved, domain, result, n⟩`.
pub fn dns_response(domain: &Term, result: &Term, n: &Term) -> Term {
    Term::seq(vec![s(DNS_RESOLVED), domain.clone(), result.clone(), n.clone()])
}

/// Coarse message class used for dispatch and statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageClass {
    DnsReq,
    DnsResp,
    HttpReq,
    HttpResp,
    EncHttpReq,
    EncHttpResp,
    Trigger,
    CorruptFull,
    CorruptClose,
    Corrupt,
    Other,
}

impl MessageClass {
    pub fn name(self) -> &'static str {
        match self {
            MessageClass::DnsReq => "dns-req",
            MessageClass::DnsResp => "dns-resp",
            MessageClass::HttpReq => "http-req",
            MessageClass::HttpResp => "http-resp",
            MessageClass::EncHttpReq => "enc-http-req",
            MessageClass::EncHttpResp => "enc-http-resp",
            MessageClass::Trigger => "trigger",
            MessageClass::CorruptFull => "corrupt-full",
            MessageClass::CorruptClose => "corrupt-close",
            MessageClass::Corrupt => "corrupt",
            MessageClass::Other => "other",
        }
    }

    /// HTTP requests and responses, plain or encrypted.
    pub fn is_http(self) -> bool {
        matches!(
            self,
            MessageClass::HttpReq | MessageClass::HttpResp | MessageClass::EncHttpReq | MessageClass::EncHttpResp
        )
    }
}

/// Structural classification of a message.
pub fn classify_message(m: &Term) -> MessageClass {
    let m = m.normalize();
    match &m {
        Term::Str(x) => match &**x {
            TRIGGER => MessageClass::Trigger,
            FULLCORRUPT => MessageClass::CorruptFull,
            CLOSECORRUPT => MessageClass::CorruptClose,
            CORRUPT => MessageClass::Corrupt,
            _ => MessageClass::Other,
        },
        _ => {
            if let Some(f) = m.as_seq() {
                if f.len() == 3 && f[0].is_str(DNS_RESOLVE) {
                    return MessageClass::DnsReq;
                }
                if f.len() == 4 && f[0].is_str(DNS_RESOLVED) {
                    return MessageClass::DnsResp;
                }
                if is_request(&m) {
                    return MessageClass::HttpReq;
                }
                if is_response(&m) {
                    return MessageClass::HttpResp;
                }
                return MessageClass::Other;
            }
            match m.node() {
                Some((Sym::EncA, a)) => match a[0].as_seq() {
                    Some(p) if p.len() == 2 && is_request(&p[0]) => MessageClass::EncHttpReq,
                    _ => MessageClass::Other,
                },
                Some((Sym::EncS, a)) if is_response(&a[0]) => MessageClass::EncHttpResp,
                _ => MessageClass::Other,
            }
        }
    }
}
