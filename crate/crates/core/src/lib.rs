//! A deterministic, schedule-driven execution engine for a Dolev-Yao style web
//! model instantiated with the SPRESSO single sign-on protocol, together with
//! checkers for its authentication and IdP-privacy properties.

pub mod browser;
pub mod builder;
pub mod encode;
pub mod fixtures;
pub mod fuzz;
pub mod http;
pub mod knowledge;
pub mod oracle;
pub mod parties;
pub mod properties;
pub mod runtime;
pub mod scripts;
pub mod term;

pub use term::{s, Nonce, Sym, Term};
