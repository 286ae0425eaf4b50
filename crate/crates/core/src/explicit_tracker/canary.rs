//! Canary tokens of the form `NT-xxxx-xxxx` (lowercase hex).

use rand::Rng;
use std::collections::HashSet;

pub const CANARY_PREFIX: &str = "NT-";
const CANARY_LEN: usize = 12;

/// True when `token` has the exact canary shape.
pub fn is_canary(token: &str) -> bool {
    let b = token.as_bytes();
    b.len() == CANARY_LEN
        && token.starts_with(CANARY_PREFIX)
        && b[7] == b'-'
        && b[3..7].iter().chain(&b[8..12]).all(|c| matches!(c, b'0'..=b'9' | b'a'..=b'f'))
}

/// Byte ranges of every canary occurrence in `text`.
fn canary_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut from = 0;
    while let Some(pos) = text[from..].find(CANARY_PREFIX) {
        let start = from + pos;
        let end = start + CANARY_LEN;
        if end <= text.len() && text.is_char_boundary(end) && is_canary(&text[start..end]) {
            spans.push((start, end));
            from = end;
        } else {
            from = start + CANARY_PREFIX.len();
        }
    }
    spans
}

/// The canary appended at the end of a source result, if one is present.
///
/// Injection appends the token after a single space, so only a trailing
/// token (ignoring trailing whitespace) counts.
pub fn trailing_canary(text: &str) -> Option<&str> {
    let trimmed = text.trim_end();
    let start = trimmed.len().checked_sub(CANARY_LEN)?;
    if !trimmed.is_char_boundary(start) {
        return None;
    }
    let token = &trimmed[start..];
    let preceded_ok = start == 0 || trimmed[..start].ends_with(char::is_whitespace);
    (preceded_ok && is_canary(token)).then_some(token)
}

/// Removes every canary token from `text`.
pub fn strip_canaries(text: &str) -> String {
    let spans = canary_spans(text);
    if spans.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (s, e) in spans {
        out.push_str(&text[last..s]);
        last = e;
    }
    out.push_str(&text[last..]);
    out
}

/// Issues canary tokens, never repeating one within its lifetime.
pub struct CanaryMint<R> {
    rng: R,
    issued: HashSet<String>,
}

impl<R: Rng> CanaryMint<R> {
    pub fn new(rng: R) -> Self {
        CanaryMint {
            rng,
            issued: HashSet::new(),
        }
    }

    pub fn fresh(&mut self) -> String {
        loop {
            let v: u32 = self.rng.random();
            let hex = format!("{v:08x}");
            let token = format!("{CANARY_PREFIX}{}-{}", &hex[..4], &hex[4..]);
            if self.issued.insert(token.clone()) {
                return token;
            }
        }
    }

    /// Appends a fresh canary to `source_text`, returning the augmented
    /// text and the token.
    pub fn inject(&mut self, source_text: &str) -> (String, String) {
        let token = self.fresh();
        (format!("{source_text} {token}"), token)
    }

    pub fn issued(&self) -> usize {
        self.issued.len()
    }
}

impl CanaryMint<rand::rngs::ThreadRng> {
    pub fn from_entropy() -> Self {
        CanaryMint::new(rand::rng())
    }
}
