//! Synthetic inputs shared by the benchmarks.

use taintaudit_core::{ToolEvent, Trace};

/// Deterministic pseudo-word for `n`.
pub fn word(n: usize) -> String {
    const ONSETS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut k = n * 7919 + 13;
    let mut w = String::new();
    for _ in 0..3 {
        w.push(ONSETS[k % ONSETS.len()] as char);
        k /= ONSETS.len();
        w.push(VOWELS[k % VOWELS.len()] as char);
        k = k / VOWELS.len() + n;
    }
    w
}

/// A page of `sentences` six-word sentences starting at word `offset`.
pub fn page(offset: usize, sentences: usize) -> String {
    (0..sentences)
        .map(|s| {
            let words: Vec<String> = (0..6).map(|i| word(offset + s * 6 + i)).collect();
            format!("{}.", words.join(" "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One session of `events` calls cycling through search, report and a
/// neutral tool. Each report restates part of an earlier page.
pub fn synthetic_trace(events: u64) -> Trace {
    let mut out = Vec::new();
    let mut pages = 0;
    for i in 0..events {
        out.push(match i % 3 {
            0 => {
                pages += 1;
                ToolEvent::new("s", i, "web_search", [("query", format!("q{i}"))], page(pages * 100, 5))
            }
            1 => {
                let src = (pages / 2).max(1) * 100;
                let body: Vec<String> = (0..10).rev().map(|k| word(src + k)).collect();
                ToolEvent::new("s", i, "write_report", [("title", format!("r{i}")), ("content", body.join(", "))], "ok")
            }
            _ => ToolEvent::new("s", i, "calculator", [("expr", format!("{i}+1"))], format!("{}", i + 1)),
        });
    }
    Trace::from_events(out).expect("indices are contiguous")
}
