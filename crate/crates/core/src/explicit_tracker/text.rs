//! Text preparation shared by the lexical and semantic tiers.

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits raw text into sentences. A sentence ends at `.`, `!` or `?`
/// followed by whitespace, or at a newline. Sentences are normalized and
/// empty ones dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = match c {
            '\n' => Some((i, i + 1)),
            '.' | '!' | '?' => match chars.peek() {
                Some((_, n)) if n.is_whitespace() => Some((i + 1, i + 1)),
                _ => None,
            },
            _ => None,
        };
        if let Some((sentence_end, next_start)) = end {
            out.push(normalize(&text[start..sentence_end]));
            start = next_start;
        }
    }
    out.push(normalize(&text[start..]));
    out.retain(|s| !s.is_empty());
    out
}

/// Groups consecutive sentences into chunks of `k` sentences.
pub fn chunk_sentences(text: &str, k: usize) -> Vec<String> {
    split_sentences(text)
        .chunks(k.max(1))
        .map(|c| c.join(" "))
        .collect()
}

/// Length in characters of the longest common contiguous run of `a` and
/// `b`, and the run itself (taken from `a`, first occurrence).
pub fn longest_common_run(a: &str, b: &str) -> (usize, String) {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return (0, String::new());
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let (mut best, mut best_end) = (0, 0);
    for (i, ca) in a.iter().enumerate() {
        for ((c, &diag), cb) in cur[1..].iter_mut().zip(&prev[..b.len()]).zip(&b) {
            *c = if ca == cb { diag + 1 } else { 0 };
            if *c > best {
                best = *c;
                best_end = i + 1;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (best, a[best_end - best..best_end].iter().collect())
}
