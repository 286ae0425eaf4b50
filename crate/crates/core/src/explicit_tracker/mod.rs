//! Explicit content propagation: a four-tier cascade over one source text
//! and one or more views of a sink call's arguments.
//!
//! Tiers run from most precise to most general: canary token, longest
//! common run, whole-document embedding similarity, and chunk-level
//! coverage. The first tier that fires ends the cascade.

pub mod canary;
pub mod text;

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::provenance_graph::{EdgeTier, TaintLabel};
use crate::trace_model::ThresholdProfile;
use canary::strip_canaries;
use serde::{Deserialize, Serialize};
use text::{chunk_sentences, longest_common_run, normalize};

/// Inputs shorter than this (in characters, after normalization) never
/// fire the string tier, and neither do common runs shorter than this.
pub const MIN_LCS_CHARS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Canary,
    Lcs,
    Semantic,
    Coverage,
    None,
}

impl Tier {
    pub fn edge_tier(self) -> Option<EdgeTier> {
        match self {
            Tier::Canary => Some(EdgeTier::Canary),
            Tier::Lcs => Some(EdgeTier::Lcs),
            Tier::Semantic => Some(EdgeTier::Semantic),
            Tier::Coverage => Some(EdgeTier::Coverage),
            Tier::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierResult {
    pub tier: Tier,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_fragment: Option<String>,
    pub threshold_used: f64,
}

impl TierResult {
    fn none(threshold_used: f64) -> Self {
        TierResult {
            tier: Tier::None,
            score: 0.0,
            matched_fragment: None,
            threshold_used,
        }
    }

    pub fn fired(&self) -> bool {
        self.tier != Tier::None
    }
}

/// Tier 1: the label's canary appears verbatim in the sink text.
pub fn tier1_canary(label: &TaintLabel, sink_text: &str) -> TierResult {
    match &label.canary {
        Some(token) if sink_text.contains(token.as_str()) => TierResult {
            tier: Tier::Canary,
            score: 1.0,
            matched_fragment: Some(token.clone()),
            threshold_used: 1.0,
        },
        _ => TierResult::none(1.0),
    }
}

fn prepare(text: &str) -> String {
    normalize(&strip_canaries(text))
}

/// Common-run length over the shorter input's length, on prepared text.
/// Returns the ratio, the run length, the shorter length and the run.
fn lcs_ratio(source: &str, sink: &str) -> (f64, usize, usize, String) {
    let (src, snk) = (prepare(source), prepare(sink));
    let shorter = src.chars().count().min(snk.chars().count());
    if shorter == 0 {
        return (0.0, 0, 0, String::new());
    }
    let (len, run) = longest_common_run(&src, &snk);
    (len as f64 / shorter as f64, len, shorter, run)
}

/// The raw string-overlap ratio, without the length floors.
pub fn lcs_score(source: &str, sink: &str) -> f64 {
    lcs_ratio(source, sink).0
}

/// Tier 2: normalized longest-common-run ratio against `threshold`.
pub fn tier2_lcs(source_text: &str, sink_text: &str, threshold: f64) -> TierResult {
    tier2_from(lcs_ratio(source_text, sink_text), threshold)
}

fn tier2_from((ratio, len, shorter, run): (f64, usize, usize, String), threshold: f64) -> TierResult {
    if shorter >= MIN_LCS_CHARS && len >= MIN_LCS_CHARS && ratio >= threshold {
        TierResult {
            tier: Tier::Lcs,
            score: ratio,
            matched_fragment: Some(run),
            threshold_used: threshold,
        }
    } else {
        TierResult::none(threshold)
    }
}

fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    Ok(cosine(a, b)?.max(0.0))
}

/// Tier 3: whole-document embedding cosine, floored at 0.
pub fn tier3_semantic(
    source_text: &str,
    sink_text: &str,
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<TierResult, EmbeddingError> {
    let (src, snk) = (prepare(source_text), prepare(sink_text));
    if src.is_empty() || snk.is_empty() {
        return Ok(TierResult::none(threshold));
    }
    let score = similarity(&provider.embed(&src)?, &provider.embed(&snk)?)?;
    Ok(semantic_result(Tier::Semantic, score, None, threshold))
}

fn semantic_result(tier: Tier, score: f64, fragment: Option<String>, threshold: f64) -> TierResult {
    if score >= threshold {
        TierResult {
            tier,
            score,
            matched_fragment: fragment,
            threshold_used: threshold,
        }
    } else {
        TierResult::none(threshold)
    }
}

/// Tier 4: fires when at least one `chunk_sentences`-sentence chunk of the
/// source reaches `theta_sem` and the fraction of such chunks reaches
/// `theta_cov`. The score is the best chunk similarity.
pub fn tier4_coverage(
    source_text: &str,
    sink_text: &str,
    provider: &dyn EmbeddingProvider,
    theta_sem: f64,
    theta_cov: f64,
    chunk_sentences_per_chunk: usize,
) -> Result<TierResult, EmbeddingError> {
    let chunks = chunk_sentences(&strip_canaries(source_text), chunk_sentences_per_chunk);
    let sink = prepare(sink_text);
    if chunks.is_empty() || sink.is_empty() {
        return Ok(TierResult::none(theta_sem));
    }
    let sink_vec = provider.embed(&sink)?;
    let chunk_vecs = chunks
        .iter()
        .map(|c| provider.embed(c))
        .collect::<Result<Vec<_>, _>>()?;
    coverage_against(&chunks, &chunk_vecs, &sink_vec, theta_sem, theta_cov)
}

fn coverage_against(
    chunks: &[String],
    chunk_vecs: &[EmbeddingVector],
    sink_vec: &EmbeddingVector,
    theta_sem: f64,
    theta_cov: f64,
) -> Result<TierResult, EmbeddingError> {
    let mut best = (0.0f64, 0usize);
    let mut matching = 0usize;
    for (i, v) in chunk_vecs.iter().enumerate() {
        let s = similarity(v, sink_vec)?;
        if s >= theta_sem {
            matching += 1;
        }
        if s > best.0 {
            best = (s, i);
        }
    }
    let coverage = matching as f64 / chunks.len() as f64;
    if matching >= 1 && coverage >= theta_cov {
        Ok(TierResult {
            tier: Tier::Coverage,
            score: best.0,
            matched_fragment: Some(chunks[best.1].clone()),
            threshold_used: theta_sem,
        })
    } else {
        Ok(TierResult::none(theta_sem))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeFlags {
    /// The lineage crossed a memory-read boundary.
    pub is_rag_lineage: bool,
    pub is_trusted_source: bool,
}

/// Semantic threshold for tiers 3 and 4 under the given flags. Trusted
/// sources use the safe-control threshold; when both flags hold the
/// stricter value applies.
pub fn semantic_threshold(profile: &ThresholdProfile, flags: CascadeFlags) -> f64 {
    let base = if flags.is_rag_lineage {
        profile.theta_sem_rag
    } else {
        profile.theta_sem
    };
    if flags.is_trusted_source {
        base.max(profile.theta_safe)
    } else {
        base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub result: TierResult,
    /// Index of the sink view that produced `result`.
    pub view: Option<usize>,
    /// Highest raw string-overlap ratio over all views, floors not applied.
    pub lcs_ratio: f64,
    /// Set when the embedding tiers could not run.
    pub degraded: Option<String>,
}

/// Runs the cascade on a single sink text.
pub fn run_cascade(
    label: &TaintLabel,
    source_text: &str,
    sink_text: &str,
    provider: &dyn EmbeddingProvider,
    profile: &ThresholdProfile,
    chunk_sentences_per_chunk: usize,
    flags: CascadeFlags,
) -> CascadeOutcome {
    run_cascade_views(label, source_text, &[sink_text], provider, profile, chunk_sentences_per_chunk, flags)
}

/// Runs the cascade tier by tier across several views of the sink
/// arguments. A tier is tried on every view before the next tier starts,
/// so a cheap tier firing on any view keeps later tiers from running.
pub fn run_cascade_views(
    label: &TaintLabel,
    source_text: &str,
    views: &[&str],
    provider: &dyn EmbeddingProvider,
    profile: &ThresholdProfile,
    chunk_sentences_per_chunk: usize,
    flags: CascadeFlags,
) -> CascadeOutcome {
    let overlaps: Vec<_> = views.iter().map(|v| lcs_ratio(source_text, v)).collect();
    let lcs_ratio = overlaps.iter().map(|o| o.0).fold(0.0, f64::max);
    let outcome = |result: TierResult, view: Option<usize>, degraded: Option<String>| CascadeOutcome {
        result,
        view,
        lcs_ratio,
        degraded,
    };

    for (i, v) in views.iter().enumerate() {
        let r = tier1_canary(label, v);
        if r.fired() {
            return outcome(r, Some(i), None);
        }
    }
    if let Some((i, r)) = best_fired(overlaps.into_iter().map(|o| tier2_from(o, profile.theta_str))) {
        return outcome(r, Some(i), None);
    }

    let theta = semantic_threshold(profile, flags);
    match semantic_tiers(source_text, views, provider, theta, profile.theta_cov, chunk_sentences_per_chunk) {
        Ok(Some((i, r))) => outcome(r, Some(i), None),
        Ok(None) => outcome(TierResult::none(theta), None, None),
        Err(e) => outcome(TierResult::none(theta), None, Some(e.to_string())),
    }
}

fn best_fired(results: impl Iterator<Item = TierResult>) -> Option<(usize, TierResult)> {
    results
        .enumerate()
        .filter(|(_, r)| r.fired())
        .fold(None, |best: Option<(usize, TierResult)>, (i, r)| match best {
            Some((_, ref b)) if b.score >= r.score => best,
            _ => Some((i, r)),
        })
}

fn semantic_tiers(
    source_text: &str,
    views: &[&str],
    provider: &dyn EmbeddingProvider,
    theta: f64,
    theta_cov: f64,
    k: usize,
) -> Result<Option<(usize, TierResult)>, EmbeddingError> {
    let src = prepare(source_text);
    let sinks: Vec<String> = views.iter().map(|v| prepare(v)).collect();
    if src.is_empty() || sinks.iter().all(String::is_empty) {
        return Ok(None);
    }
    let src_vec = provider.embed(&src)?;
    let mut sink_vecs = Vec::with_capacity(sinks.len());
    for s in &sinks {
        sink_vecs.push(if s.is_empty() { None } else { Some(provider.embed(s)?) });
    }

    let mut semantic = Vec::new();
    for v in &sink_vecs {
        semantic.push(match v {
            Some(v) => semantic_result(Tier::Semantic, similarity(&src_vec, v)?, None, theta),
            None => TierResult::none(theta),
        });
    }
    if let Some(hit) = best_fired(semantic.into_iter()) {
        return Ok(Some(hit));
    }

    let chunks = chunk_sentences(&strip_canaries(source_text), k);
    if chunks.is_empty() {
        return Ok(None);
    }
    let chunk_vecs = chunks.iter().map(|c| provider.embed(c)).collect::<Result<Vec<_>, _>>()?;
    let mut coverage = Vec::new();
    for v in &sink_vecs {
        coverage.push(match v {
            Some(v) => coverage_against(&chunks, &chunk_vecs, v, theta, theta_cov)?,
            None => TierResult::none(theta),
        });
    }
    Ok(best_fired(coverage.into_iter()))
}

#[cfg(test)]
mod tests;
