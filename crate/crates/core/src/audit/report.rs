//! Markdown rendering of audit reports.

use super::engine::{AuditReport, DegradedStage, Evidence};
use std::fmt::Write as _;

pub fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Audit: {}\n", report.trace);
    let s = &report.stats;
    let _ = write!(
        out,
        "{} events, {} sinks audited, {} probes, {} provider calls",
        s.events, s.sinks, s.probes, s.provider_calls
    );
    if let Some(ms) = s.wall_ms {
        let _ = write!(out, ", {ms} ms");
    }
    out.push_str(".\n\n## Findings\n\n");
    if report.findings.is_empty() {
        out.push_str("None.\n");
    } else {
        out.push_str("| Sink | Label | Class | Confidence | Path | Evidence |\n|---|---|---|---|---|---|\n");
        for f in &report.findings {
            let evidence = match &f.evidence {
                Evidence::Tier { result, view } => {
                    let mut e = format!("score {:.3} >= {:.2}", result.score, result.threshold_used);
                    if let Some(v) = view {
                        let _ = write!(e, " on `{v}`");
                    }
                    e
                }
                Evidence::Judge { verdict, lexical_overlap } => {
                    let mut e = format!("judge: would_call_anyway=false ({})", verdict.reasoning.replace('|', "/"));
                    if let Some(o) = lexical_overlap {
                        let _ = write!(e, ", overlap {o:.3}");
                    }
                    e
                }
            };
            let _ = writeln!(
                out,
                "| {}#{} `{}` | {} | {}{} | {:.3} | {} | {} |",
                f.sink_ref.session,
                f.sink_ref.index,
                f.sink_ref.tool,
                f.source_label,
                f.flow_class.name(),
                if f.degraded { " (degraded)" } else { "" },
                f.confidence,
                f.provenance_path.join(" -> "),
                evidence
            );
        }
    }
    if !report.degraded.is_empty() {
        out.push_str("\n## Degraded\n\n");
        for d in &report.degraded {
            let stage = match d.stage {
                DegradedStage::Embedding => "embedding",
                DegradedStage::Judge => "judge",
            };
            let _ = writeln!(
                out,
                "- {}#{} `{}` / {}: {stage}: {}",
                d.sink_ref.session, d.sink_ref.index, d.sink_ref.tool, d.source_label, d.reason
            );
        }
    }
    out
}
