//! Tool-call statistics over trajectory sets and comparison reports.

use std::fmt::Write as _;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::agent::{trajectory_steps, Trajectory};

/// Published mean tool calls per trajectory for three training sets.
pub const REFERENCE_MEANS: [(&str, f64); 3] = [("v2", 64.67), ("v1", 46.97), ("red", 36.01)];

pub const DEFAULT_BUCKET_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    /// Inclusive lower bound; the bucket covers `[lo, lo + width)`.
    pub lo: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary<F> {
    pub count: usize,
    /// `None` for an empty set.
    pub mean_tool_calls: Option<F>,
    pub min: Option<usize>,
    pub max: Option<usize>,
    pub median: Option<F>,
    pub bucket_width: usize,
    pub histogram: Vec<Bucket>,
    pub mean_context_chars: Option<F>,
}

fn cast<F: Float>(x: usize) -> F {
    F::from(x).expect("count fits the float type")
}

/// Summary of the tool-call counts `ts` and context charges `ctx`.
pub fn summarize_counts<F: Float>(ts: &[usize], ctx: &[usize], bucket_width: usize) -> StatsSummary<F> {
    let width = bucket_width.max(1);
    let count = ts.len();
    if count == 0 {
        return StatsSummary {
            count,
            mean_tool_calls: None,
            min: None,
            max: None,
            median: None,
            bucket_width: width,
            histogram: Vec::new(),
            mean_context_chars: None,
        };
    }
    let n: F = cast(count);
    let mean = ts.iter().fold(F::zero(), |acc, &t| acc + cast(t)) / n;
    let mean_ctx = if ctx.is_empty() {
        None
    } else {
        Some(ctx.iter().fold(F::zero(), |acc, &c| acc + cast(c)) / cast(ctx.len()))
    };
    let mut sorted = ts.to_vec();
    sorted.sort_unstable();
    let median = if count % 2 == 1 {
        cast(sorted[count / 2])
    } else {
        (cast::<F>(sorted[count / 2 - 1]) + cast(sorted[count / 2])) / cast(2)
    };
    let max = sorted[count - 1];
    let mut histogram: Vec<Bucket> = (0..=max / width).map(|b| Bucket { lo: b * width, count: 0 }).collect();
    for &t in &sorted {
        histogram[t / width].count += 1;
    }
    StatsSummary {
        count,
        mean_tool_calls: Some(mean),
        min: Some(sorted[0]),
        max: Some(max),
        median: Some(median),
        bucket_width: width,
        histogram,
        mean_context_chars: mean_ctx,
    }
}

pub fn summarize<'a, F: Float>(trajectories: impl IntoIterator<Item = &'a Trajectory>, bucket_width: usize) -> StatsSummary<F> {
    let (ts, ctx): (Vec<usize>, Vec<usize>) =
        trajectories.into_iter().map(|t| (trajectory_steps(t), t.context_chars_used)).unzip();
    summarize_counts(&ts, &ctx, bucket_width)
}

/// A summary consisting only of a published mean.
pub fn reference_summary<F: Float>(mean: F) -> StatsSummary<F> {
    StatsSummary {
        count: 0,
        mean_tool_calls: Some(mean),
        min: None,
        max: None,
        median: None,
        bucket_width: DEFAULT_BUCKET_WIDTH,
        histogram: Vec::new(),
        mean_context_chars: None,
    }
}

pub fn reference_summaries() -> Vec<(String, StatsSummary<f64>)> {
    REFERENCE_MEANS.iter().map(|(n, m)| (n.to_string(), reference_summary(*m))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow<F> {
    pub name: String,
    pub summary: StatsSummary<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable<F> {
    pub rows: Vec<ComparisonRow<F>>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("a comparison needs at least one summary")]
pub struct EmptyComparison;

/// Rows by mean descending, ties by name; empty summaries go last.
pub fn compare<F: Float>(summaries: Vec<(String, StatsSummary<F>)>) -> Result<ComparisonTable<F>, EmptyComparison> {
    if summaries.is_empty() {
        return Err(EmptyComparison);
    }
    let mut rows: Vec<ComparisonRow<F>> =
        summaries.into_iter().map(|(name, summary)| ComparisonRow { name, summary }).collect();
    rows.sort_by(|a, b| {
        let (x, y) = (a.summary.mean_tool_calls, b.summary.mean_tool_calls);
        let by_mean = match (x, y) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Equal),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        by_mean.then_with(|| a.name.cmp(&b.name))
    });
    Ok(ComparisonTable { rows })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl<F: Float + std::fmt::Display> ComparisonTable<F> {
    /// `name,count,mean,min,median,max`; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,count,mean,min,median,max\n");
        for r in &self.rows {
            let m = &r.summary;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&r.name),
                m.count,
                opt(m.mean_tool_calls),
                opt(m.min),
                opt(m.median),
                opt(m.max)
            );
        }
        s
    }

    /// Standalone horizontal bar chart of the means.
    pub fn to_svg(&self) -> String {
        let (row_h, label_w, bar_w, pad) = (28.0, 160.0, 400.0, 12.0);
        let top = self
            .rows
            .iter()
            .filter_map(|r| r.summary.mean_tool_calls.and_then(|m| m.to_f64()))
            .fold(0.0f64, f64::max);
        let height = pad * 2.0 + row_h * self.rows.len() as f64;
        let width = label_w + bar_w + 80.0;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"13\">\n"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let y = pad + row_h * i as f64;
            let mean = r.summary.mean_tool_calls.and_then(|m| m.to_f64()).unwrap_or(0.0);
            let w = if top > 0.0 { bar_w * mean / top } else { 0.0 };
            let _ = writeln!(s, "  <text x=\"4\" y=\"{:.1}\">{}</text>", y + row_h * 0.65, xml_escape(&r.name));
            let _ = writeln!(
                s,
                "  <rect x=\"{label_w}\" y=\"{:.1}\" width=\"{w:.1}\" height=\"{:.1}\" fill=\"#4a78b5\"/>",
                y + 4.0,
                row_h - 8.0
            );
            let _ = writeln!(s, "  <text x=\"{:.1}\" y=\"{:.1}\">{mean:.2}</text>", label_w + w + 6.0, y + row_h * 0.65);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
