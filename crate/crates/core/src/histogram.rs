use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bins {
    /// Equal-width bins spanning the data range.
    Count(usize),
    /// Explicit ascending edges; values outside `[first, last]` are dropped.
    Edges(Vec<f64>),
}

/// Equal-width edges over `[min, max]`; a degenerate range is widened by 0.5
/// on each side.
pub fn equal_width_edges(min: f64, max: f64, bins: usize) -> Vec<f64> {
    assert!(bins >= 1, "at least one bin");
    let (lo, hi) = if max > min {
        (min, max)
    } else {
        (min - 0.5, max + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    edges
}

/// Bins are closed on the left and open on the right, except the last one
/// which is closed on both ends. Non-finite values are skipped.
pub fn emit_histogram(values: &[f64], bins: &Bins) -> Vec<HistogramBin> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let edges = match bins {
        Bins::Count(n) => {
            let (min, max) = finite
                .clone()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if min > max {
                equal_width_edges(0.0, 1.0, *n)
            } else {
                equal_width_edges(min, max, *n)
            }
        }
        Bins::Edges(e) => {
            assert!(e.len() >= 2, "need at least two edges");
            e.clone()
        }
    };
    let last = edges.len() - 2;
    let mut counts = vec![0usize; edges.len() - 1];
    for v in finite {
        if v < edges[0] || v > edges[last + 1] {
            continue;
        }
        let idx = edges.partition_point(|&e| e <= v).saturating_sub(1).min(last);
        counts[idx] += 1;
    }
    edges
        .windows(2)
        .zip(counts)
        .map(|(w, count)| HistogramBin {
            left: w[0],
            right: w[1],
            count,
        })
        .collect()
}
