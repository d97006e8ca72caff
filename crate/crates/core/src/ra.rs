//! Reflection-amplifier on/off pattern search.
//!
//! Sub-arrays are ranked by how little gain they carry, then a linear search
//! walks the nested masks from all-on to all-off, re-optimizing each
//! candidate with its mask fixed and keeping the most efficient one.

use crate::model::{RVec, SystemConfig};

/// Sub-array indices in deactivation priority order: ascending gain norm,
/// ties broken toward the lower index. The first entry is switched off first.
pub fn deactivation_order(alpha: &RVec, cfg: &SystemConfig) -> Vec<usize> {
    let m_sub = cfg.m_sub();
    let mut norms: Vec<(f64, usize)> = (0..cfg.l_subarrays)
        .map(|l| {
            let n = (l * m_sub..(l + 1) * m_sub)
                .map(|m| alpha[m] * alpha[m])
                .sum::<f64>()
                .sqrt();
            (n, l)
        })
        .collect();
    norms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    norms.into_iter().map(|(_, l)| l).collect()
}

/// One evaluated mask of the linear search.
#[derive(Clone, Debug)]
pub struct RaCandidate {
    pub active: usize,
    pub mask: Vec<bool>,
    /// Efficiency when feasible.
    pub ee: Option<f64>,
}

/// Search outcome: the winning candidate's report plus the full trail.
#[derive(Clone, Debug)]
pub struct RaSearch<R> {
    pub best_count: usize,
    pub best_ee: f64,
    pub best: R,
    pub candidates: Vec<RaCandidate>,
}

/// Walks active counts from all-on down to all-off along the deactivation
/// order, calling `solve(count, mask)` per candidate. The solver returns the
/// candidate's efficiency and report, or `None` when it is infeasible; such
/// candidates are skipped. Ties keep the larger count. Returns `None` only
/// when every candidate is infeasible.
pub fn select_active_count<R, F>(
    l_subarrays: usize,
    order: &[usize],
    mut solve: F,
) -> Option<RaSearch<R>>
where
    F: FnMut(usize, &[bool]) -> Option<(f64, R)>,
{
    assert_eq!(order.len(), l_subarrays, "order must cover every sub-array");
    let mut mask = vec![true; l_subarrays];
    let mut candidates = Vec::with_capacity(l_subarrays + 1);
    let mut best: Option<(usize, f64, R)> = None;
    for off in 0..=l_subarrays {
        if off > 0 {
            mask[order[off - 1]] = false;
        }
        let count = l_subarrays - off;
        let outcome = solve(count, &mask);
        candidates.push(RaCandidate {
            active: count,
            mask: mask.clone(),
            ee: outcome.as_ref().map(|(ee, _)| *ee),
        });
        if let Some((ee, report)) = outcome {
            let better = match &best {
                Some((_, best_ee, _)) => ee > *best_ee,
                None => true,
            };
            if better {
                best = Some((count, ee, report));
            }
        }
    }
    best.map(|(best_count, best_ee, report)| RaSearch {
        best_count,
        best_ee,
        best: report,
        candidates,
    })
}
