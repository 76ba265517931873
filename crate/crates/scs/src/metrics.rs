//! Post-selection diagnostics for a completed confidence set.
//!
//! Everything here is a pure function over an [`ScsResult`]: the
//! relative multiplicity index, the loss interval and spread, the lower
//! boundary (most parsimonious retained selections), per-asset
//! inclusion importance, pairwise co-inclusion importance (a Jaccard
//! index over inclusion sets), and the co-inclusion graph export.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{normal_quantile, LossSpec};
use crate::panel::ReturnPanel;
use crate::screening::{build_scs, ScreenConfig, ScsResult};
use crate::selection::SelectionMask;

/// Relative multiplicity index: 1 - ln(scs_size) / ln(universe_size).
/// Equals 1 for a unique plausible selection, 0 when every feasible
/// selection is retained.
pub fn rmi(scs_size: usize, universe_size: usize) -> Result<f64> {
    if universe_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "universe_size must be at least 2, got {universe_size}"
        )));
    }
    if scs_size < 1 || scs_size > universe_size {
        return Err(Error::InvalidArgument(format!(
            "scs_size must lie in [1, {universe_size}], got {scs_size}"
        )));
    }
    Ok(1.0 - (scs_size as f64).ln() / (universe_size as f64).ln())
}

/// Minimal and maximal loss over the retained set and their spread.
pub fn loss_spread(scs: &ScsResult) -> Result<(f64, f64, f64)> {
    let loss_max = scs
        .records
        .iter()
        .filter(|r| r.included)
        .map(|r| r.loss)
        .fold(f64::NEG_INFINITY, f64::max);
    if !loss_max.is_finite() {
        return Err(Error::Internal("confidence set has no included records".into()));
    }
    let loss_min = scs.reference_loss;
    Ok((loss_min, loss_max, loss_max - loss_min))
}

/// Retained masks no other retained mask strictly undercuts: s is on
/// the lower boundary iff no included s' has support(s') a strict
/// subset of support(s). Masks are bucketed by popcount so each is
/// tested only against strictly smaller buckets.
pub fn lower_boundary(scs: &ScsResult) -> Vec<SelectionMask> {
    let included: Vec<SelectionMask> = scs
        .records
        .iter()
        .filter(|r| r.included)
        .map(|r| r.mask)
        .collect();
    lower_boundary_of(&included, scs.n_assets)
}

/// [`lower_boundary`] over an explicit list of masks.
pub fn lower_boundary_of(masks: &[SelectionMask], n_assets: usize) -> Vec<SelectionMask> {
    let n = n_assets;
    let mut buckets: Vec<Vec<SelectionMask>> = vec![Vec::new(); n + 1];
    for &mask in masks {
        buckets[mask.weight() as usize].push(mask);
    }
    let mut boundary = Vec::new();
    for w in 1..=n {
        'mask: for &mask in &buckets[w] {
            for smaller in &buckets[1..w] {
                if smaller
                    .iter()
                    .any(|m| m.bits() & mask.bits() == m.bits())
                {
                    continue 'mask;
                }
            }
            boundary.push(mask);
        }
    }
    boundary.sort_unstable_by_key(SelectionMask::bits);
    boundary
}

fn inclusion_counts(scs: &ScsResult) -> (usize, Vec<usize>) {
    let n = scs.n_assets;
    let mut counts = vec![0usize; n];
    let mut total = 0usize;
    for r in scs.records.iter().filter(|r| r.included) {
        total += 1;
        for j in r.mask.assets() {
            counts[j] += 1;
        }
    }
    (total, counts)
}

/// Inclusion importance: the share of retained selections containing
/// each asset.
pub fn inclusion_importance(scs: &ScsResult) -> Result<Vec<f64>> {
    let (total, counts) = inclusion_counts(scs);
    if total == 0 {
        return Err(Error::Internal("confidence set has no included records".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Co-inclusion importance matrix: CII(i,j) = c_ij / (c_i + c_j - c_ij)
/// over retained selections, the Jaccard index of the two assets'
/// inclusion sets; defined as 1 when the denominator vanishes (both
/// assets absent from every retained selection).
pub fn co_inclusion(scs: &ScsResult) -> Result<Vec<Vec<f64>>> {
    let n = scs.n_assets;
    let (total, counts) = inclusion_counts(scs);
    if total == 0 {
        return Err(Error::Internal("confidence set has no included records".into()));
    }
    let mut pair = vec![vec![0usize; n]; n];
    for r in scs.records.iter().filter(|r| r.included) {
        let assets: Vec<usize> = r.mask.assets().collect();
        for (a, &i) in assets.iter().enumerate() {
            for &j in &assets[a..] {
                pair[i][j] += 1;
            }
        }
    }
    let mut cii = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let c_ij = pair[i][j];
            let denom = counts[i] + counts[j] - c_ij;
            let v = if denom > 0 {
                c_ij as f64 / denom as f64
            } else {
                1.0
            };
            cii[i][j] = v;
            cii[j][i] = v;
        }
    }
    Ok(cii)
}

/// Undirected co-inclusion edge with its CII weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiiEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Edges (i < j) whose co-inclusion strictly exceeds `threshold`.
pub fn cii_graph_export(scs: &ScsResult, threshold: f64) -> Result<Vec<CiiEdge>> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [0,1), got {threshold}"
        )));
    }
    let cii = co_inclusion(scs)?;
    let n = scs.n_assets;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if cii[i][j] > threshold {
                edges.push(CiiEdge {
                    i,
                    j,
                    weight: cii[i][j],
                });
            }
        }
    }
    Ok(edges)
}

/// Render the co-inclusion graph as DOT. Edge thickness encodes the
/// weight via `penwidth = 1 + 9 * CII`.
pub fn cii_graph_dot(edges: &[CiiEdge], labels: &[String], threshold: f64) -> String {
    let mut out = String::new();
    out.push_str("// Co-inclusion importance graph.\n");
    out.push_str(&format!(
        "// Edges: asset pairs with CII > {threshold}; penwidth = 1 + 9*CII.\n"
    ));
    out.push_str("graph cii {\n");
    out.push_str("  layout=neato;\n  node [shape=circle fontsize=10];\n");
    let name = |j: usize| {
        labels
            .get(j)
            .cloned()
            .unwrap_or_else(|| format!("a{j}"))
    };
    let mut seen: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    for e in edges {
        seen.insert(e.i);
        seen.insert(e.j);
    }
    for j in seen {
        out.push_str(&format!("  \"{}\";\n", name(j)));
    }
    for e in edges {
        out.push_str(&format!(
            "  \"{}\" -- \"{}\" [penwidth={:.3} weight={:.6}];\n",
            name(e.i),
            name(e.j),
            1.0 + 9.0 * e.weight,
            e.weight
        ));
    }
    out.push_str("}\n");
    out
}

/// All §4-style diagnostics bundled for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScsMetrics {
    pub scs_size: usize,
    pub relative_size: f64,
    pub rmi: f64,
    pub loss_min: f64,
    pub loss_max: f64,
    pub spread: f64,
    pub lower_boundary: Vec<SelectionMask>,
    pub inclusion: Vec<f64>,
    pub co_inclusion: Vec<Vec<f64>>,
}

/// Compute every diagnostic from a completed confidence set.
pub fn compute_metrics(scs: &ScsResult) -> Result<ScsMetrics> {
    let (loss_min, loss_max, spread) = loss_spread(scs)?;
    Ok(ScsMetrics {
        scs_size: scs.included_count,
        relative_size: scs.included_count as f64 / scs.universe_size as f64,
        rmi: rmi(scs.included_count, scs.universe_size)?,
        loss_min,
        loss_max,
        spread,
        lower_boundary: lower_boundary(scs),
        inclusion: inclusion_importance(scs)?,
        co_inclusion: co_inclusion(scs)?,
    })
}

/// Inclusion-importance curves over a grid of levels, from one
/// screening pass: a mask with statistic z is included at level alpha
/// exactly when z <= q_{1-alpha}, so the whole grid reuses the z values
/// of a single build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IiProfile {
    pub alphas: Vec<f64>,
    /// `rows[k][j]` = II at `alphas[k]` for asset j.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

pub fn ii_profile(
    panel: &ReturnPanel,
    spec: &LossSpec,
    config: &ScreenConfig,
    alpha_grid: &[f64],
) -> Result<IiProfile> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("empty alpha grid".into()));
    }
    // screen once at the loosest level so every grid point's set is a
    // subset of the retained records
    let alpha_max = alpha_grid
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut base = config.clone();
    base.alpha = alpha_max;
    let scs = build_scs(panel, spec, &base)?;
    let n = scs.n_assets;
    let mut rows = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        let q = normal_quantile(1.0 - alpha)?;
        let mut counts = vec![0usize; n];
        let mut total = 0usize;
        for r in scs.records.iter().filter(|r| r.z <= q) {
            total += 1;
            for j in r.mask.assets() {
                counts[j] += 1;
            }
        }
        if total == 0 {
            return Err(Error::Internal(format!(
                "no selections retained at alpha = {alpha}"
            )));
        }
        rows.push(counts.iter().map(|&c| c as f64 / total as f64).collect());
    }
    Ok(IiProfile {
        alphas: alpha_grid.to_vec(),
        rows,
        labels: panel.labels().to_vec(),
    })
}
