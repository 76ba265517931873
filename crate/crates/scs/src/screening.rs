//! Empirical optimum search and Selection Confidence Set assembly.
//!
//! Both operations stream the full selection space in Gray-code order,
//! maintaining an unnormalized running column sum so each step costs
//! O(T). Screening is a two-pass design: pass 1 finds the reference
//! optimum and caches its series, pass 2 studentizes every candidate
//! against that reference. For large universes the mask range is
//! block-partitioned; each worker seeds its own Gray pass at the block
//! start, and blocks are merged in order so results are deterministic
//! for any worker count.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{
    normal_quantile, screen_statistic_with_floors, CovMode, LossSpec, DEFAULT_DELTA_FLOOR,
    DEFAULT_TAU2_FLOOR,
};
use crate::moments::{apply_column, pair_moments, portfolio_series, sample_moments};
use crate::panel::ReturnPanel;
use crate::selection::{gray_code, gray_flip, SelectionMask};

/// Predicate restricting the selection universe, e.g. a cardinality cap.
pub type MaskFilter = Arc<dyn Fn(&SelectionMask) -> bool + Send + Sync>;

/// Screening configuration.
#[derive(Clone)]
pub struct ScreenConfig {
    pub alpha: f64,
    pub cov_mode: CovMode,
    pub mask_filter: Option<MaskFilter>,
    pub tau2_floor: f64,
    pub delta_floor: f64,
    /// Retain per-mask records for every mask only while the filtered
    /// universe stays at or below this cap; above it only included
    /// records are kept.
    pub record_cap: usize,
    /// Threads for the scan; `None` uses the global pool.
    pub worker_count: Option<usize>,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            alpha: 0.05,
            cov_mode: CovMode::Gaussian,
            mask_filter: None,
            tau2_floor: DEFAULT_TAU2_FLOOR,
            delta_floor: DEFAULT_DELTA_FLOOR,
            record_cap: 1 << 20,
            worker_count: None,
        }
    }
}

impl ScreenConfig {
    pub fn new(alpha: f64, cov_mode: CovMode) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        Ok(ScreenConfig {
            alpha,
            cov_mode,
            ..ScreenConfig::default()
        })
    }

    fn passes(&self, mask: &SelectionMask) -> bool {
        self.mask_filter.as_ref().is_none_or(|f| f(mask))
    }
}

/// Per-mask screening record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub mask: SelectionMask,
    pub loss: f64,
    pub z: f64,
    pub included: bool,
    pub degenerate: bool,
}

/// Mask whose loss was undefined (e.g. zero variance under Sharpe);
/// recorded rather than silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedMask {
    pub mask: SelectionMask,
    pub reason: String,
}

/// Reference optimum, per-mask screening records, and the retained set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScsResult {
    pub reference: SelectionMask,
    pub reference_loss: f64,
    pub alpha: f64,
    /// Normal quantile q_{1-alpha} used for inclusion.
    pub q: f64,
    pub cov_mode: CovMode,
    pub loss: LossSpec,
    pub n_assets: usize,
    pub periods: usize,
    /// Sorted by mask integer value.
    pub records: Vec<MaskRecord>,
    pub skipped: Vec<SkippedMask>,
    pub included_count: usize,
    /// Filtered universe size (screened plus skipped masks).
    pub universe_size: usize,
    /// False when only included records were retained (capped).
    pub records_complete: bool,
}

impl ScsResult {
    pub fn included_masks(&self) -> Vec<SelectionMask> {
        self.records
            .iter()
            .filter(|r| r.included)
            .map(|r| r.mask)
            .collect()
    }

    /// Record for a specific mask, if retained.
    pub fn record_for(&self, mask: &SelectionMask) -> Option<&MaskRecord> {
        self.records
            .binary_search_by_key(&mask.bits(), |r| r.mask.bits())
            .ok()
            .map(|i| &self.records[i])
    }

    /// Masks included at a (possibly different) level `alpha`, computed
    /// from the retained z values. Levels below the build level need
    /// the full record set.
    pub fn included_at(&self, alpha: f64) -> Result<Vec<SelectionMask>> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !self.records_complete && alpha < self.alpha {
            return Err(Error::RecordsIncomplete);
        }
        let q = normal_quantile(1.0 - alpha)?;
        Ok(self
            .records
            .iter()
            .filter(|r| r.z <= q)
            .map(|r| r.mask)
            .collect())
    }
}

/// Single-candidate plausibility verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlausibilityReport {
    pub candidate: SelectionMask,
    pub candidate_loss: f64,
    pub reference: SelectionMask,
    pub reference_loss: f64,
    pub z: f64,
    pub q: f64,
    pub included: bool,
    pub degenerate: bool,
}

// Blocks below this many masks are not worth splitting; small universes
// then run serially, which also keeps nested parallelism cheap when
// many screens run concurrently (Monte Carlo).
const MIN_BLOCK: u32 = 1 << 12;

fn gray_blocks(n_assets: usize, workers: usize) -> Vec<(u32, u32)> {
    let end = 1u32 << n_assets;
    let total = end - 1;
    let target = (workers as u32 * 4).max(1);
    let block = (total / target).max(MIN_BLOCK);
    let mut blocks = Vec::new();
    let mut start = 1u32;
    while start < end {
        let stop = start.saturating_add(block).min(end);
        blocks.push((start, stop));
        start = stop;
    }
    blocks
}

/// Visit every mask with code index in [start, end) in Gray order,
/// handing the callback the normalized portfolio series.
fn scan_block<F: FnMut(SelectionMask, &[f64])>(
    panel: &ReturnPanel,
    config: &ScreenConfig,
    start: u32,
    end: u32,
    mut visit: F,
) {
    let t = panel.periods();
    let n = panel.assets();
    let mut sum = vec![0.0; t];
    let first = gray_code(start);
    for j in 0..n {
        if first >> j & 1 == 1 {
            apply_column(&mut sum, panel.column(j), true);
        }
    }
    let mut series = vec![0.0; t];
    for k in start..end {
        if k > start {
            let (bit, added) = gray_flip(k);
            apply_column(&mut sum, panel.column(bit), added);
        }
        let bits = gray_code(k);
        debug_assert_ne!(bits, 0);
        let mask = SelectionMask::new(bits, n).expect("gray stream yields valid masks");
        if !config.passes(&mask) {
            continue;
        }
        let w = f64::from(mask.weight());
        for (out, s) in series.iter_mut().zip(&sum) {
            *out = s / w;
        }
        visit(mask, &series);
    }
}

fn run_scan<R, F>(panel: &ReturnPanel, config: &ScreenConfig, per_block: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u32, u32) -> R + Sync,
{
    let workers = config
        .worker_count
        .unwrap_or_else(rayon::current_num_threads)
        .max(1);
    let blocks = gray_blocks(panel.assets(), workers);
    if blocks.len() == 1 || workers == 1 {
        return Ok(blocks.iter().map(|&(a, b)| per_block(a, b)).collect());
    }
    let scan = || {
        blocks
            .par_iter()
            .map(|&(a, b)| per_block(a, b))
            .collect::<Vec<R>>()
    };
    match config.worker_count {
        None => Ok(scan()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(scan))
        }
    }
}

/// Exhaustive argmin of the sample loss over the (filtered) selection
/// space. Ties break toward the smaller mask integer; masks with
/// undefined loss are skipped.
pub fn empirical_optimum(
    panel: &ReturnPanel,
    spec: &LossSpec,
    config: &ScreenConfig,
) -> Result<(SelectionMask, f64)> {
    let best_per_block = run_scan(panel, config, |a, b| {
        let mut best: Option<(f64, SelectionMask)> = None;
        scan_block(panel, config, a, b, |mask, series| {
            let m = match sample_moments(series) {
                Ok(m) => m,
                Err(_) => return,
            };
            if let Ok(loss) = spec.value(m.mean, m.variance) {
                let better = match best {
                    None => true,
                    Some((bl, bm)) => {
                        loss < bl || (loss == bl && mask.bits() < bm.bits())
                    }
                };
                if better {
                    best = Some((loss, mask));
                }
            }
        });
        best
    })?;
    best_per_block
        .into_iter()
        .flatten()
        .min_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("losses are finite")
                .then(a.1.bits().cmp(&b.1.bits()))
        })
        .map(|(loss, mask)| (mask, loss))
        .ok_or_else(|| {
            Error::EmptyUniverse("loss undefined on every feasible selection".into())
        })
}

/// Build the Selection Confidence Set: screen every candidate against
/// the empirical optimum with the one-sided studentized test and keep
/// those with Z <= q_{1-alpha}.
pub fn build_scs(panel: &ReturnPanel, spec: &LossSpec, config: &ScreenConfig) -> Result<ScsResult> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0,1), got {}",
            config.alpha
        )));
    }
    if config.alpha >= 0.5 {
        // q_{1-alpha} < 0 would exclude even the empirical optimum
        return Err(Error::InvalidArgument(format!(
            "alpha must be below 0.5 for a nonempty confidence set, got {}",
            config.alpha
        )));
    }
    let (reference, reference_loss) = empirical_optimum(panel, spec, config)?;
    let reference_series = portfolio_series(panel, &reference)?;
    let q = normal_quantile(1.0 - config.alpha)?;

    let block_outputs = run_scan(panel, config, |a, b| {
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        scan_block(panel, config, a, b, |mask, series| {
            let pm = match pair_moments(series, &reference_series) {
                Ok(pm) => pm,
                Err(e) => {
                    skipped.push(SkippedMask {
                        mask,
                        reason: e.to_string(),
                    });
                    return;
                }
            };
            match screen_statistic_with_floors(
                spec,
                &pm,
                config.cov_mode,
                config.tau2_floor,
                config.delta_floor,
            ) {
                Ok(stat) => {
                    let loss = stat.delta_hat + reference_loss;
                    records.push(MaskRecord {
                        mask,
                        loss,
                        z: stat.z,
                        included: stat.z <= q,
                        degenerate: stat.degenerate,
                    });
                }
                Err(e) => skipped.push(SkippedMask {
                    mask,
                    reason: e.to_string(),
                }),
            }
        });
        (records, skipped)
    })?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (mut r, mut s) in block_outputs {
        records.append(&mut r);
        skipped.append(&mut s);
    }
    records.sort_unstable_by_key(|r| r.mask.bits());
    skipped.sort_unstable_by_key(|r| r.mask.bits());

    let universe_size = records.len() + skipped.len();
    let included_count = records.iter().filter(|r| r.included).count();

    let reference_record = records
        .binary_search_by_key(&reference.bits(), |r| r.mask.bits())
        .map(|i| records[i])
        .map_err(|_| Error::Internal("reference mask missing from records".into()))?;
    if !reference_record.included || reference_record.z != 0.0 {
        return Err(Error::Internal(format!(
            "reference not retained with z = 0 (z = {})",
            reference_record.z
        )));
    }

    let records_complete = universe_size <= config.record_cap;
    if !records_complete {
        records.retain(|r| r.included);
    }

    Ok(ScsResult {
        reference,
        reference_loss,
        alpha: config.alpha,
        q,
        cov_mode: config.cov_mode,
        loss: *spec,
        n_assets: panel.assets(),
        periods: panel.periods(),
        records,
        skipped,
        included_count,
        universe_size,
        records_complete,
    })
}

/// Single-candidate version of [`build_scs`] against a precomputed
/// reference.
pub fn plausibility_check_with_reference(
    panel: &ReturnPanel,
    spec: &LossSpec,
    config: &ScreenConfig,
    candidate: &SelectionMask,
    reference: &SelectionMask,
    reference_loss: f64,
) -> Result<PlausibilityReport> {
    if !config.passes(candidate) {
        return Err(Error::InvalidArgument(
            "candidate excluded by the mask filter".into(),
        ));
    }
    let candidate_series = portfolio_series(panel, candidate)?;
    let reference_series = portfolio_series(panel, reference)?;
    let pm = pair_moments(&candidate_series, &reference_series)?;
    let stat = screen_statistic_with_floors(
        spec,
        &pm,
        config.cov_mode,
        config.tau2_floor,
        config.delta_floor,
    )?;
    let q = normal_quantile(1.0 - config.alpha)?;
    Ok(PlausibilityReport {
        candidate: *candidate,
        candidate_loss: stat.delta_hat + reference_loss,
        reference: *reference,
        reference_loss,
        z: stat.z,
        q,
        included: stat.z <= q,
        degenerate: stat.degenerate,
    })
}

/// Test whether a candidate selection is statistically
/// indistinguishable from the empirical optimum.
pub fn plausibility_check(
    panel: &ReturnPanel,
    spec: &LossSpec,
    config: &ScreenConfig,
    candidate: &SelectionMask,
) -> Result<PlausibilityReport> {
    let (reference, reference_loss) = empirical_optimum(panel, spec, config)?;
    plausibility_check_with_reference(panel, spec, config, candidate, &reference, reference_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::sample_moments;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_panel(seed: u64, t: usize, n: usize) -> ReturnPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..n).map(|_| rng.gen_range(-0.1..0.12)).collect())
            .collect();
        let labels = (0..n).map(|j| format!("a{j}")).collect();
        ReturnPanel::from_rows(labels, &rows).unwrap()
    }

    /// Brute-force argmin recomputing every series from scratch.
    fn naive_optimum(panel: &ReturnPanel, spec: &LossSpec) -> (u32, f64) {
        let n = panel.assets();
        let mut best: Option<(f64, u32)> = None;
        for bits in 1u32..1 << n {
            let mask = SelectionMask::new(bits, n).unwrap();
            let series = portfolio_series(panel, &mask).unwrap();
            let m = sample_moments(&series).unwrap();
            if let Ok(loss) = spec.value(m.mean, m.variance) {
                if best.is_none_or(|(bl, _)| loss < bl) {
                    best = Some((loss, bits));
                }
            }
        }
        let (loss, bits) = best.unwrap();
        (bits, loss)
    }

    #[test]
    fn optimum_single_asset() {
        let panel = random_panel(1, 20, 1);
        let spec = LossSpec::Sharpe;
        let (mask, _) = empirical_optimum(&panel, &spec, &ScreenConfig::default()).unwrap();
        assert_eq!(mask.bits(), 1);
    }

    #[test]
    fn optimum_matches_brute_force() {
        let panel = random_panel(42, 50, 5);
        let spec = LossSpec::mean_variance(0.5).unwrap();
        let (mask, loss) = empirical_optimum(&panel, &spec, &ScreenConfig::default()).unwrap();
        let (nbits, nloss) = naive_optimum(&panel, &spec);
        assert_eq!(mask.bits(), nbits);
        assert_abs_diff_eq!(loss, nloss, epsilon = 1e-12);
    }

    #[test]
    fn optimum_tie_breaks_to_smaller_mask() {
        // two identical columns: any subset and its mirror tie
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let x = rng.gen_range(-0.1..0.1);
                let y = rng.gen_range(-0.1..0.1);
                vec![x, x, y]
            })
            .collect();
        let panel =
            ReturnPanel::from_rows(vec!["a".into(), "b".into(), "c".into()], &rows).unwrap();
        let spec = LossSpec::mean_variance(0.5).unwrap();
        let (mask, loss) = empirical_optimum(&panel, &spec, &ScreenConfig::default()).unwrap();
        // the mirrored mask attains the same loss, so the winner must be
        // the smaller integer of each tied pair
        let swap = |bits: u32| (bits & !0b11) | ((bits & 1) << 1) | ((bits >> 1) & 1);
        let mirrored = SelectionMask::new(swap(mask.bits()), 3).unwrap();
        let m = sample_moments(&portfolio_series(&panel, &mirrored).unwrap()).unwrap();
        assert_abs_diff_eq!(
            spec.value(m.mean, m.variance).unwrap(),
            loss,
            epsilon = 1e-12
        );
        assert!(mask.bits() <= mirrored.bits());
    }

    #[test]
    fn scs_near_one_alpha_includes_everything() {
        let panel = random_panel(7, 40, 5);
        let spec = LossSpec::Sharpe;
        let config = ScreenConfig::new(1e-9, CovMode::Gaussian).unwrap();
        let scs = build_scs(&panel, &spec, &config).unwrap();
        let non_degenerate_excluded = scs
            .records
            .iter()
            .filter(|r| !r.included && !r.degenerate)
            .count();
        assert_eq!(non_degenerate_excluded, 0);
        assert_eq!(scs.universe_size, 31);
    }

    #[test]
    fn scs_invariants_hold() {
        let panel = random_panel(11, 60, 6);
        let spec = LossSpec::mean_variance(1.0).unwrap();
        let config = ScreenConfig::new(0.05, CovMode::Iid).unwrap();
        let scs = build_scs(&panel, &spec, &config).unwrap();
        assert_eq!(scs.universe_size, 63);
        assert_eq!(
            scs.included_count,
            scs.records.iter().filter(|r| r.included).count()
        );
        let reference = scs.record_for(&scs.reference).unwrap();
        assert!(reference.included);
        assert_eq!(reference.z, 0.0);
        for r in &scs.records {
            assert!(r.loss >= scs.reference_loss - 1e-14);
            assert!(!r.included || r.z <= scs.q);
            assert!(r.z >= 0.0);
        }
    }

    #[test]
    fn scs_deterministic_across_worker_counts() {
        let panel = random_panel(13, 30, 7);
        let spec = LossSpec::Sharpe;
        let mut config = ScreenConfig::new(0.10, CovMode::Gaussian).unwrap();
        let base = build_scs(&panel, &spec, &config).unwrap();
        for workers in [1usize, 2, 4] {
            config.worker_count = Some(workers);
            let scs = build_scs(&panel, &spec, &config).unwrap();
            assert_eq!(scs.records.len(), base.records.len());
            for (a, b) in scs.records.iter().zip(&base.records) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn nesting_across_alpha_levels() {
        let panel = random_panel(17, 50, 6);
        let spec = LossSpec::mean_variance(0.5).unwrap();
        let sets: Vec<Vec<u32>> = [0.10, 0.05, 0.01]
            .iter()
            .map(|&alpha| {
                let config = ScreenConfig::new(alpha, CovMode::Gaussian).unwrap();
                build_scs(&panel, &spec, &config)
                    .unwrap()
                    .included_masks()
                    .iter()
                    .map(|m| m.bits())
                    .collect()
            })
            .collect();
        for window in sets.windows(2) {
            let larger: std::collections::HashSet<u32> = window[1].iter().copied().collect();
            assert!(window[0].iter().all(|b| larger.contains(b)));
        }
    }

    #[test]
    fn mask_filter_restricts_universe() {
        let panel = random_panel(19, 40, 5);
        let spec = LossSpec::Sharpe;
        let mut config = ScreenConfig::new(0.05, CovMode::Gaussian).unwrap();
        config.mask_filter = Some(Arc::new(|m: &SelectionMask| m.weight() <= 2));
        let scs = build_scs(&panel, &spec, &config).unwrap();
        assert_eq!(scs.universe_size, 5 + 10);
        assert!(scs.records.iter().all(|r| r.mask.weight() <= 2));
    }

    #[test]
    fn plausibility_of_reference_is_inclusion_with_zero_z() {
        let panel = random_panel(23, 45, 5);
        let spec = LossSpec::Sharpe;
        let config = ScreenConfig::new(0.05, CovMode::Gaussian).unwrap();
        let (reference, _) = empirical_optimum(&panel, &spec, &config).unwrap();
        let report = plausibility_check(&panel, &spec, &config, &reference).unwrap();
        assert!(report.included);
        assert_eq!(report.z, 0.0);
    }

    #[test]
    fn plausibility_rejects_dominated_candidate() {
        // one asset with a far lower mean and the same variance
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let shock = rng.gen_range(-0.01..0.01_f64);
                vec![0.01 + shock, -0.05 + shock]
            })
            .collect();
        let panel = ReturnPanel::from_rows(vec!["good".into(), "bad".into()], &rows).unwrap();
        let spec = LossSpec::mean_variance(1.0).unwrap();
        let config = ScreenConfig::new(0.05, CovMode::Gaussian).unwrap();
        let candidate = SelectionMask::singleton(1, 2).unwrap();
        let report = plausibility_check(&panel, &spec, &config, &candidate).unwrap();
        assert!(!report.included);
        assert!(report.z > 10.0 * report.q);
    }

    #[test]
    fn included_at_recomputes_other_levels() {
        let panel = random_panel(37, 50, 6);
        let spec = LossSpec::Sharpe;
        let config = ScreenConfig::new(0.05, CovMode::Gaussian).unwrap();
        let scs = build_scs(&panel, &spec, &config).unwrap();
        for alpha in [0.01, 0.05, 0.10] {
            let direct = build_scs(
                &panel,
                &spec,
                &ScreenConfig::new(alpha, CovMode::Gaussian).unwrap(),
            )
            .unwrap();
            assert_eq!(scs.included_at(alpha).unwrap(), direct.included_masks());
        }
    }
}
