//! Synthetic population models, Monte Carlo coverage studies, and the
//! asymptotic expected-size formula.
//!
//! Two correlation designs are supported: Model 1 builds a precision
//! matrix on a scale-free (preferential-attachment) graph and inverts
//! it; Model 2 is exchangeable with constant pairwise correlation.
//! Means follow a weak positive risk-return rule. The Monte Carlo
//! driver estimates the expected confidence-set size, its lower
//! boundary size, and coverage of the population-optimal selection;
//! the theory evaluator computes the asymptotic expected size and its
//! bounds from exact population moments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::{normal_cdf, normal_quantile, CovMode, LossSpec, DEFAULT_TAU2_FLOOR};
use crate::metrics::lower_boundary_of;
use crate::moments::{vhat_gaussian, PairMoments, PortfolioMoments};
use crate::panel::{ReturnPanel, MAX_ASSETS};
use crate::screening::{build_scs, ScreenConfig};
use crate::selection::SelectionMask;

/// Exact Gaussian population (mean vector, covariance, cached Cholesky
/// factor).
#[derive(Debug, Clone)]
pub struct PopulationModel {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl PopulationModel {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 || n > MAX_ASSETS {
            return Err(Error::BadAssetCount { n, max: MAX_ASSETS });
        }
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::LengthMismatch {
                a: n,
                b: covariance.nrows(),
            });
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::NotPositiveDefinite(format!(
                "covariance asymmetric by {asym:e}"
            )));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("covariance not PD".into()))?;
        let factor = chol.l();
        let recon_err = (&factor * factor.transpose() - &covariance).abs().max();
        if recon_err > 1e-10 {
            return Err(Error::Internal(format!(
                "Cholesky reconstruction error {recon_err:e}"
            )));
        }
        Ok(PopulationModel {
            mean,
            covariance,
            factor,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Correlation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CorrelationModel {
    /// Scale-free precision graph with edge weight v.
    Model1 { v: f64 },
    /// Exchangeable correlation rho.
    Model2 { rho: f64 },
}

/// Mean rule eta_j = base + var_coef * Sigma_jj + eps_j with Gaussian
/// noise eps_j. `noise_param` is the variance of eps when
/// `noise_is_variance` is set and its standard deviation otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRule {
    pub base: f64,
    pub var_coef: f64,
    pub noise_param: f64,
    pub noise_is_variance: bool,
}

impl Default for MeanRule {
    fn default() -> Self {
        MeanRule {
            base: -0.002,
            var_coef: 0.1,
            // calibrated so the Model 2 reference setting (N = 10,
            // rho = 0.75, Sharpe, T = 1000, alpha = 0.05) reproduces
            // the expected set size near 4.7; treated as a standard
            // deviation
            noise_param: 0.012,
            noise_is_variance: false,
        }
    }
}

impl MeanRule {
    fn noise_sd(&self) -> f64 {
        if self.noise_is_variance {
            self.noise_param.sqrt()
        } else {
            self.noise_param
        }
    }
}

/// Full synthetic-population recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub model: CorrelationModel,
    pub n_assets: usize,
    pub mean_rule: MeanRule,
    pub seed: u64,
}

/// Deterministic substream keyed by (seed, run, purpose) so draws are
/// independent of scheduling order.
pub fn substream(seed: u64, run: u64, purpose: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(run.to_le_bytes());
    h.update(purpose.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

const PURPOSE_POPULATION: u64 = 1;
const PURPOSE_PANEL: u64 = 2;

/// Exchangeable correlation matrix: rho off the diagonal, 1 on it.
pub fn gen_model2(n: usize, rho: f64) -> Result<DMatrix<f64>> {
    if n == 0 || n > MAX_ASSETS {
        return Err(Error::BadAssetCount { n, max: MAX_ASSETS });
    }
    let lo = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
    if !(rho > lo && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rho = {rho} outside the positive-definite range ({lo}, 1)"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho }))
}

/// Scale-free tree adjacency by preferential attachment: start from a
/// single edge, each new node attaches to one existing node chosen
/// with probability proportional to its current degree.
fn scale_free_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let mut edges = vec![(0usize, 1usize)];
    // each edge contributes both endpoints, so sampling a uniform entry
    // of this list is degree-proportional sampling
    let mut endpoints = vec![0usize, 1usize];
    for node in 2..n {
        let target = endpoints[rng.gen_range(0..endpoints.len())];
        edges.push((node, target));
        endpoints.push(node);
        endpoints.push(target);
    }
    edges
}

/// Model 1 correlation: precision Omega = v*Theta + (|e| + 0.2) I on a
/// scale-free tree Theta (e its smallest eigenvalue of v*Theta),
/// inverted and rescaled to unit diagonal.
pub fn gen_model1<R: Rng>(n: usize, v: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 || n > MAX_ASSETS {
        return Err(Error::BadAssetCount { n, max: MAX_ASSETS });
    }
    if !(v > 0.0) {
        return Err(Error::InvalidArgument(format!("v must be > 0, got {v}")));
    }
    let mut omega = DMatrix::zeros(n, n);
    for (a, b) in scale_free_tree(n, rng) {
        omega[(a, b)] = v;
        omega[(b, a)] = v;
    }
    let e = omega
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .min();
    for j in 0..n {
        omega[(j, j)] = e.abs() + 0.2;
    }
    let w = omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Model 1 precision not PD".into()))?
        .inverse();
    let r = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            w[(i, j)] / (w[(i, i)] * w[(j, j)]).sqrt()
        }
    });
    Ok(r)
}

/// Mean vector from the risk-return rule.
pub fn gen_mean_vector<R: Rng>(sigma_diag: &[f64], rule: &MeanRule, rng: &mut R) -> Vec<f64> {
    let sd = rule.noise_sd();
    let noise = Normal::new(0.0, sd.max(0.0)).expect("valid normal parameters");
    sigma_diag
        .iter()
        .map(|&s_jj| {
            let eps: f64 = if sd > 0.0 { noise.sample(rng) } else { 0.0 };
            rule.base + rule.var_coef * s_jj + eps
        })
        .collect()
}

/// Draw one full population realization: marginal variances from
/// U[0.01, 0.03], the correlation matrix from the chosen design, and
/// means from the risk-return rule.
pub fn realize_population<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Result<PopulationModel> {
    let n = spec.n_assets;
    let sigma_diag: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.03)).collect();
    let r = match spec.model {
        CorrelationModel::Model1 { v } => gen_model1(n, v, rng)?,
        CorrelationModel::Model2 { rho } => gen_model2(n, rho)?,
    };
    let d: Vec<f64> = sigma_diag.iter().map(|s| s.sqrt()).collect();
    let sigma = DMatrix::from_fn(n, n, |i, j| d[i] * r[(i, j)] * d[j]);
    let eta = gen_mean_vector(&sigma_diag, &spec.mean_rule, rng);
    PopulationModel::new(eta, sigma)
}

/// T i.i.d. multivariate normal rows eta + F z.
pub fn sample_panel<R: Rng>(model: &PopulationModel, t: usize, rng: &mut R) -> Result<ReturnPanel> {
    if t < 2 {
        return Err(Error::TooFewRows { min: 2, got: t });
    }
    let n = model.n_assets();
    let mut rows = Vec::with_capacity(t);
    let mut z = DVector::zeros(n);
    for _ in 0..t {
        for j in 0..n {
            z[j] = rng.sample(StandardNormal);
        }
        let x = &model.factor * &z;
        rows.push((0..n).map(|j| model.mean[j] + x[j]).collect::<Vec<f64>>());
    }
    let labels = (0..n).map(|j| format!("a{j}")).collect();
    ReturnPanel::from_rows(labels, &rows)
}

/// Exact population mean and variance of the equally weighted
/// portfolio on `mask`.
pub fn population_moments(model: &PopulationModel, mask: &SelectionMask) -> PortfolioMoments {
    let k = f64::from(mask.weight());
    let mut mu = 0.0;
    let mut var = 0.0;
    for i in mask.assets() {
        mu += model.mean[i];
        for j in mask.assets() {
            var += model.covariance[(i, j)];
        }
    }
    PortfolioMoments {
        mean: mu / k,
        variance: var / (k * k),
    }
}

fn population_cov(model: &PopulationModel, a: &SelectionMask, b: &SelectionMask) -> f64 {
    let ka = f64::from(a.weight());
    let kb = f64::from(b.weight());
    let mut c = 0.0;
    for i in a.assets() {
        for j in b.assets() {
            c += model.covariance[(i, j)];
        }
    }
    c / (ka * kb)
}

/// Exhaustive population argmin: the optimal loss and every selection
/// attaining it within `tie_tolerance`.
pub fn true_optimum(
    model: &PopulationModel,
    spec: &LossSpec,
    tie_tolerance: f64,
) -> Result<(Vec<SelectionMask>, f64)> {
    let n = model.n_assets();
    let mut best = f64::INFINITY;
    let mut losses: Vec<(SelectionMask, f64)> = Vec::new();
    for bits in 1u32..1u32 << n {
        let mask = SelectionMask::new(bits, n)?;
        let m = population_moments(model, &mask);
        if let Ok(loss) = spec.value(m.mean, m.variance) {
            best = best.min(loss);
            losses.push((mask, loss));
        }
    }
    if losses.is_empty() {
        return Err(Error::EmptyUniverse(
            "loss undefined on every selection".into(),
        ));
    }
    let set: Vec<SelectionMask> = losses
        .into_iter()
        .filter(|&(_, l)| l - best <= tie_tolerance)
        .map(|(m, _)| m)
        .collect();
    Ok((set, best))
}

/// Population standardized differential gamma(s) = delta(s) / tau(s)
/// against a reference in the optimal set, using exact Gaussian
/// covariance blocks.
pub fn population_gamma(
    model: &PopulationModel,
    spec: &LossSpec,
    mask: &SelectionMask,
    reference: &SelectionMask,
) -> Result<f64> {
    let ms = population_moments(model, mask);
    let mr = population_moments(model, reference);
    let delta = spec.value(ms.mean, ms.variance)? - spec.value(mr.mean, mr.variance)?;
    let cov = population_cov(model, mask, reference);
    // only the mean/variance/covariance entries feed the Gaussian
    // blocks; higher moments are implied
    let pm = PairMoments {
        m_s: ms,
        m_s2: mr,
        cov,
        skew_s: 0.0,
        skew_s2: 0.0,
        coskew_s_s2: 0.0,
        coskew_s2_s: 0.0,
        kurt_s: 3.0 * ms.variance * ms.variance,
        kurt_s2: 3.0 * mr.variance * mr.variance,
        cokurt: ms.variance * mr.variance + 2.0 * cov * cov,
        t: 1,
    };
    let v = vhat_gaussian(&pm);
    let gs = spec.gradient(ms.mean, ms.variance)?;
    let gr = spec.gradient(mr.mean, mr.variance)?;
    let g = [gs.0, gs.1, -gr.0, -gr.1];
    let tau2 = v.quadratic_form(&g);
    if tau2 < DEFAULT_TAU2_FLOOR {
        return Ok(if delta.abs() <= 1e-12 {
            0.0
        } else if delta > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        });
    }
    Ok(delta / tau2.sqrt())
}

/// Asymptotic expected confidence-set size and its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryResult {
    pub expected: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub gamma_min: f64,
    pub s0_size: usize,
    pub universe_size: usize,
}

/// Evaluate the asymptotic expected size
/// |S0|(1-alpha) + sum over suboptimal s of Phi(q - sqrt(T) gamma(s)),
/// with the monotonicity bounds driven by gamma_min.
pub fn theoretical_expected_size(
    model: &PopulationModel,
    spec: &LossSpec,
    alpha: f64,
    t: usize,
) -> Result<TheoryResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    let n = model.n_assets();
    let (s0, _) = true_optimum(model, spec, 1e-12)?;
    let reference = s0
        .iter()
        .min_by_key(|m| m.bits())
        .copied()
        .expect("optimal set nonempty");
    let in_s0: std::collections::HashSet<u32> = s0.iter().map(SelectionMask::bits).collect();
    let q = normal_quantile(1.0 - alpha)?;
    let sqrt_t = (t as f64).sqrt();
    let mut expected = s0.len() as f64 * (1.0 - alpha);
    let mut gamma_min = f64::INFINITY;
    for bits in 1u32..1u32 << n {
        if in_s0.contains(&bits) {
            continue;
        }
        let mask = SelectionMask::new(bits, n)?;
        let gamma = match population_gamma(model, spec, &mask, &reference) {
            Ok(g) => g,
            Err(_) => continue, // loss undefined: outside the universe
        };
        gamma_min = gamma_min.min(gamma);
        expected += normal_cdf(q - sqrt_t * gamma);
    }
    let universe_size = (1usize << n) - 1;
    let lower_bound = s0.len() as f64 * (1.0 - alpha);
    let suboptimal = (universe_size - s0.len()) as f64;
    let upper_bound = if gamma_min.is_finite() {
        lower_bound + suboptimal * normal_cdf(q - sqrt_t * gamma_min)
    } else {
        lower_bound
    };
    Ok(TheoryResult {
        expected,
        lower_bound,
        upper_bound,
        gamma_min,
        s0_size: s0.len(),
        universe_size,
    })
}

/// Monte Carlo study configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub runs: usize,
    /// Redraw the population (variances, graph, means) each run;
    /// when false a single realization from run 0 is shared.
    pub redraw_population: bool,
    pub cov_mode: CovMode,
    pub tie_tolerance: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            runs: 300,
            redraw_population: true,
            cov_mode: CovMode::Gaussian,
            tie_tolerance: 1e-12,
        }
    }
}

/// One (loss, alpha, T) cell of the Monte Carlo table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub loss: LossSpec,
    pub alpha: f64,
    pub t: usize,
    pub runs: usize,
    pub failures: usize,
    /// Mean confidence-set size with its standard error.
    pub kappa: f64,
    pub kappa_se: f64,
    /// Coverage of the population-optimal set with its standard error.
    pub coverage: f64,
    pub coverage_se: f64,
    /// Mean lower-boundary size with its standard error.
    pub kappa_lower: f64,
    pub kappa_lower_se: f64,
}

/// Per-run audit record for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRunCell {
    pub run: usize,
    pub size: usize,
    pub lower_boundary_size: usize,
    pub covered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub generator: GeneratorSpec,
    pub config: McConfig,
    pub cells: Vec<McCell>,
    /// Indexed like `cells`; inner vectors hold per-run outcomes for
    /// the runs that completed.
    pub per_run: Vec<Vec<McRunCell>>,
}

struct CellOutcome {
    cell: usize,
    run: usize,
    size: usize,
    lb_size: usize,
    covered: bool,
}

/// Monte Carlo estimation of expected size, lower-boundary size, and
/// coverage over a grid of losses, levels, and sample sizes.
pub fn run_mc(
    genspec: &GeneratorSpec,
    losses: &[LossSpec],
    alphas: &[f64],
    ts: &[usize],
    config: &McConfig,
) -> Result<McReport> {
    if config.runs < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 runs, got {}",
            config.runs
        )));
    }
    if losses.is_empty() || alphas.is_empty() || ts.is_empty() {
        return Err(Error::InvalidArgument(
            "losses, alphas, and Ts must all be nonempty".into(),
        ));
    }
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
    }
    let t_max = *ts.iter().max().expect("nonempty");
    let alpha_loosest = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_cells = losses.len() * alphas.len() * ts.len();
    let cell_index = |li: usize, ai: usize, ti: usize| (li * alphas.len() + ai) * ts.len() + ti;

    let shared_model = if config.redraw_population {
        None
    } else {
        Some(realize_population(
            genspec,
            &mut substream(genspec.seed, 0, PURPOSE_POPULATION),
        )?)
    };

    let per_run_outcomes: Vec<Result<Vec<CellOutcome>>> = (0..config.runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<CellOutcome>> {
            let model = match &shared_model {
                Some(m) => m.clone(),
                None => realize_population(
                    genspec,
                    &mut substream(genspec.seed, run as u64, PURPOSE_POPULATION),
                )?,
            };
            // one long panel per run; smaller T values use its prefix
            let panel = sample_panel(
                &model,
                t_max,
                &mut substream(genspec.seed, run as u64, PURPOSE_PANEL),
            )?;
            let mut out = Vec::with_capacity(n_cells);
            for (li, loss) in losses.iter().enumerate() {
                let (s0, _) = true_optimum(&model, loss, config.tie_tolerance)?;
                for (ti, &t) in ts.iter().enumerate() {
                    let sub = panel.truncated(t)?;
                    // screen once at the loosest level; tighter levels
                    // reuse the same statistics
                    let mut screen = ScreenConfig::new(alpha_loosest, config.cov_mode)?;
                    screen.worker_count = Some(1);
                    let scs = build_scs(&sub, loss, &screen)?;
                    for (ai, &alpha) in alphas.iter().enumerate() {
                        let q = normal_quantile(1.0 - alpha)?;
                        let included: Vec<SelectionMask> = scs
                            .records
                            .iter()
                            .filter(|r| r.z <= q)
                            .map(|r| r.mask)
                            .collect();
                        let covered = s0.iter().all(|m| {
                            scs.record_for(m).is_some_and(|r| r.z <= q)
                        });
                        let lb = lower_boundary_of(&included, sub.assets());
                        out.push(CellOutcome {
                            cell: cell_index(li, ai, ti),
                            run,
                            size: included.len(),
                            lb_size: lb.len(),
                            covered,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut per_run: Vec<Vec<McRunCell>> = vec![Vec::new(); n_cells];
    let mut failures = 0usize;
    for outcome in per_run_outcomes {
        match outcome {
            Ok(list) => {
                for o in list {
                    per_run[o.cell].push(McRunCell {
                        run: o.run,
                        size: o.size,
                        lower_boundary_size: o.lb_size,
                        covered: o.covered,
                    });
                }
            }
            Err(_) => failures += 1,
        }
    }

    let mut cells = Vec::with_capacity(n_cells);
    for (li, loss) in losses.iter().enumerate() {
        for (ai, &alpha) in alphas.iter().enumerate() {
            for (ti, &t) in ts.iter().enumerate() {
                let idx = cell_index(li, ai, ti);
                let rows = &per_run[idx];
                let n = rows.len();
                if n < 2 {
                    return Err(Error::Internal(format!(
                        "fewer than 2 successful runs for loss={loss} alpha={alpha} T={t}"
                    )));
                }
                let nf = n as f64;
                let mean = |f: &dyn Fn(&McRunCell) -> f64| {
                    rows.iter().map(f).sum::<f64>() / nf
                };
                let se = |f: &dyn Fn(&McRunCell) -> f64, m: f64| {
                    let var =
                        rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (nf - 1.0);
                    (var / nf).sqrt()
                };
                let size_f = |r: &McRunCell| r.size as f64;
                let lb_f = |r: &McRunCell| r.lower_boundary_size as f64;
                let cov_f = |r: &McRunCell| f64::from(u8::from(r.covered));
                let kappa = mean(&size_f);
                let kappa_lower = mean(&lb_f);
                let coverage = mean(&cov_f);
                cells.push(McCell {
                    loss: *loss,
                    alpha,
                    t,
                    runs: n,
                    failures,
                    kappa,
                    kappa_se: se(&size_f, kappa),
                    coverage,
                    coverage_se: (coverage * (1.0 - coverage) / nf).sqrt(),
                    kappa_lower,
                    kappa_lower_se: se(&lb_f, kappa_lower),
                });
            }
        }
    }

    Ok(McReport {
        generator: *genspec,
        config: *config,
        cells,
        per_run,
    })
}
