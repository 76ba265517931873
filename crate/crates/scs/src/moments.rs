//! Portfolio return series, sample moments, cross moments up to fourth
//! order, and the estimated asymptotic covariance of the moment vector
//! (mu_s, var_s, mu_s', var_s').
//!
//! Divisor convention: means use 1/T, variances and covariances use
//! 1/(T-1), third- and fourth-order central moments use the plug-in
//! divisor 1/T. Higher moments only enter asymptotic variance
//! estimates, where the O(1/T) bias is immaterial, but the convention
//! does affect finite-sample Z values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::selection::SelectionMask;

/// Sample mean and variance of a portfolio return series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMoments {
    pub mean: f64,
    pub variance: f64,
}

/// All sample moments up to order four for a portfolio pair (s, s').
///
/// Cross moments are centered at each series' own full-sample mean:
/// `coskew_s_s2` is the plug-in estimate of E[(Ys-mu_s)(Ys'-mu_s')^2],
/// `cokurt` of E[(Ys-mu_s)^2 (Ys'-mu_s')^2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub m_s: PortfolioMoments,
    pub m_s2: PortfolioMoments,
    pub cov: f64,
    pub skew_s: f64,
    pub skew_s2: f64,
    pub coskew_s_s2: f64,
    pub coskew_s2_s: f64,
    pub kurt_s: f64,
    pub kurt_s2: f64,
    pub cokurt: f64,
    pub t: usize,
}

/// 4x4 symmetric estimate of the asymptotic covariance of
/// (mu_s, var_s, mu_s', var_s').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovMatrix4(pub [[f64; 4]; 4]);

impl CovMatrix4 {
    /// Quadratic form g' V g.
    pub fn quadratic_form(&self, g: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += g[i] * self.0[i][j] * g[j];
            }
        }
        acc
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                worst = worst.max((self.0[i][j] - self.0[j][i]).abs());
            }
        }
        worst
    }
}

/// Equal-weight portfolio return series for a mask:
/// entry t = sum of selected columns at t, divided by the weight.
pub fn portfolio_series(panel: &ReturnPanel, mask: &SelectionMask) -> Result<Vec<f64>> {
    if mask.n_assets() != panel.assets() {
        return Err(Error::UniverseMismatch {
            a: mask.n_assets(),
            b: panel.assets(),
        });
    }
    let t = panel.periods();
    let mut sum = vec![0.0; t];
    for j in mask.assets() {
        apply_column(&mut sum, panel.column(j), true);
    }
    let w = f64::from(mask.weight());
    for x in &mut sum {
        *x /= w;
    }
    Ok(sum)
}

/// Add or remove one asset column from an unnormalized running sum.
/// The caller divides by the new weight to obtain the portfolio series.
#[inline]
pub fn apply_column(sum: &mut [f64], column: &[f64], added: bool) {
    debug_assert_eq!(sum.len(), column.len());
    if added {
        for (s, x) in sum.iter_mut().zip(column) {
            *s += x;
        }
    } else {
        for (s, x) in sum.iter_mut().zip(column) {
            *s -= x;
        }
    }
}

/// Sample mean (1/T) and variance (1/(T-1)) of a series.
pub fn sample_moments(series: &[f64]) -> Result<PortfolioMoments> {
    let t = series.len();
    if t < 2 {
        return Err(Error::TooFewRows { min: 2, got: t });
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let variance = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    Ok(PortfolioMoments { mean, variance })
}

/// All marginal and cross moments up to fourth order for a pair of
/// series of equal length.
pub fn pair_moments(series_s: &[f64], series_s2: &[f64]) -> Result<PairMoments> {
    if series_s.len() != series_s2.len() {
        return Err(Error::LengthMismatch {
            a: series_s.len(),
            b: series_s2.len(),
        });
    }
    let t = series_s.len();
    if t < 2 {
        return Err(Error::TooFewRows { min: 2, got: t });
    }
    let tf = t as f64;
    let mean_s = series_s.iter().sum::<f64>() / tf;
    let mean_s2 = series_s2.iter().sum::<f64>() / tf;

    let mut ss = 0.0; // sum d^2
    let mut rr = 0.0;
    let mut sr = 0.0; // sum d*e
    let mut s3 = 0.0;
    let mut r3 = 0.0;
    let mut sr2 = 0.0; // sum d*e^2
    let mut rs2 = 0.0; // sum e*d^2
    let mut s4 = 0.0;
    let mut r4 = 0.0;
    let mut s2r2 = 0.0;
    for (x, y) in series_s.iter().zip(series_s2) {
        let d = x - mean_s;
        let e = y - mean_s2;
        let d2 = d * d;
        let e2 = e * e;
        ss += d2;
        rr += e2;
        sr += d * e;
        s3 += d2 * d;
        r3 += e2 * e;
        sr2 += d * e2;
        rs2 += e * d2;
        s4 += d2 * d2;
        r4 += e2 * e2;
        s2r2 += d2 * e2;
    }
    let t1 = (t - 1) as f64;
    Ok(PairMoments {
        m_s: PortfolioMoments {
            mean: mean_s,
            variance: ss / t1,
        },
        m_s2: PortfolioMoments {
            mean: mean_s2,
            variance: rr / t1,
        },
        cov: sr / t1,
        skew_s: s3 / tf,
        skew_s2: r3 / tf,
        coskew_s_s2: sr2 / tf,
        coskew_s2_s: rs2 / tf,
        kurt_s: s4 / tf,
        kurt_s2: r4 / tf,
        cokurt: s2r2 / tf,
        t,
    })
}

/// Plug-in asymptotic covariance of (mu_s, var_s, mu_s', var_s') under
/// i.i.d. sampling, assembled from moments up to order four.
pub fn vhat_iid(pm: &PairMoments) -> CovMatrix4 {
    let vs = pm.m_s.variance;
    let vr = pm.m_s2.variance;
    let c = pm.cov;
    CovMatrix4([
        [vs, pm.skew_s, c, pm.coskew_s_s2],
        [pm.skew_s, pm.kurt_s - vs * vs, pm.coskew_s2_s, pm.cokurt - c * c],
        [c, pm.coskew_s2_s, vr, pm.skew_s2],
        [pm.coskew_s_s2, pm.cokurt - c * c, pm.skew_s2, pm.kurt_s2 - vr * vr],
    ])
}

/// Gaussian simplification: third-order entries vanish and the
/// variance block reduces to 2*var_s^2, 2*var_s'^2 on the diagonal and
/// 2*cov^2 off it.
pub fn vhat_gaussian(pm: &PairMoments) -> CovMatrix4 {
    let vs = pm.m_s.variance;
    let vr = pm.m_s2.variance;
    let c = pm.cov;
    CovMatrix4([
        [vs, 0.0, c, 0.0],
        [0.0, 2.0 * vs * vs, 0.0, 2.0 * c * c],
        [c, 0.0, vr, 0.0],
        [0.0, 2.0 * c * c, 0.0, 2.0 * vr * vr],
    ])
}
