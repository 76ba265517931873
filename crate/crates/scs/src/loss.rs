//! Loss functions L(mu, var), their gradients, the studentized
//! performance differential Z, and the Gaussian closed forms for the
//! mean-variance and Sharpe losses.
//!
//! Orientation: Z is built from delta = L(candidate) - L(reference).
//! With the reference chosen as the exhaustive loss minimizer, delta is
//! always nonnegative and candidates worse than the reference produce
//! positive Z, making the one-sided screening test coherent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{vhat_gaussian, vhat_iid, PairMoments};

/// Quadratic-form floor below which the statistic is declared
/// degenerate rather than studentized.
pub const DEFAULT_TAU2_FLOOR: f64 = 1e-12;
/// Differential floor separating "identical at machine precision"
/// (kept, z = 0) from "worse with no usable variance" (excluded).
pub const DEFAULT_DELTA_FLOOR: f64 = 1e-12;

/// Which plug-in asymptotic covariance estimate feeds the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovMode {
    Iid,
    Gaussian,
}

impl fmt::Display for CovMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovMode::Iid => f.write_str("iid"),
            CovMode::Gaussian => f.write_str("gaussian"),
        }
    }
}

impl FromStr for CovMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(CovMode::Iid),
            "gaussian" => Ok(CovMode::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown covariance mode {other:?} (expected iid|gaussian)"
            ))),
        }
    }
}

/// Parameterized loss on portfolio mean and variance.
///
/// The mean-variance loss is generalized to scale*var - gamma*mu so
/// both "var - 0.5 mu" and "-mu + 0.5 var" parameterizations are
/// expressible; Z is invariant to positive rescaling, so these differ
/// only in labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LossSpec {
    MeanVariance { gamma: f64, scale: f64 },
    Sharpe,
    ExpectedShortfall { level: f64 },
}

impl LossSpec {
    pub fn mean_variance(gamma: f64) -> Result<Self> {
        Self::mean_variance_scaled(gamma, 1.0)
    }

    pub fn mean_variance_scaled(gamma: f64, scale: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mean-variance loss needs gamma > 0 and scale > 0, got gamma={gamma}, scale={scale}"
            )));
        }
        Ok(LossSpec::MeanVariance { gamma, scale })
    }

    pub fn expected_shortfall(level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "expected-shortfall level must lie in (0,1), got {level}"
            )));
        }
        Ok(LossSpec::ExpectedShortfall { level })
    }

    /// Evaluate the loss at (mu, var).
    pub fn value(&self, mu: f64, var: f64) -> Result<f64> {
        match *self {
            LossSpec::MeanVariance { gamma, scale } => {
                if var < 0.0 {
                    return Err(Error::LossUndefined(format!("negative variance {var}")));
                }
                Ok(scale * var - gamma * mu)
            }
            LossSpec::Sharpe => {
                if var <= 0.0 {
                    return Err(Error::LossUndefined(format!(
                        "Sharpe loss needs var > 0, got {var}"
                    )));
                }
                Ok(-mu / var.sqrt())
            }
            LossSpec::ExpectedShortfall { level } => {
                if var <= 0.0 {
                    return Err(Error::LossUndefined(format!(
                        "expected-shortfall loss needs var > 0, got {var}"
                    )));
                }
                Ok(-mu + var.sqrt() * es_multiplier(level))
            }
        }
    }

    /// Gradient (dL/dmu, dL/dvar) at (mu, var).
    pub fn gradient(&self, mu: f64, var: f64) -> Result<(f64, f64)> {
        match *self {
            LossSpec::MeanVariance { gamma, scale } => {
                if var < 0.0 {
                    return Err(Error::LossUndefined(format!("negative variance {var}")));
                }
                Ok((-gamma, scale))
            }
            LossSpec::Sharpe => {
                if var <= 0.0 {
                    return Err(Error::LossUndefined(format!(
                        "Sharpe loss needs var > 0, got {var}"
                    )));
                }
                let sigma = var.sqrt();
                Ok((-1.0 / sigma, mu / (2.0 * sigma * var)))
            }
            LossSpec::ExpectedShortfall { level } => {
                if var <= 0.0 {
                    return Err(Error::LossUndefined(format!(
                        "expected-shortfall loss needs var > 0, got {var}"
                    )));
                }
                let sigma = var.sqrt();
                Ok((-1.0, es_multiplier(level) / (2.0 * sigma)))
            }
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LossSpec::MeanVariance { gamma, scale } => {
                if scale == 1.0 {
                    write!(f, "mv:gamma={gamma}")
                } else {
                    write!(f, "mv:gamma={gamma},scale={scale}")
                }
            }
            LossSpec::Sharpe => f.write_str("sharpe"),
            LossSpec::ExpectedShortfall { level } => write!(f, "es:level={level}"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// Parses "mv:gamma=0.5", "mv:gamma=1,scale=0.5", "sharpe",
    /// "es:level=0.1". Omitted parameters take their defaults
    /// (gamma=1, scale=1, level=0.1).
    fn from_str(text: &str) -> Result<Self> {
        let (head, params) = match text.split_once(':') {
            Some((h, p)) => (h, p),
            None => (text, ""),
        };
        let mut kv = std::collections::HashMap::new();
        for part in params.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("bad loss parameter {part:?} in {text:?}"))
            })?;
            let value: f64 = v.parse().map_err(|_| {
                Error::InvalidArgument(format!("bad numeric value {v:?} in {text:?}"))
            })?;
            kv.insert(k.to_string(), value);
        }
        let take = |kv: &mut std::collections::HashMap<String, f64>, key: &str, default| {
            kv.remove(key).unwrap_or(default)
        };
        let spec = match head {
            "mv" => {
                let gamma = take(&mut kv, "gamma", 1.0);
                let scale = take(&mut kv, "scale", 1.0);
                LossSpec::mean_variance_scaled(gamma, scale)?
            }
            "sharpe" => LossSpec::Sharpe,
            "es" => LossSpec::expected_shortfall(take(&mut kv, "level", 0.1))?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown loss {other:?} (expected mv|sharpe|es)"
                )))
            }
        };
        if let Some(key) = kv.keys().next() {
            return Err(Error::InvalidArgument(format!(
                "unknown parameter {key:?} for loss {head:?}"
            )));
        }
        Ok(spec)
    }
}

/// Expected-shortfall multiplier phi(q_level)/level on the standard
/// deviation, for the Gaussian ES of a normal return.
pub fn es_multiplier(level: f64) -> f64 {
    normal_pdf(normal_quantile(level).expect("level checked in (0,1)")) / level
}

/// Studentized performance differential for a (candidate, reference)
/// pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenStatistic {
    /// L(candidate) - L(reference).
    pub delta_hat: f64,
    /// Delta-method variance estimate grad' Vhat grad.
    pub tau2_hat: f64,
    /// delta_hat / sqrt(tau2_hat / T); 0 or +inf when degenerate.
    pub z: f64,
    pub degenerate: bool,
}

/// Compute the studentized differential Z for a pair of portfolios
/// whose joint moments are `pm` (candidate first, reference second).
///
/// Degenerate rule: if tau2 falls below `tau2_floor` the statistic
/// carries no variance information; the candidate is kept (z = 0) when
/// its differential is within `delta_floor` of zero and pushed to
/// z = +inf otherwise.
pub fn screen_statistic_with_floors(
    spec: &LossSpec,
    pm: &PairMoments,
    cov_mode: CovMode,
    tau2_floor: f64,
    delta_floor: f64,
) -> Result<ScreenStatistic> {
    let ls = spec.value(pm.m_s.mean, pm.m_s.variance)?;
    let lr = spec.value(pm.m_s2.mean, pm.m_s2.variance)?;
    let gs = spec.gradient(pm.m_s.mean, pm.m_s.variance)?;
    let gr = spec.gradient(pm.m_s2.mean, pm.m_s2.variance)?;
    let grad = [gs.0, gs.1, -gr.0, -gr.1];
    let vhat = match cov_mode {
        CovMode::Iid => vhat_iid(pm),
        CovMode::Gaussian => vhat_gaussian(pm),
    };
    let delta_hat = ls - lr;
    let tau2_hat = vhat.quadratic_form(&grad);
    if tau2_hat < tau2_floor {
        let z = if delta_hat > delta_floor {
            f64::INFINITY
        } else {
            0.0
        };
        return Ok(ScreenStatistic {
            delta_hat,
            tau2_hat,
            z,
            degenerate: true,
        });
    }
    let z = delta_hat / (tau2_hat / pm.t as f64).sqrt();
    Ok(ScreenStatistic {
        delta_hat,
        tau2_hat,
        z,
        degenerate: false,
    })
}

/// [`screen_statistic_with_floors`] with the default floors.
pub fn screen_statistic(
    spec: &LossSpec,
    pm: &PairMoments,
    cov_mode: CovMode,
) -> Result<ScreenStatistic> {
    screen_statistic_with_floors(spec, pm, cov_mode, DEFAULT_TAU2_FLOOR, DEFAULT_DELTA_FLOOR)
}

/// Closed-form Gaussian-mode Z for the mean-variance loss
/// var - gamma*mu, with the second series of `pm` as reference.
pub fn z_closed_mv(gamma: f64, pm: &PairMoments) -> f64 {
    let vs = pm.m_s.variance;
    let vr = pm.m_s2.variance;
    let c = pm.cov;
    let num = gamma * (pm.m_s2.mean - pm.m_s.mean) + vs - vr;
    let tau2 = gamma * gamma * (vs - 2.0 * c + vr)
        + 2.0 * (vs * vs - 2.0 * c * c + vr * vr);
    if tau2 < DEFAULT_TAU2_FLOOR {
        return if num > DEFAULT_DELTA_FLOOR {
            f64::INFINITY
        } else {
            0.0
        };
    }
    (pm.t as f64).sqrt() * num / tau2.sqrt()
}

/// Closed-form Gaussian-mode Z for the Sharpe loss -mu/sigma, with the
/// second series of `pm` as reference.
///
/// The textbook form of this statistic is written with the candidate
/// Sharpe ratio minus the reference one; here it is negated so that
/// candidates with worse Sharpe produce positive Z, matching the loss
/// orientation of [`screen_statistic`].
pub fn z_closed_sharpe(pm: &PairMoments) -> Result<f64> {
    let vs = pm.m_s.variance;
    let vr = pm.m_s2.variance;
    if vs <= 0.0 || vr <= 0.0 {
        return Err(Error::LossUndefined(
            "Sharpe closed form needs positive variances".into(),
        ));
    }
    let (ss, sr) = (vs.sqrt(), vr.sqrt());
    let rs = pm.m_s.mean / ss;
    let rr = pm.m_s2.mean / sr;
    let rho = pm.cov / (ss * sr);
    let tau2 = 2.0 * (1.0 - rho) + 0.5 * (rs * rs + rr * rr) - rho * rho * rs * rr;
    let num = rr - rs;
    if tau2 < DEFAULT_TAU2_FLOOR {
        return Ok(if num > DEFAULT_DELTA_FLOOR {
            f64::INFINITY
        } else {
            0.0
        });
    }
    Ok((pm.t as f64).sqrt() * num / tau2.sqrt())
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal cdf via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, Wichura's AS 241 (PPND16) rational
/// approximations; absolute accuracy well inside 1e-9 on (1e-8, 1-1e-8).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile probability must lie in (0,1), got {p}"
        )));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -x } else { x })
}
