//! Independent reference implementation used by the acceptance suite.
//!
//! Everything here is coded from scratch against the written contract:
//! plain nested loops over row-major data, no Gray-code streaming, no
//! shared moment code, and an external normal quantile (statrs). The
//! production pipeline must agree with these results.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Row-major random return panel in a modest range.
pub fn random_rows(seed: u64, t: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| (0..n).map(|_| rng.gen_range(-0.12..0.15)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NaiveLoss {
    Mv { gamma: f64, scale: f64 },
    Sharpe,
    Es { level: f64 },
}

pub fn normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

pub fn quantile(p: f64) -> f64 {
    normal().inverse_cdf(p)
}

impl NaiveLoss {
    pub fn value(&self, mu: f64, var: f64) -> Option<f64> {
        match *self {
            NaiveLoss::Mv { gamma, scale } => Some(scale * var - gamma * mu),
            NaiveLoss::Sharpe => {
                if var <= 0.0 {
                    None
                } else {
                    Some(-mu / var.sqrt())
                }
            }
            NaiveLoss::Es { level } => {
                if var < 0.0 {
                    None
                } else {
                    let q = quantile(level);
                    let mult = normal().pdf(q) / level;
                    Some(-mu + var.sqrt() * mult)
                }
            }
        }
    }

    pub fn gradient(&self, mu: f64, var: f64) -> Option<(f64, f64)> {
        match *self {
            NaiveLoss::Mv { gamma, scale } => Some((-gamma, scale)),
            NaiveLoss::Sharpe => {
                if var <= 0.0 {
                    None
                } else {
                    let sd = var.sqrt();
                    Some((-1.0 / sd, mu / (2.0 * sd * sd * sd)))
                }
            }
            NaiveLoss::Es { level } => {
                if var <= 0.0 {
                    None
                } else {
                    let q = quantile(level);
                    let mult = normal().pdf(q) / level;
                    Some((-1.0, mult / (2.0 * var.sqrt())))
                }
            }
        }
    }
}

/// Equal-weight portfolio series of `bits` over row-major data.
pub fn series(rows: &[Vec<f64>], bits: u32) -> Vec<f64> {
    let k = bits.count_ones() as f64;
    rows.iter()
        .map(|row| {
            let mut acc = 0.0;
            for (j, x) in row.iter().enumerate() {
                if bits >> j & 1 == 1 {
                    acc += x;
                }
            }
            acc / k
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Studentized statistic of candidate vs reference series, mirroring
/// the written contract: delta-method variance from plug-in moments up
/// to order four (iid mode) or the Gaussian simplification.
pub fn naive_z(
    cand: &[f64],
    refr: &[f64],
    loss: NaiveLoss,
    gaussian: bool,
) -> Option<(f64, f64)> {
    let t = cand.len() as f64;
    let ms = mean(cand);
    let mr = mean(refr);
    let vs = variance(cand);
    let vr = variance(refr);
    let cov = cand
        .iter()
        .zip(refr)
        .map(|(x, y)| (x - ms) * (y - mr))
        .sum::<f64>()
        / (t - 1.0);
    let delta = loss.value(ms, vs)? - loss.value(mr, vr)?;
    let (gs_mu, gs_var) = loss.gradient(ms, vs)?;
    let (gr_mu, gr_var) = loss.gradient(mr, vr)?;
    let g = [gs_mu, gs_var, -gr_mu, -gr_var];

    let v: [[f64; 4]; 4] = if gaussian {
        [
            [vs, 0.0, cov, 0.0],
            [0.0, 2.0 * vs * vs, 0.0, 2.0 * cov * cov],
            [cov, 0.0, vr, 0.0],
            [0.0, 2.0 * cov * cov, 0.0, 2.0 * vr * vr],
        ]
    } else {
        let mut s3 = 0.0;
        let mut r3 = 0.0;
        let mut sr2 = 0.0;
        let mut rs2 = 0.0;
        let mut s4 = 0.0;
        let mut r4 = 0.0;
        let mut s2r2 = 0.0;
        for (x, y) in cand.iter().zip(refr) {
            let d = x - ms;
            let e = y - mr;
            s3 += d * d * d;
            r3 += e * e * e;
            sr2 += d * e * e;
            rs2 += d * d * e;
            s4 += d * d * d * d;
            r4 += e * e * e * e;
            s2r2 += d * d * e * e;
        }
        s3 /= t;
        r3 /= t;
        sr2 /= t;
        rs2 /= t;
        s4 /= t;
        r4 /= t;
        s2r2 /= t;
        [
            [vs, s3, cov, sr2],
            [s3, s4 - vs * vs, rs2, s2r2 - cov * cov],
            [cov, rs2, vr, r3],
            [sr2, s2r2 - cov * cov, r3, r4 - vr * vr],
        ]
    };
    let mut tau2 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            tau2 += g[i] * v[i][j] * g[j];
        }
    }
    let z = if tau2 < 1e-12 {
        if delta > 1e-12 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        delta / (tau2 / t).sqrt()
    };
    Some((delta, z))
}

#[derive(Debug, Clone)]
pub struct NaiveScs {
    pub reference_bits: u32,
    pub reference_loss: f64,
    pub q: f64,
    /// (bits, loss, z, included) for every mask with defined loss.
    pub records: Vec<(u32, f64, f64, bool)>,
}

/// Full naive pipeline: exhaustive optimum (ties to the smallest mask
/// integer), then screening of every mask.
pub fn naive_scs(rows: &[Vec<f64>], loss: NaiveLoss, alpha: f64, gaussian: bool) -> NaiveScs {
    let n = rows[0].len();
    let mut best: Option<(f64, u32)> = None;
    let mut all: Vec<(u32, Vec<f64>)> = Vec::new();
    for bits in 1u32..1 << n {
        let ys = series(rows, bits);
        all.push((bits, ys));
    }
    for (bits, ys) in &all {
        if let Some(l) = loss.value(mean(ys), variance(ys)) {
            let better = match best {
                None => true,
                Some((bl, bb)) => l < bl || (l == bl && *bits < bb),
            };
            if better {
                best = Some((l, *bits));
            }
        }
    }
    let (reference_loss, reference_bits) = best.expect("nonempty universe");
    let refr = series(rows, reference_bits);
    let q = quantile(1.0 - alpha);
    let mut records = Vec::new();
    for (bits, ys) in &all {
        if let Some((delta, z)) = naive_z(ys, &refr, loss, gaussian) {
            records.push((*bits, reference_loss + delta, z, z <= q));
        }
    }
    NaiveScs {
        reference_bits,
        reference_loss,
        q,
        records,
    }
}

/// Naive metrics over the included bits.
pub fn naive_rmi(size: usize, universe: usize) -> f64 {
    1.0 - (size as f64).ln() / (universe as f64).ln()
}

pub fn naive_lower_boundary(included: &[u32]) -> Vec<u32> {
    let mut lb: Vec<u32> = included
        .iter()
        .copied()
        .filter(|&s| !included.iter().any(|&o| o != s && o & s == o))
        .collect();
    lb.sort_unstable();
    lb
}

pub fn naive_inclusion(included: &[u32], n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            included.iter().filter(|&&s| s >> j & 1 == 1).count() as f64 / included.len() as f64
        })
        .collect()
}

pub fn naive_co_inclusion(included: &[u32], n: usize) -> Vec<Vec<f64>> {
    let count = |p: &dyn Fn(u32) -> bool| included.iter().filter(|&&s| p(s)).count();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let ci = count(&|s| s >> i & 1 == 1);
                    let cj = count(&|s| s >> j & 1 == 1);
                    let cij = count(&|s| s >> i & 1 == 1 && s >> j & 1 == 1);
                    let denom = ci + cj - cij;
                    if denom > 0 {
                        cij as f64 / denom as f64
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect()
}
