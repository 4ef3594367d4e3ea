//! Ground-truth randomization moments by exhaustive enumeration, with a
//! Monte Carlo fallback.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::randomization::{enumerate_mask_blocks, sample_assignment, Design, DEFAULT_ENUM_CAP};
use crate::rng::stream;

/// Mean, variance and range of a functional over all assignments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunctionalMoments {
    pub mean: f64,
    /// Randomization variance (divisor = number of assignments).
    pub variance: f64,
    pub support_size: u64,
    pub min: f64,
    pub max: f64,
}

/// Evaluate `f` on every CRE assignment, in enumeration order.
///
/// Blocks (by highest treated index) run in parallel; the output order is
/// fixed, so downstream reductions are identical to a serial run.
pub fn enumerate_values<T, F>(f: F, d: &Design, cap: u64) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[u8]) -> T + Sync,
{
    let n = d.n();
    let blocks = enumerate_mask_blocks(d, cap)?;
    let parts: Vec<Vec<T>> = blocks
        .into_par_iter()
        .map(|block| {
            let mut t = vec![0u8; n];
            block
                .map(|mask| {
                    for (i, ti) in t.iter_mut().enumerate() {
                        *ti = ((mask >> i) & 1) as u8;
                    }
                    f(&t)
                })
                .collect()
        })
        .collect();
    Ok(parts.into_iter().flatten().collect())
}

/// Same as [`enumerate_values`] on the calling thread only.
pub fn enumerate_values_serial<T, F>(f: F, d: &Design, cap: u64) -> Result<Vec<T>>
where
    F: Fn(&[u8]) -> T,
{
    let n = d.n();
    let mut out = Vec::new();
    let mut t = vec![0u8; n];
    for block in enumerate_mask_blocks(d, cap)? {
        for mask in block {
            for (i, ti) in t.iter_mut().enumerate() {
                *ti = ((mask >> i) & 1) as u8;
            }
            out.push(f(&t));
        }
    }
    Ok(out)
}

/// Two-pass moments of equally weighted values.
pub fn moments_of(values: &[f64]) -> FunctionalMoments {
    let k = values.len() as f64;
    let mean = pairwise_sum(values) / k;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let variance = pairwise_sum(&sq) / k;
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    FunctionalMoments {
        mean,
        variance,
        support_size: values.len() as u64,
        min,
        max,
    }
}

/// Exact `E^f` and `var^f` of `f` under CRE by enumeration.
pub fn exact_moments<F>(f: F, d: &Design) -> Result<FunctionalMoments>
where
    F: Fn(&[u8]) -> f64 + Sync,
{
    exact_moments_capped(f, d, DEFAULT_ENUM_CAP)
}

pub fn exact_moments_capped<F>(f: F, d: &Design, cap: u64) -> Result<FunctionalMoments>
where
    F: Fn(&[u8]) -> f64 + Sync,
{
    Ok(moments_of(&enumerate_values(f, d, cap)?))
}

/// Monte Carlo moments with jackknife standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McMoments {
    pub mean: f64,
    /// Sample variance (divisor `K − 1`).
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub replicates: usize,
}

/// Moments of `f` over `k` sampled assignments; replicate `r` uses the
/// stream `(seed, "mc-assign", r)`.
pub fn mc_moments<F>(f: F, d: &Design, k: usize, seed: u64) -> Result<McMoments>
where
    F: Fn(&[u8]) -> f64 + Sync,
{
    if k < 3 {
        return Err(Error::Usage(format!("mc_moments needs at least 3 replicates, got {k}")));
    }
    let values: Vec<f64> = (0..k as u64)
        .into_par_iter()
        .map(|r| {
            let a = sample_assignment(d, &mut stream(seed, "mc-assign", r));
            f(a.as_slice())
        })
        .collect();
    Ok(jackknife(&values))
}

/// Sample mean and variance with leave-one-out jackknife standard errors.
pub fn jackknife(values: &[f64]) -> McMoments {
    let k = values.len();
    let kf = k as f64;
    let mean = pairwise_sum(values) / kf;
    let dev2: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let ss = pairwise_sum(&dev2);
    let variance = ss / (kf - 1.0);
    // Leave-one-out variances in O(K): SS₋ᵢ = SS − (xᵢ − x̄)² K/(K−1).
    let loo: Vec<f64> = dev2
        .iter()
        .map(|d2| (ss - d2 * kf / (kf - 1.0)) / (kf - 2.0))
        .collect();
    let loo_mean = pairwise_sum(&loo) / kf;
    let loo_dev: Vec<f64> = loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)).collect();
    let se_variance = ((kf - 1.0) / kf * pairwise_sum(&loo_dev)).sqrt();
    McMoments {
        mean,
        variance,
        se_mean: (variance / kf).sqrt(),
        se_variance,
        replicates: k,
    }
}
