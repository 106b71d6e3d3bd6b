//! Competing calibrations: Benjamini–Hochberg on naive OLS t-statistics, normal
//! calibration of the factor-adjusted alpha (SBH), and self-normalized calibration (SN).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::factor::{self, AlphaFit, EstimatorConfig};
use crate::linalg;
use crate::panel::{check_alignment, FactorPanel, ReturnPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    BhPlain,
    SbhNormal,
    SbhLongRun,
    SnCalibrated,
}

/// Per-entity statistics with p-values.
#[derive(Debug, Clone)]
pub struct PValueResult {
    pub p_values: Array1<f64>,
    pub statistics: Array1<f64>,
    pub alpha_hat: Array1<f64>,
    pub method: PValueMethod,
    /// Latent rank used; `None` for the naive regression.
    pub rank_hat: Option<usize>,
}

impl PValueResult {
    pub fn reject(&self, beta: f64) -> Result<Vec<usize>> {
        bh_procedure(self.p_values.view(), beta)
    }
}

/// Benjamini–Hochberg step-up: rejects the `k̂` smallest p-values with
/// `k̂ = max{k : p_(k) ≤ kβ/p}`. Returns ascending indices.
pub fn bh_procedure(p_values: ArrayView1<f64>, beta: f64) -> Result<Vec<usize>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("target FDR level {beta} outside (0, 1]")));
    }
    if let Some(i) = p_values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract(format!("p-value {} at index {i} outside [0, 1]", p_values[i])));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let k = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * beta / m as f64)
        .unwrap_or(0);
    let mut rejected = order[..k].to_vec();
    rejected.sort_unstable();
    Ok(rejected)
}

fn two_sided(z: f64) -> f64 {
    let normal = Normal::standard();
    (2.0 * normal.sf(z.abs())).min(1.0)
}

/// `x̄ᵀΣ̂⁻¹x̄` for the rows of an `n×k` sample, `Σ̂` the `1/n` sample covariance.
fn mean_mahalanobis(sample: ArrayView2<f64>) -> Result<f64> {
    let n = sample.nrows() as f64;
    let mean = sample.mean_axis(Axis(0)).ok_or_else(|| Error::Dimension("empty sample".into()))?;
    let centered = linalg::demean_columns(sample)?;
    let cov = centered.t().dot(&centered) / n;
    let chol = linalg::to_dmatrix(cov.view())
        .cholesky()
        .ok_or(Error::Singular { condition: 0.0, tolerance: linalg::Settings::default().rank_tolerance })?;
    let m = DMatrix::from_column_slice(mean.len(), 1, mean.as_slice().expect("contiguous"));
    let solved = chol.solve(&m);
    Ok(m.dot(&solved))
}

/// Naive time-series regression alpha t-statistics with i.i.d. standard errors and
/// normal p-values. Ignores latent factors.
pub fn naive_ols_statistics(x: &ReturnPanel, f: &FactorPanel) -> Result<PValueResult> {
    check_alignment(x, f)?;
    let n = f.n();
    let mut design = Array2::ones((n, f.r() + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(f.values());
    let coef = linalg::least_squares(design.view(), x.values().t())?;
    let resid = x.values() - &coef.t().dot(&design.t());
    let dof = (n - f.r() - 1) as f64;
    // [(DᵀD)⁻¹]₀₀ = (1 + f̄ᵀΣ̂⁻¹f̄)/n.
    let inflation = 1.0 + mean_mahalanobis(f.values().view())?;
    let alpha = coef.row(0).to_owned();
    let mut stats = Array1::zeros(x.p());
    for (i, row) in resid.outer_iter().enumerate() {
        let s2 = row.dot(&row) / dof;
        if !(s2 > 0.0) {
            return Err(Error::DegenerateNormalizer { entity: i });
        }
        stats[i] = alpha[i] * (n as f64 / (s2 * inflation)).sqrt();
    }
    Ok(PValueResult {
        p_values: stats.mapv(two_sided),
        statistics: stats,
        alpha_hat: alpha,
        method: PValueMethod::BhPlain,
        rank_hat: None,
    })
}

/// SBH variants.
#[derive(Debug, Clone, Copy, Default)]
pub struct SbhOptions {
    pub rank: Option<usize>,
    /// Replace the residual variance by its Bartlett long-run variance.
    pub long_run: bool,
    pub bandwidth: Option<f64>,
    pub estimator: EstimatorConfig,
}

/// `z_i = √n·α̂_i/σ̃_i` with `σ̃_i² = s_i²(1 + μ̂ᵀΣ̂_W⁻¹μ̂ + f̄ᵀΣ̂_F⁻¹f̄)`.
///
/// `s_i²` is the residual variance on `n − r_o − r̂_c − 1` degrees of freedom, or the
/// long-run variance when requested. `μ̂` and `Σ̂_W` are the mean and covariance of the
/// estimated latent factors `Ŵ_t = B̂_cᵀ·adjusted_t / p`.
pub fn sbh_statistics(x: &ReturnPanel, f: &FactorPanel, rank: Option<usize>) -> Result<PValueResult> {
    sbh_statistics_with(x, f, &SbhOptions { rank, ..Default::default() })
}

pub fn sbh_statistics_with(x: &ReturnPanel, f: &FactorPanel, opts: &SbhOptions) -> Result<PValueResult> {
    let fit = factor::estimate_alpha_with(x, f, opts.rank, &opts.estimator)?;
    sbh_from_fit(fit, f, opts)
}

pub fn sbh_from_fit(fit: AlphaFit, f: &FactorPanel, opts: &SbhOptions) -> Result<PValueResult> {
    let fit = if opts.long_run { fit.with_long_run_variance(opts.bandwidth)? } else { fit };
    let (p, n) = fit.residuals.dim();
    let rank = fit.latent.rank_hat;
    let u = fit.latent.unit_loadings();
    let mu = u.t().dot(&fit.mean_adjusted) / (p as f64).sqrt();
    // Cov(Ŵ) = UᵀRRᵀU/(pn) = diag(λ)/(pn).
    let w_var = fit.latent.scaled_eigenvalues();
    let latent_term: f64 = (0..rank).map(|j| mu[j] * mu[j] / w_var[j]).sum();
    let inflation = 1.0 + latent_term + mean_mahalanobis(f.values().view())?;

    let variances: Array1<f64> = match &fit.long_run_variance {
        Some(v) => v.clone(),
        None => {
            let dof = n.checked_sub(f.r() + rank + 1).filter(|&d| d > 0).ok_or_else(|| {
                Error::Dimension(format!("{n} periods leave no residual degrees of freedom"))
            })?;
            fit.residuals.outer_iter().map(|r| r.dot(&r) / dof as f64).collect()
        }
    };
    let mut stats = Array1::zeros(p);
    for i in 0..p {
        let s2 = variances[i];
        if !(s2 > 0.0) || fit.residuals.row(i).iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateNormalizer { entity: i });
        }
        stats[i] = (n as f64).sqrt() * fit.alpha_hat[i] / (s2 * inflation).sqrt();
    }
    Ok(PValueResult {
        p_values: stats.mapv(two_sided),
        statistics: stats,
        alpha_hat: fit.alpha_hat,
        method: if opts.long_run { PValueMethod::SbhLongRun } else { PValueMethod::SbhNormal },
        rank_hat: Some(rank),
    })
}

/// Limit law `W(1)²/∫₀¹(W(r) − rW(1))²dr` of the self-normalized mean statistic.
#[derive(Debug, Clone)]
pub struct SnLimitLaw {
    sorted: Vec<f64>,
}

/// Default seed for the limit-law simulation.
pub const SN_SEED: u64 = 0x5eed_2010;
pub const SN_GRID: usize = 1000;
pub const SN_DEFAULT_PATHS: usize = 100_000;

type LawKey = (usize, usize, u64);

fn law_cache() -> &'static Mutex<HashMap<LawKey, Arc<SnLimitLaw>>> {
    static CACHE: OnceLock<Mutex<HashMap<LawKey, Arc<SnLimitLaw>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl SnLimitLaw {
    /// Simulated draws, cached per `(paths, grid, seed)` for the process lifetime.
    pub fn cached(paths: usize, grid: usize, seed: u64) -> Result<Arc<SnLimitLaw>> {
        if paths < 1000 {
            return Err(Error::InvalidParameter(format!("SN calibration needs at least 1000 paths, got {paths}")));
        }
        if grid < 2 {
            return Err(Error::InvalidParameter(format!("SN grid must have at least 2 points, got {grid}")));
        }
        // Holding the lock while simulating keeps a single writer per key.
        let mut cache = law_cache().lock().expect("limit-law cache poisoned");
        if let Some(law) = cache.get(&(paths, grid, seed)) {
            return Ok(Arc::clone(law));
        }
        let law = Arc::new(Self::simulate(paths, grid, seed));
        cache.insert((paths, grid, seed), Arc::clone(&law));
        Ok(law)
    }

    fn simulate(paths: usize, grid: usize, seed: u64) -> SnLimitLaw {
        const CHUNK: usize = 1024;
        let chunks = paths.div_ceil(CHUNK);
        let mut sorted: Vec<f64> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let count = CHUNK.min(paths - c * CHUNK);
                let mut path = vec![0.0; grid];
                (0..count)
                    .map(|_| {
                        let scale = (grid as f64).sqrt().recip();
                        let mut w = 0.0;
                        for slot in path.iter_mut() {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            w += z * scale;
                            *slot = w;
                        }
                        let end = w;
                        let integral: f64 = path
                            .iter()
                            .enumerate()
                            .map(|(k, &v)| {
                                let bridge = v - (k + 1) as f64 / grid as f64 * end;
                                bridge * bridge
                            })
                            .sum::<f64>()
                            / grid as f64;
                        end * end / integral
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        sorted.sort_by(f64::total_cmp);
        SnLimitLaw { sorted }
    }

    pub fn paths(&self) -> usize {
        self.sorted.len()
    }

    /// `(1 + #{U ≥ stat}) / (M + 1)`.
    pub fn p_value(&self, stat: f64) -> f64 {
        let at_least = self.sorted.len() - self.sorted.partition_point(|&u| u < stat);
        (1 + at_least) as f64 / (self.sorted.len() + 1) as f64
    }

    /// Empirical upper-tail critical value at level `a`.
    pub fn critical_value(&self, a: f64) -> f64 {
        let m = self.sorted.len();
        let idx = (((1.0 - a) * m as f64).ceil() as usize).clamp(1, m) - 1;
        self.sorted[idx]
    }
}

/// `n·ȳ²/V_n` with `V_n = n⁻²Σ_t S_t²`, `S_t` the partial sums of `y − ȳ`.
pub fn self_normalized_statistic(y: ArrayView1<f64>) -> Option<f64> {
    let n = y.len() as f64;
    let mean = y.mean()?;
    let mut partial = 0.0;
    let mut v = 0.0;
    for &yt in y {
        partial += yt - mean;
        v += partial * partial;
    }
    let v = v / (n * n);
    let scale = y.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if !(v > 1e-28 * scale * scale) || v == 0.0 {
        return None;
    }
    Some(n * mean * mean / v)
}

/// SN options.
#[derive(Debug, Clone, Copy)]
pub struct SnOptions {
    pub rank: Option<usize>,
    pub mc_paths: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
}

impl Default for SnOptions {
    fn default() -> Self {
        Self {
            rank: None,
            mc_paths: SN_DEFAULT_PATHS,
            seed: SN_SEED,
            estimator: EstimatorConfig::default(),
        }
    }
}

/// Self-normalized test of each entity's alpha on the per-period series `α̂_i + ê_{i,t}`.
pub fn sn_statistics(x: &ReturnPanel, f: &FactorPanel, rank: Option<usize>, mc_paths: usize) -> Result<PValueResult> {
    sn_statistics_with(x, f, &SnOptions { rank, mc_paths, ..Default::default() })
}

pub fn sn_statistics_with(x: &ReturnPanel, f: &FactorPanel, opts: &SnOptions) -> Result<PValueResult> {
    let law = SnLimitLaw::cached(opts.mc_paths, SN_GRID, opts.seed)?;
    let fit = factor::estimate_alpha_with(x, f, opts.rank, &opts.estimator)?;
    sn_from_fit(fit, &law)
}

pub fn sn_from_fit(fit: AlphaFit, law: &SnLimitLaw) -> Result<PValueResult> {
    let p = fit.alpha_hat.len();
    let mut stats = Array1::zeros(p);
    for i in 0..p {
        let series = &fit.residuals.row(i) + fit.alpha_hat[i];
        stats[i] = self_normalized_statistic(series.view()).ok_or(Error::DegenerateNormalizer { entity: i })?;
    }
    Ok(PValueResult {
        p_values: stats.mapv(|s| law.p_value(s)),
        statistics: stats,
        alpha_hat: fit.alpha_hat,
        method: PValueMethod::SnCalibrated,
        rank_hat: Some(fit.latent.rank_hat),
    })
}
