//! Three-step alpha estimation under observed and latent factors.
//!
//! 1. Time-series regression of every entity on the demeaned observed factors.
//! 2. PCA of the time-demeaned adjusted returns for the latent loadings; the latent
//!    rank maximizes consecutive eigenvalue ratios.
//! 3. Cross-sectional regression of the average adjusted return on the latent
//!    loadings; its residual is the alpha estimate.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Projector, Settings};
use crate::panel::{check_alignment, FactorPanel, ReturnPanel};

/// Tuning for the latent step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Largest latent rank considered by the eigenvalue-ratio rule.
    pub max_rank: usize,
    /// Eigenvalues at or below `degeneracy_floor · λ₁` count as zero.
    pub degeneracy_floor: f64,
    pub settings: Settings,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_rank: 10,
            degeneracy_floor: 1e-12,
            settings: Settings::default(),
        }
    }
}

/// `λ₁` at or below this multiple of `‖adjusted‖²_F` means there is nothing to extract.
const NO_STRUCTURE_FLOOR: f64 = 1e-20;

/// Output of the latent PCA step.
#[derive(Debug, Clone)]
pub struct LatentFit {
    /// `p×r̂` loadings; column `j` is `√p` times the `j`-th unit eigenvector of `RRᵀ`.
    pub loadings_hat: Array2<f64>,
    pub rank_hat: usize,
    /// Eigenvalues of `RRᵀ` in descending order, at most `min(p, n)` of them.
    pub eigenvalues: Array1<f64>,
    /// `R = X·Q(F̃_o)·Q(1_n)`.
    pub adjusted_returns: Array2<f64>,
    /// Largest eigenvalue ratio over the searched range; reported for diagnostics.
    pub max_ratio: f64,
}

impl LatentFit {
    /// Loadings rescaled to unit-norm columns.
    pub fn unit_loadings(&self) -> Array2<f64> {
        let p = self.loadings_hat.nrows() as f64;
        &self.loadings_hat / p.sqrt()
    }

    /// Eigenvalues of `(np)⁻¹RRᵀ`, the diagonal of `V̂_p`.
    pub fn scaled_eigenvalues(&self) -> Array1<f64> {
        let (p, n) = self.adjusted_returns.dim();
        &self.eigenvalues / (p as f64 * n as f64)
    }
}

/// Observed-factor regression output.
#[derive(Debug, Clone)]
pub struct ObservedRegression {
    /// `p×r_o` slopes on the demeaned observed factors.
    pub loadings_hat: Array2<f64>,
    /// `p×n` adjusted returns `X − B̂·F_oᵀ`.
    pub adjusted: Array2<f64>,
}

/// Full three-step estimate for one panel.
#[derive(Debug, Clone)]
pub struct AlphaFit {
    pub alpha_hat: Array1<f64>,
    pub latent: LatentFit,
    pub observed_loadings_hat: Array2<f64>,
    /// Step-III projection of the adjusted returns with `α̂·1ᵀ` removed.
    pub residuals: Array2<f64>,
    /// Row means of the adjusted returns, the Step-III response.
    pub mean_adjusted: Array1<f64>,
    pub n_used: usize,
    pub long_run_variance: Option<Array1<f64>>,
}

impl AlphaFit {
    /// Fills `long_run_variance` from the residual panel with the Bartlett kernel.
    pub fn with_long_run_variance(mut self, bandwidth: Option<f64>) -> Result<Self> {
        self.long_run_variance = Some(long_run_variance(self.residuals.view(), bandwidth)?);
        Ok(self)
    }

    /// Writes `entity_id,alpha_hat,long_run_var`; the last column is empty when absent.
    pub fn write_csv(&self, entity_ids: &[String], out: impl Write) -> Result<()> {
        if entity_ids.len() != self.alpha_hat.len() {
            return Err(Error::Dimension(format!(
                "{} entity ids for {} alphas",
                entity_ids.len(),
                self.alpha_hat.len()
            )));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_id", "alpha_hat", "long_run_var"])?;
        for (i, id) in entity_ids.iter().enumerate() {
            let lrv = self
                .long_run_variance
                .as_ref()
                .map(|v| v[i].to_string())
                .unwrap_or_default();
            w.write_record([id.clone(), self.alpha_hat[i].to_string(), lrv])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Intercepts of entitywise time-series OLS of `X` on `[1, F_o]`.
///
/// Biased whenever latent factors have nonzero mean; kept as a diagnostic.
pub fn ols_alpha_biased(x: &ReturnPanel, f: &FactorPanel) -> Result<Array1<f64>> {
    check_alignment(x, f)?;
    let n = f.n();
    let mut design = Array2::ones((n, f.r() + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(f.values());
    let coef = linalg::least_squares(design.view(), x.values().t())?;
    Ok(coef.row(0).to_owned())
}

/// Regresses every entity on the demeaned observed factors.
pub fn regress_out_observed(x: &ReturnPanel, f: &FactorPanel) -> Result<ObservedRegression> {
    check_alignment(x, f)?;
    let centered = linalg::demean_columns(f.values().view())?;
    let coef = linalg::least_squares(centered.view(), x.values().t())?;
    let adjusted = x.values() - &coef.t().dot(&f.values().t());
    Ok(ObservedRegression {
        loadings_hat: coef.reversed_axes(),
        adjusted,
    })
}

/// PCA of the time-demeaned adjusted returns.
///
/// With `rank = None` the rank maximizes `λ_i/λ_{i+1}` over `1 ≤ i ≤ max_rank`; the
/// ratio is infinite when `λ_{i+1}` is at or below the degeneracy floor, and ties go to
/// the smaller index. `max_rank` is clamped to `min(p, n) − 1`.
pub fn estimate_latent(
    adjusted: ArrayView2<f64>,
    rank: Option<usize>,
    config: &EstimatorConfig,
) -> Result<LatentFit> {
    let (p, n) = adjusted.dim();
    let r = linalg::demean_rows(adjusted)?;
    let gram = r.t().dot(&r);
    let m = p.min(n);
    let eig = linalg::top_eigenpairs_with(&config.settings, gram.view(), m)?;
    let eigenvalues = eig.values.mapv(|v| v.max(0.0));

    let total: f64 = adjusted.iter().map(|v| v * v).sum();
    let lambda1 = eigenvalues[0];
    if lambda1 <= 0.0 || lambda1 <= NO_STRUCTURE_FLOOR * total {
        return Err(Error::NoFactorStructure(format!(
            "largest eigenvalue {lambda1:e} is negligible against panel energy {total:e}"
        )));
    }
    let floor = config.degeneracy_floor * lambda1;
    let numerical_rank = eigenvalues.iter().take_while(|&&v| v > floor).count();

    let search = config.max_rank.min(m.saturating_sub(1));
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..=search {
        if eigenvalues[i - 1] <= floor {
            break;
        }
        let next = eigenvalues[i];
        let ratio = if next > floor { eigenvalues[i - 1] / next } else { f64::INFINITY };
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    let rank_hat = match rank {
        Some(0) => return Err(Error::InvalidParameter("latent rank must be at least 1".into())),
        Some(k) if k > numerical_rank => {
            return Err(Error::InvalidParameter(format!(
                "latent rank {k} exceeds the {numerical_rank} nondegenerate eigenvalues"
            )))
        }
        Some(k) => k,
        None => best.0,
    };

    let scale = (p as f64).sqrt();
    let mut loadings = Array2::zeros((p, rank_hat));
    for j in 0..rank_hat {
        let mut u = r.dot(&eig.vectors.column(j)) / eigenvalues[j].sqrt();
        let pivot = u
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            u.mapv_inplace(|v| -v);
        }
        loadings.column_mut(j).assign(&(u * scale));
    }

    Ok(LatentFit {
        loadings_hat: loadings,
        rank_hat,
        eigenvalues,
        adjusted_returns: r,
        max_ratio: if best.1 == f64::NEG_INFINITY { 1.0 } else { best.1 },
    })
}

/// Step III: `α̂ = Q(B̂_c)·ȳ` and residuals `Q(B̂_c)·adjusted − α̂·1ᵀ`.
pub fn cross_sectional_alpha(
    adjusted: ArrayView2<f64>,
    loadings: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let q = Projector::complement(loadings.to_owned())?;
    let mean = adjusted.mean_axis(Axis(1)).ok_or_else(|| Error::Dimension("empty panel".into()))?;
    let alpha = q.apply_vec(mean.view())?;
    let residuals = q.apply(adjusted)? - &alpha.view().insert_axis(Axis(1));
    Ok((alpha, residuals))
}

/// Runs the three steps with the default configuration.
pub fn estimate_alpha(x: &ReturnPanel, f: &FactorPanel, rank: Option<usize>) -> Result<AlphaFit> {
    estimate_alpha_with(x, f, rank, &EstimatorConfig::default())
}

pub fn estimate_alpha_with(
    x: &ReturnPanel,
    f: &FactorPanel,
    rank: Option<usize>,
    config: &EstimatorConfig,
) -> Result<AlphaFit> {
    let observed = regress_out_observed(x, f)?;
    let latent = estimate_latent(observed.adjusted.view(), rank, config)?;
    let (alpha_hat, residuals) =
        cross_sectional_alpha(observed.adjusted.view(), latent.loadings_hat.view())?;
    let mean_adjusted = observed.adjusted.mean_axis(Axis(1)).expect("non-empty panel");
    Ok(AlphaFit {
        alpha_hat,
        latent,
        observed_loadings_hat: observed.loadings_hat,
        residuals,
        mean_adjusted,
        n_used: x.n(),
        long_run_variance: None,
    })
}

/// Lag-window kernel for long-run variance estimation.
///
/// Implementations must be even with `weight(0) = 1` and vanish outside `[−1, 1]`.
pub trait Kernel: Sync {
    fn weight(&self, x: f64) -> f64;
}

/// `φ(x) = (1 − |x|)·1{|x| ≤ 1}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bartlett;

impl Kernel for Bartlett {
    fn weight(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= 1.0 {
            1.0 - a
        } else {
            0.0
        }
    }
}

/// Value substituted for a nonpositive long-run variance.
pub const LRV_FLOOR: f64 = 1e-12;

/// Default bandwidth `n^{1/5}`.
pub fn default_bandwidth(n: usize) -> f64 {
    (n as f64).powf(0.2)
}

/// Kernel long-run variance of each residual row with the Bartlett kernel.
pub fn long_run_variance(residuals: ArrayView2<f64>, bandwidth: Option<f64>) -> Result<Array1<f64>> {
    long_run_variance_with(residuals, bandwidth, &Bartlett)
}

/// `ŝ² = n⁻¹[Σ e_t² + 2 Σ_{1≤h≤ℓ} φ(h/ℓ) Σ_t e_t e_{t+h}]` per row.
pub fn long_run_variance_with(
    residuals: ArrayView2<f64>,
    bandwidth: Option<f64>,
    kernel: &dyn Kernel,
) -> Result<Array1<f64>> {
    let n = residuals.ncols();
    if n == 0 {
        return Err(Error::Dimension("residual panel has no periods".into()));
    }
    let ell = bandwidth.unwrap_or_else(|| default_bandwidth(n));
    if !(ell > 0.0 && ell < n as f64) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth {ell} outside (0, {n})"
        )));
    }
    let max_lag = (ell.floor() as usize).min(n - 1);
    let weights: Vec<f64> = (1..=max_lag).map(|h| kernel.weight(h as f64 / ell)).collect();
    let rows: Vec<ArrayView1<f64>> = residuals.outer_iter().collect();
    let values: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut s = e.dot(e);
            for (h, w) in weights.iter().enumerate() {
                let lag = h + 1;
                if *w != 0.0 {
                    let cross = e.slice(ndarray::s![..n - lag]).dot(&e.slice(ndarray::s![lag..]));
                    s += 2.0 * w * cross;
                }
            }
            let s = s / n as f64;
            if s > 0.0 {
                s
            } else {
                log::warn!("long-run variance of entity {i} is {s:e}; floored at {LRV_FLOOR:e}");
                LRV_FLOOR
            }
        })
        .collect();
    Ok(Array1::from(values))
}
