//! Sample-splitting multiple testing of alphas with a data-driven threshold.

use std::io::Write;

use ndarray::{Array1, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor::{self, AlphaFit, EstimatorConfig};
use crate::linalg;
use crate::panel::{FactorPanel, ReturnPanel};

/// How the negative control set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    ExplicitSet,
    ThresholdRule,
}

/// Negative control set for the latent risk-premium correction.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeControlConfig {
    pub mode: ControlMode,
    /// Entities known to have zero alpha; required for [`ControlMode::ExplicitSet`].
    pub explicit_indices: Option<Vec<usize>>,
    /// `c` in `γ_n = c·ln(n)/√n`.
    pub gamma_scale: f64,
}

impl NegativeControlConfig {
    pub fn explicit(indices: Vec<usize>) -> Self {
        Self {
            mode: ControlMode::ExplicitSet,
            explicit_indices: Some(indices),
            gamma_scale: 1.0,
        }
    }

    pub fn threshold_rule(gamma_scale: f64) -> Self {
        Self {
            mode: ControlMode::ThresholdRule,
            explicit_indices: None,
            gamma_scale,
        }
    }

    /// `γ_n = c·ln(n)/√n`.
    pub fn gamma(&self, n: usize) -> f64 {
        let n = n as f64;
        self.gamma_scale * n.ln() / n.sqrt()
    }

    /// Resolves the control set against a preliminary fit.
    pub fn resolve(&self, fit: &AlphaFit) -> Result<Vec<usize>> {
        let p = fit.alpha_hat.len();
        let set = match self.mode {
            ControlMode::ExplicitSet => {
                let mut s = self.explicit_indices.clone().ok_or_else(|| {
                    Error::InvalidParameter("explicit negative control needs indices".into())
                })?;
                s.sort_unstable();
                s.dedup();
                if let Some(&bad) = s.iter().find(|&&i| i >= p) {
                    return Err(Error::InvalidParameter(format!(
                        "negative control index {bad} out of range for {p} entities"
                    )));
                }
                s
            }
            ControlMode::ThresholdRule => {
                if !(self.gamma_scale > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma_scale must be positive, got {}",
                        self.gamma_scale
                    )));
                }
                let gamma = self.gamma(fit.n_used);
                let s: Vec<usize> = (0..p).filter(|&i| fit.alpha_hat[i].abs() <= gamma).collect();
                if s.is_empty() {
                    return Err(Error::Underdetermined {
                        size: 0,
                        required: fit.latent.rank_hat + 1,
                        hint: "; increase gamma_scale",
                    });
                }
                s
            }
        };
        Ok(set)
    }
}

/// Alpha with the latent risk premium estimated on the control set only.
///
/// `α̂_new = ȳ − B̂_c·λ̂` with `λ̂` the least-squares fit of `ȳ_S` on `B̂_{c,S}`.
pub fn corrected_alpha(fit: &AlphaFit, control: &[usize]) -> Result<Array1<f64>> {
    let rank = fit.latent.rank_hat;
    if control.len() < rank + 1 {
        return Err(Error::Underdetermined {
            size: control.len(),
            required: rank + 1,
            hint: "",
        });
    }
    let b = &fit.latent.loadings_hat;
    let bs = b.select(ndarray::Axis(0), control);
    let ys = fit.mean_adjusted.select(ndarray::Axis(0), control);
    let premium = linalg::least_squares_vec(bs.view(), ys.view())?;
    Ok(&fit.mean_adjusted - &b.dot(&premium))
}

/// Negative-control alpha for a full panel.
pub fn negative_control_alpha(
    x: &ReturnPanel,
    f: &FactorPanel,
    cfg: &NegativeControlConfig,
    rank: Option<usize>,
) -> Result<Array1<f64>> {
    let fit = factor::estimate_alpha(x, f, rank)?;
    let control = cfg.resolve(&fit)?;
    corrected_alpha(&fit, &control)
}

/// First `⌊n/2⌋` periods and the remainder.
pub fn chronological_split(
    x: &ReturnPanel,
    f: &FactorPanel,
) -> Result<((ReturnPanel, FactorPanel), (ReturnPanel, FactorPanel))> {
    let n = x.n();
    if f.n() != n {
        return Err(Error::Dimension(format!("returns have {n} periods, factors {}", f.n())));
    }
    let need = 2 * (f.r() + 3);
    if n < need {
        return Err(Error::Dimension(format!(
            "{n} periods cannot be split with {} observed factors; need at least {need}",
            f.r()
        )));
    }
    let h = n / 2;
    Ok((
        (x.slice_periods(0..h)?, f.slice_periods(0..h)?),
        (x.slice_periods(h..n)?, f.slice_periods(h..n)?),
    ))
}

/// Options for [`split_statistics`].
#[derive(Debug, Clone, Default)]
pub struct SplitOptions {
    pub rank: Option<usize>,
    /// Divide each half's statistic by its long-run standard deviation.
    pub studentize: bool,
    /// Long-run variance bandwidth; `None` uses `n_half^{1/5}`.
    pub bandwidth: Option<f64>,
    pub negative_control: Option<NegativeControlConfig>,
    pub estimator: EstimatorConfig,
}

/// Per-half statistics before thresholding.
#[derive(Debug, Clone)]
pub struct SplitStatistics {
    pub t1: Array1<f64>,
    pub t2: Array1<f64>,
    pub t_prod: Array1<f64>,
    pub studentized: bool,
    pub rank_hat: [usize; 2],
}

impl SplitStatistics {
    pub fn select(self, beta: f64) -> Result<SplitTestResult> {
        let (threshold, rejected) = select_threshold(self.t_prod.view(), beta)?;
        Ok(SplitTestResult {
            t1: self.t1,
            t2: self.t2,
            t_prod: self.t_prod,
            threshold,
            rejected,
            beta,
            studentized: self.studentized,
            rank_hat: self.rank_hat,
        })
    }
}

/// Split statistics with the threshold applied.
#[derive(Debug, Clone)]
pub struct SplitTestResult {
    pub t1: Array1<f64>,
    pub t2: Array1<f64>,
    pub t_prod: Array1<f64>,
    /// `+∞` when no candidate meets the target.
    pub threshold: f64,
    /// Ascending entity indices.
    pub rejected: Vec<usize>,
    pub beta: f64,
    pub studentized: bool,
    pub rank_hat: [usize; 2],
}

impl SplitTestResult {
    /// Writes `entity_id,t1,t2,t_prod,rejected` with `rejected` as 0/1.
    pub fn write_csv(&self, entity_ids: &[String], out: impl Write) -> Result<()> {
        let p = self.t_prod.len();
        if entity_ids.len() != p {
            return Err(Error::Dimension(format!("{} entity ids for {p} statistics", entity_ids.len())));
        }
        let mut flags = vec![false; p];
        for &i in &self.rejected {
            flags[i] = true;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_id", "t1", "t2", "t_prod", "rejected"])?;
        for i in 0..p {
            w.write_record([
                entity_ids[i].clone(),
                self.t1[i].to_string(),
                self.t2[i].to_string(),
                self.t_prod[i].to_string(),
                u8::from(flags[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One-line JSON with the threshold and target level; an infinite threshold prints as `null`.
    pub fn metadata_line(&self) -> String {
        serde_json::json!({
            "threshold": if self.threshold.is_finite() { Some(self.threshold) } else { None },
            "beta": self.beta,
            "studentized": self.studentized,
            "rank_hat": self.rank_hat,
            "rejections": self.rejected.len(),
        })
        .to_string()
    }
}

struct Half {
    fit: AlphaFit,
}

fn fit_half(x: &ReturnPanel, f: &FactorPanel, opts: &SplitOptions) -> Result<Half> {
    let fit = factor::estimate_alpha_with(x, f, opts.rank, &opts.estimator)?;
    let fit = if opts.studentize { fit.with_long_run_variance(opts.bandwidth)? } else { fit };
    Ok(Half { fit })
}

fn half_statistic(half: &Half, n_full: usize, control: Option<&[usize]>, studentize: bool) -> Result<Array1<f64>> {
    let alpha = match control {
        Some(s) => corrected_alpha(&half.fit, s)?,
        None => half.fit.alpha_hat.clone(),
    };
    let mut t = alpha * (n_full as f64).sqrt();
    if studentize {
        let s2 = half.fit.long_run_variance.as_ref().expect("computed when studentizing");
        for (i, (ti, v)) in t.iter_mut().zip(s2.iter()).enumerate() {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(Error::DegenerateNormalizer { entity: i });
            }
            *ti /= v.sqrt();
        }
    }
    Ok(t)
}

/// Estimates alpha on each chronological half and forms `T_i = T_i^(1)·T_i^(2)`.
///
/// `T_i^(k) = √n·α̂_i^(k)` with `n` the full-sample length. With a threshold-rule
/// negative control the set is resolved once on the full sample and shared by both halves.
pub fn split_statistics(x: &ReturnPanel, f: &FactorPanel, opts: &SplitOptions) -> Result<SplitStatistics> {
    let ((x1, f1), (x2, f2)) = chronological_split(x, f)?;
    let control = match &opts.negative_control {
        None => None,
        Some(cfg) if cfg.mode == ControlMode::ExplicitSet => {
            // Only validation needs a fit; indices do not depend on the data.
            let dummy = factor::estimate_alpha_with(&x1, &f1, opts.rank, &opts.estimator)?;
            Some(cfg.resolve(&dummy)?)
        }
        Some(cfg) => {
            let full = factor::estimate_alpha_with(x, f, opts.rank, &opts.estimator)?;
            Some(cfg.resolve(&full)?)
        }
    };
    let (h1, h2) = rayon::join(|| fit_half(&x1, &f1, opts), || fit_half(&x2, &f2, opts));
    let (h1, h2) = (h1?, h2?);
    let n = x.n();
    let t1 = half_statistic(&h1, n, control.as_deref(), opts.studentize)?;
    let t2 = half_statistic(&h2, n, control.as_deref(), opts.studentize)?;
    let t_prod = &t1 * &t2;
    Ok(SplitStatistics {
        t1,
        t2,
        t_prod,
        studentized: opts.studentize,
        rank_hat: [h1.fit.latent.rank_hat, h2.fit.latent.rank_hat],
    })
}

/// `(1 + #{T ≤ −ξ}) / max(#{T ≥ ξ}, 1)`.
pub fn fdp_estimate(t_prod: ArrayView1<f64>, xi: f64) -> f64 {
    let neg = t_prod.iter().filter(|&&t| t <= -xi).count();
    let pos = t_prod.iter().filter(|&&t| t >= xi).count();
    (1 + neg) as f64 / pos.max(1) as f64
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("target FDR level {beta} outside (0, 1]")))
    }
}

/// Smallest `ξ` among the distinct nonzero `|T_i|` with `fdp_estimate ≤ β`.
///
/// Returns `(+∞, ∅)` when no candidate qualifies. Zero statistics are never candidates.
pub fn select_threshold(t_prod: ArrayView1<f64>, beta: f64) -> Result<(f64, Vec<usize>)> {
    check_beta(beta)?;
    if let Some(i) = t_prod.iter().position(|t| t.is_nan()) {
        return Err(Error::InvalidParameter(format!("statistic {i} is NaN")));
    }
    let mut pos: Vec<f64> = t_prod.iter().copied().filter(|&t| t > 0.0).collect();
    let mut neg: Vec<f64> = t_prod.iter().filter(|&&t| t < 0.0).map(|t| -t).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let threshold = candidates.into_iter().find(|&xi| {
        let n_pos = pos.len() - pos.partition_point(|&v| v < xi);
        let n_neg = neg.len() - neg.partition_point(|&v| v < xi);
        (1 + n_neg) as f64 <= beta * n_pos.max(1) as f64
    });
    Ok(match threshold {
        Some(l) => (l, (0..t_prod.len()).filter(|&i| t_prod[i] >= l).collect()),
        None => (f64::INFINITY, Vec::new()),
    })
}

/// False discovery proportion and power of one rejection set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdrMetrics {
    pub fdp: f64,
    pub power: f64,
    pub v_count: usize,
    pub r_count: usize,
}

impl FdrMetrics {
    /// `truth` holds the indices of the true non-nulls.
    pub fn from_sets(rejected: &[usize], truth: &[usize]) -> Self {
        let truth: std::collections::HashSet<usize> = truth.iter().copied().collect();
        let r_count = rejected.len();
        let hits = rejected.iter().filter(|i| truth.contains(i)).count();
        let v_count = r_count - hits;
        Self {
            fdp: v_count as f64 / r_count.max(1) as f64,
            power: hits as f64 / truth.len().max(1) as f64,
            v_count,
            r_count,
        }
    }
}

pub fn evaluate(result: &SplitTestResult, truth: &[usize]) -> FdrMetrics {
    FdrMetrics::from_sets(&result.rejected, truth)
}

/// Largest `|#{T ≥ x} / #{T ≤ −x} − 1|` over the observed `|T|` values up to the `upper` quantile of `|T|`.
///
/// Values of `x` with no statistic at or below `−x` are skipped. Returns 0 when nothing qualifies.
pub fn symmetry_deviation(t_prod: ArrayView1<f64>, upper: f64) -> Result<f64> {
    if !(upper > 0.0 && upper <= 1.0) {
        return Err(Error::InvalidParameter(format!("quantile {upper} outside (0, 1]")));
    }
    let mut abs: Vec<f64> = t_prod.iter().filter(|t| **t != 0.0).map(|t| t.abs()).collect();
    if abs.is_empty() {
        return Ok(0.0);
    }
    abs.sort_by(f64::total_cmp);
    let cap = abs[((upper * abs.len() as f64).ceil() as usize).clamp(1, abs.len()) - 1];
    let mut pos: Vec<f64> = t_prod.iter().copied().filter(|&t| t > 0.0).collect();
    let mut neg: Vec<f64> = t_prod.iter().filter(|&&t| t < 0.0).map(|t| -t).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    abs.dedup();
    let mut worst = 0.0_f64;
    for &x in abs.iter().take_while(|&&x| x <= cap) {
        let n_neg = neg.len() - neg.partition_point(|&v| v < x);
        if n_neg == 0 {
            continue;
        }
        let n_pos = pos.len() - pos.partition_point(|&v| v < x);
        worst = worst.max((n_pos as f64 / n_neg as f64 - 1.0).abs());
    }
    Ok(worst)
}
