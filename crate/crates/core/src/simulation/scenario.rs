use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-series law of factors and errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    IidNormal,
    /// Centered, unit-variance log-normal entries for factors and errors.
    IidLognormal,
    /// GARCH(1,1) factors and ARMA-mixture errors.
    GarchArma,
}

/// Placement of the nonzero alphas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaLayout {
    /// `+ν` on the first `⌊πp/2⌋` entities, `−ν` up to `⌊πp⌋`.
    #[default]
    Symmetric,
    /// `+ν` on the first `⌊πp⌋` entities.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarchParams {
    pub omega: f64,
    pub a1: f64,
    pub b1: f64,
}

impl Default for GarchParams {
    fn default() -> Self {
        Self { omega: 0.1, a1: 0.1, b1: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmaComponent {
    pub weight: f64,
    #[serde(default)]
    pub ar: Vec<f64>,
    #[serde(default)]
    pub ma: Vec<f64>,
    #[serde(default = "one")]
    pub innovation_sd: f64,
}

fn one() -> f64 {
    1.0
}

/// Per-entity error variances drawn from `U[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeteroVariances {
    pub enabled: bool,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HeteroVariances {
    fn default() -> Self {
        Self { enabled: false, lo: 1.0, hi: 3.0 }
    }
}

/// Complete data-generating process for one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationScenario {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_r_total")]
    pub r_total: usize,
    #[serde(default = "default_r_observed")]
    pub r_observed: usize,
    pub factor_cov: Vec<Vec<f64>>,
    /// Factor means; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_mean: Option<Vec<f64>>,
    pub loading_mean: Vec<f64>,
    pub loading_cov: Vec<Vec<f64>>,
    pub error_cov_rho: f64,
    #[serde(default)]
    pub hetero_variances: HeteroVariances,
    pub pi: f64,
    pub nu: f64,
    pub temporal_mode: TemporalMode,
    #[serde(default = "default_garch")]
    pub garch_params: Vec<GarchParams>,
    #[serde(default = "default_arma_mixture")]
    pub arma_mixture: Vec<ArmaComponent>,
    pub seed: u64,
    #[serde(default)]
    pub alpha_layout: AlphaLayout,
}

fn default_r_total() -> usize {
    7
}

fn default_r_observed() -> usize {
    3
}

fn default_garch() -> Vec<GarchParams> {
    vec![GarchParams::default(); 7]
}

/// Eight ARMA orders with equal weights summing to 0.331.
pub fn default_arma_mixture() -> Vec<ArmaComponent> {
    let w = 0.331 / 8.0;
    let c = |ar: &[f64], ma: &[f64]| ArmaComponent {
        weight: w,
        ar: ar.to_vec(),
        ma: ma.to_vec(),
        innovation_sd: 1.0,
    };
    vec![
        c(&[0.24], &[]),
        c(&[], &[0.24]),
        c(&[0.18], &[0.18]),
        c(&[0.18, 0.12], &[]),
        c(&[], &[0.18, 0.12]),
        c(&[0.18, 0.09], &[0.12]),
        c(&[0.18], &[0.12, 0.06]),
        c(&[0.12, 0.06], &[0.12, 0.06]),
    ]
}

pub(crate) fn matrix(rows: &[Vec<f64>], name: &str, dim: usize) -> Result<Array2<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidParameter(format!("{name} must be {dim}x{dim}")));
    }
    Ok(Array2::from_shape_fn((dim, dim), |(i, j)| rows[i][j]))
}

fn check_pd(m: &Array2<f64>, name: &str, allow_zero: bool) -> Result<()> {
    if allow_zero && m.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    let asym = (m - &m.t()).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if asym > 1e-10 * m.iter().fold(1.0_f64, |a, v| a.max(v.abs())) {
        return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
    }
    if crate::linalg::to_dmatrix(m.view()).cholesky().is_none() {
        return Err(Error::InvalidParameter(format!("{name} is not positive definite")));
    }
    Ok(())
}

impl SimulationScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn r_latent(&self) -> usize {
        self.r_total - self.r_observed
    }

    pub fn factor_cov_matrix(&self) -> Result<Array2<f64>> {
        matrix(&self.factor_cov, "factor_cov", self.r_total)
    }

    pub fn loading_cov_matrix(&self) -> Result<Array2<f64>> {
        matrix(&self.loading_cov, "loading_cov", self.r_total)
    }

    pub fn factor_mean_vector(&self) -> Array1<f64> {
        match &self.factor_mean {
            Some(m) => Array1::from(m.clone()),
            None => Array1::zeros(self.r_total),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        if self.r_observed == 0 || self.r_observed >= self.r_total {
            return bad(format!(
                "need 1 <= r_observed < r_total, got {} and {}",
                self.r_observed, self.r_total
            ));
        }
        if self.n < 2 * (self.r_observed + 3) {
            return bad(format!("n = {} too short to split with {} observed factors", self.n, self.r_observed));
        }
        if !(0.0..=1.0).contains(&self.pi) || !(self.nu >= 0.0) {
            return bad(format!("need pi in [0, 1] and nu >= 0, got {} and {}", self.pi, self.nu));
        }
        if self.pi > 0.0 && self.pi * (self.p as f64) < 2.0 {
            return bad(format!("pi * p = {} must be at least 2", self.pi * self.p as f64));
        }
        if !(self.error_cov_rho >= 0.0 && self.error_cov_rho < 1.0) {
            return bad(format!("error_cov_rho {} outside [0, 1)", self.error_cov_rho));
        }
        let h = &self.hetero_variances;
        if h.enabled && !(h.lo >= 0.0 && h.hi >= h.lo) {
            return bad(format!("hetero variance range [{}, {}] invalid", h.lo, h.hi));
        }
        check_pd(&self.factor_cov_matrix()?, "factor_cov", false)?;
        check_pd(&self.loading_cov_matrix()?, "loading_cov", true)?;
        if self.loading_mean.len() != self.r_total {
            return bad(format!("loading_mean must have {} entries", self.r_total));
        }
        if let Some(m) = &self.factor_mean {
            if m.len() != self.r_total {
                return bad(format!("factor_mean must have {} entries", self.r_total));
            }
        }
        if self.temporal_mode == TemporalMode::GarchArma {
            if self.garch_params.len() != self.r_total {
                return bad(format!("garch_params must have {} entries", self.r_total));
            }
            for g in &self.garch_params {
                if !(g.omega > 0.0 && g.a1 >= 0.0 && g.b1 >= 0.0 && g.a1 + g.b1 < 1.0) {
                    return bad(format!("GARCH parameters {g:?} are not stationary"));
                }
            }
            let total: f64 = self.arma_mixture.iter().map(|c| c.weight).sum();
            if self.arma_mixture.iter().any(|c| !(0.0..=1.0).contains(&c.weight)) || total > 1.0 + 1e-12 {
                return bad(format!("ARMA mixture weights must lie in [0, 1] and sum to at most 1, got {total}"));
            }
            for c in &self.arma_mixture {
                super::dgp::ArmaProcess::new(&c.ar, &c.ma, c.innovation_sd)?;
            }
        }
        Ok(())
    }
}

/// Scenario files shipped with the crate.
pub mod builtin {
    use super::SimulationScenario;

    pub const TABLE1_NORMAL: &str = include_str!("../../scenarios/table1_normal.json");
    pub const TABLE1_LOGNORMAL: &str = include_str!("../../scenarios/table1_lognormal.json");
    pub const TABLE2_GARCH_ARMA: &str = include_str!("../../scenarios/table2_garch_arma.json");
    pub const FIGURE1_HETERO: &str = include_str!("../../scenarios/figure1_hetero.json");
    pub const DENSE_ALPHA: &str = include_str!("../../scenarios/dense_alpha.json");

    pub fn load(text: &str) -> SimulationScenario {
        SimulationScenario::from_json(text).expect("built-in scenario is valid")
    }

    pub fn table1_normal() -> SimulationScenario {
        load(TABLE1_NORMAL)
    }

    pub fn table1_lognormal() -> SimulationScenario {
        load(TABLE1_LOGNORMAL)
    }

    pub fn table2_garch_arma() -> SimulationScenario {
        load(TABLE2_GARCH_ARMA)
    }

    pub fn figure1_hetero() -> SimulationScenario {
        load(FIGURE1_HETERO)
    }

    pub fn dense_alpha() -> SimulationScenario {
        load(DENSE_ALPHA)
    }
}
