//! Uniform entry point over the split procedures and the baselines.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array1;

use crate::baselines::{self, PValueResult, SbhOptions, SnOptions};
use crate::error::{Error, Result};
use crate::factor::EstimatorConfig;
use crate::panel::{FactorPanel, ReturnPanel};
use crate::testing::{self, NegativeControlConfig, SplitOptions, SplitStatistics, SplitTestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Sample splitting with unnormalized statistics.
    Yd,
    /// Sample splitting with long-run-variance studentization.
    YdR,
    /// Sample splitting with the threshold-rule negative control.
    YdTh,
    /// BH on naive OLS alpha t-statistics.
    Bh,
    /// BH on normal-calibrated factor-adjusted alphas.
    Sbh,
    /// BH on self-normalized p-values.
    Sn,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Yd, Method::YdR, Method::YdTh, Method::Bh, Method::Sbh, Method::Sn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Yd => "yd",
            Method::YdR => "yd_r",
            Method::YdTh => "yd_th",
            Method::Bh => "bh",
            Method::Sbh => "sbh",
            Method::Sn => "sn",
        }
    }

    pub fn is_split(self) -> bool {
        matches!(self, Method::Yd | Method::YdR | Method::YdTh)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown method {s:?}; expected one of yd, yd_r, yd_th, bh, sbh, sn"
                ))
            })
    }
}

/// Settings shared by all methods.
#[derive(Debug, Clone, Copy)]
pub struct MethodOptions {
    pub rank: Option<usize>,
    /// `c` in the negative-control threshold `c·ln(n)/√n`.
    pub gamma_scale: f64,
    /// Long-run variance bandwidth; `None` uses `n^{1/5}`.
    pub bandwidth: Option<f64>,
    /// Use the long-run variance in SBH.
    pub hac: bool,
    pub sn_paths: usize,
    pub sn_seed: u64,
    pub estimator: EstimatorConfig,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            rank: None,
            gamma_scale: 1.0,
            bandwidth: None,
            hac: false,
            sn_paths: baselines::SN_DEFAULT_PATHS,
            sn_seed: baselines::SN_SEED,
            estimator: EstimatorConfig::default(),
        }
    }
}

/// Statistics from one method, reusable across target levels.
#[derive(Debug, Clone)]
pub enum MethodStatistics {
    Split { stats: SplitStatistics, alpha_hat: Array1<f64> },
    PValues(PValueResult),
}

/// Decision of one method at one level.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub beta: f64,
    pub alpha_hat: Array1<f64>,
    /// Product statistic for split methods, z or SN statistic otherwise.
    pub statistic: Array1<f64>,
    pub p_values: Option<Array1<f64>>,
    /// Product-statistic threshold `L` (possibly `+∞`) for split methods.
    pub threshold: Option<f64>,
    /// Largest rejected p-value for BH-type methods.
    pub p_cutoff: Option<f64>,
    /// Ascending entity indices.
    pub rejected: Vec<usize>,
    pub rank_hat: Option<usize>,
    pub split: Option<SplitTestResult>,
}

pub fn compute(method: Method, x: &ReturnPanel, f: &FactorPanel, opts: &MethodOptions) -> Result<MethodStatistics> {
    let split_opts = |studentize: bool, negative_control: Option<NegativeControlConfig>| SplitOptions {
        rank: opts.rank,
        studentize,
        bandwidth: opts.bandwidth,
        negative_control,
        estimator: opts.estimator,
    };
    let split = |o: SplitOptions| -> Result<MethodStatistics> {
        let stats = testing::split_statistics(x, f, &o)?;
        let alpha_hat = match &o.negative_control {
            Some(cfg) => {
                let fit = crate::factor::estimate_alpha_with(x, f, o.rank, &o.estimator)?;
                let control = cfg.resolve(&fit)?;
                testing::corrected_alpha(&fit, &control)?
            }
            None => crate::factor::estimate_alpha_with(x, f, o.rank, &o.estimator)?.alpha_hat,
        };
        Ok(MethodStatistics::Split { stats, alpha_hat })
    };
    match method {
        Method::Yd => split(split_opts(false, None)),
        Method::YdR => split(split_opts(true, None)),
        Method::YdTh => split(split_opts(false, Some(NegativeControlConfig::threshold_rule(opts.gamma_scale)))),
        Method::Bh => Ok(MethodStatistics::PValues(baselines::naive_ols_statistics(x, f)?)),
        Method::Sbh => Ok(MethodStatistics::PValues(baselines::sbh_statistics_with(
            x,
            f,
            &SbhOptions {
                rank: opts.rank,
                long_run: opts.hac,
                bandwidth: opts.bandwidth,
                estimator: opts.estimator,
            },
        )?)),
        Method::Sn => Ok(MethodStatistics::PValues(baselines::sn_statistics_with(
            x,
            f,
            &SnOptions {
                rank: opts.rank,
                mc_paths: opts.sn_paths,
                seed: opts.sn_seed,
                estimator: opts.estimator,
            },
        )?)),
    }
}

impl MethodStatistics {
    pub fn decide(&self, method: Method, beta: f64) -> Result<MethodOutcome> {
        match self {
            MethodStatistics::Split { stats, alpha_hat } => {
                let result = stats.clone().select(beta)?;
                Ok(MethodOutcome {
                    method,
                    beta,
                    alpha_hat: alpha_hat.clone(),
                    statistic: result.t_prod.clone(),
                    p_values: None,
                    threshold: Some(result.threshold),
                    p_cutoff: None,
                    rejected: result.rejected.clone(),
                    rank_hat: Some(result.rank_hat[0].max(result.rank_hat[1])),
                    split: Some(result),
                })
            }
            MethodStatistics::PValues(r) => {
                let rejected = r.reject(beta)?;
                let p_cutoff = rejected.iter().map(|&i| r.p_values[i]).fold(None, |m: Option<f64>, v| {
                    Some(m.map_or(v, |m| m.max(v)))
                });
                Ok(MethodOutcome {
                    method,
                    beta,
                    alpha_hat: r.alpha_hat.clone(),
                    statistic: r.statistics.clone(),
                    p_values: Some(r.p_values.clone()),
                    threshold: None,
                    p_cutoff,
                    rejected,
                    rank_hat: r.rank_hat,
                    split: None,
                })
            }
        }
    }
}

/// Computes and decides in one step.
pub fn run_method(
    method: Method,
    x: &ReturnPanel,
    f: &FactorPanel,
    beta: f64,
    opts: &MethodOptions,
) -> Result<MethodOutcome> {
    compute(method, x, f, opts)?.decide(method, beta)
}

impl MethodOutcome {
    /// Writes `entity_id,alpha_hat,statistic[,p_value],rejected`.
    pub fn write_csv(&self, entity_ids: &[String], out: impl Write) -> Result<()> {
        let p = self.alpha_hat.len();
        if entity_ids.len() != p {
            return Err(Error::Dimension(format!("{} entity ids for {p} entities", entity_ids.len())));
        }
        let mut flags = vec![false; p];
        for &i in &self.rejected {
            flags[i] = true;
        }
        let mut w = csv::Writer::from_writer(out);
        if self.p_values.is_some() {
            w.write_record(["entity_id", "alpha_hat", "statistic", "p_value", "rejected"])?;
        } else {
            w.write_record(["entity_id", "alpha_hat", "statistic", "rejected"])?;
        }
        for i in 0..p {
            let mut rec = vec![entity_ids[i].clone(), self.alpha_hat[i].to_string(), self.statistic[i].to_string()];
            if let Some(pv) = &self.p_values {
                rec.push(pv[i].to_string());
            }
            rec.push(u8::from(flags[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One-line JSON metadata; infinite thresholds print as `null`.
    pub fn metadata_line(&self, n: usize) -> String {
        let finite = |v: Option<f64>| v.filter(|t| t.is_finite());
        serde_json::json!({
            "method": self.method.name(),
            "beta": self.beta,
            "threshold": finite(self.threshold),
            "p_value_cutoff": self.p_cutoff,
            "rank_hat": self.rank_hat,
            "n": n,
            "p": self.alpha_hat.len(),
            "rejections": self.rejected.len(),
        })
        .to_string()
    }
}
