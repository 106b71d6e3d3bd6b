use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::scenario::{AlphaLayout, ArmaComponent, GarchParams, SimulationScenario, TemporalMode};
use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{FactorPanel, ReturnPanel};

const GARCH_BURN_IN: usize = 500;
const ARMA_BURN_IN: usize = 200;

/// `+ν` on the first `⌊πp/2⌋` entries and `−ν` up to `⌊πp⌋` (symmetric layout), or
/// `+ν` on the first `⌊πp⌋` entries (positive layout).
pub fn make_alpha(p: usize, pi: f64, nu: f64, layout: AlphaLayout) -> Array1<f64> {
    let total = ((pi * p as f64).floor() as usize).min(p);
    let half = match layout {
        AlphaLayout::Symmetric => ((pi * p as f64 / 2.0).floor() as usize).min(total),
        AlphaLayout::Positive => total,
    };
    Array1::from_shape_fn(p, |i| {
        if i < half {
            nu
        } else if i < total {
            -nu
        } else {
            0.0
        }
    })
}

fn cholesky(cov: ArrayView2<f64>, name: &str) -> Result<Array2<f64>> {
    let chol = linalg::to_dmatrix(cov)
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter(format!("{name} is not positive definite")))?;
    Ok(linalg::from_dmatrix(&chol.l()))
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Rows i.i.d. `N(mean, cov)`. An all-zero `cov` returns `mean` in every row.
pub fn sample_loadings<R: Rng + ?Sized>(
    p: usize,
    mean: ArrayView1<f64>,
    cov: ArrayView2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let r = mean.len();
    if cov.dim() != (r, r) {
        return Err(Error::Dimension(format!("loading covariance must be {r}x{r}")));
    }
    let centre = mean.insert_axis(ndarray::Axis(0));
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(Array2::from_shape_fn((p, r), |(_, j)| mean[j]));
    }
    let l = cholesky(cov, "loading covariance")?;
    let z = normal_matrix(rng, p, r);
    Ok(z.dot(&l.t()) + &centre)
}

/// Square root of the Toeplitz covariance `(ρ^{|i−j|})`, applied by the AR(1)
/// recursion `e_i = ρe_{i−1} + √(1−ρ²)z_i` in `O(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToeplitzFactor {
    rho: f64,
}

pub fn toeplitz_error_cov(rho: f64) -> Result<ToeplitzFactor> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("|rho| = {} must be below 1", rho.abs())));
    }
    Ok(ToeplitzFactor { rho })
}

impl ToeplitzFactor {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Mixes every column of a `p×n` matrix of independent unit-variance draws in place.
    pub fn apply(&self, z: &mut Array2<f64>) {
        if self.rho == 0.0 {
            return;
        }
        let scale = (1.0 - self.rho * self.rho).sqrt();
        let p = z.nrows();
        for mut col in z.columns_mut() {
            for i in 1..p {
                col[i] = self.rho * col[i - 1] + scale * col[i];
            }
        }
    }
}

/// `(e^Z − e^{1/2}) / √((e − 1)e)`: zero mean, unit variance.
fn standard_lognormal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e = std::f64::consts::E;
    let z: f64 = StandardNormal.sample(rng);
    (z.exp() - e.sqrt()) / ((e - 1.0) * e).sqrt()
}

/// Raw GARCH(1,1) path with Gaussian innovations after discarding `burn_in` periods.
pub fn garch_series<R: Rng + ?Sized>(n: usize, params: &GarchParams, burn_in: usize, rng: &mut R) -> Result<Vec<f64>> {
    let GarchParams { omega, a1, b1 } = *params;
    if !(omega > 0.0 && a1 >= 0.0 && b1 >= 0.0 && a1 + b1 < 1.0) {
        return Err(Error::InvalidParameter(format!("GARCH parameters {params:?} are not stationary")));
    }
    let mut h = omega / (1.0 - a1 - b1);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(n);
    for t in 0..burn_in + n {
        h = omega + a1 * prev * prev + b1 * h;
        let z: f64 = StandardNormal.sample(rng);
        prev = h.sqrt() * z;
        if t >= burn_in {
            out.push(prev);
        }
    }
    Ok(out)
}

/// `n×r` factors: GARCH(1,1) series scaled to unit unconditional variance, rotated by
/// the Cholesky factor of `target_cov` and shifted by `mean`.
pub fn garch_factors<R: Rng + ?Sized>(
    n: usize,
    params: &[GarchParams],
    mean: ArrayView1<f64>,
    target_cov: ArrayView2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let r = params.len();
    if mean.len() != r || target_cov.dim() != (r, r) {
        return Err(Error::Dimension(format!("GARCH factors need {r} means and a {r}x{r} covariance")));
    }
    let mut g = Array2::zeros((n, r));
    for (k, par) in params.iter().enumerate() {
        let series = garch_series(n, par, GARCH_BURN_IN, rng)?;
        let sd = (par.omega / (1.0 - par.a1 - par.b1)).sqrt();
        g.column_mut(k).assign(&(Array1::from(series) / sd));
    }
    rotate(g, mean, target_cov)
}

fn rotate(g: Array2<f64>, mean: ArrayView1<f64>, cov: ArrayView2<f64>) -> Result<Array2<f64>> {
    let l = cholesky(cov, "factor covariance")?;
    Ok(g.dot(&l.t()) + &mean.insert_axis(ndarray::Axis(0)))
}

fn spectral_radius(coefs: &[f64]) -> f64 {
    let k = coefs.len();
    if k == 0 {
        return 0.0;
    }
    let companion = DMatrix::from_fn(k, k, |i, j| {
        if i == 0 {
            coefs[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Stationary, invertible ARMA process `y_t = Σφ_k y_{t−k} + u_t + Σθ_j u_{t−j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaProcess {
    ar: Vec<f64>,
    ma: Vec<f64>,
    innovation_sd: f64,
    variance: f64,
}

impl ArmaProcess {
    pub fn new(ar: &[f64], ma: &[f64], innovation_sd: f64) -> Result<Self> {
        if !(innovation_sd > 0.0) {
            return Err(Error::InvalidParameter(format!("innovation sd {innovation_sd} must be positive")));
        }
        if spectral_radius(ar) >= 1.0 - 1e-9 {
            return Err(Error::InvalidParameter(format!("AR coefficients {ar:?} are not stationary")));
        }
        let neg_ma: Vec<f64> = ma.iter().map(|t| -t).collect();
        if spectral_radius(&neg_ma) >= 1.0 - 1e-9 {
            return Err(Error::InvalidParameter(format!("MA coefficients {ma:?} are not invertible")));
        }
        let mut psi = vec![1.0];
        for j in 1..4000 {
            let mut v = ma.get(j - 1).copied().unwrap_or(0.0);
            for (k, phi) in ar.iter().enumerate() {
                if k < j {
                    v += phi * psi[j - k - 1];
                }
            }
            psi.push(v);
        }
        let variance = innovation_sd * innovation_sd * psi.iter().map(|v| v * v).sum::<f64>();
        Ok(Self { ar: ar.to_vec(), ma: ma.to_vec(), innovation_sd, variance })
    }

    pub fn from_component(c: &ArmaComponent) -> Result<Self> {
        Self::new(&c.ar, &c.ma, c.innovation_sd)
    }

    /// Theoretical stationary variance.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Path of length `n` after burn-in, divided by the stationary standard deviation.
    pub fn simulate_standardized<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let total = ARMA_BURN_IN + n;
        let u: Vec<f64> = (0..total)
            .map(|_| self.innovation_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let mut y = vec![0.0; total];
        for t in 0..total {
            let mut v = u[t];
            for (k, phi) in self.ar.iter().enumerate() {
                if t > k {
                    v += phi * y[t - k - 1];
                }
            }
            for (j, theta) in self.ma.iter().enumerate() {
                if t > j {
                    v += theta * u[t - j - 1];
                }
            }
            y[t] = v;
        }
        let sd = self.variance.sqrt();
        y[ARMA_BURN_IN..].iter().map(|v| v / sd).collect()
    }
}

/// Unit-variance temporal innovations, `p×n`. Each entity draws a mixture component
/// by weight; the remaining mass gives i.i.d. normal rows. Returns the assignment too.
pub fn arma_mixture_errors<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    mixture: &[ArmaComponent],
    rng: &mut R,
) -> Result<(Array2<f64>, Vec<Option<usize>>)> {
    let processes = mixture
        .iter()
        .map(ArmaProcess::from_component)
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = mixture.iter().map(|c| c.weight).sum();
    if mixture.iter().any(|c| !(0.0..=1.0).contains(&c.weight)) || total > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
    }
    let mut z = Array2::zeros((p, n));
    let mut assignment = Vec::with_capacity(p);
    for i in 0..p {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let pick = mixture.iter().position(|c| {
            acc += c.weight;
            u < acc
        });
        let row: Vec<f64> = match pick {
            Some(k) => processes[k].simulate_standardized(n, rng),
            None => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        };
        z.row_mut(i).assign(&Array1::from(row));
        assignment.push(pick);
    }
    Ok((z, assignment))
}

/// Population quantities of the generated model.
#[derive(Debug, Clone)]
pub struct PopulationOracle {
    /// `μ = E F_c − Ψ E F_o`.
    pub mu: Array1<f64>,
    /// `Ψ = Σ_co Σ_oo⁻¹`.
    pub psi: Array2<f64>,
    /// `Σ_W = Σ_cc − Σ_co Σ_oo⁻¹ Σ_oc`.
    pub sigma_w: Array2<f64>,
    pub mu_fo: Array1<f64>,
    pub sigma_fo: Array2<f64>,
    /// Per-entity error standard deviation.
    pub sigma_e: Array1<f64>,
}

impl PopulationOracle {
    fn new(mean: &Array1<f64>, cov: &Array2<f64>, r_o: usize, sigma_e: Array1<f64>) -> Result<Self> {
        let soo = cov.slice(s![..r_o, ..r_o]).to_owned();
        let sco = cov.slice(s![r_o.., ..r_o]).to_owned();
        let scc = cov.slice(s![r_o.., r_o..]).to_owned();
        let soo_inv = inverse(&soo)?;
        let psi = sco.dot(&soo_inv);
        let mu_fo = mean.slice(s![..r_o]).to_owned();
        let mu = &mean.slice(s![r_o..]) - &psi.dot(&mu_fo);
        let sigma_w = &scc - &psi.dot(&sco.t());
        Ok(Self { mu, psi, sigma_w, mu_fo, sigma_fo: soo, sigma_e })
    }

    /// `1 + μᵀΣ_W⁻¹μ + μ_Foᵀ Σ_Fo⁻¹ μ_Fo`.
    pub fn variance_inflation(&self) -> Result<f64> {
        let w = inverse(&self.sigma_w)?;
        let o = inverse(&self.sigma_fo)?;
        Ok(1.0 + self.mu.dot(&w.dot(&self.mu)) + self.mu_fo.dot(&o.dot(&self.mu_fo)))
    }

    /// Asymptotic variance of `√n(α̂_i − α_i)` for serially independent data.
    pub fn iid_alpha_variance(&self) -> Result<Array1<f64>> {
        let k = self.variance_inflation()?;
        Ok(self.sigma_e.mapv(|s| s * s * k))
    }
}

fn inverse(m: &Array2<f64>) -> Result<Array2<f64>> {
    let inv = linalg::to_dmatrix(m.view())
        .try_inverse()
        .ok_or(Error::Singular { condition: 0.0, tolerance: linalg::Settings::default().rank_tolerance })?;
    Ok(linalg::from_dmatrix(&inv))
}

/// One simulated panel with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub returns: ReturnPanel,
    /// First `r_observed` factor columns.
    pub factors: FactorPanel,
    pub all_factors: Array2<f64>,
    pub loadings: Array2<f64>,
    pub errors: Array2<f64>,
    pub alpha: Array1<f64>,
    /// Indices of nonzero alphas.
    pub truth: Vec<usize>,
    pub oracle: PopulationOracle,
}

/// Draws `X = α1ᵀ + BFᵀ + E`.
///
/// Draw order is loadings, factors, variance scales, errors, so `nu` and `pi` never
/// change the random stream.
pub fn generate_panel<R: Rng + ?Sized>(sc: &SimulationScenario, rng: &mut R) -> Result<GeneratedPanel> {
    sc.validate()?;
    let (n, p, r) = (sc.n, sc.p, sc.r_total);
    let cov = sc.factor_cov_matrix()?;
    let mean = sc.factor_mean_vector();
    let loadings = sample_loadings(p, Array1::from(sc.loading_mean.clone()).view(), sc.loading_cov_matrix()?.view(), rng)?;

    let factors = match sc.temporal_mode {
        TemporalMode::IidNormal => rotate(normal_matrix(rng, n, r), mean.view(), cov.view())?,
        TemporalMode::IidLognormal => {
            let g = Array2::from_shape_fn((n, r), |_| standard_lognormal(rng));
            rotate(g, mean.view(), cov.view())?
        }
        TemporalMode::GarchArma => garch_factors(n, &sc.garch_params, mean.view(), cov.view(), rng)?,
    };

    let sigma_e = if sc.hetero_variances.enabled {
        let h = sc.hetero_variances;
        if h.hi > h.lo {
            let u = Uniform::new_inclusive(h.lo, h.hi).expect("validated range");
            Array1::from_shape_fn(p, |_| u.sample(rng).sqrt())
        } else {
            Array1::from_elem(p, h.lo.sqrt())
        }
    } else {
        Array1::ones(p)
    };

    let mut errors = match sc.temporal_mode {
        TemporalMode::IidNormal => normal_matrix(rng, p, n),
        TemporalMode::IidLognormal => Array2::from_shape_fn((p, n), |_| standard_lognormal(rng)),
        TemporalMode::GarchArma => arma_mixture_errors(n, p, &sc.arma_mixture, rng)?.0,
    };
    toeplitz_error_cov(sc.error_cov_rho)?.apply(&mut errors);
    errors *= &sigma_e.view().insert_axis(ndarray::Axis(1));

    let alpha = make_alpha(p, sc.pi, sc.nu, sc.alpha_layout);
    let x = loadings.dot(&factors.t()) + &errors + &alpha.view().insert_axis(ndarray::Axis(1));
    let truth = (0..p).filter(|&i| alpha[i] != 0.0).collect();
    let observed = FactorPanel::from_values(factors.slice(s![.., ..sc.r_observed]).to_owned())?;
    let oracle = PopulationOracle::new(&mean, &cov, sc.r_observed, sigma_e)?;
    Ok(GeneratedPanel {
        returns: ReturnPanel::from_values(x)?,
        factors: observed,
        all_factors: factors,
        loadings,
        errors,
        alpha,
        truth,
        oracle,
    })
}
