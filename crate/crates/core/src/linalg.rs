//! Dense least-squares, symmetric eigenproblems and projection operators.
//!
//! Projections are never materialized as `n×n` matrices: a [`Projector`] keeps
//! an orthonormal basis of its column space and applies `H(A)x = Q(Qᵀx)` or
//! `(I − H(A))x` on demand.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Library-wide numerical settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    /// Minimum ratio of smallest to largest singular value accepted as full rank.
    pub rank_tolerance: f64,
    /// Maximum relative asymmetry accepted by [`top_eigenpairs`].
    pub symmetry_tolerance: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            rank_tolerance: 1e-10,
            symmetry_tolerance: 1e-10,
        }
    }
}

pub(crate) fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Subtracts each column's mean, i.e. computes `Q(1_n)·M`.
pub fn demean_columns(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "cannot demean an empty {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let means = m.mean_axis(Axis(0)).expect("non-empty");
    Ok(&m - &means.insert_axis(Axis(0)))
}

/// Subtracts each row's mean, i.e. computes `M·Q(1_n)` for a `p×n` panel.
pub fn demean_rows(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "cannot demean an empty {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let means = m.mean_axis(Axis(1)).expect("non-empty");
    Ok(&m - &means.insert_axis(Axis(1)))
}

/// Thin QR factorization with a rank check on the triangular factor.
struct ThinQr {
    q: Array2<f64>,
    r: Array2<f64>,
}

fn thin_qr(design: ArrayView2<f64>, settings: &Settings) -> Result<ThinQr> {
    let (n, k) = design.dim();
    if k == 0 || n == 0 {
        return Err(Error::Dimension(format!("empty design {n}x{k}")));
    }
    if n < k {
        return Err(Error::Dimension(format!(
            "design has {n} rows but {k} columns; least squares needs n >= k"
        )));
    }
    let qr = to_dmatrix(design).qr();
    let r = qr.r();
    let sv = r.singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    let condition = if largest > 0.0 { smallest / largest } else { 0.0 };
    if !(condition > settings.rank_tolerance) {
        return Err(Error::Singular {
            condition,
            tolerance: settings.rank_tolerance,
        });
    }
    Ok(ThinQr {
        q: from_dmatrix(&qr.q()),
        r: from_dmatrix(&r),
    })
}

fn back_substitute(r: &Array2<f64>, rhs: &mut Array2<f64>) {
    let k = r.nrows();
    for mut col in rhs.columns_mut() {
        for i in (0..k).rev() {
            let mut acc = col[i];
            for j in i + 1..k {
                acc -= r[[i, j]] * col[j];
            }
            col[i] = acc / r[[i, i]];
        }
    }
}

/// Solves `min ‖design·B − response‖_F` through a Householder QR factorization.
///
/// Returns the `k×m` coefficient matrix. A design whose singular value ratio falls
/// below the rank tolerance is rejected with [`Error::Singular`].
pub fn least_squares(design: ArrayView2<f64>, response: ArrayView2<f64>) -> Result<Array2<f64>> {
    least_squares_with(&Settings::default(), design, response)
}

pub fn least_squares_with(
    settings: &Settings,
    design: ArrayView2<f64>,
    response: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if design.nrows() != response.nrows() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response has {}",
            design.nrows(),
            response.nrows()
        )));
    }
    let qr = thin_qr(design, settings)?;
    let mut coef = qr.q.t().dot(&response);
    back_substitute(&qr.r, &mut coef);
    Ok(coef)
}

/// Vector convenience wrapper around [`least_squares`].
pub fn least_squares_vec(design: ArrayView2<f64>, response: ArrayView1<f64>) -> Result<Array1<f64>> {
    let rhs = response.insert_axis(Axis(1));
    let coef = least_squares(design, rhs)?;
    Ok(coef.column(0).to_owned())
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Eigenvalues in descending order.
    pub values: Array1<f64>,
    /// Unit eigenvectors as columns, matching `values`.
    pub vectors: Array2<f64>,
}

/// Returns the `k` largest eigenvalues of a symmetric matrix and their eigenvectors.
pub fn top_eigenpairs(s: ArrayView2<f64>, k: usize) -> Result<Eigenpairs> {
    top_eigenpairs_with(&Settings::default(), s, k)
}

pub fn top_eigenpairs_with(settings: &Settings, s: ArrayView2<f64>, k: usize) -> Result<Eigenpairs> {
    let (m, m2) = s.dim();
    if m != m2 {
        return Err(Error::Contract(format!("eigenproblem needs a square matrix, got {m}x{m2}")));
    }
    if k == 0 || k > m {
        return Err(Error::Contract(format!("requested {k} eigenpairs of a {m}x{m} matrix")));
    }
    let scale = s.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let asym = s
        .indexed_iter()
        .fold(0.0_f64, |acc, ((i, j), v)| acc.max((v - s[[j, i]]).abs()));
    if asym > settings.symmetry_tolerance * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Contract(format!(
            "matrix is not symmetric (max asymmetry {asym:e}, scale {scale:e})"
        )));
    }
    let eig = SymmetricEigen::new(to_dmatrix(s));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Array1::from_iter(order.iter().take(k).map(|&i| eig.eigenvalues[i]));
    let vectors = Array2::from_shape_fn((m, k), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok(Eigenpairs { values, vectors })
}

/// Which side of the projection a [`Projector`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// `H(A) = A(AᵀA)⁻¹Aᵀ`
    Onto,
    /// `Q(A) = I − H(A)`
    Complement,
}

/// Projection onto (or away from) the column space of a full-rank basis.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: Array2<f64>,
    orthonormal: Array2<f64>,
    kind: ProjectionKind,
}

impl Projector {
    pub fn new(basis: Array2<f64>, kind: ProjectionKind) -> Result<Self> {
        let qr = thin_qr(basis.view(), &Settings::default())?;
        Ok(Self {
            basis,
            orthonormal: qr.q,
            kind,
        })
    }

    pub fn onto(basis: Array2<f64>) -> Result<Self> {
        Self::new(basis, ProjectionKind::Onto)
    }

    pub fn complement(basis: Array2<f64>) -> Result<Self> {
        Self::new(basis, ProjectionKind::Complement)
    }

    /// The demeaning operator `Q(1_n)`.
    pub fn demeaning(n: usize) -> Result<Self> {
        Self::complement(Array2::ones((n, 1)))
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    /// Applies the projector to every column of `x` (`n×m`).
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.orthonormal.nrows() {
            return Err(Error::Dimension(format!(
                "projector acts on {}-vectors, got {} rows",
                self.orthonormal.nrows(),
                x.nrows()
            )));
        }
        let onto = self.orthonormal.dot(&self.orthonormal.t().dot(&x));
        Ok(match self.kind {
            ProjectionKind::Onto => onto,
            ProjectionKind::Complement => &x - &onto,
        })
    }

    pub fn apply_vec(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let out = self.apply(x.insert_axis(Axis(1)))?;
        Ok(out.column(0).to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
    }

    #[test]
    fn demean_constant_and_ramp() {
        let c = Array2::from_elem((4, 1), 3.5);
        assert!(demean_columns(c.view()).unwrap().iter().all(|v| v.abs() < 1e-15));
        let ramp = array![[1.0], [2.0], [3.0]];
        let out = demean_columns(ramp.view()).unwrap();
        assert_eq!(out, array![[-1.0], [0.0], [1.0]]);
    }

    #[test]
    fn demean_matches_explicit_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(&mut rng, 5, 3);
        let explicit = Array2::<f64>::eye(5) - Array2::from_elem((5, 5), 1.0 / 5.0);
        let want = explicit.dot(&m);
        let got = demean_columns(m.view()).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn demean_rejects_empty() {
        let e = Array2::<f64>::zeros((0, 3));
        assert!(matches!(demean_columns(e.view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn least_squares_identity_and_mean() {
        let y = array![[1.5], [-2.0], [4.0]];
        let b = least_squares(Array2::eye(3).view(), y.view()).unwrap();
        for (a, e) in b.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-14);
        }
        let ones = Array2::ones((3, 1));
        let b = least_squares(ones.view(), array![[1.0], [2.0], [3.0]].view()).unwrap();
        assert_abs_diff_eq!(b[[0, 0]], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_exact_fit_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let design = random_matrix(&mut rng, 20, 3);
        let beta = array![[0.5, -1.0], [2.0, 0.25], [-3.0, 1.0]];
        let response = design.dot(&beta);
        let got = least_squares(design.view(), response.view()).unwrap();
        for (a, b) in got.iter().zip(beta.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }

        let noisy = &response + &random_matrix(&mut rng, 20, 2);
        let coef = least_squares(design.view(), noisy.view()).unwrap();
        let resid = &noisy - &design.dot(&coef);
        let normal = design.t().dot(&resid);
        let scale = design.t().dot(&noisy).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(normal.iter().all(|v| v.abs() <= 1e-8 * scale));
    }

    #[test]
    fn least_squares_reports_condition_on_rank_deficiency() {
        let design = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let y = array![[1.0], [2.0], [3.0]];
        match least_squares(design.view(), y.view()) {
            Err(Error::Singular { condition, .. }) => assert!(condition < 1e-10),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn eigenpairs_diagonal_and_rank_one() {
        let d = array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let e = top_eigenpairs(d.view(), 2).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.vectors[[0, 0]].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.vectors[[1, 1]].abs(), 1.0, epsilon = 1e-12);

        let u = array![1.0, 2.0, 0.0];
        let s = u.view().insert_axis(Axis(1)).dot(&u.view().insert_axis(Axis(0)));
        let e = top_eigenpairs(s.view(), 1).unwrap();
        assert_abs_diff_eq!(e.values[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenpairs_full_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 10, 10);
        let s = &a + &a.t();
        let e = top_eigenpairs(s.view(), 10).unwrap();
        let mut recon = Array2::<f64>::zeros((10, 10));
        for i in 0..10 {
            let v = e.vectors.column(i);
            recon = recon + e.values[i] * &v.insert_axis(Axis(1)).dot(&v.insert_axis(Axis(0)));
        }
        for (a, b) in recon.iter().zip(s.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        let gram = e.vectors.t().dot(&e.vectors);
        for ((i, j), v) in gram.indexed_iter() {
            assert_abs_diff_eq!(*v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-8);
        }
        assert!(e.values.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigenpairs_reject_asymmetric() {
        let s = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(matches!(top_eigenpairs(s.view(), 1), Err(Error::Contract(_))));
    }

    #[test]
    fn projector_annihilates_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = random_matrix(&mut rng, 12, 3);
        let q = Projector::complement(basis.clone()).unwrap();
        let out = q.apply(basis.view()).unwrap();
        let scale = basis.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(out.iter().all(|v| v.abs() < 1e-10 * scale));
    }

    #[test]
    fn demeaning_projector_matches_demean_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 8, 2);
        let q = Projector::demeaning(8).unwrap();
        let a = q.apply(m.view()).unwrap();
        let b = demean_columns(m.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let v = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let out = q.apply_vec(v.view()).unwrap();
        assert_abs_diff_eq!(out.sum(), 0.0, epsilon = 1e-12);
    }
}
