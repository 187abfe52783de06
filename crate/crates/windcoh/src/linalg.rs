//! Dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition number above which a solve is reported as ill-conditioned.
pub const COND_WARN: f64 = 1e12;
/// Condition number above which a factorization is treated as singular.
pub const COND_FAIL: f64 = 1e15;

pub type C64 = Complex<f64>;

/// LU factors together with a 1-norm condition number.
pub struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub inverse: DMatrix<f64>,
    pub cond: f64,
}

impl Factored {
    /// Factor `a`, failing when it is singular or hopelessly conditioned.
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        assert!(a.is_square(), "{context}: factorization of non-square matrix");
        let lu = a.clone().lu();
        let inverse = lu.try_inverse().ok_or_else(|| Error::Singular {
            context: context.to_string(),
            condition: f64::INFINITY,
        })?;
        let cond = norm1(a) * norm1(&inverse);
        if !cond.is_finite() || cond > COND_FAIL {
            return Err(Error::Singular { context: context.to_string(), condition: cond });
        }
        Ok(Self { lu, inverse, cond })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("factor checked non-singular at construction")
    }

    pub fn ill_conditioned(&self) -> bool {
        self.cond > COND_WARN
    }
}

/// Maximum absolute column sum.
pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Row sum taken as off-diagonals in index order, then the diagonal.
///
/// This is the summation order that [`make_laplacian`] inverts exactly, so a
/// matrix produced by it reports a row sum of exactly zero.
pub fn ordered_row_sum(m: &DMatrix<f64>, i: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        if j != i {
            s += m[(i, j)];
        }
    }
    s + m[(i, i)]
}

/// Keep the off-diagonals and set each diagonal to minus its row's off-diagonal sum.
pub fn make_laplacian(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let mut s = 0.0;
        for j in 0..m.ncols() {
            if j != i {
                s += m[(i, j)];
            }
        }
        out[(i, i)] = -s;
    }
    out
}

/// Largest |row sum| relative to the largest |entry|.
pub fn max_rel_row_sum(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (0..m.nrows()).map(|i| m.row(i).sum().abs()).fold(0.0, f64::max) / scale
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// All eigenvalues of a real square matrix (real Schur form).
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<C64> {
    a.clone().complex_eigenvalues().iter().copied().collect()
}

/// Unit-norm null vector of `a − λI` for real `λ`.
pub fn real_eigenvector(a: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = argmin(svd.singular_values.as_slice());
    let v: DVector<f64> = v_t.row(k).transpose();
    let norm = v.norm();
    v / norm
}

/// Unit-norm null vector of `a − λI` for complex `λ`.
pub fn complex_eigenvector(a: &DMatrix<f64>, lambda: C64) -> DVector<C64> {
    let n = a.nrows();
    let mut shifted: DMatrix<C64> = a.map(|v| C64::new(v, 0.0));
    for i in 0..n {
        shifted[(i, i)] -= lambda;
    }
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = argmin(svd.singular_values.as_slice());
    // rows of V^H are conjugated right singular vectors
    let v: DVector<C64> = v_t.row(k).transpose().map(|z| z.conj());
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

fn argmin(xs: &[f64]) -> usize {
    let mut k = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[k] {
            k = i;
        }
    }
    k
}

/// Compare two eigenvalue lists as multisets.
///
/// Greedy nearest matching after sorting; returns the worst distance divided by
/// `max(1, max |λ|)`.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = a.iter().chain(b).map(|z| z.norm()).fold(1.0, f64::max);
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    let mut order: Vec<&C64> = a.iter().collect();
    order.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    for z in order {
        let mut best = usize::MAX;
        let mut dist = f64::INFINITY;
        for (j, w) in b.iter().enumerate() {
            if !used[j] && (z - w).norm() < dist {
                dist = (z - w).norm();
                best = j;
            }
        }
        used[best] = true;
        worst = worst.max(dist);
    }
    worst / scale
}

/// Select rows `idx` of `m`.
pub fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

pub fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}
