//! Rank-agnostic linear algebra: pseudo-inverse, null/range bases, the
//! weighted least-norm projection and D-norms.
//!
//! Every rank decision in the crate goes through [`rank_cutoff`] so there is
//! one notion of numerical rank.

use nalgebra::{DMatrix, DVector};

/// Singular values at or below this are treated as zero:
/// `max(m, n) · σ_max · ε · 16`.
pub fn rank_cutoff(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * f64::EPSILON * 16.0
}

/// Thin SVD `M = U diag(σ) V^T` with `σ` sorted descending; `U` is `m×k`,
/// `V` is `n×k`, `k = min(m, n)`. For `m ≥ n` the columns of `V` are a full
/// orthonormal basis; columns of the other factor paired with `σ = 0` are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on the columns of a tall matrix.
fn jacobi_tall(m: &DMatrix<f64>) -> Svd {
    let n = m.ncols();
    let mut u = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut u, &mut v] {
                    for i in 0..mat.nrows() {
                        let a = mat[(i, p)];
                        let b = mat[(i, q)];
                        mat[(i, p)] = c * a - s * b;
                        mat[(i, q)] = s * a + c * b;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let sigma = DVector::from_iterator(n, order.iter().map(|&j| norms[j]));
    let u = DMatrix::from_columns(
        &order
            .iter()
            .map(|&j| {
                let col = u.column(j);
                if norms[j] > 0.0 {
                    col / norms[j]
                } else {
                    col.into_owned()
                }
            })
            .collect::<Vec<_>>(),
    );
    let v = DMatrix::from_columns(&order.iter().map(|&j| v.column(j)).collect::<Vec<_>>());
    Svd { u, sigma, v }
}

/// Singular value decomposition by one-sided Jacobi rotations.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    if m.nrows() >= m.ncols() {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose());
        Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    }
}

/// Moore–Penrose pseudo-inverse `V Σ^† U^T`.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = svd(m);
    let cutoff = rank_cutoff(m.nrows(), m.ncols(), svd.sigma_max());
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.sigma.iter().enumerate() {
        if s > cutoff {
            out += (svd.v.column(k) * svd.u.column(k).transpose()) / s;
        }
    }
    out
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = svd(m);
    let cutoff = rank_cutoff(m.nrows(), m.ncols(), svd.sigma_max());
    svd.sigma.iter().filter(|&&s| s > cutoff).count()
}

/// Orthonormal basis of `ker(M)`, one column per direction (possibly zero columns).
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    // A wide matrix has a thin SVD with too few right vectors; padding with
    // zero rows leaves the kernel unchanged and yields a full V.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = svd(&padded);
    let cutoff = rank_cutoff(rows, cols, svd.sigma_max());
    let cols_kept: Vec<DVector<f64>> = svd
        .sigma
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(k, _)| svd.v.column(k).into_owned())
        .collect();
    if cols_kept.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&cols_kept)
    }
}

/// Orthonormal basis of `range(M)`.
pub fn range_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = svd(m);
    let cutoff = rank_cutoff(m.nrows(), m.ncols(), svd.sigma_max());
    let cols: Vec<DVector<f64>> = svd
        .sigma
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cutoff)
        .map(|(k, _)| svd.u.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// `‖v‖_D = sqrt(v^T D v)` with `D = diag(weights)`.
pub fn d_norm(v: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    v.iter()
        .zip(weights.iter())
        .map(|(x, w)| w * x * x)
        .sum::<f64>()
        .sqrt()
}

fn sqrt_weighted_rows(x: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut row, w) in out.row_iter_mut().zip(weights.iter()) {
        row *= w.sqrt();
    }
    out
}

/// The `|S|×d` feature matrix; row `s` is `x(s)^T`. No independence is assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    x: DMatrix<f64>,
    rank: usize,
}

impl FeatureMap {
    pub fn new(x: DMatrix<f64>) -> Self {
        let rank = numerical_rank(&x);
        Self { x, rank }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_states(&self) -> usize {
        self.x.nrows()
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// `x(s)` as a column vector.
    pub fn row(&self, s: usize) -> DVector<f64> {
        self.x.row(s).transpose()
    }

    /// Value estimate `Xw`.
    pub fn value(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.x * w
    }
}

/// `w = (D^{1/2} X)^† D^{1/2} v`: the smallest-norm minimizer of `‖Xw - v‖_D`.
pub fn least_norm_weight(
    features: &FeatureMap,
    weights: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let scaled = sqrt_weighted_rows(features.matrix(), weights);
    let rhs = v.component_mul(&weights.map(f64::sqrt));
    pseudo_inverse(&scaled) * rhs
}

/// The weighted projection `Π = X (D^{1/2} X)^† D^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    matrix: DMatrix<f64>,
    weights: DVector<f64>,
}

impl Projector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Diagonal of the `D` the projector was built with.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

pub fn projection_matrix(features: &FeatureMap, weights: &DVector<f64>) -> Projector {
    let scaled = sqrt_weighted_rows(features.matrix(), weights);
    let mut matrix = features.matrix() * pseudo_inverse(&scaled);
    for (mut col, w) in matrix.column_iter_mut().zip(weights.iter()) {
        col *= w.sqrt();
    }
    Projector {
        matrix,
        weights: weights.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_of_constant_matrices_reconstructs() {
        for d in 1..12 {
            for m in [DMatrix::from_element(d, d, 1.0), DMatrix::from_element(d, d + 3, -0.06)] {
                let f = svd(&m);
                let rec = &f.u * DMatrix::from_diagonal(&f.sigma) * f.v.transpose();
                assert!((rec - &m).amax() < 1e-14, "d = {d}");
                assert_eq!(numerical_rank(&m), 1);
                if m.is_square() {
                    assert!((f.v.transpose() * &f.v - DMatrix::identity(d, d)).amax() < 1e-14);
                }
            }
        }
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let diff = (a - b).amax();
        assert!(diff <= tol, "max diff {diff:e} > {tol:e}\n{a}\n{b}");
    }

    #[test]
    fn pinv_of_zero_is_zero_transpose_shape() {
        let z = DMatrix::<f64>::zeros(3, 2);
        let p = pseudo_inverse(&z);
        assert_eq!(p.shape(), (2, 3));
        assert_eq!(p.amax(), 0.0);
    }

    #[test]
    fn pinv_of_invertible_is_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let inv = m.clone().try_inverse().unwrap();
        assert_close(&pseudo_inverse(&m), &inv, 1e-10);
    }

    #[test]
    fn pinv_of_ones_column() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let p = pseudo_inverse(&m);
        assert_close(&p, &DMatrix::from_row_slice(1, 2, &[0.5, 0.5]), 1e-15);
        // Penrose identities by hand: M M^† = 0.5·ones, M^† M = 1
        assert_close(&(&m * &p * &m), &m, 1e-15);
        assert_close(&(&p * &m), &DMatrix::identity(1, 1), 1e-15);
    }

    #[test]
    fn wide_null_space_is_complete() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&m);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).amax() < 1e-14);
        assert_close(&(n.transpose() * &n), &DMatrix::identity(2, 2), 1e-14);
        assert_eq!(range_space(&m).ncols(), 1);
    }

    #[test]
    fn least_norm_duplicated_features() {
        let x = FeatureMap::new(DMatrix::from_element(2, 2, 1.0));
        assert_eq!(x.rank(), 1);
        let d = DVector::from_element(2, 0.5);
        let w = least_norm_weight(&x, &d, &DVector::from_element(2, 2.0));
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        let w0 = least_norm_weight(&x, &d, &DVector::zeros(2));
        assert_eq!(w0.amax(), 0.0);
    }

    #[test]
    fn least_norm_full_rank_matches_normal_equations() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let d = DVector::from_row_slice(&[0.2, 0.5, 0.3]);
        let v = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let dm = DMatrix::from_diagonal(&d);
        let normal = (x.transpose() * &dm * &x).try_inverse().unwrap() * x.transpose() * &dm * &v;
        let w = least_norm_weight(&FeatureMap::new(x), &d, &v);
        assert!((w - normal).amax() < 1e-10);
    }

    #[test]
    fn projector_examples() {
        let d = DVector::from_element(2, 0.5);
        let pi = projection_matrix(&FeatureMap::new(DMatrix::identity(2, 2)), &d);
        assert_close(pi.matrix(), &DMatrix::identity(2, 2), 1e-14);
        let pi = projection_matrix(&FeatureMap::new(DMatrix::from_element(2, 2, 1.0)), &d);
        assert_close(pi.matrix(), &DMatrix::from_element(2, 2, 0.5), 1e-14);
    }

    #[test]
    fn projector_full_rank_matches_canonical_form() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -1.0, 2.0, 0.3, 0.0, 1.0, 1.0]);
        let d = DVector::from_row_slice(&[0.1, 0.4, 0.3, 0.2]);
        let dm = DMatrix::from_diagonal(&d);
        let canonical = &x * (x.transpose() * &dm * &x).try_inverse().unwrap() * x.transpose() * &dm;
        let pi = projection_matrix(&FeatureMap::new(x), &d);
        assert_close(pi.matrix(), &canonical, 1e-10);
    }

    #[test]
    fn d_norm_examples() {
        let i = DVector::from_element(2, 1.0);
        assert_eq!(d_norm(&DVector::zeros(2), &i), 0.0);
        assert_eq!(d_norm(&DVector::from_row_slice(&[3.0, 4.0]), &i), 5.0);
        let half = DVector::from_element(2, 0.5);
        let n = d_norm(&DVector::from_row_slice(&[2.0, 0.0]), &half);
        assert!((n - 2f64.sqrt()).abs() < 1e-15);
    }
}
