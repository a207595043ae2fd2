//! The TD linear system `Aw + b = 0`, its solution set `W_*`, the projected
//! Bellman fixed value `v_*` and MSPBE.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, d_norm, FeatureMap, Projector};
use crate::markov::PolicyChain;

/// Stop rule for the `ΠT` contraction iteration.
const CONTRACTION_TOL: f64 = 1e-13;
const CONTRACTION_MAX_ITERS: usize = 100_000;
/// Agreement required between the two `v_*` routes, relative to `1 + ‖v_*‖_∞`.
const ROUTE_TOL: f64 = 1e-9;
/// Consistency tolerance for `A A^†(-b) + b`, relative to `1 + ‖b‖`.
const CONSISTENCY_TOL: f64 = 1e-8;

/// `A = X^T D (γ P_π - I) X`, `b = X^T D r_π`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdLinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl TdLinearSystem {
    pub fn build(chain: &PolicyChain, features: &FeatureMap) -> Result<Self> {
        let n = chain.n_states();
        if features.n_states() != n {
            return Err(Error::DimensionMismatch {
                context: "feature rows",
                expected: n,
                actual: features.n_states(),
            });
        }
        let x = features.matrix();
        let d = chain.d_matrix();
        let m = chain.transition() * chain.gamma() - DMatrix::identity(n, n);
        let xt_d = x.transpose() * d;
        Ok(Self {
            a: &xt_d * m * x,
            b: xt_d * chain.reward(),
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Mean field `h(w) = Aw + b`.
    pub fn mean_field(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.a * w + &self.b
    }
}

/// `W_* = w_particular + span(null_basis)`, with the common value `v_*`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSet {
    /// Least-norm solution `A^†(-b)`.
    pub w_particular: DVector<f64>,
    /// Orthonormal basis of `ker(A)`, `d×k`.
    pub null_basis: DMatrix<f64>,
    pub v_star: DVector<f64>,
}

impl FixedPointSet {
    pub fn null_dim(&self) -> usize {
        self.null_basis.ncols()
    }

    /// `w_particular + N c`.
    pub fn point(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.w_particular + &self.null_basis * coeffs
    }

    /// Orthogonal projection of `w` onto the affine set.
    pub fn nearest(&self, w: &DVector<f64>) -> DVector<f64> {
        let shift = w - &self.w_particular;
        &self.w_particular + &self.null_basis * (self.null_basis.transpose() * shift)
    }

    /// Euclidean distance from `w` to `W_*`.
    pub fn distance(&self, w: &DVector<f64>) -> f64 {
        let shift = w - &self.w_particular;
        let along = &self.null_basis * (self.null_basis.transpose() * &shift);
        (shift - along).norm()
    }
}

pub fn distance_to_fixed_set(w: &DVector<f64>, fps: &FixedPointSet) -> f64 {
    fps.distance(w)
}

/// Solves `Aw + b = 0` by least norm and cross-checks `v_*` against the
/// fixed point of `ΠT` obtained by iteration.
pub fn solve_fixed_points(
    sys: &TdLinearSystem,
    features: &FeatureMap,
    projector: &Projector,
    chain: &PolicyChain,
) -> Result<FixedPointSet> {
    let w_particular = -(linalg::pseudo_inverse(&sys.a) * &sys.b);
    let residual = (&sys.a * &w_particular + &sys.b).norm();
    if residual > CONSISTENCY_TOL * (1.0 + sys.b.norm()) {
        return Err(Error::InconsistentSystem { residual });
    }
    let null_basis = linalg::null_space(&sys.a);
    let v_star = features.value(&w_particular);

    let v_iter = projected_bellman_fixed_point(chain, projector)?;
    let gap = (&v_star - &v_iter).amax();
    if gap > ROUTE_TOL * (1.0 + v_star.amax()) {
        return Err(Error::FixedValueMismatch { gap });
    }
    Ok(FixedPointSet {
        w_particular,
        null_basis,
        v_star,
    })
}

/// Iterates `v ← ΠT v` from zero until `‖Δv‖_D ≤ 1e-13` or 10⁵ iterations.
pub fn projected_bellman_fixed_point(
    chain: &PolicyChain,
    projector: &Projector,
) -> Result<DVector<f64>> {
    let mu = chain.stationary();
    let mut v = DVector::zeros(chain.n_states());
    for _ in 0..CONTRACTION_MAX_ITERS {
        let next = projector.apply(&chain.bellman_apply(&v)?);
        let step = d_norm(&(&next - &v), mu);
        v = next;
        if step <= CONTRACTION_TOL {
            break;
        }
    }
    Ok(v)
}

/// `MSPBE(w) = ‖Π(T Xw - Xw)‖_D^2`.
pub fn mspbe(
    w: &DVector<f64>,
    features: &FeatureMap,
    projector: &Projector,
    chain: &PolicyChain,
) -> Result<f64> {
    let v = features.value(w);
    let residual = chain.bellman_apply(&v)? - &v;
    Ok(d_norm(&projector.apply(&residual), chain.stationary()).powi(2))
}

/// Returns `(‖Aw + b‖, ‖ΠT Xw - Xw‖_D)`; both vanish together.
pub fn check_equivalence(
    w: &DVector<f64>,
    sys: &TdLinearSystem,
    features: &FeatureMap,
    projector: &Projector,
    chain: &PolicyChain,
) -> Result<(f64, f64)> {
    let linear = sys.mean_field(w).norm();
    let v = features.value(w);
    let projected = projector.apply(&chain.bellman_apply(&v)?) - v;
    Ok((linear, d_norm(&projected, chain.stationary())))
}
