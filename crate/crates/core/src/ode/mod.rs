//! The mean ODE `dw/dt = Aw + b` of linear TD.
//!
//! The closed form `w(t) = w_* + exp(At)(w_0 - w_*)` is the trajectory
//! engine; RK4 is kept only as an independent numerical check. The limit
//! `A_∞ = lim exp(At)` is built as the oblique projector onto `ker(A)` along
//! `range(A)`, which is valid because the zero eigenvalue of a TD-generated
//! `A` is semisimple and every other eigenvalue has negative real part.

mod expm;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

pub use expm::matrix_exponential;

use crate::error::{Error, Result};
use crate::fixed_points::{FixedPointSet, TdLinearSystem};
use crate::linalg;

/// Eigenvalues closer than this (relative to `1 + ρ(A)`) are counted as one.
const CLUSTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumEntry {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeLimit {
    pub a_inf: DMatrix<f64>,
    pub spectrum: Vec<SpectrumEntry>,
    pub rank_a: usize,
    /// `min |Re λ|` over the nonzero eigenvalues; `None` when `A` has none.
    pub spectral_gap: Option<f64>,
}

impl OdeLimit {
    pub fn kernel_dim(&self) -> usize {
        self.a_inf.nrows() - self.rank_a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub w0: DVector<f64>,
}

impl OdeTrajectory {
    pub fn endpoint(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least w0")
    }
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    a.complex_eigenvalues().iter().copied().collect()
}

/// Eigenvalues of `A` with algebraic multiplicities, sorted by real then
/// imaginary part.
pub fn spectrum(a: &DMatrix<f64>) -> Vec<SpectrumEntry> {
    let mut eig = eigenvalues(a);
    eig.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = CLUSTER_TOL * (1.0 + radius);
    let mut groups: Vec<(Complex64, usize)> = Vec::new();
    for z in eig {
        match groups.iter_mut().find(|(c, _)| (*c - z).norm() <= tol) {
            Some((_, m)) => *m += 1,
            None => groups.push((z, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(z, multiplicity)| SpectrumEntry {
            re: z.re,
            im: z.im,
            multiplicity,
        })
        .collect()
}

/// `min |Re λ|` over the `d - nullity(A)` eigenvalues of largest modulus.
pub fn spectral_gap(a: &DMatrix<f64>) -> Option<f64> {
    let nullity = linalg::null_space(a).ncols();
    let mut eig = eigenvalues(a);
    eig.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
    eig[nullity..]
        .iter()
        .map(|z| z.re.abs())
        .min_by(f64::total_cmp)
}

/// Largest eigenvalue of the symmetric part `(A + A^T)/2`.
pub fn max_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Coordinates for `R^d = ker(A) ⊕ range(A)`; exists when the zero
/// eigenvalue is semisimple.
struct ModalSplit {
    kernel: DMatrix<f64>,
    range: DMatrix<f64>,
    /// Inverse of `[kernel | range]`.
    coords: DMatrix<f64>,
}

impl ModalSplit {
    fn new(a: &DMatrix<f64>) -> Option<Self> {
        let d = a.nrows();
        let kernel = linalg::null_space(a);
        let range = linalg::range_space(a);
        let k = kernel.ncols();
        if k + range.ncols() != d {
            return None;
        }
        let mut basis = DMatrix::zeros(d, d);
        basis.view_mut((0, 0), (d, k)).copy_from(&kernel);
        basis.view_mut((0, k), (d, d - k)).copy_from(&range);
        let coords = basis.lu().try_inverse()?;
        Some(Self { kernel, range, coords })
    }

    fn a_inf(&self) -> DMatrix<f64> {
        let k = self.kernel.ncols();
        &self.kernel * self.coords.rows(0, k)
    }

    /// `exp(At)` with the kernel block kept exact; only the restriction of
    /// `A` to `range(A)` is exponentiated.
    fn propagator(&self, a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let k = self.kernel.ncols();
        let c_range = self.coords.rows(k, self.range.ncols());
        let restricted = &c_range * a * &self.range;
        self.a_inf() + &self.range * matrix_exponential(&restricted, t) * c_range
    }
}

/// `exp(At)`. Long horizons are accurate because the unit eigenvalues on
/// `ker(A)` never pass through the squaring phase.
pub fn propagator(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    match ModalSplit::new(a) {
        Some(split) if split.kernel.ncols() > 0 && split.range.ncols() > 0 => split.propagator(a, t),
        _ => matrix_exponential(a, t),
    }
}

/// `A_∞`: projector onto `ker(A)` along `range(A)`.
pub fn limit_projector(sys: &TdLinearSystem) -> Result<OdeLimit> {
    let a = &sys.a;
    let d = a.nrows();
    let rank_a = linalg::numerical_rank(a);
    let rank_a2 = linalg::numerical_rank(&(a * a));
    if rank_a != rank_a2 {
        return Err(Error::ZeroEigenvalueNotSemisimple { rank_a, rank_a2 });
    }
    let max_eig = max_symmetric_eigenvalue(a);
    if max_eig > 1e-12 * (1.0 + a.norm()) {
        return Err(Error::NotNegativeSemidefinite { max_eig });
    }
    let a_inf = if rank_a == d {
        DMatrix::zeros(d, d)
    } else if rank_a == 0 {
        DMatrix::identity(d, d)
    } else {
        ModalSplit::new(a)
            .ok_or(Error::SingularSystem("[ker(A) | range(A)] basis"))?
            .a_inf()
    };
    Ok(OdeLimit {
        a_inf,
        spectrum: spectrum(a),
        rank_a,
        spectral_gap: spectral_gap(a),
    })
}

/// Closed-form solution `w_* + exp(At)(w0 - w_*)`. Negative `t` runs backward.
pub fn ode_solution(
    sys: &TdLinearSystem,
    fps: &FixedPointSet,
    w0: &DVector<f64>,
    t: f64,
) -> DVector<f64> {
    let w_star = &fps.w_particular;
    w_star + propagator(&sys.a, t) * (w0 - w_star)
}

/// Closed-form solution sampled at the given times.
pub fn closed_form_trajectory(
    sys: &TdLinearSystem,
    fps: &FixedPointSet,
    w0: &DVector<f64>,
    times: &[f64],
) -> OdeTrajectory {
    OdeTrajectory {
        times: times.to_vec(),
        states: times.iter().map(|&t| ode_solution(sys, fps, w0, t)).collect(),
        w0: w0.clone(),
    }
}

/// Fixed-step classic RK4 on `dw/dt = Aw + b`.
pub fn rk4_trajectory(
    sys: &TdLinearSystem,
    w0: &DVector<f64>,
    step: f64,
    horizon: f64,
) -> Result<OdeTrajectory> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if !(horizon >= step) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must be at least the step {step}"
        )));
    }
    let n_steps = (horizon / step).round() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut w = w0.clone();
    times.push(0.0);
    states.push(w.clone());
    for k in 1..=n_steps {
        let k1 = sys.mean_field(&w);
        let k2 = sys.mean_field(&(&w + &k1 * (step / 2.0)));
        let k3 = sys.mean_field(&(&w + &k2 * (step / 2.0)));
        let k4 = sys.mean_field(&(&w + &k3 * step));
        w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        times.push(k as f64 * step);
        states.push(w.clone());
    }
    Ok(OdeTrajectory {
        times,
        states,
        w0: w0.clone(),
    })
}

/// `w_∞(w0) = A_∞(w0 - w_*) + w_*`.
pub fn w_infinity(lim: &OdeLimit, fps: &FixedPointSet, w0: &DVector<f64>) -> DVector<f64> {
    let w_star = &fps.w_particular;
    &lim.a_inf * (w0 - w_star) + w_star
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundedArcReport {
    pub horizon: f64,
    /// `sup ‖w(t)‖` over `[0, horizon]`.
    pub forward_sup: f64,
    /// `sup ‖w(t)‖` over `[-horizon, 0]`; infinite if the arc overflows.
    pub backward_sup: f64,
    /// `10‖w0‖ + 10`.
    pub bound: f64,
    pub backward_bounded: bool,
    /// `‖w(horizon) - w_∞(w0)‖`.
    pub forward_gap: f64,
    pub distance_to_fixed_set: f64,
    /// A bounded backward arc forces `w0` onto `W_*` (within 1e-6).
    pub dichotomy_holds: bool,
}

/// Samples both arcs of the closed-form solution through `w0` on a uniform
/// grid of `samples` points each.
pub fn bounded_invariant_check(
    sys: &TdLinearSystem,
    fps: &FixedPointSet,
    lim: &OdeLimit,
    w0: &DVector<f64>,
    horizon: f64,
    samples: usize,
) -> BoundedArcReport {
    let samples = samples.max(2);
    let arc_sup = |sign: f64| {
        (0..samples)
            .map(|i| {
                let t = sign * horizon * i as f64 / (samples - 1) as f64;
                let n = ode_solution(sys, fps, w0, t).norm();
                if n.is_finite() {
                    n
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    };
    let forward_sup = arc_sup(1.0);
    let backward_sup = arc_sup(-1.0);
    let bound = 10.0 * w0.norm() + 10.0;
    let backward_bounded = backward_sup <= bound;
    let forward_gap = (ode_solution(sys, fps, w0, horizon) - w_infinity(lim, fps, w0)).norm();
    let distance_to_fixed_set = fps.distance(w0);
    BoundedArcReport {
        horizon,
        forward_sup,
        backward_sup,
        bound,
        backward_bounded,
        forward_gap,
        distance_to_fixed_set,
        dichotomy_holds: !backward_bounded || distance_to_fixed_set <= 1e-6,
    }
}
