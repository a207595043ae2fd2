//! Runtime checks of the stochastic-approximation ingredients behind TD
//! convergence: the transition pair chain `Y_t = (S_t, A_t, S_{t+1})`, its
//! stationary law `η`, the deviation matrix and the Poisson equation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_points::TdLinearSystem;
use crate::linalg::{self, FeatureMap};
use crate::markov::{self, Mdp, Policy, PolicyChain};
use crate::ode;
use crate::td::LearningRateSchedule;

/// The chain over transitions `(s, a, s')` with positive probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PairChain {
    pub states: Vec<(usize, usize, usize)>,
    pub transition: DMatrix<f64>,
    pub eta: DVector<f64>,
}

impl PairChain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub fn build_pair_chain(mdp: &Mdp, policy: &Policy, chain: &PolicyChain) -> Result<PairChain> {
    let n = mdp.n_states();
    let mut states = Vec::new();
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            if policy.prob(s, a) <= 0.0 {
                continue;
            }
            for s_next in 0..n {
                if mdp.prob(s, a, s_next) > 0.0 {
                    states.push((s, a, s_next));
                }
            }
        }
    }
    let m = states.len();
    let mut transition = DMatrix::zeros(m, m);
    for (i, &(_, _, s_next)) in states.iter().enumerate() {
        for (j, &(s2, a2, s3)) in states.iter().enumerate() {
            if s2 == s_next {
                transition[(i, j)] = policy.prob(s_next, a2) * mdp.prob(s_next, a2, s3);
            }
        }
    }
    if !markov::check_irreducible(&transition) {
        return Err(Error::NotIrreducible);
    }
    let mu = chain.stationary();
    let eta = DVector::from_iterator(
        m,
        states
            .iter()
            .map(|&(s, a, s_next)| mu[s] * policy.prob(s, a) * mdp.prob(s, a, s_next)),
    );
    Ok(PairChain {
        states,
        transition,
        eta,
    })
}

/// Deviation matrix `H = (I - P + P*)^{-1} (I - P*)` with `P* = 1 η^T`.
///
/// Satisfies `(I - P) H = I - P*` and `H 1 = 0`.
pub fn fundamental_matrix(p: &DMatrix<f64>, eta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let p_star = DMatrix::from_fn(n, n, |_, j| eta[j]);
    let lhs = &ident - p + &p_star;
    lhs.lu()
        .solve(&(ident - p_star))
        .ok_or(Error::SingularSystem("I - P + P*"))
}

/// TD error `δ(w, y) = r(s,a) + γ w^T x(s') - w^T x(s)`.
fn td_error(mdp: &Mdp, features: &FeatureMap, w: &DVector<f64>, y: (usize, usize, usize)) -> f64 {
    let (s, a, s_next) = y;
    let x = features.matrix();
    mdp.reward(s, a) + mdp.discount() * x.row(s_next).dot(&w.transpose())
        - x.row(s).dot(&w.transpose())
}

/// `|Y|×d` matrix whose row `y` is `H(w, y) = δ(w, y) x(s)`.
pub fn update_field(
    w: &DVector<f64>,
    pair: &PairChain,
    mdp: &Mdp,
    features: &FeatureMap,
) -> DMatrix<f64> {
    let d = features.dim();
    let mut h = DMatrix::zeros(pair.len(), d);
    for (i, &y) in pair.states.iter().enumerate() {
        let delta = td_error(mdp, features, w, y);
        let x = features.matrix().row(y.0);
        h.row_mut(i).copy_from(&(x * delta));
    }
    h
}

/// `Σ_y η(y) α H(w, y)`, summed transition by transition.
pub fn mean_field_by_enumeration(
    w: &DVector<f64>,
    alpha: f64,
    pair: &PairChain,
    mdp: &Mdp,
    features: &FeatureMap,
) -> DVector<f64> {
    let mut total = DVector::zeros(features.dim());
    for (&y, &eta) in pair.states.iter().zip(pair.eta.iter()) {
        let delta = td_error(mdp, features, w, y);
        total += features.row(y.0) * (eta * alpha * delta);
    }
    total
}

/// Max-norm of `ν_w - P_Y ν_w - (H_w - 1 (Aw + b)^T)` with `ν_w = H H_w`.
pub fn poisson_residual(
    w: &DVector<f64>,
    pair: &PairChain,
    mdp: &Mdp,
    features: &FeatureMap,
    system: &TdLinearSystem,
) -> Result<f64> {
    let dev = fundamental_matrix(&pair.transition, &pair.eta)?;
    let h_w = update_field(w, pair, mdp, features);
    let nu = &dev * &h_w;
    let g = system.mean_field(w);
    let centered = DMatrix::from_fn(h_w.nrows(), h_w.ncols(), |i, j| h_w[(i, j)] - g[j]);
    Ok((&nu - &pair.transition * &nu - centered).amax())
}

/// `M M^†` with `M = X^T D X`: orthogonal projector onto `range(X^T D X)`.
pub fn gamma_projector(features: &FeatureMap, weights: &DVector<f64>) -> DMatrix<f64> {
    let x = features.matrix();
    let m = x.transpose() * DMatrix::from_diagonal(weights) * x;
    &m * linalg::pseudo_inverse(&m)
}

/// `Γ(w) = X^T D X (X^T D X)^† w`.
pub fn gamma_projection(
    w: &DVector<f64>,
    features: &FeatureMap,
    weights: &DVector<f64>,
) -> DVector<f64> {
    gamma_projector(features, weights) * w
}

/// Linear-growth constant: `max_y ‖x(s)‖ (|r(s,a)| + γ‖x(s')‖ + ‖x(s)‖)`,
/// so that `‖H(w, y)‖ ≤ K₁ (1 + ‖w‖)`.
pub fn linear_growth_constant(pair: &PairChain, mdp: &Mdp, features: &FeatureMap) -> f64 {
    pair.states
        .iter()
        .map(|&(s, a, s_next)| {
            let xs = features.row(s).norm();
            xs * (mdp.reward(s, a).abs() + mdp.discount() * features.row(s_next).norm() + xs)
        })
        .fold(0.0, f64::max)
}

/// Lipschitz constants `L(y) = ‖x(s)‖ ‖γ x(s') - x(s)‖` of `w ↦ H(w, y)`.
pub fn lipschitz_table(pair: &PairChain, mdp: &Mdp, features: &FeatureMap) -> Vec<f64> {
    pair.states
        .iter()
        .map(|&(s, _, s_next)| {
            let x = features.row(s);
            let diff = features.row(s_next) * mdp.discount() - &x;
            x.norm() * diff.norm()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
#[serde(transparent)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    fn push(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(AssumptionCheck {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn check_assumptions(
    mdp: &Mdp,
    policy: &Policy,
    features: &FeatureMap,
    schedule: &LearningRateSchedule,
) -> AssumptionReport {
    let mut report = AssumptionReport::default();
    report.push(
        "learning_rate",
        schedule.satisfies_step_size_conditions(),
        format!(
            "alpha_t = {} / (t+1)^{}; requires alpha0 > 0 and p in (0.5, 1]",
            schedule.alpha0, schedule.p
        ),
    );

    let chain = match markov::induce_chain(mdp, policy) {
        Ok(chain) => {
            report.push("irreducible_chain", true, "support graph of P_pi is strongly connected");
            chain
        }
        Err(e) => {
            report.push("irreducible_chain", false, e.to_string());
            return report;
        }
    };
    if features.n_states() != mdp.n_states() {
        report.push(
            "feature_dimensions",
            false,
            format!("{} feature rows for {} states", features.n_states(), mdp.n_states()),
        );
        return report;
    }

    let pair = match build_pair_chain(mdp, policy, &chain) {
        Ok(pair) => {
            report.push(
                "irreducible_pair_chain",
                true,
                format!("{} transitions with positive probability", pair.len()),
            );
            pair
        }
        Err(e) => {
            report.push("irreducible_pair_chain", false, e.to_string());
            return report;
        }
    };

    let k1 = linear_growth_constant(&pair, mdp, features);
    report.push(
        "linear_growth",
        k1.is_finite(),
        format!("||H(w,y)|| <= K1 (1 + ||w||) with K1 = {k1:.6e}"),
    );

    let lipschitz = lipschitz_table(&pair, mdp, features);
    let l_max = lipschitz.iter().copied().fold(0.0, f64::max);
    let table = pair
        .states
        .iter()
        .zip(&lipschitz)
        .map(|(&(s, a, s_next), l)| format!("({s},{a},{s_next}):{l:.6e}"))
        .collect::<Vec<_>>()
        .join(" ");
    report.push(
        "lipschitz_field",
        lipschitz.iter().all(|l| l.is_finite()),
        format!("max L = {l_max:.6e}; {table}"),
    );

    match TdLinearSystem::build(&chain, features) {
        Ok(system) => {
            let sym = ode::max_symmetric_eigenvalue(&system.a);
            let max_re = ode::eigenvalues(&system.a)
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * (1.0 + system.a.norm());
            report.push(
                "a_negative_semidefinite",
                sym <= tol && max_re <= 1e-10,
                format!("max eig of sym(A) = {sym:.3e}, max Re(lambda) = {max_re:.3e}"),
            );
        }
        Err(e) => report.push("a_negative_semidefinite", false, e.to_string()),
    }

    let n = chain.n_states();
    let m = chain.d_matrix() * (chain.transition() * chain.gamma() - DMatrix::identity(n, n));
    let top = ode::max_symmetric_eigenvalue(&m);
    report.push(
        "d_bellman_negative_definite",
        top < 0.0,
        format!("max eig of sym(D(gamma P - I)) = {top:.3e}"),
    );
    report
}
