//! Finite MDPs, policies and the Markov chain a fixed policy induces.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Row-sum tolerance for transition and policy tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Entries at or below this value are not edges of the support graph.
pub const SUPPORT_EPS: f64 = 1e-15;

/// A finite MDP with deterministic rewards `r(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    /// `transition[a][(s, s')] = p(s' | s, a)`.
    transition: Vec<DMatrix<f64>>,
    /// `reward[(s, a)] = r(s, a)`.
    reward: DMatrix<f64>,
    discount: f64,
}

impl Mdp {
    /// Builds an MDP from one `|S|×|S|` transition matrix per action and an
    /// `|S|×|A|` reward table.
    pub fn new(transition: Vec<DMatrix<f64>>, reward: DMatrix<f64>, discount: f64) -> Result<Self> {
        if transition.is_empty() {
            return Err(Error::InvalidParameter("MDP needs at least one action".into()));
        }
        let n = transition[0].nrows();
        if n == 0 {
            return Err(Error::InvalidParameter("MDP needs at least one state".into()));
        }
        for (a, p) in transition.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "transition matrix",
                    expected: n,
                    actual: if p.nrows() != n { p.nrows() } else { p.ncols() },
                });
            }
            check_stochastic_rows(p, "transition").map_err(|e| match e {
                Error::InvalidStochastic { row, detail, .. } => Error::InvalidStochastic {
                    what: "transition",
                    row,
                    detail: format!("action {a}: {detail}"),
                },
                other => other,
            })?;
        }
        if reward.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "reward rows",
                expected: n,
                actual: reward.nrows(),
            });
        }
        if reward.ncols() != transition.len() {
            return Err(Error::DimensionMismatch {
                context: "reward columns",
                expected: transition.len(),
                actual: reward.ncols(),
            });
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter("rewards must be finite".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        Ok(Self {
            transition,
            reward,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.reward.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.transition.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `p(s' | s, a)`.
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[a][(s, s_next)]
    }

    pub fn transition(&self, a: usize) -> &DMatrix<f64> {
        &self.transition[a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[(s, a)]
    }

    pub fn rewards(&self) -> &DMatrix<f64> {
        &self.reward
    }

    /// Same dynamics, rewards multiplied by `scale`.
    pub fn with_reward_scale(&self, scale: f64) -> Self {
        Self {
            transition: self.transition.clone(),
            reward: &self.reward * scale,
            discount: self.discount,
        }
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(self.transition.clone(), self.reward.clone(), discount)
    }
}

/// A stationary stochastic policy `π(a | s)`, stored as an `|S|×|A|` table.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::InvalidParameter("policy table is empty".into()));
        }
        check_stochastic_rows(&probs, "policy")?;
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }
}

/// The chain `{S_t}` induced by a policy, with its stationary law `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyChain {
    p: DMatrix<f64>,
    r: DVector<f64>,
    mu: DVector<f64>,
    gamma: f64,
}

impl PolicyChain {
    /// Builds a chain directly from `P_π`, `r_π` and `γ`.
    pub fn from_parts(p: DMatrix<f64>, r: DVector<f64>, gamma: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::DimensionMismatch {
                context: "P_pi must be square",
                expected: p.nrows(),
                actual: p.ncols(),
            });
        }
        if r.len() != p.nrows() {
            return Err(Error::DimensionMismatch {
                context: "r_pi length",
                expected: p.nrows(),
                actual: r.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in [0, 1), got {gamma}"
            )));
        }
        check_stochastic_rows(&p, "P_pi")?;
        if !check_irreducible(&p) {
            return Err(Error::NotIrreducible);
        }
        let mu = stationary_distribution(&p)?;
        Ok(Self { p, r, mu, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.p.nrows()
    }

    /// `P_π`.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// `r_π`.
    pub fn reward(&self) -> &DVector<f64> {
        &self.r
    }

    /// Stationary distribution `μ`.
    pub fn stationary(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `D = diag(μ)`.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.mu)
    }

    /// Bellman operator `T v = r_π + γ P_π v`.
    pub fn bellman_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n_states() {
            return Err(Error::DimensionMismatch {
                context: "value vector",
                expected: self.n_states(),
                actual: v.len(),
            });
        }
        Ok(&self.r + (&self.p * v) * self.gamma)
    }

    /// `v_π`, the solution of `(I - γ P_π) v = r_π`.
    pub fn true_value(&self) -> Result<DVector<f64>> {
        let n = self.n_states();
        let m = DMatrix::identity(n, n) - &self.p * self.gamma;
        m.lu()
            .solve(&self.r)
            .ok_or(Error::SingularSystem("I - gamma P_pi"))
    }
}

/// `P_π(s, s') = Σ_a π(a|s) p(s'|s,a)` and `r_π(s) = Σ_a π(a|s) r(s,a)`.
pub fn induce_chain(mdp: &Mdp, policy: &Policy) -> Result<PolicyChain> {
    let n = mdp.n_states();
    if policy.n_states() != n {
        return Err(Error::DimensionMismatch {
            context: "policy states",
            expected: n,
            actual: policy.n_states(),
        });
    }
    if policy.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            context: "policy actions",
            expected: mdp.n_actions(),
            actual: policy.n_actions(),
        });
    }
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pi = policy.prob(s, a);
            if pi == 0.0 {
                continue;
            }
            r[s] += pi * mdp.reward(s, a);
            for s_next in 0..n {
                p[(s, s_next)] += pi * mdp.prob(s, a, s_next);
            }
        }
    }
    PolicyChain::from_parts(p, r, mdp.discount())
}

/// True iff the support graph of `p` is strongly connected.
pub fn check_irreducible(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return false;
    }
    let forward = reachable(n, |i, j| p[(i, j)] > SUPPORT_EPS);
    let backward = reachable(n, |i, j| p[(j, i)] > SUPPORT_EPS);
    forward.iter().all(|&b| b) && backward.iter().all(|&b| b)
}

fn reachable(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Stationary law of an irreducible chain: the null vector of `P^T - I`,
/// normalized to sum one.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let m = p.transpose() - DMatrix::identity(n, n);
    let svd = linalg::svd(&m);
    let mut mu: DVector<f64> = svd.v.column(n - 1).into_owned();
    let total = mu.sum();
    if total.abs() < f64::EPSILON {
        return Err(Error::NotIrreducible);
    }
    mu /= total;
    if mu.iter().any(|&x| x <= 0.0) {
        return Err(Error::NotIrreducible);
    }
    let residual = (p.transpose() * &mu - &mu).amax();
    if residual > 1e-10 {
        return Err(Error::NotIrreducible);
    }
    Ok(mu)
}

fn check_stochastic_rows(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    for (row, r) in m.row_iter().enumerate() {
        if let Some(bad) = r.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidStochastic {
                what,
                row,
                detail: format!("entry {bad} is negative or non-finite"),
            });
        }
        let sum = r.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidStochastic {
                what,
                row,
                detail: format!("row sums to {sum}"),
            });
        }
    }
    Ok(())
}
