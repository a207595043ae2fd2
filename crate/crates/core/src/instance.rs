use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fixed_points::{self, FixedPointSet, TdLinearSystem};
use crate::linalg::{self, FeatureMap, Projector};
use crate::markov::{self, Mdp, Policy, PolicyChain};

/// Everything derived from an (MDP, policy, features) triple.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mdp: Mdp,
    pub policy: Policy,
    pub chain: PolicyChain,
    pub features: FeatureMap,
    pub projector: Projector,
    pub system: TdLinearSystem,
    pub fixed_points: FixedPointSet,
}

impl Instance {
    pub fn new(mdp: Mdp, policy: Policy, features: FeatureMap) -> Result<Self> {
        if features.n_states() != mdp.n_states() {
            return Err(Error::DimensionMismatch {
                context: "feature rows",
                expected: mdp.n_states(),
                actual: features.n_states(),
            });
        }
        let chain = markov::induce_chain(&mdp, &policy)?;
        let projector = linalg::projection_matrix(&features, chain.stationary());
        let system = TdLinearSystem::build(&chain, &features)?;
        let fixed_points = fixed_points::solve_fixed_points(&system, &features, &projector, &chain)?;
        Ok(Self {
            mdp,
            policy,
            chain,
            features,
            projector,
            system,
            fixed_points,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.chain.gamma()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// `‖Xw - v_*‖_D`.
    pub fn value_error(&self, w: &DVector<f64>) -> f64 {
        linalg::d_norm(
            &(self.features.value(w) - &self.fixed_points.v_star),
            self.chain.stationary(),
        )
    }

    /// `‖Xw - v_*‖_∞`.
    pub fn value_error_sup(&self, w: &DVector<f64>) -> f64 {
        (self.features.value(w) - &self.fixed_points.v_star).amax()
    }

    pub fn mspbe(&self, w: &DVector<f64>) -> f64 {
        fixed_points::mspbe(w, &self.features, &self.projector, &self.chain)
            .expect("dimensions fixed at construction")
    }

    pub fn check_equivalence(&self, w: &DVector<f64>) -> (f64, f64) {
        fixed_points::check_equivalence(w, &self.system, &self.features, &self.projector, &self.chain)
            .expect("dimensions fixed at construction")
    }
}
