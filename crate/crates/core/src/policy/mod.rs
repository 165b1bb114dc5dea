//! Policies over the augmented state `(s, λ)`.

mod rbf;
mod tabular;

use rand::Rng;

pub use rbf::{RbfLayout, RbfPolicy};
pub use tabular::{
    deterministic_policies, solve_lagrangian_tabular, ExactMaximizer, LagrangianSolveReport, TabularPolicy,
    RVI_MAX_SWEEPS, RVI_TOLERANCE, TIE_TOLERANCE,
};

use crate::dual::DualState;
use crate::env::{sample_index, ContinuousMonitoringEnv, Environment, TabularCmdp};
use crate::Result;

/// A policy that acts on the augmented state `(s, λ)`.
pub trait AugmentedPolicy<E: Environment> {
    fn act<R: Rng + ?Sized>(&mut self, env: &E, state: &E::State, lambda: &DualState, rng: &mut R) -> Result<E::Action>;

    /// Action distribution at `state`, when the policy is tabular.
    fn action_law(&mut self, _env: &E, _state: &E::State, _lambda: &DualState) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Tabular policies expose their action distribution, indexed like the
/// MDP's action list at `state`.
pub trait TabularLaw {
    fn law(&mut self, mdp: &TabularCmdp, state: usize, lambda: &DualState) -> Result<Vec<f64>>;
}

impl<T: TabularLaw> AugmentedPolicy<TabularCmdp> for T {
    fn act<R: Rng + ?Sized>(&mut self, env: &TabularCmdp, state: &usize, lambda: &DualState, rng: &mut R) -> Result<usize> {
        let law = self.law(env, *state, lambda)?;
        let j = match law.iter().position(|&p| p == 1.0) {
            Some(j) => j,
            None => sample_index(&law, rng),
        };
        Ok(env.actions(*state)[j])
    }

    fn action_law(&mut self, env: &TabularCmdp, state: &usize, lambda: &DualState) -> Result<Option<Vec<f64>>> {
        self.law(env, *state, lambda).map(Some)
    }
}

impl TabularLaw for TabularPolicy {
    fn law(&mut self, _mdp: &TabularCmdp, state: usize, _lambda: &DualState) -> Result<Vec<f64>> {
        Ok(TabularPolicy::action_law(self, state).to_vec())
    }
}

impl AugmentedPolicy<ContinuousMonitoringEnv> for RbfPolicy {
    fn act<R: Rng + ?Sized>(
        &mut self,
        _env: &ContinuousMonitoringEnv,
        state: &[f64; 2],
        lambda: &DualState,
        rng: &mut R,
    ) -> Result<[f64; 2]> {
        self.sample_action(*state, lambda.as_slice(), rng)
    }
}
