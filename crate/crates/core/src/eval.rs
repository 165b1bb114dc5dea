//! Exact long-run evaluation of stationary tabular policies.

use nalgebra::{DMatrix, DVector};

use crate::dual::{lagrangian_reward_unchecked, DualState};
use crate::env::{Environment, TabularCmdp};
use crate::policy::TabularPolicy;
use crate::{Error, Result};

/// Stationary quantities of a policy on a unichain MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyEvaluation {
    /// Stationary state distribution.
    pub stationary: Vec<f64>,
    /// Occupation measure `ρ(s, j)`, indexed like the action lists.
    pub occupation: Vec<Vec<f64>>,
    /// Ergodic averages `V_0..V_m`.
    pub values: Vec<f64>,
}

impl PolicyEvaluation {
    /// `V_0 + Σ λ_i (V_i − c_i)`.
    pub fn lagrangian(&self, lambda: &DualState, thresholds: &[f64]) -> f64 {
        lagrangian_reward_unchecked(&self.values, lambda.as_slice(), thresholds)
    }

    /// `min_i (V_i − c_i)`.
    pub fn feasibility_margin(&self, thresholds: &[f64]) -> f64 {
        self.values[1..]
            .iter()
            .zip(thresholds)
            .map(|(v, c)| v - c)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solves `μ P_π = μ`, `Σ μ = 1` on the states reachable from the start
/// state, by LU with one balance row replaced by the normalization (the
/// balance rows are linearly dependent). Unreachable states get mass zero,
/// so policies that are multichain on the full state space but unichain from
/// the start state evaluate to their long-run averages from that start.
pub fn evaluate_policy(mdp: &TabularCmdp, policy: &TabularPolicy) -> Result<PolicyEvaluation> {
    policy.check_shape(mdp)?;
    let n = mdp.n_states();
    let reachable = reachable_states(mdp, policy);
    let index: Vec<Option<usize>> = {
        let mut idx = vec![None; n];
        for (k, &s) in reachable.iter().enumerate() {
            idx[s] = Some(k);
        }
        idx
    };
    let r = reachable.len();
    let mut a = DMatrix::<f64>::zeros(r, r);
    for (k, &s) in reachable.iter().enumerate() {
        for (j, &pj) in policy.action_law(s).iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            for (t, &p) in mdp.transition_row(s, j).iter().enumerate() {
                if let Some(kt) = index[t] {
                    // row t of (P^T − I)
                    a[(kt, k)] += pj * p;
                }
            }
        }
        a[(k, k)] -= 1.0;
    }
    for k in 0..r {
        a[(r - 1, k)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(r);
    b[r - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidEnvironment("policy is not unichain: singular balance equations".into()))?;
    let mut stationary = vec![0.0; n];
    for (k, &s) in reachable.iter().enumerate() {
        stationary[s] = if mu[k].abs() < 1e-15 { 0.0 } else { mu[k] };
    }

    let m = mdp.num_constraints();
    let mut values = vec![0.0; m + 1];
    let mut occupation = Vec::with_capacity(n);
    for (s, &mu_s) in stationary.iter().enumerate() {
        let row: Vec<f64> = policy.action_law(s).iter().map(|p| mu_s * p).collect();
        for (j, &rho) in row.iter().enumerate() {
            for (v, r) in values.iter_mut().zip(mdp.reward_row(s, j)) {
                *v += rho * r;
            }
        }
        occupation.push(row);
    }
    Ok(PolicyEvaluation {
        stationary,
        occupation,
        values,
    })
}

/// States reachable from the start state under `policy`, in increasing order.
fn reachable_states(mdp: &TabularCmdp, policy: &TabularPolicy) -> Vec<usize> {
    let n = mdp.n_states();
    let mut seen = vec![false; n];
    let mut stack = vec![mdp.start()];
    seen[mdp.start()] = true;
    while let Some(s) = stack.pop() {
        for (j, &pj) in policy.action_law(s).iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            for (t, &p) in mdp.transition_row(s, j).iter().enumerate() {
                if p > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    (0..n).filter(|&s| seen[s]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{R0, R1};

    #[test]
    fn uniform_policy_is_symmetric() {
        let mdp = TabularCmdp::monitoring(1.0 / 3.0, 1.0 / 3.0);
        let ev = evaluate_policy(&mdp, &TabularPolicy::uniform(&mdp)).unwrap();
        for s in 0..3 {
            assert!((ev.stationary[s] - 1.0 / 3.0).abs() < 1e-12);
            assert!((ev.values[s] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(ev.feasibility_margin(&[1.0 / 3.0, 1.0 / 3.0]).abs() < 1e-12);
    }

    #[test]
    fn stay_policy_pins_the_chain() {
        let mdp = TabularCmdp::monitoring(1.0 / 3.0, 1.0 / 3.0);
        // R0 -> R1, R1 stays, R2 -> R0
        let pi = TabularPolicy::from_labels(&mdp, &[R1, R1, R0]).unwrap();
        let ev = evaluate_policy(&mdp, &pi).unwrap();
        assert_eq!(ev.stationary, vec![0.0, 1.0, 0.0]);
        let l = DualState::new(vec![2.0, 0.0]).unwrap();
        assert!((ev.lagrangian(&l, &[1.0 / 3.0, 1.0 / 3.0]) - 4.0 / 3.0).abs() < 1e-12);
    }
}
