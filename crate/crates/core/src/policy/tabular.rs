use crate::dual::{lagrangian_reward_unchecked, DualState};
use crate::env::{Environment, TabularCmdp};
use crate::{Error, Result};

use super::TabularLaw;

/// Stopping tolerance on the span of successive value differences.
pub const RVI_TOLERANCE: f64 = 1e-10;
pub const RVI_MAX_SWEEPS: usize = 100_000;
/// Q-values within this distance of the maximum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Self-loop mixing used to make every policy aperiodic; it leaves gains and
/// optimal policies unchanged.
const APERIODICITY: f64 = 0.5;

/// Per-state distributions over the admissible actions, indexed like the
/// MDP's action lists.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            if row.is_empty() || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("state {s}: invalid probabilities {row:?}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidPolicy(format!("state {s}: probabilities sum to {total}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(mdp: &TabularCmdp) -> Self {
        let probs = (0..mdp.n_states())
            .map(|s| {
                let n = mdp.actions(s).len();
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self { probs }
    }

    /// Deterministic policy choosing action position `choices[s]`.
    pub fn deterministic(mdp: &TabularCmdp, choices: &[usize]) -> Result<Self> {
        if choices.len() != mdp.n_states() {
            return Err(Error::DimensionMismatch {
                context: "deterministic policy",
                expected: mdp.n_states(),
                got: choices.len(),
            });
        }
        let probs = choices
            .iter()
            .enumerate()
            .map(|(s, &j)| {
                let n = mdp.actions(s).len();
                if j >= n {
                    return Err(Error::InadmissibleAction { state: s, action: j });
                }
                let mut row = vec![0.0; n];
                row[j] = 1.0;
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self { probs })
    }

    /// Deterministic policy given by action labels rather than positions.
    pub fn from_labels(mdp: &TabularCmdp, labels: &[usize]) -> Result<Self> {
        let choices = labels
            .iter()
            .enumerate()
            .map(|(s, &a)| mdp.action_index(s, a))
            .collect::<Result<Vec<_>>>()?;
        Self::deterministic(mdp, &choices)
    }

    pub fn action_law(&self, state: usize) -> &[f64] {
        &self.probs[state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// Probability of action label `action` in `state`.
    pub fn prob_of(&self, mdp: &TabularCmdp, state: usize, action: usize) -> f64 {
        mdp.action_index(state, action)
            .map(|j| self.probs[state][j])
            .unwrap_or(0.0)
    }

    pub(crate) fn check_shape(&self, mdp: &TabularCmdp) -> Result<()> {
        if self.probs.len() != mdp.n_states() {
            return Err(Error::DimensionMismatch {
                context: "policy states",
                expected: mdp.n_states(),
                got: self.probs.len(),
            });
        }
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != mdp.actions(s).len() {
                return Err(Error::DimensionMismatch {
                    context: "policy actions",
                    expected: mdp.actions(s).len(),
                    got: row.len(),
                });
            }
        }
        Ok(())
    }
}

/// Every stationary deterministic policy of `mdp`, in lexicographic order of
/// action positions (last state varies fastest).
pub fn deterministic_policies(mdp: &TabularCmdp) -> impl Iterator<Item = TabularPolicy> + '_ {
    let widths: Vec<usize> = (0..mdp.n_states()).map(|s| mdp.actions(s).len()).collect();
    let total = mdp.deterministic_policy_count();
    (0..total).map(move |mut code| {
        let mut choices = vec![0; widths.len()];
        for s in (0..widths.len()).rev() {
            choices[s] = code % widths[s];
            code /= widths[s];
        }
        TabularPolicy::deterministic(mdp, &choices).expect("choices are in range")
    })
}

/// A gain-optimal deterministic policy for the reward `r_λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianSolveReport {
    pub policy: TabularPolicy,
    /// Average reward of `r_λ` under `policy`; equals `d(λ)`.
    pub gain: f64,
    /// Differential values relative to state 0.
    pub bias: Vec<f64>,
    /// Positions of the maximizing actions in each state.
    pub argmax_sets: Vec<Vec<usize>>,
    /// True when some state has two or more maximizing actions.
    pub maximizer_multiplicity: bool,
    pub sweeps: usize,
}

/// Relative value iteration on the average-reward MDP with reward `r_λ`.
///
/// Ties are broken toward the lowest action position.
pub fn solve_lagrangian_tabular(mdp: &TabularCmdp, lambda: &DualState) -> Result<LagrangianSolveReport> {
    let m = mdp.num_constraints();
    if lambda.len() != m {
        return Err(Error::DimensionMismatch {
            context: "lagrangian solve",
            expected: m,
            got: lambda.len(),
        });
    }
    let n = mdp.n_states();
    let c = mdp.thresholds();
    let r: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mdp.actions(s).len())
                .map(|j| lagrangian_reward_unchecked(mdp.reward_row(s, j), lambda.as_slice(), c))
                .collect()
        })
        .collect();

    let q_values = |h: &[f64]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|s| {
                r[s].iter()
                    .enumerate()
                    .map(|(j, rsj)| {
                        let next: f64 = mdp.transition_row(s, j).iter().zip(h).map(|(p, v)| p * v).sum();
                        rsj + APERIODICITY * next + (1.0 - APERIODICITY) * h[s]
                    })
                    .collect()
            })
            .collect()
    };

    let mut h = vec![0.0; n];
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    let mut gain = 0.0;
    while sweeps < RVI_MAX_SWEEPS {
        sweeps += 1;
        let q = q_values(&h);
        let th: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let (lo, hi) = th
            .iter()
            .zip(&h)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        residual = hi - lo;
        gain = 0.5 * (hi + lo);
        let anchor = th[0];
        h = th.iter().map(|v| v - anchor).collect();
        if residual < RVI_TOLERANCE {
            break;
        }
    }
    if residual >= RVI_TOLERANCE {
        return Err(Error::NotConverged {
            iterations: sweeps,
            residual,
        });
    }

    let q = q_values(&h);
    let mut choices = Vec::with_capacity(n);
    let mut argmax_sets = Vec::with_capacity(n);
    for row in &q {
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let set: Vec<usize> = (0..row.len()).filter(|&j| row[j] >= best - TIE_TOLERANCE).collect();
        choices.push(set[0]);
        argmax_sets.push(set);
    }
    let maximizer_multiplicity = argmax_sets.iter().any(|s| s.len() > 1);
    Ok(LagrangianSolveReport {
        policy: TabularPolicy::deterministic(mdp, &choices)?,
        gain,
        bias: h.iter().map(|v| v * APERIODICITY).collect(),
        argmax_sets,
        maximizer_multiplicity,
        sweeps,
    })
}

/// Exact Lagrangian maximizer `π(λ)`, re-solved whenever `λ` changes.
#[derive(Clone, Debug, Default)]
pub struct ExactMaximizer {
    cache: Option<(DualState, LagrangianSolveReport)>,
}

impl ExactMaximizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn report(&mut self, mdp: &TabularCmdp, lambda: &DualState) -> Result<&LagrangianSolveReport> {
        let stale = self.cache.as_ref().map_or(true, |(l, _)| l != lambda);
        if stale {
            let report = solve_lagrangian_tabular(mdp, lambda)?;
            self.cache = Some((lambda.clone(), report));
        }
        Ok(&self.cache.as_ref().expect("cache filled above").1)
    }
}

impl TabularLaw for ExactMaximizer {
    fn law(&mut self, mdp: &TabularCmdp, state: usize, lambda: &DualState) -> Result<Vec<f64>> {
        Ok(self.report(mdp, lambda)?.policy.action_law(state).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{R0, R1, R2};
    use crate::eval::evaluate_policy;

    const C: f64 = 1.0 / 3.0;

    fn mdp() -> TabularCmdp {
        TabularCmdp::monitoring(C, C)
    }

    fn lam(a: f64, b: f64) -> DualState {
        DualState::new(vec![a, b]).unwrap()
    }

    /// Brute force over the 8 deterministic policies.
    fn best_deterministic_gain(mdp: &TabularCmdp, lambda: &DualState) -> f64 {
        deterministic_policies(mdp)
            .map(|pi| evaluate_policy(mdp, &pi).unwrap().lagrangian(lambda, mdp.thresholds()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn enumerates_eight_policies() {
        assert_eq!(deterministic_policies(&mdp()).count(), 8);
    }

    #[test]
    fn small_multipliers_return_to_r0() {
        let mdp = mdp();
        let rep = solve_lagrangian_tabular(&mdp, &lam(0.5, 0.5)).unwrap();
        assert_eq!(rep.policy.prob_of(&mdp, R1, R0), 1.0);
        assert_eq!(rep.policy.prob_of(&mdp, R2, R0), 1.0);
        assert_eq!(rep.argmax_sets[R0], vec![0, 1]);
        assert!(rep.maximizer_multiplicity);
        // half the time at R0, a quarter at each region
        let expected = 0.5 + 0.5 * 0.25 * 2.0 - 0.5 * C * 2.0;
        assert!((rep.gain - expected).abs() < 1e-9, "{}", rep.gain);
    }

    #[test]
    fn dominant_multiplier_stays_in_its_region() {
        let mdp = mdp();
        let rep = solve_lagrangian_tabular(&mdp, &lam(2.0, 0.0)).unwrap();
        assert_eq!(rep.policy.prob_of(&mdp, R1, R1), 1.0);
        assert_eq!(rep.policy.prob_of(&mdp, R0, R1), 1.0);
        assert!((rep.gain - 4.0 / 3.0).abs() < 1e-9);
        let exact = evaluate_policy(&mdp, &rep.policy).unwrap().lagrangian(&lam(2.0, 0.0), mdp.thresholds());
        assert!((exact - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unit_multipliers_make_every_policy_optimal() {
        let rep = solve_lagrangian_tabular(&mdp(), &lam(1.0, 1.0)).unwrap();
        assert!(rep.maximizer_multiplicity);
        assert!(rep.argmax_sets.iter().all(|s| s.len() == 2));
        assert!((rep.gain - C).abs() < 1e-9);
    }

    #[test]
    fn argmax_partition_over_lambda_grid() {
        let mdp = mdp();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        for &l1 in &grid {
            for &l2 in &grid {
                let boundary = |a: f64, b: f64| (a - b).abs() < 1e-9;
                if boundary(l1, 1.0) || boundary(l2, 1.0) || boundary(l1, l2) {
                    continue;
                }
                let rep = solve_lagrangian_tabular(&mdp, &lam(l1, l2)).unwrap();
                let pi = &rep.policy;
                if l1 < 1.0 && l2 < 1.0 {
                    assert_eq!(pi.prob_of(&mdp, R1, R0), 1.0, "({l1}, {l2})");
                    assert_eq!(pi.prob_of(&mdp, R2, R0), 1.0, "({l1}, {l2})");
                } else if l1 > 1.0 && l1 > l2 {
                    assert_eq!(pi.prob_of(&mdp, R1, R1), 1.0, "({l1}, {l2})");
                    assert_eq!(pi.prob_of(&mdp, R0, R1), 1.0, "({l1}, {l2})");
                } else if l2 > 1.0 && l2 > l1 {
                    assert_eq!(pi.prob_of(&mdp, R2, R2), 1.0, "({l1}, {l2})");
                    assert_eq!(pi.prob_of(&mdp, R0, R2), 1.0, "({l1}, {l2})");
                }
            }
        }
    }

    #[test]
    fn gain_dominates_every_deterministic_policy() {
        let mdp = mdp();
        for (a, b) in [(0.0, 0.0), (0.3, 1.7), (1.2, 0.4), (2.5, 2.5), (0.99, 1.01), (3.0, 0.0)] {
            let l = lam(a, b);
            let rep = solve_lagrangian_tabular(&mdp, &l).unwrap();
            let best = best_deterministic_gain(&mdp, &l);
            assert!(rep.gain >= best - 1e-9, "λ=({a},{b}) gain {} < {best}", rep.gain);
            let own = evaluate_policy(&mdp, &rep.policy).unwrap().lagrangian(&l, mdp.thresholds());
            assert!((own - rep.gain).abs() < 1e-9);
        }
    }

    #[test]
    fn policy_rows_validate() {
        assert!(TabularPolicy::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(TabularPolicy::new(vec![vec![0.5, 0.5], vec![1.0]]).is_ok());
        assert!(TabularPolicy::new(vec![vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn rejects_wrong_multiplier_length() {
        assert!(solve_lagrangian_tabular(&mdp(), &DualState::zeros(3)).is_err());
    }
}
