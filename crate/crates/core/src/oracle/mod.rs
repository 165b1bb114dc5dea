//! Exact answers for tabular constrained MDPs: the occupation-measure linear
//! program, the dual function, and numerical duality certificates.

mod simplex;

pub use simplex::{solve_lp, LinearProgram, LpSolution};

use crate::dual::DualState;
use crate::env::{Environment, TabularCmdp};
use crate::eval::evaluate_policy;
use crate::policy::{deterministic_policies, solve_lagrangian_tabular, TabularPolicy};
use crate::{Error, Result};

/// Tolerance for membership in the maximizer set `Π(λ)`.
pub const MAXIMIZER_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CmdpLpSolution {
    pub p_star: f64,
    /// `ρ(s, j)` indexed like the MDP's action lists.
    pub occupation: Vec<Vec<f64>>,
    /// `π(j | s) = ρ(s, j) / Σ_j ρ(s, j)`; uniform at unvisited states.
    pub policy: TabularPolicy,
    pub unvisited_states: Vec<usize>,
    /// `Σ ρ · r_i` for `i = 0..=m`.
    pub values: Vec<f64>,
}

impl CmdpLpSolution {
    pub fn state_occupation(&self) -> Vec<f64> {
        self.occupation.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Column layout of the occupation variables.
fn pairs(mdp: &TabularCmdp) -> Vec<(usize, usize)> {
    (0..mdp.n_states())
        .flat_map(|s| (0..mdp.actions(s).len()).map(move |j| (s, j)))
        .collect()
}

/// Normalization, flow conservation (last state dropped) and constraint rows.
fn occupation_program(mdp: &TabularCmdp, extra_columns: usize) -> LinearProgram {
    let cols = pairs(mdp);
    let width = cols.len() + extra_columns;
    let n = mdp.n_states();
    let mut equalities = Vec::with_capacity(n);
    let mut norm = vec![0.0; width];
    norm[..cols.len()].fill(1.0);
    equalities.push((norm, 1.0));
    for target in 0..n.saturating_sub(1) {
        let mut row = vec![0.0; width];
        for (k, &(s, j)) in cols.iter().enumerate() {
            if s == target {
                row[k] += 1.0;
            }
            row[k] -= mdp.transition_row(s, j)[target];
        }
        equalities.push((row, 0.0));
    }
    let lower_bounds = (0..mdp.num_constraints())
        .map(|i| {
            let mut row = vec![0.0; width];
            for (k, &(s, j)) in cols.iter().enumerate() {
                row[k] = mdp.reward_row(s, j)[i + 1];
            }
            (row, mdp.thresholds()[i])
        })
        .collect();
    let mut objective = vec![0.0; width];
    for (k, &(s, j)) in cols.iter().enumerate() {
        objective[k] = mdp.reward_row(s, j)[0];
    }
    LinearProgram {
        objective,
        equalities,
        lower_bounds,
    }
}

/// Solves the constrained problem exactly.
///
/// The optimal face is often not a single point. After finding `P*` a second
/// program maximizes the smallest occupation entry over that face, which
/// yields a solution in its relative interior and therefore a policy with
/// the widest support among the optima.
pub fn solve_cmdp_lp(mdp: &TabularCmdp) -> Result<CmdpLpSolution> {
    let cols = pairs(mdp);
    let first = solve_lp(&occupation_program(mdp, 0))?;
    let p_star = first.value;

    let k = cols.len();
    let mut centre = occupation_program(mdp, 1);
    let mut on_face = centre.objective.clone();
    on_face[k] = 0.0;
    centre.lower_bounds.push((on_face, p_star - 1e-12));
    for col in 0..k {
        let mut row = vec![0.0; k + 1];
        row[col] = 1.0;
        row[k] = -1.0;
        centre.lower_bounds.push((row, 0.0));
    }
    centre.objective = vec![0.0; k + 1];
    centre.objective[k] = 1.0;
    let rho = match solve_lp(&centre) {
        Ok(sol) => sol.x[..k].to_vec(),
        Err(_) => first.x.clone(),
    };

    let n = mdp.n_states();
    let mut occupation: Vec<Vec<f64>> = (0..n).map(|s| vec![0.0; mdp.actions(s).len()]).collect();
    for (&(s, j), &v) in cols.iter().zip(&rho) {
        occupation[s][j] = if v.abs() < 1e-14 { 0.0 } else { v };
    }
    let mut unvisited_states = Vec::new();
    let rows = occupation
        .iter()
        .enumerate()
        .map(|(s, r)| {
            let z: f64 = r.iter().sum();
            if z > 1e-12 {
                r.iter().map(|v| v / z).collect()
            } else {
                unvisited_states.push(s);
                vec![1.0 / r.len() as f64; r.len()]
            }
        })
        .collect();
    let mut values = vec![0.0; mdp.num_constraints() + 1];
    for (&(s, j), &v) in cols.iter().zip(&rho) {
        for (acc, r) in values.iter_mut().zip(mdp.reward_row(s, j)) {
            *acc += v * r;
        }
    }
    Ok(CmdpLpSolution {
        p_star,
        occupation,
        policy: TabularPolicy::new(rows)?,
        unvisited_states,
        values,
    })
}

/// `d(λ) = max_π L(π, λ)`, the gain of the exact Lagrangian maximizer.
pub fn dual_function(mdp: &TabularCmdp, lambda: &DualState) -> Result<f64> {
    Ok(solve_lagrangian_tabular(mdp, lambda)?.gain)
}

/// Evaluated dual grid with its minimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct DualFunctionProbe {
    pub points: Vec<(DualState, f64)>,
    pub argmin: DualState,
    pub min: f64,
}

/// Evaluates `d` on every grid point; ties in the minimum go to the first.
pub fn probe_dual(mdp: &TabularCmdp, grid: &[DualState]) -> Result<DualFunctionProbe> {
    let points = grid
        .iter()
        .map(|l| Ok((l.clone(), dual_function(mdp, l)?)))
        .collect::<Result<Vec<_>>>()?;
    let (argmin, min) = points
        .iter()
        .fold(None::<(&DualState, f64)>, |best, (l, d)| match best {
            Some((_, bd)) if bd <= *d => best,
            _ => Some((l, *d)),
        })
        .map(|(l, d)| (l.clone(), d))
        .ok_or_else(|| Error::InvalidConfig("empty multiplier grid".into()))?;
    Ok(DualFunctionProbe { points, argmin, min })
}

/// Square grid `{lo, lo+step, …, ≤ hi}^m`, clipped at zero.
pub fn box_grid(centre: &[f64], half_width: f64, step: f64) -> Result<Vec<DualState>> {
    if !(step > 0.0 && half_width >= 0.0) {
        return Err(Error::InvalidConfig("grid step must be positive".into()));
    }
    let k = (half_width / step + 1e-9).floor() as i64;
    let mut points = vec![Vec::new()];
    for &c in centre {
        let axis: Vec<f64> = (-k..=k).map(|i| c + i as f64 * step).filter(|v| *v >= 0.0).collect();
        points = points
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points.into_iter().map(DualState::new).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrongDualityReport {
    pub p_star: f64,
    pub coarse: DualFunctionProbe,
    pub refined_argmin: DualState,
    pub refined_min: f64,
    /// `min d − P*` after refinement.
    pub gap: f64,
    /// Smallest `d(λ) − P*` over all evaluated points; negative values
    /// beyond tolerance would contradict weak duality.
    pub weak_duality_slack: f64,
    pub evaluations: usize,
}

/// Grid minimization of `d` followed by one refinement at `refine_step`
/// over the coarse cell around the argmin.
pub fn certify_strong_duality(mdp: &TabularCmdp, grid: &[DualState], refine_step: f64) -> Result<StrongDualityReport> {
    let p_star = solve_cmdp_lp(mdp)?.p_star;
    let coarse = probe_dual(mdp, grid)?;
    let coarse_step = grid_spacing(grid).unwrap_or(refine_step);
    let fine_grid = box_grid(coarse.argmin.as_slice(), coarse_step, refine_step)?;
    let fine = probe_dual(mdp, &fine_grid)?;
    let (refined_argmin, refined_min) = if fine.min < coarse.min {
        (fine.argmin.clone(), fine.min)
    } else {
        (coarse.argmin.clone(), coarse.min)
    };
    let weak_duality_slack = coarse
        .points
        .iter()
        .chain(&fine.points)
        .map(|(_, d)| d - p_star)
        .fold(f64::INFINITY, f64::min);
    Ok(StrongDualityReport {
        p_star,
        evaluations: coarse.points.len() + fine.points.len(),
        coarse,
        refined_argmin,
        refined_min,
        gap: refined_min - p_star,
        weak_duality_slack,
    })
}

/// Smallest positive coordinate difference between grid points.
fn grid_spacing(grid: &[DualState]) -> Option<f64> {
    let mut values: Vec<f64> = grid.iter().flat_map(|l| l.as_slice().to_vec()).collect();
    values.sort_by(f64::total_cmp);
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 1e-12)
        .min_by(f64::total_cmp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalRecoveryReport {
    pub lambda_star: DualState,
    pub d_lambda_star: f64,
    /// `L(π*, λ*)` for the LP-optimal policy.
    pub lagrangian_at_optimum: f64,
    /// A deterministic maximizer of `L(·, λ*)` that violates a constraint,
    /// with its constraint values `V_1..V_m`. `None` when every maximizer
    /// examined is feasible.
    pub infeasible_maximizer: Option<(TabularPolicy, Vec<f64>)>,
}

impl PrimalRecoveryReport {
    /// `|L(π*, λ*) − d(λ*)|`.
    pub fn inclusion_error(&self) -> f64 {
        (self.lagrangian_at_optimum - self.d_lambda_star).abs()
    }

    pub fn is_strict(&self) -> bool {
        self.infeasible_maximizer.is_some()
    }

    pub fn describe(&self) -> String {
        let mut s = format!(
            "lambda_star = {:?}\nd(lambda_star) = {:.17e}\nL(pi_star, lambda_star) = {:.17e}\ninclusion_error = {:.3e}\n",
            self.lambda_star.as_slice(),
            self.d_lambda_star,
            self.lagrangian_at_optimum,
            self.inclusion_error()
        );
        match &self.infeasible_maximizer {
            Some((pi, v)) => s.push_str(&format!(
                "strict: yes\ninfeasible maximizer rows = {:?}\nconstraint values = {:?}\n",
                pi.rows(),
                v
            )),
            None => s.push_str("strict: not strict\n"),
        }
        s
    }
}

/// Checks that the constrained optimum maximizes the Lagrangian at `λ*` and
/// searches the deterministic policies for an infeasible maximizer.
pub fn certify_primal_recovery_gap(mdp: &TabularCmdp, lambda_star: &DualState) -> Result<PrimalRecoveryReport> {
    let lp = solve_cmdp_lp(mdp)?;
    let c = mdp.thresholds();
    let d = dual_function(mdp, lambda_star)?;
    let lagrangian_at_optimum = evaluate_policy(mdp, &lp.policy)?.lagrangian(lambda_star, c);

    let mut infeasible_maximizer = None;
    for pi in deterministic_policies(mdp) {
        // multichain policies have no single average value; skip them
        let Ok(ev) = evaluate_policy(mdp, &pi) else { continue };
        if ev.lagrangian(lambda_star, c) >= d - MAXIMIZER_TOLERANCE && ev.feasibility_margin(c) < -MAXIMIZER_TOLERANCE {
            infeasible_maximizer = Some((pi, ev.values[1..].to_vec()));
            break;
        }
    }
    Ok(PrimalRecoveryReport {
        lambda_star: lambda_star.clone(),
        d_lambda_star: d,
        lagrangian_at_optimum,
        infeasible_maximizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{R0, R1, R2};
    use crate::trainer::lambda_grid;

    const C: f64 = 1.0 / 3.0;

    fn dual(a: f64, b: f64) -> DualState {
        DualState::new(vec![a, b]).unwrap()
    }

    #[test]
    fn balanced_thresholds() {
        let mdp = TabularCmdp::monitoring(C, C);
        let sol = solve_cmdp_lp(&mdp).unwrap();
        assert!((sol.p_star - C).abs() < 1e-9);
        for o in sol.state_occupation() {
            assert!((o - C).abs() < 1e-9);
        }
        assert!((sol.policy.prob_of(&mdp, R1, R1) - 0.5).abs() < 1e-9);
        assert!((sol.policy.prob_of(&mdp, R2, R2) - 0.5).abs() < 1e-9);
        assert!(sol.unvisited_states.is_empty());
    }

    #[test]
    fn unconstrained_optimum_is_half() {
        let mdp = TabularCmdp::monitoring(0.0, 0.0);
        let sol = solve_cmdp_lp(&mdp).unwrap();
        assert!((sol.p_star - 0.5).abs() < 1e-9);
    }

    #[test]
    fn oversubscribed_thresholds_are_infeasible() {
        let mdp = TabularCmdp::monitoring(0.6, 0.6);
        assert!(matches!(solve_cmdp_lp(&mdp), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn lp_matches_best_deterministic_gain_without_constraints() {
        let mdp = TabularCmdp::monitoring(0.0, 0.0);
        let best = deterministic_policies(&mdp)
            .filter_map(|p| evaluate_policy(&mdp, &p).ok())
            .map(|e| e.values[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((solve_cmdp_lp(&mdp).unwrap().p_star - best).abs() < 1e-9);
    }

    #[test]
    fn occupation_satisfies_flow_and_normalization() {
        for (c1, c2) in [(C, C), (0.1, 0.4), (0.0, 0.0), (0.45, 0.1)] {
            let mdp = TabularCmdp::monitoring(c1, c2);
            let sol = solve_cmdp_lp(&mdp).unwrap();
            let total: f64 = sol.occupation.iter().flatten().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for target in 0..mdp.n_states() {
                let out: f64 = sol.occupation[target].iter().sum();
                let inflow: f64 = (0..mdp.n_states())
                    .flat_map(|s| (0..mdp.actions(s).len()).map(move |j| (s, j)))
                    .map(|(s, j)| sol.occupation[s][j] * mdp.transition_row(s, j)[target])
                    .sum();
                assert!((out - inflow).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lp_policy_round_trips_through_evaluation() {
        for (c1, c2) in [(C, C), (0.1, 0.4), (0.2, 0.2)] {
            let mdp = TabularCmdp::monitoring(c1, c2);
            let sol = solve_cmdp_lp(&mdp).unwrap();
            let ev = evaluate_policy(&mdp, &sol.policy).unwrap();
            for (a, b) in ev.values.iter().zip(&sol.values) {
                assert!((a - b).abs() < 1e-9, "{c1} {c2}: {:?} vs {:?}", ev.values, sol.values);
            }
        }
    }

    #[test]
    fn dual_function_values() {
        let mdp = TabularCmdp::monitoring(C, C);
        assert!((dual_function(&mdp, &dual(0.0, 0.0)).unwrap() - 0.5).abs() < 1e-9);
        assert!((dual_function(&mdp, &dual(1.0, 1.0)).unwrap() - C).abs() < 1e-9);
        assert!((dual_function(&mdp, &dual(2.0, 0.0)).unwrap() - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn weak_duality_and_convexity_on_a_grid() {
        let mdp = TabularCmdp::monitoring(C, C);
        let grid = lambda_grid(2, 0.25, 3.0).unwrap();
        let probe = probe_dual(&mdp, &grid).unwrap();
        for (_, d) in &probe.points {
            assert!(*d >= C - 1e-9);
        }
        let n = probe.points.len();
        for k in 0..100 {
            let (la, da) = &probe.points[(k * 37) % n];
            let (lb, db) = &probe.points[(k * 91 + 5) % n];
            let mid: Vec<f64> = la.as_slice().iter().zip(lb.as_slice()).map(|(a, b)| 0.5 * (a + b)).collect();
            let dm = dual_function(&mdp, &DualState::new(mid).unwrap()).unwrap();
            assert!(dm <= 0.5 * (da + db) + 1e-9);
        }
    }

    #[test]
    fn box_grid_clips_at_zero() {
        let g = box_grid(&[0.0, 1.0], 0.1, 0.05).unwrap();
        assert_eq!(g.len(), 3 * 5);
        assert!(g.iter().all(|l| l.as_slice()[0] >= 0.0));
    }

    #[test]
    fn recovery_certificates() {
        let mdp = TabularCmdp::monitoring(C, C);
        let rep = certify_primal_recovery_gap(&mdp, &dual(1.0, 1.0)).unwrap();
        assert!(rep.inclusion_error() < 1e-9);
        let (_, v) = rep.infeasible_maximizer.clone().expect("strict inclusion");
        assert!(v.iter().any(|x| *x < C - 1e-9));

        // the stay-at-R_1 policy is one such maximizer
        let stay = TabularPolicy::from_labels(&mdp, &[R1, R1, R0]).unwrap();
        let ev = evaluate_policy(&mdp, &stay).unwrap();
        assert!((ev.lagrangian(&dual(1.0, 1.0), mdp.thresholds()) - C).abs() < 1e-9);
        assert_eq!(ev.values[2], 0.0);
        let _ = R2;
    }

    #[test]
    fn slack_constraints_are_not_strict() {
        let mdp = TabularCmdp::monitoring(0.0, 0.0);
        let rep = certify_primal_recovery_gap(&mdp, &DualState::zeros(2)).unwrap();
        assert!(rep.inclusion_error() < 1e-9);
        assert!(!rep.is_strict());
        assert!(rep.describe().contains("not strict"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

        #[test]
        fn lp_invariants_hold_for_feasible_thresholds(c1 in 0.0..0.45f64, c2 in 0.0..0.45f64, l1 in 0.0..3.0f64, l2 in 0.0..3.0f64) {
            let mdp = TabularCmdp::monitoring(c1, c2);
            let sol = solve_cmdp_lp(&mdp).unwrap();
            let total: f64 = sol.occupation.iter().flatten().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
            for target in 0..mdp.n_states() {
                let out: f64 = sol.occupation[target].iter().sum();
                let inflow: f64 = (0..mdp.n_states())
                    .flat_map(|s| (0..mdp.actions(s).len()).map(move |j| (s, j)))
                    .map(|(s, j)| sol.occupation[s][j] * mdp.transition_row(s, j)[target])
                    .sum();
                proptest::prop_assert!((out - inflow).abs() < 1e-9);
            }
            let ev = evaluate_policy(&mdp, &sol.policy).unwrap();
            for (a, b) in ev.values.iter().zip(&sol.values) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
            for (v, c) in sol.values[1..].iter().zip(mdp.thresholds()) {
                proptest::prop_assert!(*v >= c - 1e-9);
            }
            let d = dual_function(&mdp, &dual(l1, l2)).unwrap();
            proptest::prop_assert!(d >= sol.p_star - 1e-9, "d = {d}, P* = {}", sol.p_star);
        }
    }
}
