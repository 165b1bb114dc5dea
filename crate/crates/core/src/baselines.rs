//! Comparison methods: online primal-dual with a REINFORCE primal step, and
//! primal averaging of tabular Lagrangian maximizers.

use rand::Rng;

use crate::dual::{lagrangian_reward_unchecked, DualState, Step};
use crate::env::{Environment, TabularCmdp};
use crate::eval::evaluate_policy;
use crate::executor::{execute_with_hook, DualTraceRow, ExecConfig, ExecReport, ProbeRow};
use crate::policy::{solve_lagrangian_tabular, AugmentedPolicy, RbfPolicy, TabularLaw, TabularPolicy};
use crate::trainer::DIVERGENCE_NORM;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDualConfig {
    /// Primal step `η_θ`.
    pub eta_theta: f64,
    /// Dual step `η_λ`.
    pub eta_lambda: f64,
    pub t0: usize,
    pub epochs: usize,
    pub occupancy_resolution: usize,
}

impl Default for PrimalDualConfig {
    fn default() -> Self {
        Self {
            eta_theta: 0.025,
            eta_lambda: 0.0025,
            t0: 10,
            epochs: 40_000,
            occupancy_resolution: 20,
        }
    }
}

impl PrimalDualConfig {
    /// Zero steps are allowed: `η_θ = 0` freezes the policy and `η_λ = 0`
    /// freezes the multipliers.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_theta", self.eta_theta), ("eta_lambda", self.eta_lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.t0 < 1 || self.epochs < 1 {
            return Err(Error::InvalidConfig("t0 and epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Policies that can take one stochastic Lagrangian ascent step from an
/// epoch of experience.
pub trait PrimalDualPolicy<E: Environment>: AugmentedPolicy<E> {
    fn ascend(&mut self, env: &E, steps: &[Step<E::State, E::Action>], lambda: &DualState, eta_theta: f64) -> Result<()>;

    fn parameter_norm(&self) -> f64;
}

/// Per-state softmax over admissible actions. Ignores `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxTabularPolicy {
    logits: Vec<Vec<f64>>,
}

impl SoftmaxTabularPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(mdp: &TabularCmdp) -> Self {
        Self {
            logits: (0..mdp.n_states()).map(|s| vec![0.0; mdp.actions(s).len()]).collect(),
        }
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        let row = &self.logits[state];
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn to_tabular(&self) -> Result<TabularPolicy> {
        TabularPolicy::new((0..self.logits.len()).map(|s| self.probs(s)).collect())
    }
}

impl TabularLaw for SoftmaxTabularPolicy {
    fn law(&mut self, mdp: &TabularCmdp, state: usize, _lambda: &DualState) -> Result<Vec<f64>> {
        if self.logits.len() != mdp.n_states() {
            return Err(Error::DimensionMismatch {
                context: "softmax policy states",
                expected: mdp.n_states(),
                got: self.logits.len(),
            });
        }
        Ok(self.probs(state))
    }
}

/// Reward-to-go of `r_λ` centred on the epoch mean, so the estimator does
/// not drift with the (unknown) gain.
fn centred_returns(rewards: &[f64]) -> Vec<f64> {
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t] - mean;
        out[t] = acc;
    }
    out
}

impl PrimalDualPolicy<TabularCmdp> for SoftmaxTabularPolicy {
    fn ascend(&mut self, env: &TabularCmdp, steps: &[Step<usize, usize>], lambda: &DualState, eta_theta: f64) -> Result<()> {
        if eta_theta == 0.0 || steps.is_empty() {
            return Ok(());
        }
        let rewards: Vec<f64> = steps
            .iter()
            .map(|s| lagrangian_reward_unchecked(s.reward.as_slice(), lambda.as_slice(), env.thresholds()))
            .collect();
        let g = centred_returns(&rewards);
        let mut grad: Vec<Vec<f64>> = self.logits.iter().map(|r| vec![0.0; r.len()]).collect();
        for (step, gt) in steps.iter().zip(&g) {
            let j = env.action_index(step.state, step.action)?;
            let p = self.probs(step.state);
            for (k, pk) in p.iter().enumerate() {
                let indicator = if k == j { 1.0 } else { 0.0 };
                grad[step.state][k] += gt * (indicator - pk);
            }
        }
        let scale = eta_theta / steps.len() as f64;
        for (row, grow) in self.logits.iter_mut().zip(&grad) {
            for (l, g) in row.iter_mut().zip(grow) {
                *l += scale * g;
            }
        }
        Ok(())
    }

    fn parameter_norm(&self) -> f64 {
        self.logits.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl<E> PrimalDualPolicy<E> for RbfPolicy
where
    E: Environment<State = [f64; 2], Action = [f64; 2]>,
    RbfPolicy: AugmentedPolicy<E>,
{
    fn ascend(&mut self, env: &E, steps: &[Step<[f64; 2], [f64; 2]>], lambda: &DualState, eta_theta: f64) -> Result<()> {
        if eta_theta == 0.0 || steps.is_empty() {
            return Ok(());
        }
        let rewards: Vec<f64> = steps
            .iter()
            .map(|s| lagrangian_reward_unchecked(s.reward.as_slice(), lambda.as_slice(), env.thresholds()))
            .collect();
        let g = centred_returns(&rewards);
        let scale = eta_theta / steps.len() as f64;
        let mut total = vec![[0.0; 2]; self.num_kernels()];
        for (step, gt) in steps.iter().zip(&g) {
            if *gt == 0.0 {
                continue;
            }
            let score = self.logprob_grad(step.state, lambda.as_slice(), step.action)?;
            for (acc, s) in total.iter_mut().zip(score) {
                acc[0] += gt * s[0];
                acc[1] += gt * s[1];
            }
        }
        for (t, d) in self.theta_mut().iter_mut().zip(total) {
            t[0] += scale * d[0];
            t[1] += scale * d[1];
        }
        Ok(())
    }

    fn parameter_norm(&self) -> f64 {
        self.theta_norm()
    }
}

#[derive(Clone, Debug)]
pub struct PrimalDualReport<S, A, P> {
    pub execution: ExecReport<S, A>,
    pub policy: P,
}

/// Alternates one REINFORCE ascent step on the Lagrangian (from the epoch's
/// rollout) with one dual step. The policy trace is the report's probe trace.
pub fn run_primal_dual<E, P, R>(
    env: &E,
    mut policy: P,
    cfg: &PrimalDualConfig,
    lambda0: Option<DualState>,
    probe: Option<&E::State>,
    rng: &mut R,
) -> Result<PrimalDualReport<E::State, E::Action, P>>
where
    E: Environment,
    P: PrimalDualPolicy<E>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let exec_cfg = ExecConfig {
        eta_lambda: cfg.eta_lambda,
        t0: cfg.t0,
        epochs: cfg.epochs,
        lambda0,
        record_steps: false,
        occupancy_resolution: cfg.occupancy_resolution,
    };
    let mut epoch = 0usize;
    let execution = execute_with_hook(env, &mut policy, &exec_cfg, probe, rng, |p, steps, lambda| {
        epoch += 1;
        p.ascend(env, steps, lambda, cfg.eta_theta)?;
        let norm = p.parameter_norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Diverged { iteration: epoch, norm });
        }
        Ok(())
    })?;
    Ok(PrimalDualReport { execution, policy })
}

/// Running mean of tabular policies, `π̄_K = (1/K) Σ_k π_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedTabularPolicy {
    mean: Vec<Vec<f64>>,
    count: usize,
}

impl AveragedTabularPolicy {
    /// Empty average shaped like `mdp`'s action sets.
    pub fn new(mdp: &TabularCmdp) -> Self {
        Self {
            mean: (0..mdp.n_states()).map(|s| vec![0.0; mdp.actions(s).len()]).collect(),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.mean
    }

    pub fn to_policy(&self) -> Result<TabularPolicy> {
        if self.count == 0 {
            return Err(Error::InvalidPolicy("average of zero policies".into()));
        }
        let rows = self
            .mean
            .iter()
            .map(|r| {
                let z: f64 = r.iter().sum();
                r.iter().map(|v| v / z).collect()
            })
            .collect();
        TabularPolicy::new(rows)
    }
}

pub fn primal_average_update(mut avg: AveragedTabularPolicy, pi_k: &TabularPolicy) -> Result<AveragedTabularPolicy> {
    let rows = pi_k.rows();
    if rows.len() != avg.mean.len() || rows.iter().zip(&avg.mean).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::DimensionMismatch {
            context: "averaged policy shape",
            expected: avg.mean.iter().map(Vec::len).sum(),
            got: rows.iter().map(Vec::len).sum(),
        });
    }
    avg.count += 1;
    let w = 1.0 / avg.count as f64;
    for (m, r) in avg.mean.iter_mut().zip(rows) {
        for (a, b) in m.iter_mut().zip(r) {
            *a += w * (b - *a);
        }
    }
    Ok(avg)
}

/// Average of the exact maximizers `π(λ_k)` along a dual trace.
pub fn average_maximizers(mdp: &TabularCmdp, trace: &[DualTraceRow]) -> Result<AveragedTabularPolicy> {
    let mut avg = AveragedTabularPolicy::new(mdp);
    let mut last: Option<(DualState, TabularPolicy)> = None;
    for row in trace {
        let pi = match &last {
            Some((l, p)) if *l == row.lambda => p.clone(),
            _ => solve_lagrangian_tabular(mdp, &row.lambda)?.policy,
        };
        avg = primal_average_update(avg, &pi)?;
        last = Some((row.lambda.clone(), pi));
    }
    Ok(avg)
}

/// Average of policies taken in occupation-measure space:
/// `ρ̄ = (1/K) Σ_k ρ(π_k)` and `π̄(j | s) = ρ̄(s, j) / Σ_j ρ̄(s, j)`.
///
/// Executing `π̄` reproduces the averaged long-run values of the `π_k`,
/// which the entrywise average does not: it weights every epoch's action
/// law equally at every state, regardless of how long each `π_k` actually
/// keeps the agent there.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationAverage {
    mean: Vec<Vec<f64>>,
    count: usize,
}

impl OccupationAverage {
    pub fn new(mdp: &TabularCmdp) -> Self {
        Self {
            mean: (0..mdp.n_states()).map(|s| vec![0.0; mdp.actions(s).len()]).collect(),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean occupation measure `ρ̄(s, j)`.
    pub fn occupation(&self) -> &[Vec<f64>] {
        &self.mean
    }

    /// Adds `π_k` through its stationary occupation measure from the start
    /// state.
    pub fn push(&mut self, mdp: &TabularCmdp, pi: &TabularPolicy) -> Result<()> {
        let ev = evaluate_policy(mdp, pi)?;
        self.count += 1;
        let w = 1.0 / self.count as f64;
        for (m, r) in self.mean.iter_mut().zip(&ev.occupation) {
            for (a, b) in m.iter_mut().zip(r) {
                *a += w * (b - *a);
            }
        }
        Ok(())
    }

    /// Conditional action laws of `ρ̄`; uniform at states it never visits.
    pub fn to_policy(&self) -> Result<TabularPolicy> {
        if self.count == 0 {
            return Err(Error::InvalidPolicy("average of zero policies".into()));
        }
        let rows = self
            .mean
            .iter()
            .map(|r| {
                let z: f64 = r.iter().sum();
                if z > 1e-15 {
                    r.iter().map(|v| v / z).collect()
                } else {
                    vec![1.0 / r.len() as f64; r.len()]
                }
            })
            .collect();
        TabularPolicy::new(rows)
    }
}

/// Occupation-measure average of the exact maximizers along a dual trace.
pub fn occupation_average_maximizers(mdp: &TabularCmdp, trace: &[DualTraceRow]) -> Result<OccupationAverage> {
    let mut avg = OccupationAverage::new(mdp);
    let mut last: Option<(DualState, TabularPolicy)> = None;
    for row in trace {
        let pi = match &last {
            Some((l, p)) if *l == row.lambda => p.clone(),
            _ => solve_lagrangian_tabular(mdp, &row.lambda)?.policy,
        };
        avg.push(mdp, &pi)?;
        last = Some((row.lambda.clone(), pi));
    }
    Ok(avg)
}

/// Margin by which a multiplier must exceed its rivals to count as having
/// crossed. Rounding can leave `λ_1` a few ulps above 1, where the two
/// actions tie and the solver's tie-break keeps the old action.
pub const CROSSING_MARGIN: f64 = 1e-6;

/// Epochs of the first multiplier crossing and the first policy switch that
/// follows it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwitchEvents {
    /// First epoch with `λ_i > max(1, max_{j≠i} λ_j) + CROSSING_MARGIN`.
    pub lambda_cross: Option<usize>,
    /// First epoch at or after the crossing where the probe's probability of
    /// the watched action exceeds 1/2.
    pub policy_switch: Option<usize>,
}

impl SwitchEvents {
    /// `None` when either event was not observed.
    pub fn delay(&self) -> Option<usize> {
        Some(self.policy_switch? - self.lambda_cross?)
    }
}

/// Locates the crossing of multiplier `component` and the switch of the
/// probe law toward action position `watched`.
pub fn switch_events(probe: &[ProbeRow], component: usize, watched: usize) -> SwitchEvents {
    let crossed = |l: &[f64]| {
        let others = l
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != component)
            .map(|(_, v)| *v)
            .fold(1.0, f64::max);
        l[component] > others + CROSSING_MARGIN
    };
    let cross = probe.iter().position(|r| crossed(r.lambda.as_slice()));
    let switch = cross.and_then(|c| {
        probe[c..]
            .iter()
            .position(|r| r.law.get(watched).is_some_and(|&p| p > 0.5))
            .map(|i| c + i)
    });
    SwitchEvents {
        lambda_cross: cross.map(|i| probe[i].k),
        policy_switch: switch.map(|i| probe[i].k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchComparison {
    pub acrl: SwitchEvents,
    pub primal_dual: SwitchEvents,
    pub acrl_peak: f64,
    pub primal_dual_peak: f64,
}

/// Switch events and peak of multiplier `component` for both methods, with
/// the probe watching the "stay" action at `probe_state`.
pub fn switch_delay_compare<S, A>(
    mdp: &TabularCmdp,
    acrl: &ExecReport<S, A>,
    primal_dual: &ExecReport<S, A>,
    probe_state: usize,
    component: usize,
) -> Result<SwitchComparison> {
    let watched = mdp.action_index(probe_state, probe_state)?;
    if acrl.probe_trace.is_empty() || primal_dual.probe_trace.is_empty() {
        return Err(Error::InvalidConfig("both reports need a probe trace".into()));
    }
    Ok(SwitchComparison {
        acrl: switch_events(&acrl.probe_trace, component, watched),
        primal_dual: switch_events(&primal_dual.probe_trace, component, watched),
        acrl_peak: acrl.peak_lambda(component),
        primal_dual_peak: primal_dual.peak_lambda(component),
    })
}
