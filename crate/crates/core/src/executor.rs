//! Execution phase: run a policy over the augmented state online, with the
//! multipliers driven by the dual dynamics.
//!
//! The environment state persists across epochs (one continuing trajectory);
//! within epoch `k` actions are drawn from `π(s_t, λ_k)` and after `T₀` steps
//! the multipliers take one projected dual step.

use rand::Rng;

use crate::dual::{dual_update, DualState, EpochRecord, GapAccumulator, SlacknessMonitor, Step};
use crate::env::{Environment, TabularCmdp};
use crate::policy::{AugmentedPolicy, TabularLaw};
use crate::seed::SeedStream;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExecConfig {
    /// Dual step `η_λ`.
    pub eta_lambda: f64,
    /// Epoch length `T₀`.
    pub t0: usize,
    /// Number of epochs `K`.
    pub epochs: usize,
    /// Initial multipliers; zero when `None`.
    pub lambda0: Option<DualState>,
    /// Keep every step in the report (needed for the execution CSV and the
    /// deficit identity check).
    pub record_steps: bool,
    /// Cells per axis of the occupancy grid (continuous environments).
    pub occupancy_resolution: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            eta_lambda: 0.5,
            t0: 10,
            epochs: 1000,
            lambda0: None,
            record_steps: false,
            occupancy_resolution: 20,
        }
    }
}

impl ExecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_lambda > 0.0 && self.eta_lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta_lambda must be positive, got {}", self.eta_lambda)));
        }
        self.validate_counts()
    }

    /// Checks everything except the sign of the dual step.
    pub(crate) fn validate_counts(&self) -> Result<()> {
        if self.t0 < 1 {
            return Err(Error::InvalidConfig("epoch length must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("at least one epoch is required".into()));
        }
        if self.occupancy_resolution < 1 {
            return Err(Error::InvalidConfig("occupancy resolution must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualTraceRow {
    pub k: usize,
    /// Multipliers in force during epoch `k`.
    pub lambda: DualState,
    pub gap: Vec<f64>,
    pub projection_active: Vec<bool>,
}

/// Action distribution of the policy at the probe state during epoch `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub k: usize,
    pub lambda: DualState,
    pub law: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecReport<S, A> {
    pub dual_trace: Vec<DualTraceRow>,
    /// Per-step records; empty unless `record_steps` was set.
    pub epochs: Vec<EpochRecord<S, A>>,
    /// `(1/T) Σ_t r_i(s_t, a_t)` for `i = 0..=m`.
    pub running_average: Vec<f64>,
    /// Time average of the multipliers over epochs.
    pub mean_lambda: Vec<f64>,
    /// Visit frequencies of `s_t`.
    pub occupancy: Vec<f64>,
    pub occupancy_resolution: usize,
    pub slackness: SlacknessMonitor,
    pub probe_trace: Vec<ProbeRow>,
    pub final_lambda: DualState,
    pub total_steps: usize,
}

impl<S, A> ExecReport<S, A> {
    /// `V̄_i − c_i` for `i = 1..=m`.
    pub fn margins(&self, thresholds: &[f64]) -> Vec<f64> {
        self.running_average[1..].iter().zip(thresholds).map(|(v, c)| v - c).collect()
    }

    pub fn min_margin(&self, thresholds: &[f64]) -> f64 {
        self.margins(thresholds).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn slackness_average(&self) -> f64 {
        self.slackness.average().unwrap_or(0.0)
    }

    pub fn max_lambda_l1(&self) -> f64 {
        self.dual_trace
            .iter()
            .map(|r| r.lambda.l1_norm())
            .chain(std::iter::once(self.final_lambda.l1_norm()))
            .fold(0.0, f64::max)
    }

    /// Largest value reached by multiplier `i` (0-based).
    pub fn peak_lambda(&self, i: usize) -> f64 {
        self.dual_trace
            .iter()
            .map(|r| r.lambda.as_slice()[i])
            .chain(std::iter::once(self.final_lambda.as_slice()[i]))
            .fold(0.0, f64::max)
    }

    pub fn occupancy_histogram(&self) -> &[f64] {
        &self.occupancy
    }
}

pub fn execute_acrl<E, P, R>(
    env: &E,
    policy: &mut P,
    cfg: &ExecConfig,
    probe: Option<&E::State>,
    rng: &mut R,
) -> Result<ExecReport<E::State, E::Action>>
where
    E: Environment,
    P: AugmentedPolicy<E>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    execute_with_hook(env, policy, cfg, probe, rng, |_, _, _| Ok(()))
}

/// Executor with a hook called at the end of every epoch with the policy,
/// the epoch record (steps present only when recorded) and the multipliers
/// that were in force. Primal-dual uses it to take its policy step.
pub(crate) fn execute_with_hook<E, P, R, H>(
    env: &E,
    policy: &mut P,
    cfg: &ExecConfig,
    probe: Option<&E::State>,
    rng: &mut R,
    mut end_of_epoch: H,
) -> Result<ExecReport<E::State, E::Action>>
where
    E: Environment,
    P: AugmentedPolicy<E>,
    R: Rng + ?Sized,
    H: FnMut(&mut P, &[Step<E::State, E::Action>], &DualState) -> Result<()>,
{
    cfg.validate_counts()?;
    let m = env.num_constraints();
    let c = env.thresholds().to_vec();
    let mut lambda = match &cfg.lambda0 {
        Some(l) if l.len() != m => {
            return Err(Error::DimensionMismatch {
                context: "initial multipliers",
                expected: m,
                got: l.len(),
            })
        }
        Some(l) => l.clone(),
        None => DualState::zeros(m),
    };

    let bins = env.occupancy_bins(cfg.occupancy_resolution);
    let mut visits = vec![0u64; bins];
    let mut reward_sums = vec![0.0; m + 1];
    let mut lambda_sums = vec![0.0; m];
    let mut slackness = SlacknessMonitor::new();
    let mut dual_trace = Vec::with_capacity(cfg.epochs);
    let mut epochs = Vec::new();
    let mut probe_trace = Vec::new();
    let mut steps: Vec<Step<E::State, E::Action>> = Vec::with_capacity(cfg.t0);

    let mut state = env.start_state(rng);
    for k in 0..cfg.epochs {
        if let Some(p) = probe {
            if let Some(law) = policy.action_law(env, p, &lambda)? {
                probe_trace.push(ProbeRow {
                    k,
                    lambda: lambda.clone(),
                    law,
                });
            }
        }
        let mut acc = GapAccumulator::new(&c);
        steps.clear();
        for _ in 0..cfg.t0 {
            let action = policy.act(env, &state, &lambda, rng)?;
            let (next, reward) = env.step(&state, &action, rng)?;
            visits[env.occupancy_bin(&state, cfg.occupancy_resolution)] += 1;
            for (s, r) in reward_sums.iter_mut().zip(reward.as_slice()) {
                *s += r;
            }
            acc.push(&reward);
            steps.push(Step {
                state: std::mem::replace(&mut state, next),
                action,
                reward,
            });
        }
        let gap = acc.mean();
        slackness.record(&lambda, &gap);
        for (s, l) in lambda_sums.iter_mut().zip(lambda.as_slice()) {
            *s += l;
        }
        end_of_epoch(policy, &steps, &lambda)?;
        let update = dual_update(&lambda, &gap, cfg.eta_lambda)?;
        dual_trace.push(DualTraceRow {
            k,
            lambda: lambda.clone(),
            gap: gap.clone(),
            projection_active: update.projection_active.clone(),
        });
        if cfg.record_steps {
            epochs.push(EpochRecord {
                k,
                lambda: lambda.clone(),
                steps: steps.clone(),
                mean_constraint_gap: gap,
                lambda_next: update.lambda.clone(),
                projection_active: update.projection_active,
            });
        }
        lambda = update.lambda;
    }

    let total_steps = cfg.epochs * cfg.t0;
    let n = total_steps as f64;
    Ok(ExecReport {
        dual_trace,
        epochs,
        running_average: reward_sums.iter().map(|s| s / n).collect(),
        mean_lambda: lambda_sums.iter().map(|s| s / cfg.epochs as f64).collect(),
        occupancy: visits.iter().map(|&v| v as f64 / n).collect(),
        occupancy_resolution: cfg.occupancy_resolution,
        slackness,
        probe_trace,
        final_lambda: lambda,
        total_steps,
    })
}

/// Replays a dual trace through a tabular policy and records its action law
/// at `probe_state` for every epoch.
pub fn policy_switch_trace<P: TabularLaw>(
    mdp: &TabularCmdp,
    dual_trace: &[DualTraceRow],
    policy: &mut P,
    probe_state: usize,
) -> Result<Vec<ProbeRow>> {
    dual_trace
        .iter()
        .map(|row| {
            Ok(ProbeRow {
                k: row.k,
                lambda: row.lambda.clone(),
                law: policy.law(mdp, probe_state, &row.lambda)?,
            })
        })
        .collect()
}

/// One row of a finite-epoch bias sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct T0SweepRow {
    pub t0: usize,
    pub epochs: usize,
    /// `V̄_i − c_i`, `i = 1..=m`.
    pub margins: Vec<f64>,
    pub objective_average: f64,
    pub slackness_average: f64,
}

/// Runs the executor for each epoch length at a fixed total step budget
/// (`K = budget / T₀`, at least one epoch). Every row uses the executor
/// substream of `seed`, so repeated `T₀` values reproduce identical rows.
pub fn t0_bias_sweep<E, P>(
    env: &E,
    policy: &mut P,
    base: &ExecConfig,
    t0_values: &[usize],
    total_steps: usize,
    seed: u64,
) -> Result<Vec<T0SweepRow>>
where
    E: Environment,
    P: AugmentedPolicy<E>,
{
    if t0_values.len() < 2 {
        return Err(Error::InvalidConfig("a T₀ sweep needs at least two values".into()));
    }
    t0_values
        .iter()
        .map(|&t0| {
            let cfg = ExecConfig {
                t0,
                epochs: (total_steps / t0.max(1)).max(1),
                record_steps: false,
                ..base.clone()
            };
            let mut rng = SeedStream::new(seed).rng("executor");
            let rep = execute_acrl(env, policy, &cfg, None, &mut rng)?;
            Ok(T0SweepRow {
                t0,
                epochs: cfg.epochs,
                margins: rep.margins(env.thresholds()),
                objective_average: rep.running_average[0],
                slackness_average: rep.slackness_average(),
            })
        })
        .collect()
}
