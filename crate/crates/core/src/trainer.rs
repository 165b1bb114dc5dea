//! Training phase: learn `π_θ(s, λ)` maximizing the λ-weighted reward for
//! every `λ` in the training box.
//!
//! Each rollout starts from an augmented state `(s, λ)` sampled from
//! `start distribution × U[0, λ_max]^m`, keeps `λ` fixed for `T` steps and
//! scores the undiscounted return of `r_λ`. Parameters move by REINFORCE once
//! per batch of rollouts. Tabular problems skip learning and tabulate exact
//! maximizers over a multiplier grid instead.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::dual::{lagrangian_reward_unchecked, DualState};
use crate::env::{Environment, Rect, TabularCmdp};
use crate::policy::{solve_lagrangian_tabular, LagrangianSolveReport, RbfPolicy, TabularLaw};
use crate::{Error, Result};

/// `‖θ‖` above which training aborts.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMode {
    None,
    /// Subtract the batch-mean return.
    BatchMean,
    /// Subtract each rollout's action-independent part `−T Σ_i λ_i c_i`,
    /// then the batch mean of what remains. Rollouts in a batch carry
    /// different `λ`, so this offset otherwise dominates the spread of `G`.
    OffsetBatchMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of rollouts.
    pub iterations: usize,
    /// Rollout horizon `T`.
    pub horizon: usize,
    /// Step size `η_θ`.
    pub step_size: f64,
    /// Rollouts per parameter update.
    pub batch_size: usize,
    /// Side of the multiplier sampling box `[0, λ_max]^m`.
    pub lambda_max: f64,
    pub baseline: BaselineMode,
    /// Learning-curve cadence, in rollouts.
    pub log_every: usize,
    /// Checkpoint cadence, in rollouts.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            horizon: 20,
            step_size: 0.001,
            batch_size: 10,
            lambda_max: 3.0,
            baseline: BaselineMode::OffsetBatchMean,
            log_every: 1_000,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.horizon < 1 {
            return bad("training horizon must be at least 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("training step size must be positive");
        }
        if self.batch_size < 1 {
            return bad("batch size must be at least 1");
        }
        if self.baseline != BaselineMode::None && self.batch_size < 2 {
            return bad("a batch-mean baseline needs at least two rollouts per batch");
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return bad("lambda_max must be nonnegative");
        }
        if self.log_every < 1 {
            return bad("log cadence must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_augmented_return: f64,
    pub theta_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub policy: RbfPolicy,
    pub curve: Vec<CurvePoint>,
    pub wall_clock: Duration,
}

/// Draws `(s, λ)` with `s` from the environment's start distribution and `λ`
/// uniform on `[0, λ_max]^m`.
pub fn sample_augmented_start<E: Environment, R: Rng + ?Sized>(rng: &mut R, env: &E, lambda_max: f64) -> (E::State, DualState) {
    let s = env.start_state(rng);
    let m = env.num_constraints();
    let lambda = if lambda_max > 0.0 {
        (0..m).map(|_| lambda_max * rng.random::<f64>()).collect()
    } else {
        vec![0.0; m]
    };
    (s, DualState::new(lambda).expect("samples lie in the box"))
}

/// Return and score of one fixed-λ rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGradient {
    /// `G = Σ_t r_λ(s_t, a_t)`.
    pub augmented_return: f64,
    /// The part of `G` no action can change, `−T Σ_i λ_i c_i`.
    pub offset: f64,
    /// `Σ_t ∇_θ log π_θ(a_t | s_t, λ)`.
    pub score: Vec<[f64; 2]>,
}

pub fn rollout_gradient<E, R>(
    env: &E,
    policy: &RbfPolicy,
    start: [f64; 2],
    lambda: &DualState,
    horizon: usize,
    rng: &mut R,
) -> Result<RolloutGradient>
where
    E: Environment<State = [f64; 2], Action = [f64; 2]>,
    R: Rng + ?Sized,
{
    let var = policy.sigma() * policy.sigma();
    let mut score = vec![[0.0; 2]; policy.num_kernels()];
    let mut phi = Vec::with_capacity(policy.num_kernels());
    let mut s = start;
    let mut ret = 0.0;
    for _ in 0..horizon {
        policy.features_into(s, lambda.as_slice(), &mut phi)?;
        let mean = policy.mean_from_features(&phi);
        let a = policy.perturb(mean, rng);
        let u = [(a[0] - mean[0]) / var, (a[1] - mean[1]) / var];
        for (acc, f) in score.iter_mut().zip(&phi) {
            acc[0] += f * u[0];
            acc[1] += f * u[1];
        }
        let (next, reward) = env.step(&s, &a, rng)?;
        ret += lagrangian_reward_unchecked(reward.as_slice(), lambda.as_slice(), env.thresholds());
        s = next;
    }
    let offset = -(horizon as f64)
        * lambda
            .as_slice()
            .iter()
            .zip(env.thresholds())
            .map(|(l, c)| l * c)
            .sum::<f64>();
    Ok(RolloutGradient {
        augmented_return: ret,
        offset,
        score,
    })
}

pub fn train_acrl<E, R>(env: &E, policy: &mut RbfPolicy, cfg: &TrainConfig, rng: &mut R) -> Result<TrainReport>
where
    E: Environment<State = [f64; 2], Action = [f64; 2]>,
    R: Rng + ?Sized,
{
    train_acrl_with(env, policy, cfg, rng, |_, _| Ok(()))
}

/// As [`train_acrl`], calling `on_checkpoint(iteration, policy)` every
/// `cfg.checkpoint_every` rollouts.
pub fn train_acrl_with<E, R, F>(
    env: &E,
    policy: &mut RbfPolicy,
    cfg: &TrainConfig,
    rng: &mut R,
    mut on_checkpoint: F,
) -> Result<TrainReport>
where
    E: Environment<State = [f64; 2], Action = [f64; 2]>,
    R: Rng + ?Sized,
    F: FnMut(usize, &RbfPolicy) -> Result<()>,
{
    cfg.validate()?;
    if policy.num_constraints() != env.num_constraints() {
        return Err(Error::DimensionMismatch {
            context: "policy multiplier dimensions",
            expected: env.num_constraints(),
            got: policy.num_constraints(),
        });
    }
    let started = Instant::now();
    let mut curve = Vec::new();
    let mut batch: Vec<RolloutGradient> = Vec::with_capacity(cfg.batch_size);
    let mut window_sum = 0.0;
    let mut window_len = 0usize;

    for it in 1..=cfg.iterations {
        let (s0, lambda) = sample_augmented_start(rng, env, cfg.lambda_max);
        let g = rollout_gradient(env, policy, s0, &lambda, cfg.horizon, rng)?;
        window_sum += g.augmented_return;
        window_len += 1;
        batch.push(g);

        if batch.len() == cfg.batch_size || it == cfg.iterations {
            apply_batch(policy, &batch, cfg)?;
            batch.clear();
            let norm = policy.theta_norm();
            if !(norm <= DIVERGENCE_NORM) {
                return Err(Error::Diverged { iteration: it, norm });
            }
        }
        if it % cfg.log_every == 0 || it == cfg.iterations {
            curve.push(CurvePoint {
                iteration: it,
                mean_augmented_return: window_sum / window_len as f64,
                theta_norm: policy.theta_norm(),
            });
            window_sum = 0.0;
            window_len = 0;
        }
        if cfg.checkpoint_every.is_some_and(|n| n > 0 && it % n == 0) {
            on_checkpoint(it, policy)?;
        }
    }
    Ok(TrainReport {
        policy: policy.clone(),
        curve,
        wall_clock: started.elapsed(),
    })
}

fn apply_batch(policy: &mut RbfPolicy, batch: &[RolloutGradient], cfg: &TrainConfig) -> Result<()> {
    let n = batch.len() as f64;
    let mean = |f: &dyn Fn(&RolloutGradient) -> f64| batch.iter().map(f).sum::<f64>() / n;
    let baseline: Box<dyn Fn(&RolloutGradient) -> f64> = match cfg.baseline {
        BaselineMode::BatchMean if batch.len() > 1 => {
            let b = mean(&|g| g.augmented_return);
            Box::new(move |_| b)
        }
        BaselineMode::OffsetBatchMean if batch.len() > 1 => {
            let b = mean(&|g| g.augmented_return - g.offset);
            Box::new(move |g| g.offset + b)
        }
        _ => Box::new(|_| 0.0),
    };
    let theta = policy.theta_mut();
    for g in batch {
        let w = cfg.step_size * (g.augmented_return - baseline(g)) / n;
        if w == 0.0 {
            continue;
        }
        for (t, s) in theta.iter_mut().zip(&g.score) {
            t[0] += w * s[0];
            t[1] += w * s[1];
        }
    }
    Ok(())
}

/// Outcome of [`direction_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionProbe {
    pub points: usize,
    pub toward: usize,
}

impl DirectionProbe {
    pub fn fraction(&self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            self.toward as f64 / self.points as f64
        }
    }
}

/// Counts the cell centres of a `resolution × resolution` grid over `bounds`
/// at which the policy mean at `lambda` has a positive inner product with
/// the direction to the centre of `target`. Centres inside `target` are
/// skipped.
pub fn direction_probe(policy: &RbfPolicy, bounds: Rect, target: Rect, lambda: &DualState, resolution: usize) -> Result<DirectionProbe> {
    if resolution == 0 {
        return Err(Error::InvalidConfig("probe resolution must be at least 1".into()));
    }
    let goal = target.center();
    let dx = (bounds.x_max - bounds.x_min) / resolution as f64;
    let dy = (bounds.y_max - bounds.y_min) / resolution as f64;
    let mut probe = DirectionProbe { points: 0, toward: 0 };
    for iy in 0..resolution {
        for ix in 0..resolution {
            let s = [bounds.x_min + (ix as f64 + 0.5) * dx, bounds.y_min + (iy as f64 + 0.5) * dy];
            if target.contains(s) {
                continue;
            }
            let m = policy.mean(s, lambda.as_slice())?;
            probe.points += 1;
            if m[0] * (goal[0] - s[0]) + m[1] * (goal[1] - s[1]) > 0.0 {
                probe.toward += 1;
            }
        }
    }
    Ok(probe)
}

/// Cartesian grid `{0, step, 2·step, …, ≤ max}^m`.
pub fn lambda_grid(m: usize, step: f64, max: f64) -> Result<Vec<DualState>> {
    if !(step > 0.0) || !(max >= 0.0) {
        return Err(Error::InvalidConfig("grid step must be positive and max nonnegative".into()));
    }
    let n = (max / step + 1e-9).floor() as usize + 1;
    let axis: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
    let mut points = vec![Vec::new()];
    for _ in 0..m {
        points = points
            .into_iter()
            .flat_map(|p| {
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

/// Exact Lagrangian maximizers tabulated over a multiplier grid. Used as the
/// trained policy of tabular problems via nearest-grid-point lookup.
#[derive(Clone, Debug, Default)]
pub struct LambdaGridTable {
    entries: Vec<(DualState, LagrangianSolveReport)>,
}

impl LambdaGridTable {
    pub fn entries(&self) -> &[(DualState, LagrangianSolveReport)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry whose grid point is nearest to `lambda` in Euclidean distance;
    /// the first such entry on ties.
    pub fn nearest(&self, lambda: &DualState) -> Option<&LagrangianSolveReport> {
        let dist = |p: &DualState| {
            p.as_slice()
                .iter()
                .zip(lambda.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        self.entries
            .iter()
            .fold(None::<(f64, &LagrangianSolveReport)>, |best, (p, r)| {
                let d = dist(p);
                match best {
                    Some((bd, _)) if bd <= d => best,
                    _ => Some((d, r)),
                }
            })
            .map(|(_, r)| r)
    }
}

impl TabularLaw for LambdaGridTable {
    fn law(&mut self, _mdp: &TabularCmdp, state: usize, lambda: &DualState) -> Result<Vec<f64>> {
        self.nearest(lambda)
            .map(|r| r.policy.action_law(state).to_vec())
            .ok_or_else(|| Error::InvalidPolicy("empty multiplier grid".into()))
    }
}

pub fn solve_tabular_training(mdp: &TabularCmdp, grid: &[DualState]) -> Result<LambdaGridTable> {
    let entries = grid
        .iter()
        .map(|l| Ok((l.clone(), solve_lagrangian_tabular(mdp, l)?)))
        .collect::<Result<_>>()?;
    Ok(LambdaGridTable { entries })
}
