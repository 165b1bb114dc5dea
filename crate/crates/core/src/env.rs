//! Environments of the constrained monitoring problem.
//!
//! Both environments expose `m + 1` rewards per step, ordered
//! `(r_0, r_1, …, r_m)`: `r_0` is the objective, the rest are constrained to
//! accumulate at least the thresholds `c_i` in long-run average.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The `m + 1` instantaneous rewards of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self(values)
    }

    pub fn objective(&self) -> f64 {
        self.0[0]
    }

    /// Constraint rewards `r_1..r_m`.
    pub fn constraints(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn num_constraints(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Step/reward interface shared by the tabular and the continuous
/// environments. Environments are immutable; trajectories own their state.
pub trait Environment {
    type State: Clone + Debug + PartialEq;
    type Action: Clone + Debug;

    fn num_constraints(&self) -> usize;

    fn thresholds(&self) -> &[f64];

    /// Bound `B` on `|r_i − c_i|`, computed for rewards in `[0, 1]`.
    fn reward_bound(&self) -> f64 {
        reward_bound(self.thresholds())
    }

    fn start_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    fn step<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        action: &Self::Action,
        rng: &mut R,
    ) -> Result<(Self::State, RewardVector)>;

    fn reward_at(&self, state: &Self::State, action: &Self::Action) -> RewardVector;

    /// Number of bins of the occupancy histogram at the given resolution.
    fn occupancy_bins(&self, resolution: usize) -> usize;

    fn occupancy_bin(&self, state: &Self::State, resolution: usize) -> usize;

    fn describe_state(&self, state: &Self::State) -> String;

    fn describe_action(&self, action: &Self::Action) -> String;
}

/// `B = max_i max(1 − c_i, c_i)`.
pub fn reward_bound(thresholds: &[f64]) -> f64 {
    thresholds
        .iter()
        .map(|&c| (1.0 - c).max(c))
        .fold(0.0, f64::max)
}

/// A finite constrained MDP.
///
/// Actions are labelled by `usize`; `actions[s]` lists the labels admissible
/// in state `s` and `transition[s][j]` / `rewards[s][j]` are indexed by the
/// position `j` of the label in that list.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularCmdp {
    n_states: usize,
    actions: Vec<Vec<usize>>,
    transition: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<Vec<f64>>>,
    thresholds: Vec<f64>,
    start: usize,
}

/// State labels of the three-state monitoring MDP.
pub const R0: usize = 0;
pub const R1: usize = 1;
pub const R2: usize = 2;

impl TabularCmdp {
    pub fn new(
        actions: Vec<Vec<usize>>,
        transition: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<Vec<f64>>>,
        thresholds: Vec<f64>,
        start: usize,
    ) -> Result<Self> {
        let n_states = actions.len();
        let invalid = |msg: String| Err(Error::InvalidEnvironment(msg));
        if n_states == 0 {
            return invalid("no states".into());
        }
        if transition.len() != n_states || rewards.len() != n_states {
            return invalid("transition/reward tables must have one entry per state".into());
        }
        if start >= n_states {
            return invalid(format!("start state {start} out of range"));
        }
        let m = thresholds.len();
        for s in 0..n_states {
            if actions[s].is_empty() {
                return invalid(format!("state {s} has no admissible action"));
            }
            if transition[s].len() != actions[s].len() || rewards[s].len() != actions[s].len() {
                return invalid(format!("state {s}: table width differs from its action set"));
            }
            for (j, row) in transition[s].iter().enumerate() {
                if row.len() != n_states {
                    return invalid(format!("state {s}, action {j}: transition row has wrong length"));
                }
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return invalid(format!("state {s}, action {j}: negative transition probability"));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return invalid(format!("state {s}, action {j}: transition row sums to {total}"));
                }
            }
            for (j, r) in rewards[s].iter().enumerate() {
                if r.len() != m + 1 {
                    return invalid(format!("state {s}, action {j}: expected {} rewards, got {}", m + 1, r.len()));
                }
            }
        }
        if thresholds.iter().any(|c| !c.is_finite()) {
            return invalid("non-finite threshold".into());
        }
        Ok(Self {
            n_states,
            actions,
            transition,
            rewards,
            thresholds,
            start,
        })
    }

    /// The three-state monitoring MDP: from `R0` the agent moves to `R1` or
    /// `R2`; from `R_i` it returns to `R0` or stays. The next state equals
    /// the action and `r_i(s, a) = 1(s = R_i)`.
    pub fn monitoring(c1: f64, c2: f64) -> Self {
        let actions = vec![vec![R1, R2], vec![R0, R1], vec![R0, R2]];
        Self::deterministic(actions, vec![c1, c2], R0).expect("monitoring MDP is well formed")
    }

    /// Builds an MDP whose next state is the chosen action and whose
    /// rewards are the state indicators `r_i(s, a) = 1(s = i)` for
    /// `i = 0..=m`.
    pub fn deterministic(actions: Vec<Vec<usize>>, thresholds: Vec<f64>, start: usize) -> Result<Self> {
        let n = actions.len();
        let m = thresholds.len();
        if m + 1 > n {
            return Err(Error::InvalidEnvironment(format!(
                "indicator rewards need at least {} states, got {n}",
                m + 1
            )));
        }
        let mut transition = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for (s, acts) in actions.iter().enumerate() {
            let mut rows = Vec::with_capacity(acts.len());
            for &a in acts {
                if a >= n {
                    return Err(Error::InvalidEnvironment(format!(
                        "state {s}: action {a} is not a valid successor state"
                    )));
                }
                let mut row = vec![0.0; n];
                row[a] = 1.0;
                rows.push(row);
            }
            transition.push(rows);
            let r: Vec<f64> = (0..=m).map(|i| if s == i { 1.0 } else { 0.0 }).collect();
            rewards.push(vec![r; acts.len()]);
        }
        Self::new(actions, transition, rewards, thresholds, start)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn actions(&self, state: usize) -> &[usize] {
        &self.actions[state]
    }

    pub fn transition_row(&self, state: usize, action_index: usize) -> &[f64] {
        &self.transition[state][action_index]
    }

    pub fn reward_row(&self, state: usize, action_index: usize) -> &[f64] {
        &self.rewards[state][action_index]
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() != self.thresholds.len() {
            return Err(Error::DimensionMismatch {
                context: "thresholds",
                expected: self.thresholds.len(),
                got: thresholds.len(),
            });
        }
        let mut out = self.clone();
        out.thresholds = thresholds;
        Ok(out)
    }

    /// Position of action label `action` in the action list of `state`.
    pub fn action_index(&self, state: usize, action: usize) -> Result<usize> {
        self.actions
            .get(state)
            .and_then(|acts| acts.iter().position(|&a| a == action))
            .ok_or(Error::InadmissibleAction { state, action })
    }

    /// Number of stationary deterministic policies.
    pub fn deterministic_policy_count(&self) -> usize {
        self.actions.iter().map(Vec::len).product()
    }
}

impl Environment for TabularCmdp {
    type State = usize;
    type Action = usize;

    fn num_constraints(&self) -> usize {
        self.thresholds.len()
    }

    fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    fn start_state<R: Rng + ?Sized>(&self, _rng: &mut R) -> usize {
        self.start
    }

    /// Samples the successor and returns `r(s_t, a_t)`.
    fn step<R: Rng + ?Sized>(&self, state: &usize, action: &usize, rng: &mut R) -> Result<(usize, RewardVector)> {
        let j = self.action_index(*state, *action)?;
        let row = &self.transition[*state][j];
        let next = match row.iter().position(|&p| p == 1.0) {
            Some(unit) => unit,
            None => sample_index(row, rng),
        };
        Ok((next, RewardVector::new(self.rewards[*state][j].clone())))
    }

    fn reward_at(&self, state: &usize, action: &usize) -> RewardVector {
        let j = self.action_index(*state, *action).unwrap_or(0);
        RewardVector::new(self.rewards[*state][j].clone())
    }

    fn occupancy_bins(&self, _resolution: usize) -> usize {
        self.n_states
    }

    fn occupancy_bin(&self, state: &usize, _resolution: usize) -> usize {
        *state
    }

    fn describe_state(&self, state: &usize) -> String {
        state.to_string()
    }

    fn describe_action(&self, action: &usize) -> String {
        action.to_string()
    }
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Closed axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn centered(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self::new(cx - width / 2.0, cx + width / 2.0, cy - height / 2.0, cy + height / 2.0)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0]
    }

    fn is_valid(&self) -> bool {
        [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    fn within(&self, outer: &Rect) -> bool {
        self.x_min >= outer.x_min && self.x_max <= outer.x_max && self.y_min >= outer.y_min && self.y_max <= outer.y_max
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max && self.y_min < other.y_max && other.y_min < self.y_max
    }

    fn clip(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(self.x_min, self.x_max), p[1].clamp(self.y_min, self.y_max)]
    }
}

/// The continuous monitoring task: a point agent on a rectangle that must
/// spend at least a fraction `c_i` of its time inside region `i`.
///
/// Motion: `s' = clip(s + clamp(a, ‖a‖ ≤ max_step), bounds)`. The objective
/// reward is identically zero and `r_i = 1` inside region `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousMonitoringEnv {
    bounds: Rect,
    regions: Vec<Rect>,
    thresholds: Vec<f64>,
    max_step: f64,
}

impl ContinuousMonitoringEnv {
    pub fn new(bounds: Rect, regions: Vec<Rect>, thresholds: Vec<f64>, max_step: f64) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidEnvironment(msg));
        if !bounds.is_valid() {
            return invalid("degenerate bounds".into());
        }
        if regions.is_empty() {
            return invalid("at least one region is required".into());
        }
        if regions.len() != thresholds.len() {
            return invalid(format!("{} regions but {} thresholds", regions.len(), thresholds.len()));
        }
        for (i, r) in regions.iter().enumerate() {
            if !r.is_valid() || !r.within(&bounds) {
                return invalid(format!("region {} does not lie inside the bounds", i + 1));
            }
        }
        if thresholds.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return invalid("thresholds must lie in [0, 1]".into());
        }
        let disjoint = regions
            .iter()
            .enumerate()
            .all(|(i, a)| regions[i + 1..].iter().all(|b| !a.overlaps(b)));
        let total: f64 = thresholds.iter().sum();
        if disjoint && total >= 1.0 {
            return invalid(format!("thresholds of disjoint regions sum to {total} ≥ 1"));
        }
        if !(max_step > 0.0 && max_step.is_finite()) {
            return invalid("max_step must be positive".into());
        }
        Ok(Self {
            bounds,
            regions,
            thresholds,
            max_step,
        })
    }

    /// `[0,10]²` with four 2×2 regions centred at (2,2), (2,8), (8,2), (8,8)
    /// and thresholds (0.20, 0.15, 0.10, 0.05).
    pub fn default_four_regions() -> Self {
        let regions = vec![
            Rect::centered(2.0, 2.0, 2.0, 2.0),
            Rect::centered(2.0, 8.0, 2.0, 2.0),
            Rect::centered(8.0, 2.0, 2.0, 2.0),
            Rect::centered(8.0, 8.0, 2.0, 2.0),
        ];
        Self::new(Rect::new(0.0, 10.0, 0.0, 10.0), regions, vec![0.20, 0.15, 0.10, 0.05], 1.0)
            .expect("default regions are valid")
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn regions(&self) -> &[Rect] {
        &self.regions
    }

    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    /// Deterministic part of a step.
    pub fn advance(&self, state: [f64; 2], action: [f64; 2]) -> Result<[f64; 2]> {
        if !(action[0].is_finite() && action[1].is_finite()) {
            return Err(Error::NonFiniteAction(action));
        }
        let norm = action[0].hypot(action[1]);
        let scale = if norm > self.max_step { self.max_step / norm } else { 1.0 };
        Ok(self
            .bounds
            .clip([state[0] + scale * action[0], state[1] + scale * action[1]]))
    }

    fn indicators(&self, p: [f64; 2]) -> RewardVector {
        let mut values = Vec::with_capacity(self.regions.len() + 1);
        values.push(0.0);
        values.extend(self.regions.iter().map(|r| if r.contains(p) { 1.0 } else { 0.0 }));
        RewardVector::new(values)
    }
}

impl Environment for ContinuousMonitoringEnv {
    type State = [f64; 2];
    type Action = [f64; 2];

    fn num_constraints(&self) -> usize {
        self.regions.len()
    }

    fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    fn start_state<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let b = self.bounds;
        [
            b.x_min + (b.x_max - b.x_min) * rng.random::<f64>(),
            b.y_min + (b.y_max - b.y_min) * rng.random::<f64>(),
        ]
    }

    /// Moves the agent and returns the region indicators at the new position.
    fn step<R: Rng + ?Sized>(&self, state: &[f64; 2], action: &[f64; 2], _rng: &mut R) -> Result<([f64; 2], RewardVector)> {
        let next = self.advance(*state, *action)?;
        Ok((next, self.indicators(next)))
    }

    fn reward_at(&self, state: &[f64; 2], _action: &[f64; 2]) -> RewardVector {
        self.indicators(*state)
    }

    fn occupancy_bins(&self, resolution: usize) -> usize {
        resolution * resolution
    }

    /// Row-major over `y`, then `x`; cell `(ix, iy)` is `iy * resolution + ix`.
    fn occupancy_bin(&self, state: &[f64; 2], resolution: usize) -> usize {
        let b = self.bounds;
        let cell = |v: f64, lo: f64, hi: f64| {
            let f = ((v - lo) / (hi - lo) * resolution as f64).floor();
            (f.max(0.0) as usize).min(resolution - 1)
        };
        cell(state[1], b.y_min, b.y_max) * resolution + cell(state[0], b.x_min, b.x_max)
    }

    fn describe_state(&self, state: &[f64; 2]) -> String {
        format!("{:.17e};{:.17e}", state[0], state[1])
    }

    fn describe_action(&self, action: &[f64; 2]) -> String {
        format!("{:.17e};{:.17e}", action[0], action[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn monitoring_step_follows_action() {
        let mdp = TabularCmdp::monitoring(1.0 / 3.0, 1.0 / 3.0);
        let (next, r) = mdp.step(&R0, &R1, &mut rng()).unwrap();
        assert_eq!(next, R1);
        // reward is that of the state the action was taken in
        assert_eq!(r.as_slice(), &[1.0, 0.0, 0.0]);
        let (next, r) = mdp.step(&R1, &R1, &mut rng()).unwrap();
        assert_eq!(next, R1);
        assert_eq!(r.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn monitoring_rewards_are_state_indicators() {
        let mdp = TabularCmdp::monitoring(1.0 / 3.0, 1.0 / 3.0);
        assert_eq!(mdp.reward_at(&R0, &R1).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(mdp.reward_at(&R2, &R0).as_slice(), &[0.0, 0.0, 1.0]);
        for s in 0..3 {
            for &a in mdp.actions(s) {
                let r = mdp.reward_at(&s, &a);
                assert_eq!(r.as_slice().iter().sum::<f64>(), 1.0);
                let j = mdp.action_index(s, a).unwrap();
                assert_eq!(mdp.transition_row(s, j).iter().filter(|&&p| p == 1.0).count(), 1);
            }
        }
    }

    #[test]
    fn inadmissible_action_is_rejected() {
        let mdp = TabularCmdp::monitoring(1.0 / 3.0, 1.0 / 3.0);
        let err = mdp.step(&R1, &R2, &mut rng()).unwrap_err();
        assert!(matches!(err, Error::InadmissibleAction { state: 1, action: 2 }));
        assert!(err.to_string().contains("state 1"));
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularCmdp::new(
            vec![vec![0]],
            vec![vec![vec![0.9]]],
            vec![vec![vec![0.0]]],
            vec![],
            0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn tabular_step_is_deterministic() {
        let mdp = TabularCmdp::monitoring(0.3, 0.3);
        let a = mdp.step(&R2, &R0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = mdp.step(&R2, &R0, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reward_bound_uses_worst_threshold() {
        assert!((reward_bound(&[1.0 / 3.0, 1.0 / 3.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((reward_bound(&[0.2, 0.15, 0.1, 0.05]) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn continuous_step_clips_to_bounds() {
        let env = ContinuousMonitoringEnv::default_four_regions();
        let (next, _) = env.step(&[9.9, 5.0], &[1.0, 0.0], &mut rng()).unwrap();
        assert_eq!(next, [10.0, 5.0]);
    }

    #[test]
    fn continuous_step_clamps_action_norm() {
        let env = ContinuousMonitoringEnv::default_four_regions();
        let next = env.advance([5.0, 5.0], [3.0, 4.0]).unwrap();
        assert!((next[0] - 5.6).abs() < 1e-12 && (next[1] - 5.8).abs() < 1e-12);
    }

    #[test]
    fn continuous_rejects_non_finite_action() {
        let env = ContinuousMonitoringEnv::default_four_regions();
        assert!(env.step(&[5.0, 5.0], &[f64::NAN, 0.0], &mut rng()).is_err());
        assert!(env.step(&[5.0, 5.0], &[0.0, f64::INFINITY], &mut rng()).is_err());
    }

    #[test]
    fn continuous_indicator_rewards() {
        let env = ContinuousMonitoringEnv::default_four_regions();
        assert_eq!(env.reward_at(&[2.0, 8.0], &[0.0, 0.0]).as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(env.reward_at(&[5.0, 5.0], &[0.0, 0.0]).as_slice(), &[0.0; 5]);
    }

    #[test]
    fn rejects_infeasible_disjoint_thresholds() {
        let regions = vec![Rect::centered(2.0, 2.0, 2.0, 2.0), Rect::centered(8.0, 8.0, 2.0, 2.0)];
        let err = ContinuousMonitoringEnv::new(Rect::new(0.0, 10.0, 0.0, 10.0), regions, vec![0.6, 0.4], 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_region_outside_bounds() {
        let regions = vec![Rect::centered(9.5, 2.0, 2.0, 2.0)];
        let err = ContinuousMonitoringEnv::new(Rect::new(0.0, 10.0, 0.0, 10.0), regions, vec![0.1], 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn occupancy_bins_cover_the_grid() {
        let env = ContinuousMonitoringEnv::default_four_regions();
        assert_eq!(env.occupancy_bin(&[0.0, 0.0], 10), 0);
        assert_eq!(env.occupancy_bin(&[10.0, 10.0], 10), 99);
        assert_eq!(env.occupancy_bin(&[3.5, 1.2], 10), 13);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn position_stays_in_bounds(x in 0.0..10.0f64, y in 0.0..10.0f64, ax in -50.0..50.0f64, ay in -50.0..50.0f64) {
                let env = ContinuousMonitoringEnv::default_four_regions();
                let (next, r) = env.step(&[x, y], &[ax, ay], &mut rng()).unwrap();
                prop_assert!(env.bounds().contains(next));
                for (i, region) in env.regions().iter().enumerate() {
                    prop_assert_eq!(r.constraints()[i] == 1.0, region.contains(next));
                }
            }
        }
    }
}
