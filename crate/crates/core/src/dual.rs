//! The multiplier side of the augmented MDP.
//!
//! Multipliers are frozen for an epoch of `T₀` steps, then moved by a
//! projected stochastic subgradient step on the epoch-mean constraint gap:
//!
//! ```text
//! λ_{k+1} = [λ_k − η_λ · (1/T₀) Σ_t (r(s_t, a_t) − c)]_+
//! ```

use crate::env::RewardVector;
use crate::{Error, Result};

/// Nonnegative multiplier vector, one entry per constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState(Vec<f64>);

impl DualState {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "multipliers must be finite and nonnegative, got {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `r_0 + Σ_i λ_i (r_i − c_i)`.
pub fn lagrangian_reward(reward: &RewardVector, lambda: &DualState, thresholds: &[f64]) -> Result<f64> {
    let m = reward.num_constraints();
    if lambda.len() != m || thresholds.len() != m {
        return Err(Error::DimensionMismatch {
            context: "lagrangian reward",
            expected: m,
            got: if lambda.len() != m { lambda.len() } else { thresholds.len() },
        });
    }
    Ok(lagrangian_reward_unchecked(reward.as_slice(), lambda.as_slice(), thresholds))
}

#[inline]
pub(crate) fn lagrangian_reward_unchecked(reward: &[f64], lambda: &[f64], thresholds: &[f64]) -> f64 {
    reward[0]
        + lambda
            .iter()
            .zip(&reward[1..])
            .zip(thresholds)
            .map(|((l, r), c)| l * (r - c))
            .sum::<f64>()
}

/// One environment transition as seen by the dual dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<S, A> {
    pub state: S,
    pub action: A,
    pub reward: RewardVector,
}

/// One epoch of the dual dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord<S, A> {
    pub k: usize,
    /// Multipliers in force during the epoch.
    pub lambda: DualState,
    pub steps: Vec<Step<S, A>>,
    /// `(1/T₀) Σ_t (r_i − c_i)`.
    pub mean_constraint_gap: Vec<f64>,
    /// Multipliers after the epoch's dual update.
    pub lambda_next: DualState,
    /// Whether the nonnegative projection clipped component `i` in the
    /// update that closed this epoch.
    pub projection_active: Vec<bool>,
}

/// Running epoch sums of constraint rewards. The mean gap is formed as
/// `(Σ r_i)/T₀ − c_i`, which is exact for indicator rewards.
#[derive(Clone, Debug)]
pub struct GapAccumulator {
    sum: Vec<f64>,
    thresholds: Vec<f64>,
    steps: usize,
}

impl GapAccumulator {
    pub fn new(thresholds: &[f64]) -> Self {
        Self {
            sum: vec![0.0; thresholds.len()],
            thresholds: thresholds.to_vec(),
            steps: 0,
        }
    }

    pub fn push(&mut self, reward: &RewardVector) {
        for (acc, r) in self.sum.iter_mut().zip(reward.constraints()) {
            *acc += r;
        }
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.steps.max(1) as f64;
        self.sum.iter().zip(&self.thresholds).map(|(s, c)| s / n - c).collect()
    }
}

/// Result of one projected dual step.
#[derive(Clone, Debug, PartialEq)]
pub struct DualUpdate {
    pub lambda: DualState,
    pub projection_active: Vec<bool>,
}

/// `λ'_i = max(0, λ_i − η_λ · gap_i)`, with the projection applied after the
/// full vector step.
pub fn dual_update(lambda: &DualState, mean_gap: &[f64], eta_lambda: f64) -> Result<DualUpdate> {
    if mean_gap.len() != lambda.len() {
        return Err(Error::DimensionMismatch {
            context: "dual update",
            expected: lambda.len(),
            got: mean_gap.len(),
        });
    }
    if !(eta_lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("dual step must be nonnegative, got {eta_lambda}")));
    }
    let raw: Vec<f64> = lambda
        .as_slice()
        .iter()
        .zip(mean_gap)
        .map(|(l, g)| l - eta_lambda * g)
        .collect();
    let projection_active = raw.iter().map(|v| *v < 0.0).collect();
    Ok(DualUpdate {
        lambda: DualState(raw.into_iter().map(|v| v.max(0.0)).collect()),
        projection_active,
    })
}

/// Outcome of replaying the deficit identity
/// `λ_{i,k} = (η_λ/T₀) Σ_{t<kT₀} (c_i − r_i)` over the epochs preceding the
/// first active projection of each component.
#[derive(Clone, Debug, PartialEq)]
pub struct DeficitCheck {
    /// Max `|λ_{i,k} − formula|` per component.
    pub max_discrepancy: Vec<f64>,
    /// Number of multipliers `λ_{i,k}` compared, per component.
    pub multipliers_checked: Vec<usize>,
}

impl DeficitCheck {
    pub fn worst(&self) -> f64 {
        self.max_discrepancy.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks the memory reading of the multipliers against the raw rewards
/// recorded in `epochs`. Requires `λ_0 = 0` and per-step records.
pub fn deficit_identity_check<S, A>(
    epochs: &[EpochRecord<S, A>],
    thresholds: &[f64],
    eta_lambda: f64,
    t0: usize,
) -> Result<DeficitCheck> {
    let m = thresholds.len();
    let Some(first) = epochs.first() else {
        return Ok(DeficitCheck {
            max_discrepancy: vec![0.0; m],
            multipliers_checked: vec![0; m],
        });
    };
    if first.lambda.as_slice().iter().any(|&l| l != 0.0) {
        return Err(Error::InvalidConfig("deficit identity requires λ_0 = 0".into()));
    }
    let mut max_discrepancy = vec![0.0; m];
    let mut multipliers_checked = vec![0; m];
    let scale = eta_lambda / t0 as f64;
    for i in 0..m {
        let mut deficit = 0.0;
        for epoch in epochs {
            if epoch.steps.len() != t0 {
                return Err(Error::InvalidConfig(format!(
                    "epoch {} holds {} steps, expected {t0}",
                    epoch.k,
                    epoch.steps.len()
                )));
            }
            let d = (epoch.lambda.as_slice()[i] - scale * deficit).abs();
            max_discrepancy[i] = f64::max(max_discrepancy[i], d);
            multipliers_checked[i] += 1;
            if epoch.projection_active[i] {
                break;
            }
            deficit += epoch
                .steps
                .iter()
                .map(|s| thresholds[i] - s.reward.constraints()[i])
                .sum::<f64>();
            if std::ptr::eq(epoch, epochs.last().unwrap()) {
                let d = (epoch.lambda_next.as_slice()[i] - scale * deficit).abs();
                max_discrepancy[i] = f64::max(max_discrepancy[i], d);
                multipliers_checked[i] += 1;
            }
        }
    }
    Ok(DeficitCheck {
        max_discrepancy,
        multipliers_checked,
    })
}

/// Radius of the ℓ1 ball holding every multiplier whose dual value is within
/// `η_λ B²/2` of the optimum: `(P* − V_0(π†) + η_λ B²/2) / C`, where `π†` is
/// a strictly feasible reference policy with slack `C = min_i V_i(π†) − c_i`.
pub fn multiplier_ball_radius(p_star: f64, reference_objective: f64, slack: f64, eta_lambda: f64, reward_bound: f64) -> Result<f64> {
    if !(slack > 0.0) {
        return Err(Error::InvalidConfig(format!("reference policy slack must be positive, got {slack}")));
    }
    Ok((p_star - reference_objective + eta_lambda * reward_bound * reward_bound / 2.0) / slack)
}

/// Box side for multiplier features and training samples: the ball radius
/// plus the largest excursion one dual step can make, `η_λ B m`.
pub fn multiplier_box(radius: f64, eta_lambda: f64, reward_bound: f64, m: usize) -> f64 {
    radius + eta_lambda * reward_bound * m as f64
}

/// Running sum of `λ_k · gap_k` over epochs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlacknessMonitor {
    sum: f64,
    count: usize,
}

impl SlacknessMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, lambda: &DualState, mean_gap: &[f64]) {
        self.sum += lambda.as_slice().iter().zip(mean_gap).map(|(l, g)| l * g).sum::<f64>();
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(1/K) Σ_k λ_k · gap_k`; `None` before the first epoch.
    pub fn average(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: f64 = 1.0 / 3.0;

    fn monitoring_reward(state: usize) -> RewardVector {
        let mut v = vec![0.0; 3];
        v[state] = 1.0;
        RewardVector::new(v)
    }

    #[test]
    fn lagrangian_reward_examples() {
        let c = [C, C];
        let zero = DualState::zeros(2);
        assert_eq!(lagrangian_reward(&monitoring_reward(0), &zero, &c).unwrap(), 1.0);
        let ones = DualState::new(vec![1.0, 1.0]).unwrap();
        for s in 0..3 {
            let v = lagrangian_reward(&monitoring_reward(s), &ones, &c).unwrap();
            assert!((v - 1.0 / 3.0).abs() < 1e-15, "state {s}: {v}");
        }
        let l = DualState::new(vec![0.0, 2.0]).unwrap();
        assert!((lagrangian_reward(&monitoring_reward(2), &l, &c).unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lagrangian_reward_rejects_mismatch() {
        let l = DualState::zeros(3);
        assert!(lagrangian_reward(&monitoring_reward(0), &l, &[C, C]).is_err());
    }

    #[test]
    fn dual_update_examples() {
        let u = dual_update(&DualState::new(vec![0.5]).unwrap(), &[2.0 / 3.0], 0.5).unwrap();
        assert!((u.lambda.as_slice()[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(u.projection_active, vec![false]);

        let u = dual_update(&DualState::zeros(1), &[0.0], 0.5).unwrap();
        assert_eq!(u.lambda.as_slice(), &[0.0]);
        assert_eq!(u.projection_active, vec![false]);

        let u = dual_update(&DualState::new(vec![0.1]).unwrap(), &[2.0 / 3.0], 0.5).unwrap();
        assert_eq!(u.lambda.as_slice(), &[0.0]);
        assert_eq!(u.projection_active, vec![true]);
    }

    #[test]
    fn dual_state_rejects_negative() {
        assert!(DualState::new(vec![0.0, -1e-3]).is_err());
        assert!(DualState::new(vec![f64::NAN]).is_err());
    }

    fn epoch(k: usize, lambda: DualState, states: &[usize], eta: f64) -> EpochRecord<usize, usize> {
        let c = [C, C];
        let mut acc = GapAccumulator::new(&c);
        let steps: Vec<_> = states
            .iter()
            .map(|&s| {
                let reward = monitoring_reward(s);
                acc.push(&reward);
                Step { state: s, action: s, reward }
            })
            .collect();
        let gap = acc.mean();
        let u = dual_update(&lambda, &gap, eta).unwrap();
        EpochRecord {
            k,
            lambda,
            steps,
            mean_constraint_gap: gap,
            lambda_next: u.lambda,
            projection_active: u.projection_active,
        }
    }

    #[test]
    fn deficit_single_epoch_never_visited() {
        let e = epoch(0, DualState::zeros(2), &[0, 0, 0], 0.5);
        assert!((e.mean_constraint_gap[0] + 1.0 / 3.0).abs() < 1e-15);
        assert!((e.lambda_next.as_slice()[0] - 1.0 / 6.0).abs() < 1e-15);
        let check = deficit_identity_check(&[e], &[C, C], 0.5, 3).unwrap();
        assert!(check.worst() < 1e-15);
        assert_eq!(check.multipliers_checked, vec![2, 2]);
    }

    #[test]
    fn deficit_check_stops_at_projection() {
        // λ_1 stays at the origin while region 1 is over-visited: projection
        // clips it and later epochs are excluded for that component.
        let e0 = epoch(0, DualState::zeros(2), &[1, 1, 1], 0.5);
        assert!(e0.projection_active[0]);
        let e1 = epoch(1, e0.lambda_next.clone(), &[0, 0, 0], 0.5);
        let check = deficit_identity_check(&[e0, e1], &[C, C], 0.5, 3).unwrap();
        assert_eq!(check.multipliers_checked[0], 1);
        assert_eq!(check.multipliers_checked[1], 3);
        assert!(check.worst() < 1e-15);
    }

    #[test]
    fn multiplier_ball_for_monitoring() {
        // uniform reference: V_0 = 1/3, slack 0 at c = 1/3, so use c = 0.3
        let r = multiplier_ball_radius(1.0 / 3.0, 1.0 / 3.0, 1.0 / 30.0, 0.5, 2.0 / 3.0).unwrap();
        assert!((r - (0.5 * 4.0 / 9.0 / 2.0) * 30.0).abs() < 1e-12);
        assert!(multiplier_ball_radius(0.0, 0.0, 0.0, 0.5, 1.0).is_err());
        assert!((multiplier_box(1.0, 0.5, 0.5, 2) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn slackness_average_examples() {
        let mut m = SlacknessMonitor::new();
        assert_eq!(m.average(), None);
        m.record(&DualState::new(vec![1.0, 0.0]).unwrap(), &[0.2, -0.1]);
        assert!((m.average().unwrap() - 0.2).abs() < 1e-15);
        let mut z = SlacknessMonitor::new();
        for _ in 0..5 {
            z.record(&DualState::zeros(2), &[0.3, -0.4]);
        }
        assert_eq!(z.average(), Some(0.0));
        assert_eq!(z.count(), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vecs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
            (1usize..6).prop_flat_map(|m| {
                (
                    prop::collection::vec(0.0..10.0f64, m),
                    prop::collection::vec(0.0..10.0f64, m),
                    prop::collection::vec(-1.0..1.0f64, m),
                )
            })
        }

        proptest! {
            #[test]
            fn update_is_nonnegative_and_nonexpansive((a, b, gap) in vecs(), eta in 0.0..5.0f64) {
                let la = DualState::new(a.clone()).unwrap();
                let lb = DualState::new(b.clone()).unwrap();
                let ua = dual_update(&la, &gap, eta).unwrap();
                let ub = dual_update(&lb, &gap, eta).unwrap();
                prop_assert!(ua.lambda.as_slice().iter().all(|&v| v >= 0.0));
                let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                prop_assert!(dist(ua.lambda.as_slice(), ub.lambda.as_slice()) <= dist(&a, &b) + 1e-12);
            }

            #[test]
            fn origin_is_fixed_under_satisfied_gaps(gaps in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 1..50), eta in 0.0..2.0f64) {
                let mut l = DualState::zeros(3);
                for g in &gaps {
                    l = dual_update(&l, g, eta).unwrap().lambda;
                    prop_assert_eq!(l.as_slice(), &[0.0, 0.0, 0.0]);
                }
            }
        }
    }
}
