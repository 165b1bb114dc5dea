//! The REINFORCE direction against a finite-difference estimate of the
//! gradient of the expected augmented return, on a two-step toy task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use acrl::dual::DualState;
use acrl::env::{Environment, Rect, RewardVector};
use acrl::policy::{RbfLayout, RbfPolicy};
use acrl::trainer::rollout_gradient;
use acrl::Result;

/// Deterministic drift `s' = s + a/2`; the objective rewards ending near
/// `(1, 0)` and the single constraint rewards moving right.
struct Drift {
    thresholds: Vec<f64>,
}

impl Environment for Drift {
    type State = [f64; 2];
    type Action = [f64; 2];

    fn num_constraints(&self) -> usize {
        1
    }

    fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    fn start_state<R: Rng + ?Sized>(&self, _rng: &mut R) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn step<R: Rng + ?Sized>(&self, s: &[f64; 2], a: &[f64; 2], _rng: &mut R) -> Result<([f64; 2], RewardVector)> {
        let next = [s[0] + 0.5 * a[0], s[1] + 0.5 * a[1]];
        Ok((next, self.reward_at(s, a)))
    }

    fn reward_at(&self, s: &[f64; 2], a: &[f64; 2]) -> RewardVector {
        let x = s[0] + 0.5 * a[0];
        let y = s[1] + 0.5 * a[1];
        RewardVector::new(vec![-(x - 1.0).powi(2) - y * y, x.tanh()])
    }

    fn occupancy_bins(&self, _resolution: usize) -> usize {
        1
    }

    fn occupancy_bin(&self, _s: &[f64; 2], _resolution: usize) -> usize {
        0
    }

    fn describe_state(&self, s: &[f64; 2]) -> String {
        format!("{s:?}")
    }

    fn describe_action(&self, a: &[f64; 2]) -> String {
        format!("{a:?}")
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn reinforce_direction_is_unbiased() {
    let env = Drift { thresholds: vec![0.2] };
    let layout = RbfLayout {
        spatial_centers: 3,
        lambda_centers: 2,
        sigma: 0.5,
        ..RbfLayout::default()
    };
    let mut policy = RbfPolicy::grid(Rect::new(-1.0, 1.0, -1.0, 1.0), 1, 1.0, &layout).unwrap();
    let mut init = ChaCha8Rng::seed_from_u64(11);
    for t in policy.theta_mut() {
        *t = [init.random_range(-0.5..0.5), init.random_range(-0.5..0.5)];
    }
    let lambda = DualState::new(vec![0.7]).unwrap();
    let start = [0.0, 0.0];
    let reps = 10_000;
    let horizon = 2;

    // kernels nearest the start state carry most of the gradient
    let phi = policy.features(start, lambda.as_slice()).unwrap();
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|a, b| phi[*b].total_cmp(&phi[*a]));
    let coords: Vec<(usize, usize)> = order[..3].iter().flat_map(|&k| [(k, 0), (k, 1)]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut samples = vec![Vec::with_capacity(reps); coords.len()];
    for _ in 0..reps {
        let g = rollout_gradient(&env, &policy, start, &lambda, horizon, &mut rng).unwrap();
        for (c, &(k, d)) in coords.iter().enumerate() {
            samples[c].push(g.augmented_return * g.score[k][d]);
        }
    }

    // central differences of the return with shared noise per repetition
    let h = 1e-4;
    for (c, &(k, d)) in coords.iter().enumerate() {
        let mut diffs = Vec::with_capacity(reps);
        for r in 0..reps as u64 {
            let shifted = |delta: f64| {
                let mut p = policy.clone();
                p.theta_mut()[k][d] += delta;
                let mut noise = ChaCha8Rng::seed_from_u64(1_000_000 + r);
                rollout_gradient(&env, &p, start, &lambda, horizon, &mut noise).unwrap().augmented_return
            };
            diffs.push((shifted(h) - shifted(-h)) / (2.0 * h));
        }
        let (est, se_est) = mean_and_se(&samples[c]);
        let (fd, se_fd) = mean_and_se(&diffs);
        let se = (se_est * se_est + se_fd * se_fd).sqrt();
        assert!(
            (est - fd).abs() <= 3.0 * se,
            "coordinate ({k}, {d}): REINFORCE {est:.5} vs finite difference {fd:.5}, standard error {se:.5}"
        );
    }
}
