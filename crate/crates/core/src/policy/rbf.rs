use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::Rect;
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &str = "acrl-rbf-policy";
const CHECKPOINT_VERSION: u32 = 1;

/// Gaussian policy whose mean is a weighted sum of Gaussian kernels over the
/// augmented space `S × Λ`.
///
/// Kernel centres form a tensor grid: `axes[d]` lists the centre coordinates
/// along dimension `d` (two spatial dimensions followed by one per
/// multiplier), so the kernel value factorizes across dimensions. Kernel `k`
/// enumerates the grid in row-major order, last dimension fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfPolicy {
    axes: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    theta: Vec<[f64; 2]>,
    sigma: f64,
    lambda_max: f64,
}

/// Layout of a grid policy.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfLayout {
    pub spatial_centers: usize,
    pub lambda_centers: usize,
    /// Bandwidth as a multiple of the centre spacing.
    pub bandwidth_factor: f64,
    pub sigma: f64,
}

impl Default for RbfLayout {
    fn default() -> Self {
        Self {
            spatial_centers: 6,
            lambda_centers: 3,
            bandwidth_factor: 0.6,
            sigma: 0.5,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl RbfPolicy {
    pub fn new(axes: Vec<Vec<f64>>, bandwidth: Vec<f64>, theta: Vec<[f64; 2]>, sigma: f64, lambda_max: f64) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidPolicy(msg));
        if axes.len() < 2 {
            return invalid("at least the two spatial dimensions are required".into());
        }
        if bandwidth.len() != axes.len() {
            return invalid(format!("{} bandwidths for {} dimensions", bandwidth.len(), axes.len()));
        }
        if axes.iter().any(|a| a.is_empty() || a.iter().any(|v| !v.is_finite())) {
            return invalid("centres must be finite and every axis non-empty".into());
        }
        if bandwidth.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return invalid("bandwidths must be positive".into());
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma must be positive, got {sigma}"));
        }
        if !(lambda_max >= 0.0 && lambda_max.is_finite()) {
            return invalid(format!("lambda_max must be nonnegative, got {lambda_max}"));
        }
        let k: usize = axes.iter().map(Vec::len).product();
        if theta.len() != k {
            return invalid(format!("theta has {} rows for {k} kernels", theta.len()));
        }
        if theta.iter().any(|t| !(t[0].is_finite() && t[1].is_finite())) {
            return invalid("theta must be finite".into());
        }
        Ok(Self {
            axes,
            bandwidth,
            theta,
            sigma,
            lambda_max,
        })
    }

    /// Uniform centre grid over `bounds × [0, λ_max]^m` with zero weights.
    pub fn grid(bounds: Rect, m: usize, lambda_max: f64, layout: &RbfLayout) -> Result<Self> {
        let spacing = |lo: f64, hi: f64, n: usize| if n > 1 { (hi - lo) / (n - 1) as f64 } else { hi - lo };
        let mut axes = vec![
            linspace(bounds.x_min, bounds.x_max, layout.spatial_centers),
            linspace(bounds.y_min, bounds.y_max, layout.spatial_centers),
        ];
        let mut bandwidth = vec![
            layout.bandwidth_factor * spacing(bounds.x_min, bounds.x_max, layout.spatial_centers),
            layout.bandwidth_factor * spacing(bounds.y_min, bounds.y_max, layout.spatial_centers),
        ];
        for _ in 0..m {
            axes.push(linspace(0.0, lambda_max, layout.lambda_centers));
            let width = spacing(0.0, lambda_max, layout.lambda_centers);
            // degenerate box: any positive width gives constant features
            bandwidth.push(layout.bandwidth_factor * if width > 0.0 { width } else { 1.0 });
        }
        let k = axes.iter().map(Vec::len).product();
        Self::new(axes, bandwidth, vec![[0.0; 2]; k], layout.sigma, lambda_max)
    }

    pub fn num_kernels(&self) -> usize {
        self.theta.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.axes.len() - 2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn theta(&self) -> &[[f64; 2]] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.theta
    }

    pub fn theta_norm(&self) -> f64 {
        self.theta.iter().map(|t| t[0] * t[0] + t[1] * t[1]).sum::<f64>().sqrt()
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.num_constraints() {
            return Err(Error::DimensionMismatch {
                context: "rbf policy multipliers",
                expected: self.num_constraints(),
                got: lambda.len(),
            });
        }
        Ok(())
    }

    /// Kernel values `φ_k(s, λ)`, with `λ` clamped to `[0, λ_max]`.
    pub fn features_into(&self, s: [f64; 2], lambda: &[f64], out: &mut Vec<f64>) -> Result<()> {
        self.check_lambda(lambda)?;
        out.clear();
        out.push(1.0);
        let mut scratch = Vec::with_capacity(self.theta.len());
        for (d, axis) in self.axes.iter().enumerate() {
            let x = match d {
                0 | 1 => s[d],
                _ => lambda[d - 2].clamp(0.0, self.lambda_max),
            };
            let bw = self.bandwidth[d];
            let factors: Vec<f64> = axis
                .iter()
                .map(|c| {
                    let z = (x - c) / bw;
                    (-0.5 * z * z).exp()
                })
                .collect();
            scratch.clear();
            for &f in out.iter() {
                scratch.extend(factors.iter().map(|g| f * g));
            }
            std::mem::swap(out, &mut scratch);
        }
        Ok(())
    }

    pub fn features(&self, s: [f64; 2], lambda: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.theta.len());
        self.features_into(s, lambda, &mut out)?;
        Ok(out)
    }

    pub fn mean_from_features(&self, phi: &[f64]) -> [f64; 2] {
        let mut mean = [0.0; 2];
        for (f, t) in phi.iter().zip(&self.theta) {
            mean[0] += f * t[0];
            mean[1] += f * t[1];
        }
        mean
    }

    pub fn mean(&self, s: [f64; 2], lambda: &[f64]) -> Result<[f64; 2]> {
        Ok(self.mean_from_features(&self.features(s, lambda)?))
    }

    /// `mean(s, λ) + σ z` with `z` standard normal.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: [f64; 2], lambda: &[f64], rng: &mut R) -> Result<[f64; 2]> {
        let mean = self.mean(s, lambda)?;
        Ok(self.perturb(mean, rng))
    }

    pub(crate) fn perturb<R: Rng + ?Sized>(&self, mean: [f64; 2], rng: &mut R) -> [f64; 2] {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [mean[0] + self.sigma * z0, mean[1] + self.sigma * z1]
    }

    /// `log N(action; mean(s, λ), σ² I)`.
    pub fn log_density(&self, s: [f64; 2], lambda: &[f64], action: [f64; 2]) -> Result<f64> {
        let mean = self.mean(s, lambda)?;
        let var = self.sigma * self.sigma;
        let d0 = action[0] - mean[0];
        let d1 = action[1] - mean[1];
        Ok(-(d0 * d0 + d1 * d1) / (2.0 * var) - (2.0 * std::f64::consts::PI * var).ln())
    }

    /// `∂/∂θ log N(action; mean, σ² I) = φ ⊗ (action − mean)/σ²`.
    pub fn logprob_grad(&self, s: [f64; 2], lambda: &[f64], action: [f64; 2]) -> Result<Vec<[f64; 2]>> {
        let phi = self.features(s, lambda)?;
        let mean = self.mean_from_features(&phi);
        let var = self.sigma * self.sigma;
        let u = [(action[0] - mean[0]) / var, (action[1] - mean[1]) / var];
        Ok(phi.iter().map(|f| [f * u[0], f * u[1]]).collect())
    }

    /// Text checkpoint. Floats use Rust's shortest round-trip formatting, so
    /// `from_checkpoint(to_checkpoint(p)) == p` exactly.
    ///
    /// ```text
    /// acrl-rbf-policy 1
    /// dims <D>
    /// axis <n> <c_1> … <c_n>        (D lines)
    /// bandwidth <b_1> … <b_D>
    /// sigma <σ>
    /// lambda_max <λ_max>
    /// theta <K>
    /// <θ_k,x> <θ_k,y>               (K lines)
    /// ```
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(out, "dims {}", self.axes.len()).unwrap();
        for axis in &self.axes {
            writeln!(out, "axis {} {}", axis.len(), join(axis)).unwrap();
        }
        writeln!(out, "bandwidth {}", join(&self.bandwidth)).unwrap();
        writeln!(out, "sigma {:e}", self.sigma).unwrap();
        writeln!(out, "lambda_max {:e}", self.lambda_max).unwrap();
        writeln!(out, "theta {}", self.theta.len()).unwrap();
        for t in &self.theta {
            writeln!(out, "{:e} {:e}", t[0], t[1]).unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let err = |msg: &str| Error::Checkpoint(msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| err(&format!("missing {what}")));
        let parse_f = |tok: &str| tok.parse::<f64>().map_err(|_| err(&format!("bad number {tok:?}")));
        let parse_u = |tok: &str| tok.parse::<usize>().map_err(|_| err(&format!("bad count {tok:?}")));

        let header: Vec<&str> = next("header")?.split_whitespace().collect();
        if header.first() != Some(&CHECKPOINT_MAGIC) {
            return Err(err("not an rbf policy checkpoint"));
        }
        if header.get(1) != Some(&"1") {
            return Err(err(&format!("unsupported version {:?}", header.get(1))));
        }
        let field = |line: &str, key: &str| -> Result<Vec<String>> {
            let mut toks = line.split_whitespace();
            if toks.next() != Some(key) {
                return Err(err(&format!("expected `{key}`")));
            }
            Ok(toks.map(str::to_string).collect())
        };
        let dims = parse_u(field(next("dims")?, "dims")?.first().ok_or_else(|| err("dims"))?)?;
        let mut axes = Vec::with_capacity(dims);
        for _ in 0..dims {
            let toks = field(next("axis")?, "axis")?;
            let n = parse_u(toks.first().ok_or_else(|| err("axis length"))?)?;
            let vals = toks[1..].iter().map(|t| parse_f(t)).collect::<Result<Vec<_>>>()?;
            if vals.len() != n {
                return Err(err("axis length mismatch"));
            }
            axes.push(vals);
        }
        let bandwidth = field(next("bandwidth")?, "bandwidth")?
            .iter()
            .map(|t| parse_f(t))
            .collect::<Result<Vec<_>>>()?;
        let sigma = parse_f(field(next("sigma")?, "sigma")?.first().ok_or_else(|| err("sigma"))?)?;
        let lambda_max = parse_f(field(next("lambda_max")?, "lambda_max")?.first().ok_or_else(|| err("lambda_max"))?)?;
        let k = parse_u(field(next("theta")?, "theta")?.first().ok_or_else(|| err("theta"))?)?;
        let mut theta = Vec::with_capacity(k);
        for _ in 0..k {
            let line = next("theta row")?;
            let vals = line.split_whitespace().map(parse_f).collect::<Result<Vec<_>>>()?;
            if vals.len() != 2 {
                return Err(err("theta rows hold two numbers"));
            }
            theta.push([vals[0], vals[1]]);
        }
        Self::new(axes, bandwidth, theta, sigma, lambda_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_policy(rng: &mut ChaCha8Rng) -> RbfPolicy {
        let bounds = Rect::new(0.0, 10.0, 0.0, 10.0);
        let layout = RbfLayout {
            spatial_centers: 3,
            lambda_centers: 2,
            ..RbfLayout::default()
        };
        let mut p = RbfPolicy::grid(bounds, 2, 1.0, &layout).unwrap();
        for t in p.theta_mut() {
            *t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        }
        p
    }

    #[test]
    fn default_grid_size() {
        let p = RbfPolicy::grid(Rect::new(0.0, 10.0, 0.0, 10.0), 4, 0.2, &RbfLayout::default()).unwrap();
        assert_eq!(p.num_kernels(), 6 * 6 * 81);
        assert!((p.bandwidth()[0] - 1.2).abs() < 1e-12);
        assert!((p.bandwidth()[2] - 0.06).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_mean() {
        let p = RbfPolicy::grid(Rect::new(0.0, 10.0, 0.0, 10.0), 1, 1.0, &RbfLayout::default()).unwrap();
        assert_eq!(p.mean([3.0, 4.0], &[0.2]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn kernel_is_one_at_its_center() {
        let p = RbfPolicy::new(vec![vec![2.0], vec![3.0], vec![0.5]], vec![1.0, 1.0, 1.0], vec![[1.0, -2.0]], 0.5, 1.0).unwrap();
        assert_eq!(p.mean([2.0, 3.0], &[0.5]).unwrap(), [1.0, -2.0]);
    }

    #[test]
    fn kernel_decays_far_from_centers() {
        let p = RbfPolicy::new(vec![vec![0.0], vec![0.0]], vec![0.5, 0.5], vec![[1.0, 1.0]], 0.5, 0.0).unwrap();
        let m = p.mean([5.0, 5.0], &[]).unwrap();
        assert!(m[0].hypot(m[1]) < 1e-8);
    }

    #[test]
    fn lambda_features_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = small_policy(&mut rng);
        assert_eq!(p.mean([4.0, 4.0], &[7.0, 0.3]).unwrap(), p.mean([4.0, 4.0], &[1.0, 0.3]).unwrap());
    }

    #[test]
    fn score_vanishes_at_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = small_policy(&mut rng);
        let mean = p.mean([1.0, 9.0], &[0.2, 0.7]).unwrap();
        let g = p.logprob_grad([1.0, 9.0], &[0.2, 0.7], mean).unwrap();
        assert!(g.iter().all(|r| r[0] == 0.0 && r[1] == 0.0));
    }

    #[test]
    fn score_is_linear_in_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = small_policy(&mut rng);
        let (s, l) = ([6.0, 2.0], [0.4, 0.1]);
        let mean = p.mean(s, &l).unwrap();
        let a1 = [mean[0] + 0.3, mean[1] - 0.2];
        let a2 = [mean[0] + 0.6, mean[1] - 0.4];
        let g1 = p.logprob_grad(s, &l, a1).unwrap();
        let g2 = p.logprob_grad(s, &l, a2).unwrap();
        for (x, y) in g1.iter().zip(&g2) {
            assert!((2.0 * x[0] - y[0]).abs() <= 1e-12 * y[0].abs().max(1.0));
            assert!((2.0 * x[1] - y[1]).abs() <= 1e-12 * y[1].abs().max(1.0));
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(RbfPolicy::new(vec![vec![0.0], vec![0.0]], vec![1.0, 1.0], vec![[0.0; 2]], 0.0, 1.0).is_err());
        assert!(RbfPolicy::new(vec![vec![0.0], vec![0.0]], vec![1.0, 0.0], vec![[0.0; 2]], 0.5, 1.0).is_err());
        assert!(RbfPolicy::new(vec![vec![0.0], vec![0.0]], vec![1.0, 1.0], vec![[f64::NAN, 0.0]], 0.5, 1.0).is_err());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(RbfPolicy::from_checkpoint("hello").is_err());
        assert!(RbfPolicy::from_checkpoint("acrl-rbf-policy 2\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn checkpoint_round_trips(seed in any::<u64>(), sigma in 0.01..3.0f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut p = small_policy(&mut rng);
                p.sigma = sigma;
                let back = RbfPolicy::from_checkpoint(&p.to_checkpoint()).unwrap();
                prop_assert_eq!(back, p);
            }
        }
    }
}
