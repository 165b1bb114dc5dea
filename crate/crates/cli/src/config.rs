//! Experiment configuration files.
//!
//! Configs are TOML with a `schema_version`, an experiment `kind`, a seed
//! list, an output directory and the blocks the kind needs. Unknown keys are
//! rejected so that misspelled knobs do not silently fall back to defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use acrl::baselines::PrimalDualConfig;
use acrl::dual::DualState;
use acrl::env::{ContinuousMonitoringEnv, Rect, TabularCmdp};
use acrl::executor::ExecConfig;
use acrl::policy::RbfLayout;
use acrl::trainer::{BaselineMode, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_ROOT_VAR: &str = "ACRL_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    TabularAcrl,
    ContinuousAcrl,
    PrimalDual,
    OracleCertify,
    T0Sweep,
    PrimalAverage,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::TabularAcrl => "tabular-acrl",
            Kind::ContinuousAcrl => "continuous-acrl",
            Kind::PrimalDual => "primal-dual",
            Kind::OracleCertify => "oracle-certify",
            Kind::T0Sweep => "t0-sweep",
            Kind::PrimalAverage => "primal-average",
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: Kind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub environment: EnvironmentBlock,
    pub trainer: Option<TrainerBlock>,
    pub executor: Option<ExecutorBlock>,
    pub primal_dual: Option<PrimalDualBlock>,
    pub oracle: Option<OracleBlock>,
    pub sweep: Option<SweepBlock>,
    pub probe: Option<ProbeBlock>,
    pub averaging: Option<AveragingBlock>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentBlock {
    /// The three-state monitoring MDP; `thresholds = [c1, c2]`.
    Monitoring { thresholds: Vec<f64> },
    /// The continuous region-monitoring task. Regions are
    /// `[x_min, x_max, y_min, y_max]`; omitted geometry uses the four-region
    /// layout on `[0, 10]²`.
    Continuous {
        thresholds: Vec<f64>,
        bounds: Option<[f64; 4]>,
        regions: Option<Vec<[f64; 4]>>,
        max_step: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    BatchMean,
    OffsetBatchMean,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainerBlock {
    pub iterations: usize,
    pub horizon: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub lambda_max: f64,
    pub baseline: Baseline,
    pub log_every: usize,
    pub spatial_centers: usize,
    pub lambda_centers: usize,
    pub bandwidth_factor: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExecutorBlock {
    pub eta_lambda: f64,
    pub t0: usize,
    pub epochs: usize,
    #[serde(default)]
    pub lambda0: Option<Vec<f64>>,
    #[serde(default)]
    pub record_steps: bool,
    #[serde(default = "default_resolution")]
    pub occupancy_resolution: usize,
}

fn default_resolution() -> usize {
    20
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PrimalDualBlock {
    pub eta_theta: f64,
    pub eta_lambda: f64,
    pub t0: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    pub grid_step: f64,
    pub grid_max: f64,
    pub refine_step: f64,
    /// Multiplier used for the recovery certificate; the refined dual
    /// minimizer when omitted.
    #[serde(default)]
    pub lambda_star: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub t0_values: Vec<usize>,
    pub total_steps: usize,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub lambda: Vec<f64>,
    /// 1-based index of the region the policy should head for.
    pub region: usize,
    pub resolution: usize,
    pub min_fraction: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AveragingBlock {
    /// Steps executed with the frozen averaged policy.
    pub frozen_steps: usize,
}

/// A validated config together with the text it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<LoadedConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let config = parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(LoadedConfig { config, text })
}

fn rect(v: [f64; 4]) -> Rect {
    Rect::new(v[0], v[1], v[2], v[3])
}

fn require<'a, T>(block: &'a Option<T>, name: &str, kind: Kind) -> Result<&'a T, String> {
    block
        .as_ref()
        .ok_or_else(|| format!("missing block `[{name}]`, required for kind `{}`", kind.name()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            return Err("field `seeds` must list at least one seed".into());
        }
        let thresholds = self.thresholds();
        if thresholds.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("field `environment.thresholds` must lie in [0, 1]".into());
        }
        match &self.environment {
            EnvironmentBlock::Monitoring { thresholds } => {
                if thresholds.len() != 2 {
                    return Err(format!(
                        "field `environment.thresholds` needs 2 entries for the monitoring MDP, got {}",
                        thresholds.len()
                    ));
                }
                let total: f64 = thresholds.iter().sum();
                if total >= 1.0 {
                    return Err(format!(
                        "field `environment.thresholds` sums to {total}; the monitored states are disjoint so the sum must be below 1"
                    ));
                }
            }
            // the constructor rejects oversubscribed disjoint regions
            EnvironmentBlock::Continuous { .. } => {
                self.continuous_env()?;
            }
        }

        let k = self.kind;
        let tabular_only = |what: &str| -> Result<(), String> {
            match self.environment {
                EnvironmentBlock::Monitoring { .. } => Ok(()),
                _ => Err(format!("kind `{}` needs `environment.type = \"monitoring\"` ({what})", k.name())),
            }
        };
        match k {
            Kind::TabularAcrl => {
                tabular_only("exact Lagrangian maximizers")?;
                self.exec_config(require(&self.executor, "executor", k)?)?;
            }
            Kind::ContinuousAcrl => {
                if !matches!(self.environment, EnvironmentBlock::Continuous { .. }) {
                    return Err(format!("kind `{}` needs `environment.type = \"continuous\"`", k.name()));
                }
                self.train_parts()?;
                self.exec_config(require(&self.executor, "executor", k)?)?;
                let probe = require(&self.probe, "probe", k)?;
                if probe.region == 0 || probe.region > thresholds.len() {
                    return Err(format!("field `probe.region` must be between 1 and {}", thresholds.len()));
                }
                if probe.lambda.len() != thresholds.len() {
                    return Err(format!("field `probe.lambda` needs {} entries", thresholds.len()));
                }
                if probe.resolution == 0 {
                    return Err("field `probe.resolution` must be positive".into());
                }
            }
            Kind::PrimalDual => {
                tabular_only("the switch-delay comparison")?;
                self.primal_dual_config()?;
            }
            Kind::OracleCertify => {
                tabular_only("the occupation-measure program")?;
                let o = require(&self.oracle, "oracle", k)?;
                if !(o.grid_step > 0.0 && o.refine_step > 0.0 && o.grid_max >= 0.0) {
                    return Err("fields `oracle.grid_step` and `oracle.refine_step` must be positive".into());
                }
                if let Some(l) = &o.lambda_star {
                    if l.len() != thresholds.len() {
                        return Err(format!("field `oracle.lambda_star` needs {} entries", thresholds.len()));
                    }
                }
            }
            Kind::T0Sweep => {
                tabular_only("exact Lagrangian maximizers")?;
                self.exec_config(require(&self.executor, "executor", k)?)?;
                let s = require(&self.sweep, "sweep", k)?;
                if s.t0_values.len() < 2 || s.t0_values.contains(&0) {
                    return Err("field `sweep.t0_values` needs at least two positive values".into());
                }
                if s.total_steps == 0 {
                    return Err("field `sweep.total_steps` must be positive".into());
                }
            }
            Kind::PrimalAverage => {
                tabular_only("exact Lagrangian maximizers")?;
                self.exec_config(require(&self.executor, "executor", k)?)?;
                if self.averaging.as_ref().is_some_and(|a| a.frozen_steps == 0) {
                    return Err("field `averaging.frozen_steps` must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn thresholds(&self) -> &[f64] {
        match &self.environment {
            EnvironmentBlock::Monitoring { thresholds } | EnvironmentBlock::Continuous { thresholds, .. } => thresholds,
        }
    }

    pub fn monitoring_env(&self) -> Result<TabularCmdp, String> {
        match &self.environment {
            EnvironmentBlock::Monitoring { thresholds } => Ok(TabularCmdp::monitoring(thresholds[0], thresholds[1])),
            _ => Err("not a monitoring environment".into()),
        }
    }

    pub fn continuous_env(&self) -> Result<ContinuousMonitoringEnv, String> {
        match &self.environment {
            EnvironmentBlock::Continuous {
                thresholds,
                bounds,
                regions,
                max_step,
            } => {
                let default = ContinuousMonitoringEnv::default_four_regions();
                let bounds = bounds.map(rect).unwrap_or(default.bounds());
                let regions = match regions {
                    Some(r) => r.iter().copied().map(rect).collect(),
                    None => default.regions().to_vec(),
                };
                ContinuousMonitoringEnv::new(bounds, regions, thresholds.clone(), max_step.unwrap_or(default.max_step()))
                    .map_err(|e| format!("block `[environment]`: {e}"))
            }
            _ => Err("not a continuous environment".into()),
        }
    }

    pub fn exec_config(&self, block: &ExecutorBlock) -> Result<ExecConfig, String> {
        let lambda0 = match &block.lambda0 {
            Some(v) => {
                if v.len() != self.thresholds().len() {
                    return Err(format!("field `executor.lambda0` needs {} entries", self.thresholds().len()));
                }
                Some(DualState::new(v.clone()).map_err(|e| format!("field `executor.lambda0`: {e}"))?)
            }
            None => None,
        };
        let cfg = ExecConfig {
            eta_lambda: block.eta_lambda,
            t0: block.t0,
            epochs: block.epochs,
            lambda0,
            record_steps: block.record_steps,
            occupancy_resolution: block.occupancy_resolution,
        };
        cfg.validate().map_err(|e| format!("block `[executor]`: {e}"))?;
        Ok(cfg)
    }

    pub fn executor(&self) -> Result<ExecConfig, String> {
        self.exec_config(require(&self.executor, "executor", self.kind)?)
    }

    pub fn train_parts(&self) -> Result<(TrainConfig, RbfLayout), String> {
        let t = require(&self.trainer, "trainer", self.kind)?;
        let cfg = TrainConfig {
            iterations: t.iterations,
            horizon: t.horizon,
            step_size: t.step_size,
            batch_size: t.batch_size,
            lambda_max: t.lambda_max,
            baseline: match t.baseline {
                Baseline::None => BaselineMode::None,
                Baseline::BatchMean => BaselineMode::BatchMean,
                Baseline::OffsetBatchMean => BaselineMode::OffsetBatchMean,
            },
            log_every: t.log_every,
            checkpoint_every: None,
        };
        cfg.validate().map_err(|e| format!("block `[trainer]`: {e}"))?;
        if t.spatial_centers == 0 || t.lambda_centers == 0 {
            return Err("fields `trainer.spatial_centers` and `trainer.lambda_centers` must be positive".into());
        }
        if !(t.bandwidth_factor > 0.0 && t.sigma > 0.0) {
            return Err("fields `trainer.bandwidth_factor` and `trainer.sigma` must be positive".into());
        }
        let layout = RbfLayout {
            spatial_centers: t.spatial_centers,
            lambda_centers: t.lambda_centers,
            bandwidth_factor: t.bandwidth_factor,
            sigma: t.sigma,
        };
        Ok((cfg, layout))
    }

    pub fn primal_dual_config(&self) -> Result<PrimalDualConfig, String> {
        let b = require(&self.primal_dual, "primal_dual", self.kind)?;
        let cfg = PrimalDualConfig {
            eta_theta: b.eta_theta,
            eta_lambda: b.eta_lambda,
            t0: b.t0,
            epochs: b.epochs,
            occupancy_resolution: 1,
        };
        cfg.validate().map_err(|e| format!("block `[primal_dual]`: {e}"))?;
        if !(cfg.eta_lambda > 0.0) {
            return Err("field `primal_dual.eta_lambda` must be positive".into());
        }
        Ok(cfg)
    }

    /// `output_dir`, placed under `$ACRL_OUTPUT_ROOT` when it is relative and
    /// the variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir, std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
    }
}

pub fn resolve_output(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABULAR: &str = r#"
schema_version = 1
kind = "tabular-acrl"
seeds = [0, 1]
output_dir = "out"

[environment]
type = "monitoring"
thresholds = [0.3333333333333333, 0.3333333333333333]

[executor]
eta_lambda = 0.5
t0 = 10
epochs = 1000
"#;

    #[test]
    fn parses_a_tabular_config() {
        let cfg = parse(TABULAR).unwrap();
        assert_eq!(cfg.kind, Kind::TabularAcrl);
        assert_eq!(cfg.seeds, vec![0, 1]);
        let exec = cfg.executor().unwrap();
        assert_eq!(exec.occupancy_resolution, 20);
        assert!(!exec.record_steps);
    }

    #[test]
    fn missing_thresholds_names_the_field() {
        let text = TABULAR.replace("thresholds = [0.3333333333333333, 0.3333333333333333]\n", "");
        let err = parse(&text).unwrap_err();
        assert!(err.contains("thresholds"), "{err}");
    }

    #[test]
    fn oversubscribed_thresholds_are_rejected() {
        let text = TABULAR.replace("[0.3333333333333333, 0.3333333333333333]", "[0.5, 0.5]");
        let err = parse(&text).unwrap_err();
        assert!(err.contains("sum"), "{err}");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let text = TABULAR.replace("tabular-acrl", "bandit");
        let err = parse(&text).unwrap_err();
        assert!(err.contains("kind") || err.contains("bandit"), "{err}");
    }

    #[test]
    fn missing_block_is_named() {
        let text = TABULAR.replace("tabular-acrl", "oracle-certify");
        let err = parse(&text).unwrap_err();
        assert!(err.contains("[oracle]"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected_with_its_line() {
        let text = TABULAR.replace("t0 = 10", "t0 = 10\nepoch_length = 3");
        let err = parse(&text).unwrap_err();
        assert!(err.contains("epoch_length") && err.contains("line"), "{err}");
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let err = parse(&TABULAR.replace("[0, 1]", "[]")).unwrap_err();
        assert!(err.contains("seeds"), "{err}");
    }

    #[test]
    fn continuous_kind_needs_a_continuous_environment() {
        let err = parse(&TABULAR.replace("tabular-acrl", "continuous-acrl")).unwrap_err();
        assert!(err.contains("continuous"), "{err}");
    }

    #[test]
    fn relative_output_goes_under_the_root() {
        let p = resolve_output(Path::new("runs/a"), Some(PathBuf::from("/tmp/root")));
        assert_eq!(p, PathBuf::from("/tmp/root/runs/a"));
        let abs = resolve_output(Path::new("/abs"), Some(PathBuf::from("/tmp/root")));
        assert_eq!(abs, PathBuf::from("/abs"));
        assert_eq!(resolve_output(Path::new("x"), None), PathBuf::from("x"));
    }
}
