//! Experiment execution. Every kind produces its artifacts in memory as
//! `(relative path, bytes)` pairs plus a [`Summary`]; writing them out is
//! left to the caller.

use rayon::prelude::*;

use acrl::baselines::{
    average_maximizers, occupation_average_maximizers, run_primal_dual, switch_delay_compare, switch_events, SoftmaxTabularPolicy,
};
use acrl::dual::{deficit_identity_check, DualState};
use acrl::env::{Environment, TabularCmdp, R1};
use acrl::eval::evaluate_policy;
use acrl::executor::{execute_acrl, t0_bias_sweep, ExecConfig};
use acrl::oracle::{certify_primal_recovery_gap, certify_strong_duality, solve_cmdp_lp};
use acrl::policy::{ExactMaximizer, RbfPolicy, TabularPolicy};
use acrl::report::{
    emit_heatmap, fmt_f64, write_dual_surface_csv, write_dual_trace_csv, write_execution_csv, write_learning_curve_csv,
    write_occupancy_csv, write_t0_sweep_csv, Summary,
};
use acrl::seed::SeedStream;
use acrl::trainer::{direction_probe, lambda_grid, train_acrl};

use crate::config::{ExperimentConfig, Kind, OracleBlock};

/// Tolerance on feasibility margins of long executions.
pub const FEASIBILITY_TOLERANCE: f64 = 0.02;
/// Extra room on the objective and slackness bounds.
pub const OPTIMALITY_TOLERANCE: f64 = 0.02;
pub const SLACKNESS_TOLERANCE: f64 = 0.05;
/// Tolerance on the mean-over-seeds constraint values of the continuous task.
pub const CONTINUOUS_TOLERANCE: f64 = 0.03;
/// Sweep rows with fewer epochs are reported but not asserted.
pub const SWEEP_MIN_EPOCHS: usize = 100;

pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Summary,
}

type Outcome<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> acrl::Result<()>) -> Outcome<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(err)?;
    Ok(buf)
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

pub fn run(cfg: &ExperimentConfig) -> Outcome<RunOutput> {
    match cfg.kind {
        Kind::TabularAcrl => tabular_acrl(cfg),
        Kind::ContinuousAcrl => continuous_acrl(cfg),
        Kind::PrimalDual => primal_dual(cfg),
        Kind::OracleCertify => oracle_certify(&cfg.monitoring_env()?, cfg.oracle.as_ref().expect("validated")),
        Kind::T0Sweep => t0_sweep(cfg),
        Kind::PrimalAverage => primal_average(cfg),
    }
}

/// Per-seed work fans out over the rayon pool; results come back in seed
/// order, and every seed draws only from its own substreams.
fn per_seed<T: Send>(cfg: &ExperimentConfig, f: impl Fn(u64) -> Outcome<T> + Sync) -> Outcome<Vec<(u64, T)>> {
    cfg.seeds.par_iter().map(|&seed| f(seed).map(|t| (seed, t))).collect()
}

fn collect(results: Vec<(u64, RunOutput)>, mut summary: Summary) -> RunOutput {
    let mut files = Vec::new();
    for (seed, out) in results {
        for (path, bytes) in out.files {
            files.push((format!("seed-{seed}/{path}"), bytes));
        }
        summary.merge(&format!("seed-{seed}."), out.summary);
    }
    RunOutput { files, summary }
}

fn tabular_acrl(cfg: &ExperimentConfig) -> Outcome<RunOutput> {
    let mdp = cfg.monitoring_env()?;
    let exec = cfg.executor()?;
    let p_star = solve_cmdp_lp(&mdp).map_err(err)?.p_star;
    let bound = exec.eta_lambda * mdp.reward_bound().powi(2) / 2.0;
    let watched = mdp.action_index(R1, R1).map_err(err)?;

    let results = per_seed(cfg, |seed| {
        let mut rng = SeedStream::new(seed).rng("executor");
        let rep = execute_acrl(&mdp, &mut ExactMaximizer::new(), &exec, Some(&R1), &mut rng).map_err(err)?;
        let mut s = Summary::default();
        let mut files = vec![(
            "dual_trace.csv".to_string(),
            csv_bytes(|b| write_dual_trace_csv(b, &rep.dual_trace, &rep.probe_trace))?,
        )];
        if exec.record_steps {
            files.push(("execution.csv".into(), csv_bytes(|b| write_execution_csv(&mdp, &rep, b))?));
        }
        s.value("running_average", list(&rep.running_average));
        s.value("final_lambda", list(rep.final_lambda.as_slice()));
        s.number("slackness_average", rep.slackness_average());
        s.number("max_lambda_l1", rep.max_lambda_l1());

        let margin = rep.min_margin(mdp.thresholds());
        s.check("feasibility", margin >= -FEASIBILITY_TOLERANCE, format!("min margin {margin:.4}"));
        let floor = p_star - bound - OPTIMALITY_TOLERANCE;
        s.check(
            "optimality",
            rep.running_average[0] >= floor,
            format!("objective average {:.4} vs floor {floor:.4}", rep.running_average[0]),
        );
        let slack = rep.slackness_average();
        s.check(
            "slackness",
            slack <= bound + SLACKNESS_TOLERANCE,
            format!("{slack:.4} vs bound {:.4}", bound + SLACKNESS_TOLERANCE),
        );
        let ev = switch_events(&rep.probe_trace, 0, watched);
        match ev.lambda_cross {
            Some(_) => s.check("switch_delay", ev.delay() == Some(0), format!("{:?}", ev)),
            None => s.warn("switch_delay", false, "lambda_1 never crosses 1".to_string()),
        }
        if exec.record_steps && exec.lambda0.is_none() {
            let chk = deficit_identity_check(&rep.epochs, mdp.thresholds(), exec.eta_lambda, exec.t0).map_err(err)?;
            s.check("memory_identity", chk.worst() < 1e-12, format!("max discrepancy {:.1e}", chk.worst()));
        }
        Ok(RunOutput { files, summary: s })
    })?;

    let mut summary = Summary::default();
    summary.number("p_star", p_star);
    summary.number("dual_bound", bound);
    Ok(collect(results, summary))
}

fn continuous_acrl(cfg: &ExperimentConfig) -> Outcome<RunOutput> {
    let env = cfg.continuous_env()?;
    let (tcfg, layout) = cfg.train_parts()?;
    let exec = cfg.executor()?;
    let probe = cfg.probe.as_ref().expect("validated");
    let probe_lambda = DualState::new(probe.lambda.clone()).map_err(err)?;
    let target = env.regions()[probe.region - 1];
    let m = env.num_constraints();

    let results = per_seed(cfg, |seed| {
        let streams = SeedStream::new(seed);
        let mut policy = RbfPolicy::grid(env.bounds(), m, tcfg.lambda_max, &layout).map_err(err)?;
        let train = train_acrl(&env, &mut policy, &tcfg, &mut streams.rng("trainer")).map_err(err)?;
        let rep = execute_acrl(&env, &mut policy, &exec, None, &mut streams.rng("executor")).map_err(err)?;
        let p = direction_probe(&policy, env.bounds(), target, &probe_lambda, probe.resolution).map_err(err)?;

        let mut files = vec![
            ("learning_curve.csv".to_string(), csv_bytes(|b| write_learning_curve_csv(b, &train.curve))?),
            ("dual_trace.csv".into(), csv_bytes(|b| write_dual_trace_csv(b, &rep.dual_trace, &[]))?),
            (
                "occupancy.csv".into(),
                csv_bytes(|b| write_occupancy_csv(b, &rep.occupancy, rep.occupancy_resolution))?,
            ),
            (
                "occupancy.svg".into(),
                csv_bytes(|b| emit_heatmap(b, &rep.occupancy, rep.occupancy_resolution, env.bounds(), env.regions()))?,
            ),
            ("policy.ckpt".into(), policy.to_checkpoint().into_bytes()),
        ];
        if exec.record_steps {
            files.push(("execution.csv".into(), csv_bytes(|b| write_execution_csv(&env, &rep, b))?));
        }
        let mut s = Summary::default();
        s.value("running_average", list(&rep.running_average));
        s.value("final_lambda", list(rep.final_lambda.as_slice()));
        s.number("max_lambda_l1", rep.max_lambda_l1());
        s.number("theta_norm", policy.theta_norm());
        s.value("probe", format!("{}/{}", p.toward, p.points));
        s.warn(
            "feasibility",
            rep.min_margin(env.thresholds()) >= -CONTINUOUS_TOLERANCE,
            format!("min margin {:.4}", rep.min_margin(env.thresholds())),
        );
        Ok((RunOutput { files, summary: s }, rep.running_average, p.fraction(), rep.occupancy))
    })?;

    let n = results.len() as f64;
    let mean_avg: Vec<f64> = (0..=m).map(|i| results.iter().map(|(_, r)| r.1[i]).sum::<f64>() / n).collect();
    let mean_probe = results.iter().map(|(_, r)| r.2).sum::<f64>() / n;
    let bins = results[0].1 .3.len();
    let mean_occ: Vec<f64> = (0..bins).map(|b| results.iter().map(|(_, r)| r.3[b]).sum::<f64>() / n).collect();

    let mut summary = Summary::default();
    summary.value("mean_running_average", list(&mean_avg));
    summary.number("mean_probe_fraction", mean_probe);
    for (i, c) in env.thresholds().iter().enumerate() {
        let v = mean_avg[i + 1];
        summary.check(
            format!("constraint_{}", i + 1),
            v >= c - CONTINUOUS_TOLERANCE,
            format!("mean over seeds {v:.4} vs c {c}"),
        );
    }
    summary.check(
        "probe",
        mean_probe >= probe.min_fraction,
        format!("mean fraction {mean_probe:.3} vs {}", probe.min_fraction),
    );
    let (hi, lo) = threshold_extremes(env.thresholds());
    summary.warn(
        "occupancy_order",
        mean_avg[hi + 1] > mean_avg[lo + 1],
        format!("region {} time {:.4}, region {} time {:.4}", hi + 1, mean_avg[hi + 1], lo + 1, mean_avg[lo + 1]),
    );

    let resolution = exec.occupancy_resolution;
    let heat = csv_bytes(|b| emit_heatmap(b, &mean_occ, resolution, env.bounds(), env.regions()))?;
    let mut out = collect(results.into_iter().map(|(s, r)| (s, r.0)).collect(), summary);
    out.files.push(("occupancy_mean.csv".into(), csv_bytes(|b| write_occupancy_csv(b, &mean_occ, resolution))?));
    out.files.push(("occupancy_mean.svg".into(), heat));
    Ok(out)
}

/// Indices of the largest and smallest thresholds.
fn threshold_extremes(c: &[f64]) -> (usize, usize) {
    let by = |better: fn(f64, f64) -> bool| {
        (0..c.len()).fold(0, |best, i| if better(c[i], c[best]) { i } else { best })
    };
    (by(|a, b| a > b), by(|a, b| a < b))
}

fn primal_dual(cfg: &ExperimentConfig) -> Outcome<RunOutput> {
    let mdp = cfg.monitoring_env()?;
    let pd_cfg = cfg.primal_dual_config()?;
    let acrl_cfg = ExecConfig {
        eta_lambda: pd_cfg.eta_lambda,
        t0: pd_cfg.t0,
        epochs: pd_cfg.epochs,
        ..ExecConfig::default()
    };

    let results = per_seed(cfg, |seed| {
        let streams = SeedStream::new(seed);
        let acrl = execute_acrl(&mdp, &mut ExactMaximizer::new(), &acrl_cfg, Some(&R1), &mut streams.rng("executor")).map_err(err)?;
        let pd = run_primal_dual(
            &mdp,
            SoftmaxTabularPolicy::uniform(&mdp),
            &pd_cfg,
            None,
            Some(&R1),
            &mut streams.rng("primal-dual"),
        )
        .map_err(err)?;
        let cmp = switch_delay_compare(&mdp, &acrl, &pd.execution, R1, 0).map_err(err)?;
        let files = vec![
            (
                "acrl_dual_trace.csv".to_string(),
                csv_bytes(|b| write_dual_trace_csv(b, &acrl.dual_trace, &acrl.probe_trace))?,
            ),
            (
                "primal_dual_trace.csv".into(),
                csv_bytes(|b| write_dual_trace_csv(b, &pd.execution.dual_trace, &pd.execution.probe_trace))?,
            ),
        ];
        let mut s = Summary::default();
        s.value("acrl_switch", format!("{:?}", cmp.acrl));
        s.value("primal_dual_switch", format!("{:?}", cmp.primal_dual));
        s.number("acrl_peak_lambda_1", cmp.acrl_peak);
        s.number("primal_dual_peak_lambda_1", cmp.primal_dual_peak);
        s.value("primal_dual_running_average", list(&pd.execution.running_average));
        // crossing without a later switch counts as an unbounded delay
        let pd_late = cmp.primal_dual.lambda_cross.is_some() && cmp.primal_dual.delay().is_none_or(|d| d > 0);
        let delay_contrast = pd_late && cmp.acrl.delay() == Some(0);
        let peak_contrast = cmp.primal_dual_peak >= cmp.acrl_peak;
        s.warn("delay_contrast", delay_contrast, format!("delays {:?} vs {:?}", cmp.acrl.delay(), cmp.primal_dual.delay()));
        s.warn("peak_contrast", peak_contrast, format!("{:.4} vs {:.4}", cmp.primal_dual_peak, cmp.acrl_peak));
        Ok((RunOutput { files, summary: s }, delay_contrast, peak_contrast))
    })?;

    let n = results.len();
    let need = (3 * n).div_ceil(4);
    let delay = results.iter().filter(|(_, r)| r.1).count();
    let peak = results.iter().filter(|(_, r)| r.2).count();
    let mut summary = Summary::default();
    summary.check("delay_contrast", delay >= need, format!("{delay}/{n} seeds (need {need})"));
    summary.check("peak_contrast", peak >= need, format!("{peak}/{n} seeds (need {need})"));
    Ok(collect(results.into_iter().map(|(s, r)| (s, r.0)).collect(), summary))
}

pub fn oracle_certify(mdp: &TabularCmdp, block: &OracleBlock) -> Outcome<RunOutput> {
    let lp = solve_cmdp_lp(mdp).map_err(err)?;
    let grid = lambda_grid(mdp.num_constraints(), block.grid_step, block.grid_max).map_err(err)?;
    let duality = certify_strong_duality(mdp, &grid, block.refine_step).map_err(err)?;
    let lambda_star = match &block.lambda_star {
        Some(l) => DualState::new(l.clone()).map_err(err)?,
        None => duality.refined_argmin.clone(),
    };
    let recovery = certify_primal_recovery_gap(mdp, &lambda_star).map_err(err)?;

    let mut occ = String::from("state,action,rho\n");
    for (s, row) in lp.occupation.iter().enumerate() {
        for (j, rho) in row.iter().enumerate() {
            occ.push_str(&format!("{s},{},{}\n", mdp.actions(s)[j], fmt_f64(*rho)));
        }
    }
    let files = vec![
        ("lp_occupation.csv".to_string(), occ.into_bytes()),
        ("dual_surface.csv".into(), csv_bytes(|b| write_dual_surface_csv(b, &duality.coarse.points))?),
        ("recovery.txt".into(), recovery.describe().into_bytes()),
    ];

    let mut s = Summary::default();
    s.number("p_star", lp.p_star);
    s.value("lp_values", list(&lp.values));
    s.value("refined_argmin", list(duality.refined_argmin.as_slice()));
    s.number("refined_min", duality.refined_min);
    s.number("duality_gap", duality.gap);
    s.value("dual_evaluations", duality.evaluations);
    s.value("lambda_star", list(lambda_star.as_slice()));
    s.check("strong_duality", duality.gap.abs() < 1e-6, format!("|min d - P*| = {:.1e}", duality.gap.abs()));
    s.check(
        "weak_duality",
        duality.weak_duality_slack > -1e-9,
        format!("min d - P* over all points = {:.1e}", duality.weak_duality_slack),
    );
    s.check(
        "recovery_inclusion",
        recovery.inclusion_error() < 1e-9,
        format!("|L(pi*, l*) - d(l*)| = {:.1e}", recovery.inclusion_error()),
    );
    let witness = match &recovery.infeasible_maximizer {
        Some((pi, v)) => format!("{:?} with constraint values {v:?}", pi.rows()),
        None => "none found".into(),
    };
    s.warn("recovery_strict", recovery.is_strict(), witness);
    Ok(RunOutput { files, summary: s })
}

fn t0_sweep(cfg: &ExperimentConfig) -> Outcome<RunOutput> {
    let mdp = cfg.monitoring_env()?;
    let exec = cfg.executor()?;
    let sweep = cfg.sweep.as_ref().expect("validated");
    let results = per_seed(cfg, |seed| {
        let rows = t0_bias_sweep(&mdp, &mut ExactMaximizer::new(), &exec, &sweep.t0_values, sweep.total_steps, seed).map_err(err)?;
        let mut s = Summary::default();
        for r in &rows {
            let margin = r.margins.iter().copied().fold(f64::INFINITY, f64::min);
            let detail = format!("{} epochs, min margin {margin:.4}, objective {:.4}", r.epochs, r.objective_average);
            let name = format!("feasibility_t0_{}", r.t0);
            if r.epochs >= SWEEP_MIN_EPOCHS {
                s.check(name, margin >= -FEASIBILITY_TOLERANCE, detail);
            } else {
                s.warn(name, margin >= -FEASIBILITY_TOLERANCE, detail);
            }
        }
        let files = vec![("t0_sweep.csv".to_string(), csv_bytes(|b| write_t0_sweep_csv(b, &rows))?)];
        Ok(RunOutput { files, summary: s })
    })?;
    Ok(collect(results, Summary::default()))
}

fn policy_csv(mdp: &TabularCmdp, policies: &[(&str, &TabularPolicy)]) -> Vec<u8> {
    let mut out = String::from("average,state,action,probability\n");
    for (name, pi) in policies {
        for (s, row) in pi.rows().iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                out.push_str(&format!("{name},{s},{},{}\n", mdp.actions(s)[j], fmt_f64(*p)));
            }
        }
    }
    out.into_bytes()
}

fn primal_average(cfg: &ExperimentConfig) -> Outcome<RunOutput> {
    let mdp = cfg.monitoring_env()?;
    let exec = cfg.executor()?;
    let frozen_steps = cfg.averaging.as_ref().map_or(100_000, |a| a.frozen_steps);
    let frozen = ExecConfig {
        epochs: (frozen_steps / exec.t0).max(1),
        record_steps: false,
        ..exec.clone()
    };
    let results = per_seed(cfg, |seed| {
        let streams = SeedStream::new(seed);
        let run = execute_acrl(&mdp, &mut ExactMaximizer::new(), &exec, None, &mut streams.rng("executor")).map_err(err)?;
        let mut occupation = occupation_average_maximizers(&mdp, &run.dual_trace).map_err(err)?.to_policy().map_err(err)?;
        let entrywise = average_maximizers(&mdp, &run.dual_trace).map_err(err)?.to_policy().map_err(err)?;
        let rep = execute_acrl(&mdp, &mut occupation, &frozen, None, &mut streams.rng("averaged")).map_err(err)?;
        let ev = evaluate_policy(&mdp, &entrywise).map_err(err)?;

        let mut s = Summary::default();
        let margin = rep.min_margin(mdp.thresholds());
        s.value("frozen_running_average", list(&rep.running_average));
        s.value("entrywise_stationary", list(&ev.stationary));
        s.check(
            "occupation_average_feasibility",
            margin >= -FEASIBILITY_TOLERANCE,
            format!("{} steps, min margin {margin:.4}", rep.total_steps),
        );
        let em = ev.feasibility_margin(mdp.thresholds());
        s.warn("entrywise_average_feasibility", em >= -FEASIBILITY_TOLERANCE, format!("stationary margin {em:.4}"));
        let files = vec![(
            "averaged_policies.csv".to_string(),
            policy_csv(&mdp, &[("occupation", &occupation), ("entrywise", &entrywise)]),
        )];
        Ok(RunOutput { files, summary: s })
    })?;
    Ok(collect(results, Summary::default()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes_follow_the_thresholds() {
        assert_eq!(threshold_extremes(&[0.2, 0.15, 0.1, 0.05]), (0, 3));
        assert_eq!(threshold_extremes(&[0.1, 0.3, 0.0]), (1, 2));
    }

    #[test]
    fn default_certificate_on_the_monitoring_mdp() {
        let mdp = TabularCmdp::monitoring(1.0 / 3.0, 1.0 / 3.0);
        let block = OracleBlock {
            grid_step: 0.25,
            grid_max: 2.0,
            refine_step: 0.01,
            lambda_star: None,
        };
        let out = oracle_certify(&mdp, &block).unwrap();
        assert!(out.summary.all_hard_passed());
        assert_eq!(out.files.len(), 3);
    }
}
