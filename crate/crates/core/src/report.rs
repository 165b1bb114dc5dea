//! Artifact writers: CSV tables, SVG occupancy heatmaps, run summaries and
//! manifests. Floats are written with 17 significant digits so values
//! round-trip exactly.

use std::io::Write;

use sha2::{Digest, Sha256};

use crate::env::{Environment, Rect};
use crate::executor::{DualTraceRow, ExecReport, ProbeRow, T0SweepRow};
use crate::trainer::CurvePoint;
use crate::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn numbered(prefix: &str, from: usize, count: usize) -> impl Iterator<Item = String> + '_ {
    (from..from + count).map(move |i| format!("{prefix}{i}"))
}

/// `k, lambda_1..m, gap_1..m, projected_1..m`, plus `probe_p0..` when a
/// probe trace of the same length is supplied.
pub fn write_dual_trace_csv<W: Write>(out: W, trace: &[DualTraceRow], probe: &[ProbeRow]) -> Result<()> {
    let m = trace.first().map_or(0, |r| r.lambda.len());
    let with_probe = !probe.is_empty() && probe.len() == trace.len();
    let actions = if with_probe { probe[0].law.len() } else { 0 };
    let mut w = csv_writer(out);
    let header: Vec<String> = std::iter::once("k".to_string())
        .chain(numbered("lambda_", 1, m))
        .chain(numbered("gap_", 1, m))
        .chain(numbered("projected_", 1, m))
        .chain(numbered("probe_p", 0, actions))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for (idx, row) in trace.iter().enumerate() {
        let mut rec = vec![row.k.to_string()];
        rec.extend(row.lambda.as_slice().iter().map(|v| fmt_f64(*v)));
        rec.extend(row.gap.iter().map(|v| fmt_f64(*v)));
        rec.extend(row.projection_active.iter().map(|b| u8::from(*b).to_string()));
        if with_probe {
            rec.extend(probe[idx].law.iter().map(|v| fmt_f64(*v)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, state, action, r_0..r_m, k, lambda_1..m, running_avg_0..m`; needs a
/// report executed with step recording.
pub fn write_execution_csv<E: Environment, W: Write>(env: &E, report: &ExecReport<E::State, E::Action>, out: W) -> Result<()> {
    if report.epochs.is_empty() && report.total_steps > 0 {
        return Err(Error::InvalidConfig("execution CSV requires record_steps".into()));
    }
    let m = env.num_constraints();
    let mut w = csv_writer(out);
    let header: Vec<String> = ["t", "state", "action"]
        .into_iter()
        .map(String::from)
        .chain(numbered("r_", 0, m + 1))
        .chain(std::iter::once("k".to_string()))
        .chain(numbered("lambda_", 1, m))
        .chain(numbered("running_avg_", 0, m + 1))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    let mut sums = vec![0.0; m + 1];
    let mut t = 0usize;
    for epoch in &report.epochs {
        for step in &epoch.steps {
            t += 1;
            for (s, r) in sums.iter_mut().zip(step.reward.as_slice()) {
                *s += r;
            }
            let mut rec = vec![(t - 1).to_string(), env.describe_state(&step.state), env.describe_action(&step.action)];
            rec.extend(step.reward.as_slice().iter().map(|v| fmt_f64(*v)));
            rec.push(epoch.k.to_string());
            rec.extend(epoch.lambda.as_slice().iter().map(|v| fmt_f64(*v)));
            rec.extend(sums.iter().map(|s| fmt_f64(s / t as f64)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_learning_curve_csv<W: Write>(out: W, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["iteration", "mean_augmented_return", "theta_norm"]).map_err(csv_err)?;
    for p in curve {
        w.write_record([p.iteration.to_string(), fmt_f64(p.mean_augmented_return), fmt_f64(p.theta_norm)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `lambda_1..m, d_lambda`.
pub fn write_dual_surface_csv<W: Write>(out: W, points: &[(crate::dual::DualState, f64)]) -> Result<()> {
    let m = points.first().map_or(0, |(l, _)| l.len());
    let mut w = csv_writer(out);
    let header: Vec<String> = numbered("lambda_", 1, m).chain(std::iter::once("d_lambda".to_string())).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (l, d) in points {
        let mut rec: Vec<String> = l.as_slice().iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(*d));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `bin, ix, iy, frequency`; `ix = bin % resolution`, `iy = bin / resolution`.
pub fn write_occupancy_csv<W: Write>(out: W, occupancy: &[f64], resolution: usize) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["bin", "ix", "iy", "frequency"]).map_err(csv_err)?;
    for (b, f) in occupancy.iter().enumerate() {
        let (ix, iy) = if resolution > 0 { (b % resolution, b / resolution) } else { (b, 0) };
        w.write_record([b.to_string(), ix.to_string(), iy.to_string(), fmt_f64(*f)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_t0_sweep_csv<W: Write>(out: W, rows: &[T0SweepRow]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.margins.len());
    let mut w = csv_writer(out);
    let header: Vec<String> = ["t0", "epochs"]
        .into_iter()
        .map(String::from)
        .chain(numbered("margin_", 1, m))
        .chain(["objective_average".to_string(), "slackness_average".to_string()])
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.t0.to_string(), r.epochs.to_string()];
        rec.extend(r.margins.iter().map(|v| fmt_f64(*v)));
        rec.push(fmt_f64(r.objective_average));
        rec.push(fmt_f64(r.slackness_average));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Colour of a cell with value `v` on the scale `[0, vmax]`: linear
/// interpolation from white (`0`) to `rgb(8, 48, 107)` (`vmax`).
pub fn heat_colour(v: f64, vmax: f64) -> (u8, u8, u8) {
    let f = if vmax > 0.0 { (v / vmax).clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |hi: f64| (255.0 + (hi - 255.0) * f).round() as u8;
    (lerp(8.0), lerp(48.0), lerp(107.0))
}

/// Writes a `resolution × resolution` occupancy grid (row-major, `y` then
/// `x`) as SVG with `y` pointing up, region outlines in red and a colour bar.
/// The colour scale is linear from white at 0 to dark blue at the grid
/// maximum.
pub fn emit_heatmap<W: Write>(mut out: W, grid: &[f64], resolution: usize, bounds: Rect, regions: &[Rect]) -> Result<()> {
    if resolution == 0 || grid.len() != resolution * resolution {
        return Err(Error::DimensionMismatch {
            context: "heatmap grid",
            expected: resolution * resolution,
            got: grid.len(),
        });
    }
    const SIZE: f64 = 400.0;
    const BAR: f64 = 60.0;
    let cell = SIZE / resolution as f64;
    let vmax = grid.iter().copied().fold(0.0, f64::max);
    let sx = SIZE / (bounds.x_max - bounds.x_min);
    let sy = SIZE / (bounds.y_max - bounds.y_min);

    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{SIZE}" viewBox="0 0 {} {SIZE}">"#,
        SIZE + BAR,
        SIZE + BAR
    )?;
    writeln!(
        out,
        "<!-- colour scale: linear, white = 0, rgb(8,48,107) = {} -->",
        fmt_f64(vmax)
    )?;
    for iy in 0..resolution {
        for ix in 0..resolution {
            let (r, g, b) = heat_colour(grid[iy * resolution + ix], vmax);
            writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="rgb({r},{g},{b})"/>"#,
                ix as f64 * cell,
                SIZE - (iy + 1) as f64 * cell,
                cell,
                cell
            )?;
        }
    }
    for reg in regions {
        writeln!(
            out,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="rgb(200,30,30)" stroke-width="2"/>"#,
            (reg.x_min - bounds.x_min) * sx,
            SIZE - (reg.y_max - bounds.y_min) * sy,
            (reg.x_max - reg.x_min) * sx,
            (reg.y_max - reg.y_min) * sy
        )?;
    }
    let steps = 20;
    for k in 0..steps {
        let v = vmax * (k as f64 + 0.5) / steps as f64;
        let (r, g, b) = heat_colour(v, vmax);
        let h = SIZE / steps as f64;
        writeln!(
            out,
            r#"<rect x="{:.3}" y="{:.3}" width="20" height="{:.3}" fill="rgb({r},{g},{b})"/>"#,
            SIZE + 10.0,
            SIZE - (k + 1) as f64 * h,
            h
        )?;
    }
    writeln!(
        out,
        r#"<text x="{:.3}" y="12" font-size="10">{:.3e}</text>"#,
        SIZE + 32.0,
        vmax
    )?;
    writeln!(out, r#"<text x="{:.3}" y="{SIZE}" font-size="10">0</text>"#, SIZE + 32.0)?;
    writeln!(out, "</svg>")?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Soft checks are reported but never fail a run.
    pub hard: bool,
    pub detail: String,
}

/// Key-value summary of a run with its checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub values: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn value(&mut self, key: impl Into<String>, v: impl ToString) {
        self.values.push((key.into(), v.to_string()));
    }

    pub fn number(&mut self, key: impl Into<String>, v: f64) {
        self.values.push((key.into(), fmt_f64(v)));
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            hard: true,
            detail: detail.into(),
        });
    }

    pub fn warn(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            hard: false,
            detail: detail.into(),
        });
    }

    pub fn all_hard_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.hard)
    }

    pub fn merge(&mut self, prefix: &str, other: Summary) {
        for (k, v) in other.values {
            self.values.push((format!("{prefix}{k}"), v));
        }
        for mut c in other.checks {
            c.name = format!("{prefix}{}", c.name);
            self.checks.push(c);
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in &self.values {
            writeln!(out, "{k} = {v}")?;
        }
        for c in &self.checks {
            let status = match (c.passed, c.hard) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "WARN",
            };
            writeln!(out, "check {} = {status} ({})", c.name, c.detail)?;
        }
        writeln!(out, "overall = {}", if self.all_hard_passed() { "PASS" } else { "FAIL" })?;
        Ok(())
    }
}

/// Provenance record written next to every run's artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub library_version: String,
    pub kind: String,
}

impl Manifest {
    pub fn new(config_text: &str, kind: &str, seeds: &[u64]) -> Self {
        Self {
            config_sha256: sha256_hex(config_text.as_bytes()),
            seeds: seeds.to_vec(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind = {}", self.kind)?;
        writeln!(out, "config_sha256 = {}", self.config_sha256)?;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(out, "seeds = {}", seeds.join(","))?;
        writeln!(out, "library_version = {}", self.library_version)?;
        Ok(())
    }
}
