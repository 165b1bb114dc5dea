//! `acrl`: runs experiment configs and writes their artifacts.
//!
//! Exit status: 0 when every hard check passes, 1 when one fails, 2 for
//! config or usage errors and 3 for runtime failures.

mod config;
mod run;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acrl::report::{sha256_hex, Manifest};

use crate::config::{LoadedConfig, OracleBlock};

#[derive(Parser)]
#[command(name = "acrl", version, about = "State-augmented constrained RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        config: PathBuf,
        /// Write here instead of the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads for the seed pool (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Print the exact-solution certificates for a config's tabular
    /// environment.
    Certify {
        config: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        grid_step: f64,
        #[arg(long, default_value_t = 3.0)]
        grid_max: f64,
        #[arg(long, default_value_t = 0.001)]
        refine_step: f64,
    },
    /// Print the summary of a finished run and verify its artifact hashes.
    Report { output_dir: PathBuf },
}

const MANIFEST: &str = "manifest.txt";
const SUMMARY: &str = "summary.txt";
const CONFIG_COPY: &str = "config.toml";

enum Failure {
    Usage(String),
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            output_dir,
            threads,
        } => cmd_run(&config, output_dir, threads),
        Command::Validate { config } => cmd_validate(&config),
        Command::Certify {
            config,
            grid_step,
            grid_max,
            refine_step,
        } => cmd_certify(&config, grid_step, grid_max, refine_step),
        Command::Report { output_dir } => cmd_report(&output_dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load(path: &Path) -> Result<LoadedConfig, Failure> {
    config::load(path).map_err(Failure::Usage)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn cmd_validate(path: &Path) -> Result<bool, Failure> {
    let loaded = load(path)?;
    let cfg = &loaded.config;
    println!(
        "{}: valid {} config, {} seed(s), output {}",
        path.display(),
        cfg.kind.name(),
        cfg.seeds.len(),
        cfg.resolved_output_dir().display()
    );
    Ok(true)
}

fn cmd_run(path: &Path, output_dir: Option<PathBuf>, threads: Option<usize>) -> Result<bool, Failure> {
    let loaded = load(path)?;
    let cfg = &loaded.config;
    let out_dir = output_dir.unwrap_or_else(|| cfg.resolved_output_dir());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Runtime(e.to_string()))?;
    let output = pool.install(|| run::run(cfg)).map_err(Failure::Runtime)?;

    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let mut artifacts = Vec::new();
    for (rel, bytes) in &output.files {
        let target = out_dir.join(rel);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&target, bytes).map_err(io_err(&target))?;
        artifacts.push((rel.clone(), sha256_hex(bytes)));
    }
    let config_path = out_dir.join(CONFIG_COPY);
    std::fs::write(&config_path, &loaded.text).map_err(io_err(&config_path))?;

    let mut summary = Vec::new();
    output.summary.write(&mut summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    let summary_path = out_dir.join(SUMMARY);
    std::fs::write(&summary_path, &summary).map_err(io_err(&summary_path))?;
    artifacts.push((SUMMARY.to_string(), sha256_hex(&summary)));

    let mut manifest = Vec::new();
    Manifest::new(&loaded.text, cfg.kind.name(), &cfg.seeds)
        .write(&mut manifest)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    for (rel, hash) in &artifacts {
        writeln!(manifest, "artifact {rel} sha256 {hash}").expect("write to memory");
    }
    let manifest_path = out_dir.join(MANIFEST);
    std::fs::write(&manifest_path, &manifest).map_err(io_err(&manifest_path))?;

    for c in output.summary.checks.iter().filter(|c| !c.passed) {
        eprintln!("{} {}: {}", if c.hard { "FAIL" } else { "WARN" }, c.name, c.detail);
    }
    let passed = output.summary.all_hard_passed();
    println!(
        "{} run {}: {} artifacts in {}",
        cfg.kind.name(),
        if passed { "passed" } else { "FAILED" },
        artifacts.len(),
        out_dir.display()
    );
    Ok(passed)
}

fn cmd_certify(path: &Path, grid_step: f64, grid_max: f64, refine_step: f64) -> Result<bool, Failure> {
    let loaded = load(path)?;
    let mdp = loaded
        .config
        .monitoring_env()
        .map_err(|_| Failure::Usage("certify needs a config with `environment.type = \"monitoring\"`".into()))?;
    let block = match &loaded.config.oracle {
        Some(b) => b.clone(),
        None => OracleBlock {
            grid_step,
            grid_max,
            refine_step,
            lambda_star: None,
        },
    };
    let out = run::oracle_certify(&mdp, &block).map_err(Failure::Runtime)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    out.summary.write(&mut lock).map_err(|e| Failure::Runtime(e.to_string()))?;
    for (name, bytes) in &out.files {
        if name.ends_with(".txt") {
            writeln!(lock, "--- {name}").ok();
            lock.write_all(bytes).ok();
        }
    }
    Ok(out.summary.all_hard_passed())
}

/// Artifact lines of a manifest: `artifact <relative path> sha256 <hex>`.
fn manifest_artifacts(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            let rest = l.strip_prefix("artifact ")?;
            let (path, hash) = rest.rsplit_once(" sha256 ")?;
            Some((path.to_string(), hash.to_string()))
        })
        .collect()
}

fn cmd_report(dir: &Path) -> Result<bool, Failure> {
    let manifest_path = dir.join(MANIFEST);
    let manifest = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Failure::Usage(format!("{}: {e} (not a run directory?)", manifest_path.display())))?;
    let summary_path = dir.join(SUMMARY);
    let summary = std::fs::read_to_string(&summary_path).map_err(io_err(&summary_path))?;
    let artifacts = manifest_artifacts(&manifest);
    let mut mismatched = Vec::new();
    for (rel, hash) in &artifacts {
        match std::fs::read(dir.join(rel)) {
            Ok(bytes) if sha256_hex(&bytes) == *hash => {}
            _ => mismatched.push(rel.clone()),
        }
    }
    for line in manifest.lines().filter(|l| !l.starts_with("artifact ")) {
        println!("{line}");
    }
    print!("{summary}");
    println!("artifacts verified: {}/{}", artifacts.len() - mismatched.len(), artifacts.len());
    for m in &mismatched {
        println!("modified or missing: {m}");
    }
    let overall = summary.lines().any(|l| l == "overall = PASS");
    Ok(overall && mismatched.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_artifact_lines() {
        let text = "kind = x\nartifact seed-0/a b.csv sha256 abc\nartifact summary.txt sha256 def\n";
        assert_eq!(
            manifest_artifacts(text),
            vec![("seed-0/a b.csv".to_string(), "abc".to_string()), ("summary.txt".into(), "def".into())]
        );
    }
}
