// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use heatflow::experiments::{self, Check, RunManifest, ScenarioConfig};
use heatflow::Result;

#[derive(Parser)]
#[command(name = "heatflow", version, about = "Heat production of driven lattice fermions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Energy trajectories for every parameter tuple
    Run(Common),
    /// Scaling of Q with eta and the field scale l
    Sweep(Common),
    /// Taylor coefficient of Q at eta = 0
    Taylor {
        #[command(flatten)]
        common: Common,
        /// Derivative order (overrides the config)
        #[arg(long)]
        order: Option<usize>,
    },
    /// Convergence of Q in the box size
    Thermolimit(Common),
    /// Fitted decay constant for propagators and multi-commutators
    Decay(Common),
    /// Quasi-free against brute-force many-body results
    Oracle(Common),
    /// Local energy after the pulse for a clean potential
    Dissipation(Common),
    /// Truncated heat series and Dyson-Phillips order
    Series(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use this single disorder seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Add many-body oracle columns where the box is small enough
    #[arg(long)]
    oracle: bool,
}

struct Prepared {
    cfg: ScenarioConfig,
    out: PathBuf,
}

fn prepare(c: &Common) -> Result<Prepared> {
    let mut cfg = ScenarioConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
    }
    if c.oracle {
        cfg.oracle = true;
    }
    if let Some(t) = c.threads {
        heatflow::par::configure_threads(t);
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    Ok(Prepared { cfg, out })
}

fn csv_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn finish(
    p: &Prepared,
    command: &str,
    outputs: &[&str],
    checks: Vec<Check>,
) -> Result<bool> {
    let mut manifest = RunManifest::new(command, &p.cfg)?;
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.checks = checks;
    write_json(&p.out, "config.json", &p.cfg)?;
    manifest.write(&p.out.join("manifest.json"))?;
    for c in &manifest.checks {
        let status = if c.passed { "pass" } else { "FAIL" };
        eprintln!("{status:4} {:<40} {:>12.4e} (tol {:.1e})", c.name, c.value, c.tolerance);
    }
    Ok(manifest.all_passed())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(c) => {
            let p = prepare(&c)?;
            let out = experiments::run_scenario(&p.cfg)?;
            out.write_csv(csv_file(&p.out, "results.csv")?)?;
            finish(&p, "run", &["results.csv"], out.checks)
        }
        Command::Sweep(c) => {
            let p = prepare(&c)?;
            let rep = experiments::scaling_sweep(&p.cfg)?;
            rep.write_csv(csv_file(&p.out, "results.csv")?)?;
            write_json(&p.out, "report.json", &rep)?;
            finish(&p, "sweep", &["results.csv", "report.json"], rep.checks)
        }
        Command::Taylor { common, order } => {
            let p = prepare(&common)?;
            let m = order.unwrap_or(p.cfg.taylor.order);
            let rep = experiments::taylor_estimate(&p.cfg, m)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            rep.write_csv(csv_file(&p.out, "results.csv")?)?;
            write_json(&p.out, "report.json", &rep)?;
            finish(&p, "taylor", &["results.csv", "report.json"], rep.checks)
        }
        Command::Thermolimit(c) => {
            let p = prepare(&c)?;
            let rep = experiments::thermolimit_sweep(&p.cfg)?;
            rep.write_csv(csv_file(&p.out, "results.csv")?)?;
            write_json(&p.out, "report.json", &rep)?;
            finish(&p, "thermolimit", &["results.csv", "report.json"], rep.checks)
        }
        Command::Decay(c) => {
            let p = prepare(&c)?;
            let rep = experiments::decay_study(&p.cfg)?;
            rep.write_csv(csv_file(&p.out, "results.csv")?)?;
            rep.write_samples_csv(csv_file(&p.out, "tree_samples.csv")?)?;
            finish(&p, "decay", &["results.csv", "tree_samples.csv"], rep.checks)
        }
        Command::Oracle(c) => {
            let p = prepare(&c)?;
            let rep = experiments::crosscheck_oracle(&p.cfg)?;
            rep.write_csv(csv_file(&p.out, "results.csv")?)?;
            if !rep.passed() {
                for row in &rep.rows {
                    eprintln!("{row:?}");
                }
            }
            finish(&p, "oracle", &["results.csv"], rep.checks)
        }
        Command::Dissipation(c) => {
            let p = prepare(&c)?;
            let rep = experiments::dissipation_probe(&p.cfg)?;
            rep.write_csv(csv_file(&p.out, "results.csv")?)?;
            finish(&p, "dissipation", &["results.csv"], rep.checks)
        }
        Command::Series(c) => {
            let p = prepare(&c)?;
            let rep = experiments::series_study(&p.cfg)?;
            rep.write_csv(csv_file(&p.out, "results.csv")?)?;
            rep.write_dyson_csv(csv_file(&p.out, "dyson.csv")?)?;
            finish(&p, "series", &["results.csv", "dyson.csv"], rep.checks)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
