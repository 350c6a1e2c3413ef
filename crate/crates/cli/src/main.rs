//! `hp-energy`: run hp-adaptive experiments, verify solver invariants, and
//! render hp meshes to SVG.

mod config;
mod runner;
mod svg;
mod verify;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hp_energy_core::mesh::Mesh;

use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "hp-energy",
    version,
    about = "hp-adaptive finite element solver for convex variational problems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an adaptive experiment and write convergence + mesh artifacts.
    Run(RunArgs),
    /// Run the built-in invariant checks and report pass/fail per check.
    Verify(VerifyArgs),
    /// Render a saved mesh file (mesh_final.txt format) to SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in problem (ex1, ex1-eps1, ex2, ex3) or a config file path.
    problem: String,
    /// Marking threshold in (0, 1); defaults to 1/3.
    #[arg(long)]
    theta: Option<f64>,
    /// Cap on split candidates examined per element (default: all).
    #[arg(long)]
    nmax: Option<usize>,
    /// Seed of the candidate-subsampling RNG.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of refinement steps.
    #[arg(long)]
    iters: Option<usize>,
    /// Output directory; defaults to out/<problem>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread count; HP_ENERGY_THREADS is the fallback.
    #[arg(long)]
    threads: Option<usize>,
    /// Record measured wall times in convergence.csv instead of zeros.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Scale every mu.df by 1.001; the derivative checks must then fail.
    #[arg(long)]
    fault_inject_dmu: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Mesh file written by `run` (mesh_final.txt).
    mesh_file: PathBuf,
    /// Output SVG path; defaults to the mesh file with an .svg extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zoom window `xmin,ymin,xmax,ymax` in mesh coordinates.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    zoom: Option<Vec<f64>>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Run(a) => {
            let over = Overrides {
                theta: a.theta,
                nmax: a.nmax,
                seed: a.seed,
                iters: a.iters,
                out: a.out,
                threads: a.threads,
                timing: a.timing,
            };
            let cfg = RunConfig::resolve(&a.problem, &over)?;
            init_threads(cfg.threads)?;
            runner::run(&cfg)?;
            Ok(0)
        }
        Cmd::Verify(a) => {
            init_threads(None)?;
            let failures = verify::run(a.fault_inject_dmu)?;
            Ok(if failures == 0 { 0 } else { 1 })
        }
        Cmd::Render(a) => {
            render(a)?;
            Ok(0)
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HP_ENERGY_THREADS") {
            Ok(s) => Some(
                s.trim()
                    .parse::<usize>()
                    .with_context(|| format!("HP_ENERGY_THREADS=`{s}` is not a thread count"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            bail!("thread count must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let file = File::open(&a.mesh_file).with_context(|| format!("opening {}", a.mesh_file.display()))?;
    let (mesh, degrees) = Mesh::<f64>::load(BufReader::new(file))
        .map_err(|e| anyhow!("loading {}: {e}", a.mesh_file.display()))?;
    let leaves = mesh.leaves();
    let by_leaf: HashMap<usize, usize> = leaves.iter().copied().zip(degrees).collect();

    let zoom = match &a.zoom {
        Some(v) => {
            if v.len() != 4 {
                bail!("--zoom takes exactly four values: xmin,ymin,xmax,ymax");
            }
            let z = [v[0], v[1], v[2], v[3]];
            if z[2] <= z[0] || (mesh.dim() == 2 && z[3] <= z[1]) {
                bail!("zoom window must satisfy xmin < xmax and ymin < ymax");
            }
            Some(z)
        }
        None => None,
    };

    let body = svg::mesh_svg(&mesh, &|e| by_leaf[&e], zoom);
    let out = a.out.unwrap_or_else(|| a.mesh_file.with_extension("svg"));
    fs::write(&out, body).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}
