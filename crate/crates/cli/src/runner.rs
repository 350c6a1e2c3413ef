//! Experiment driver: runs the adaptive loop and writes the artifact set
//! (per-iteration mesh SVGs, convergence CSV, final mesh / solution dumps,
//! and a convergence-rate summary).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use hp_energy_core::adapt::{run_adaptive_observed, AdaptConfig, AdaptState, IterationRecord};
use hp_energy_core::solve::SolverConfig;
use hp_energy_core::stats::{linear_fit, LinearFit};

use crate::config::RunConfig;
use crate::svg;

pub fn run(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let prob = cfg.build_problem()?;
    let acfg = AdaptConfig::<f64> {
        theta: cfg.theta,
        nmax: cfg.nmax,
        seed: cfg.seed,
        solver: SolverConfig {
            newton_tol: cfg.newton_tol,
            max_newton: cfg.max_newton,
            ..SolverConfig::default()
        },
    };

    println!(
        "running {} for {} refinement steps (theta {}, nmax {}, seed {})",
        cfg.problem,
        cfg.iters,
        cfg.theta,
        cfg.nmax.map_or("all".to_string(), |n| n.to_string()),
        cfg.seed
    );

    let mut svg_err: Option<anyhow::Error> = None;
    let out_dir = cfg.out.clone();
    let state = run_adaptive_observed(&prob, &acfg, cfg.iters, &mut |it, mesh, degrees, _, _| {
        let path = out_dir.join(format!("mesh_{it:03}.svg"));
        let body = svg::mesh_svg(mesh, &|e| degrees.get(e), None);
        if let Err(e) = fs::write(&path, body) {
            if svg_err.is_none() {
                svg_err = Some(anyhow::Error::new(e).context(format!("writing {}", path.display())));
            }
        }
    })
    .with_context(|| format!("adaptive run of `{}` failed (partial artifacts kept in {})", cfg.problem, cfg.out.display()))?;

    for r in &state.history {
        print_record(r);
    }

    write_csv(&cfg.out.join("convergence.csv"), &state.history, cfg.timing)?;
    write_final_mesh(&cfg.out.join("mesh_final.txt"), &state)?;
    write_final_solution(&cfg.out.join("final_solution.txt"), &state)?;
    write_summary(&cfg.out.join("summary.txt"), cfg, prob.dim, &state)?;

    if let Some(e) = svg_err {
        return Err(e);
    }
    println!("artifacts written to {}", cfg.out.display());
    Ok(())
}

fn print_record(r: &IterationRecord<f64>) {
    let gap = r
        .energy_gap
        .map_or("-".to_string(), |g| format!("{g:.3e}"));
    println!(
        "iter {:3}  ndof {:6}  energy {:+.10e}  gap {:>9}  newton {:2}  marked {:3} (p {}, h {})",
        r.iter, r.ndof, r.energy, gap, r.newton_iters, r.marked, r.p_steps, r.h_steps
    );
}

fn fmt_val(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.17e}")
    } else {
        "nan".to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("nan".to_string(), fmt_val)
}

fn write_csv(path: &Path, history: &[IterationRecord<f64>], timing: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "iter,ndof,energy,energy_gap,err_energy_norm,err_Lp,err_W1p,seconds")?;
    for r in history {
        let (en, lp, w1p) = match &r.errors {
            Some(e) => (fmt_val(e.energy_norm), fmt_val(e.lp), fmt_val(e.w1p)),
            None => ("nan".into(), "nan".into(), "nan".into()),
        };
        let secs = if timing { format!("{:.3}", r.seconds) } else { "0.000".to_string() };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            r.ndof,
            fmt_val(r.energy),
            fmt_opt(r.energy_gap),
            en,
            lp,
            w1p,
            secs
        )?;
    }
    Ok(())
}

fn write_final_mesh(path: &Path, state: &AdaptState<f64>) -> Result<()> {
    let leaves = state.mesh.leaves();
    let degs: Vec<usize> = leaves.iter().map(|&e| state.degrees.get(e)).collect();
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    state.mesh.save(&degs, &mut w)?;
    Ok(())
}

fn write_final_solution(path: &Path, state: &AdaptState<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "ndof {}", state.u.coeffs.len())?;
    for c in &state.u.coeffs {
        writeln!(w, "{c:.17e}")?;
    }
    Ok(())
}

/// Least-squares slope of `log10(y)` against DoF (1D) or the cube root of
/// DoF (2D) over the trailing window, skipping nonpositive values.
pub fn convergence_fit(
    history: &[IterationRecord<f64>],
    dim: usize,
    window: usize,
    y_of: &dyn Fn(&IterationRecord<f64>) -> Option<f64>,
) -> Option<(LinearFit, usize)> {
    let pts: Vec<(f64, f64)> = history
        .iter()
        .filter_map(|r| {
            let y = y_of(r)?;
            if !(y.is_finite() && y > 0.0) {
                return None;
            }
            let x = if dim == 1 { r.ndof as f64 } else { (r.ndof as f64).cbrt() };
            Some((x, y.log10()))
        })
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let tail = &pts[n.saturating_sub(window)..];
    let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1).collect();
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return None;
    }
    Some((linear_fit(&xs, &ys), tail.len()))
}

fn write_summary(path: &Path, cfg: &RunConfig, dim: usize, state: &AdaptState<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let last = state.history.last().expect("history has at least one record");
    writeln!(w, "problem {}", cfg.problem)?;
    writeln!(w, "dim {dim}")?;
    writeln!(w, "theta {}", cfg.theta)?;
    writeln!(w, "seed {}", cfg.seed)?;
    writeln!(w, "iterations {}", state.history.len())?;
    writeln!(w, "final_ndof {}", last.ndof)?;
    writeln!(w, "final_energy {}", fmt_val(last.energy))?;
    writeln!(w, "final_energy_gap {}", fmt_opt(last.energy_gap))?;
    writeln!(w, "axis {}", if dim == 1 { "dof" } else { "cbrt_dof" })?;

    let series: [(&str, Box<dyn Fn(&IterationRecord<f64>) -> Option<f64>>); 4] = [
        ("energy_gap", Box::new(|r| r.energy_gap)),
        ("err_energy_norm", Box::new(|r| r.errors.as_ref().map(|e| e.energy_norm))),
        ("err_Lp", Box::new(|r| r.errors.as_ref().map(|e| e.lp))),
        ("err_W1p", Box::new(|r| r.errors.as_ref().map(|e| e.w1p))),
    ];
    for (name, y_of) in &series {
        match convergence_fit(&state.history, dim, 8, y_of.as_ref()) {
            Some((fit, n)) => {
                writeln!(
                    w,
                    "fit {name} slope {:.6} intercept {:.6} r2 {:.6} points {n}",
                    fit.slope, fit.intercept, fit.r2
                )?;
                println!("fit {name}: slope {:.4} r2 {:.4} over {n} points", fit.slope, fit.r2);
            }
            None => writeln!(w, "fit {name} unavailable")?,
        }
    }
    Ok(())
}
