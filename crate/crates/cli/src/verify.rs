//! Self-checks of the discretisation: derivative consistency, DoF matching
//! of the split candidates, flux-corrected energy telescoping, the linear
//! Galerkin energy identity, and marking-threshold monotonicity.

use std::sync::Arc;

use anyhow::Result;
use hp_energy_core::adapt::{
    center_dofs_1d, center_dofs_2d, enumerate_candidates, mark, target_dofs, Candidate,
    ElementDecision,
};
use hp_energy_core::estimator::{leaf_modified_energy, Flux};
use hp_energy_core::fespace::{build_space, constrain_faces, Constraints, DegreeVector, FeFunction, Space};
use hp_energy_core::forms::{
    builtin, energy, fd_check_flux, fd_check_lower, residual_and_jacobian, ProblemDef,
};
use hp_energy_core::mesh::Mesh;
use hp_energy_core::solve::{solve, SolverConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const BUILTINS: [&str; 4] = ["ex1", "ex1-eps1", "ex2", "ex3"];

struct Report {
    failures: usize,
    total: usize,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        self.total += 1;
        if !pass {
            self.failures += 1;
        }
        println!("check {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    }
}

/// Runs every check, printing one line per check. Returns the number of
/// failures; with `fault_inject_dmu` the first flux derivative of every
/// problem is scaled by 1.001, which the derivative checks must catch.
pub fn run(fault_inject_dmu: bool) -> Result<usize> {
    let mut rep = Report { failures: 0, total: 0 };
    if fault_inject_dmu {
        println!("fault injection: scaling every mu.df by 1.001 (checks below must fail)");
    }

    for name in BUILTINS {
        let mut prob = builtin::<f64>(name).expect("builtin");
        if fault_inject_dmu {
            inject_dmu_fault(&mut prob);
        }
        check_flux(&mut rep, name, &prob);
        check_lower(&mut rep, name, &prob);
        check_assembly_gradient(&mut rep, name, &prob);
    }
    check_dof_match_1d(&mut rep);
    check_dof_match_2d(&mut rep);
    for name in BUILTINS {
        let prob = builtin::<f64>(name).expect("builtin");
        check_telescoping(&mut rep, name, &prob);
    }
    check_linear_energy_identity(&mut rep);
    check_marking_threshold(&mut rep);

    if rep.failures == 0 {
        println!("verify: all {} checks passed", rep.total);
    } else {
        println!("verify: {} of {} checks FAILED", rep.failures, rep.total);
    }
    Ok(rep.failures)
}

fn inject_dmu_fault(prob: &mut ProblemDef<f64>) {
    let df = prob.mu.df.clone();
    prob.mu.df = Arc::new(move |xi| {
        let g = df(xi);
        [g[0] * 1.001, g[1] * 1.001]
    });
}

fn gradient_samples(dim: usize, n: usize) -> Vec<[f64; 2]> {
    let mut rng = StdRng::seed_from_u64(101);
    (0..n)
        .map(|_| {
            let r = rng.gen_range(0.3..2.0);
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            if dim == 1 {
                [r * a.cos(), 0.0]
            } else {
                [r * a.cos(), r * a.sin()]
            }
        })
        .collect()
}

fn check_flux(rep: &mut Report, name: &str, prob: &ProblemDef<f64>) {
    let samples = gradient_samples(prob.dim, 8);
    let (w1, w2) = fd_check_flux(prob, &samples);
    rep.record(
        &format!("flux_gradient_{name}"),
        w1 <= 1e-5 && w2 <= 1e-4,
        format!("worst rel err df {w1:.2e}, d2f {w2:.2e}"),
    );
}

fn check_lower(rep: &mut Report, name: &str, prob: &ProblemDef<f64>) {
    let mut rng = StdRng::seed_from_u64(102);
    let samples: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (w1, w2) = fd_check_lower(prob, &samples);
    rep.record(
        &format!("lower_gradient_{name}"),
        w1 <= 1e-5 && w2 <= 1e-4,
        format!("worst rel err dg {w1:.2e}, d2g {w2:.2e}"),
    );
}

fn quad_floor(prob: &ProblemDef<f64>, mesh: &Mesh<f64>, p: usize) -> usize {
    mesh.leaves().into_iter().map(|e| prob.quad_order(mesh, e, p)).max().unwrap()
}

fn dirichlet_of(prob: &ProblemDef<f64>, mesh: &Mesh<f64>, space: &Space) -> Constraints<f64> {
    let faces = mesh.domain_boundary_faces();
    let bc = prob.dirichlet.clone();
    constrain_faces(mesh, space, &faces, &move |_, _, x| bc(x))
}

/// The assembled residual must be the gradient of the assembled energy:
/// central differences along random directions.
fn check_assembly_gradient(rep: &mut Report, name: &str, prob: &ProblemDef<f64>) {
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let cons = dirichlet_of(prob, &mesh, &space);
    let floor = quad_floor(prob, &mesh, 2);

    let mut rng = StdRng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let mut u = FeFunction::<f64> {
            coeffs: (0..space.ndof).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        cons.apply_to(&mut u);
        let (grad, _) = residual_and_jacobian(prob, &mesh, &space, &u, floor);
        for _ in 0..3 {
            let v: Vec<f64> = (0..space.ndof)
                .map(|d| if cons.is_fixed(d) { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect();
            let gv: f64 = grad.iter().zip(&v).map(|(g, w)| g * w).sum();
            let h = 1e-6;
            let shift = |s: f64| FeFunction::<f64> {
                coeffs: u.coeffs.iter().zip(&v).map(|(c, w)| c + s * w).collect(),
            };
            let fd = (energy(prob, &mesh, &space, &shift(h), floor)
                - energy(prob, &mesh, &space, &shift(-h), floor))
                / (2.0 * h);
            worst = worst.max((fd - gv).abs() / gv.abs().max(1.0));
        }
    }
    rep.record(
        &format!("assembly_gradient_{name}"),
        worst <= 1e-5,
        format!("worst rel err {worst:.2e}"),
    );
}

fn check_dof_match_1d(rep: &mut Report) {
    let mut ok = true;
    let mut detail = String::new();
    for p in 1..=20 {
        let cands = enumerate_candidates(1, p);
        let hp: Vec<&Candidate> = cands.iter().filter(|c| matches!(c, Candidate::Hp(_))).collect();
        if hp.len() != p {
            ok = false;
            detail = format!("p={p}: {} split candidates, expected {p}", hp.len());
            break;
        }
        for c in hp {
            if let Candidate::Hp(q) = c {
                if center_dofs_1d(&[q[0], q[1]]) != target_dofs(1, p) {
                    ok = false;
                    detail = format!("p={p}: tuple {q:?} misses target {}", target_dofs(1, p));
                }
            }
        }
    }
    if ok {
        detail = "p = 1..20, counts and targets as enumerated by hand".into();
    }
    rep.record("dof_match_1d", ok, detail);
}

fn check_dof_match_2d(rep: &mut Report) {
    // Split-candidate counts for p = 1..8, counted independently from the
    // defining condition (interior DoFs of the four children match one
    // degree-(p+1) parent).
    let expected = [2usize, 6, 19, 20, 28, 53, 58, 113];
    let mut ok = true;
    let mut detail = String::new();
    for (i, &want) in expected.iter().enumerate() {
        let p = i + 1;
        let cands = enumerate_candidates(2, p);
        let target = (p + 2) * (p + 3) / 2;
        let mut n = 0;
        for c in &cands {
            if let Candidate::Hp(t) = c {
                n += 1;
                if center_dofs_2d(&[t[0], t[1], t[2], t[3]]) != target {
                    ok = false;
                    detail = format!("p={p}: tuple {t:?} misses target {target}");
                }
            }
        }
        if n != want {
            ok = false;
            detail = format!("p={p}: {n} split candidates, expected {want}");
        }
        if target != target_dofs(2, p) {
            ok = false;
            detail = format!("p={p}: target {target} != target_dofs {}", target_dofs(2, p));
        }
    }
    if ok {
        detail = "p = 1..8, counts 2,6,19,20,28,53,58,113".into();
    }
    rep.record("dof_match_2d", ok, detail);
}

/// Summing the flux-corrected local energies over all leaves must reproduce
/// the total energy for any admissible function: the face terms telescope.
fn check_telescoping(rep: &mut Report, name: &str, prob: &ProblemDef<f64>) {
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let cons = dirichlet_of(prob, &mesh, &space);
    let floor = quad_floor(prob, &mesh, 2);
    let solved = solve(prob, &mesh, &space, &cons, None, &SolverConfig::default(), floor);
    let (u, _) = match solved {
        Ok(x) => x,
        Err(e) => {
            rep.record(&format!("telescoping_{name}"), false, format!("solver failed: {e}"));
            return;
        }
    };
    let flux = Flux::Averaged { prob, mesh: &mesh, space: &space, w: &u };

    let mut rng = StdRng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mut v = FeFunction::<f64> {
            coeffs: (0..space.ndof).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        for (&d, _) in &cons.fixed {
            v.coeffs[d] = 0.0;
        }
        let total = energy(prob, &mesh, &space, &v, floor);
        let split: f64 = mesh
            .leaves()
            .into_iter()
            .map(|k| leaf_modified_energy(prob, &mesh, &space, &v, k, &flux, floor))
            .sum();
        worst = worst.max((split - total).abs() / (1.0 + total.abs()));
    }
    rep.record(
        &format!("telescoping_{name}"),
        worst <= 1e-8,
        format!("worst rel defect {worst:.2e}"),
    );
}

/// For a quadratic energy the Galerkin solution satisfies a(u,u) = l(u), so
/// doubling the solution must land back at energy zero.
fn check_linear_energy_identity(rep: &mut Report) {
    let prob = builtin::<f64>("ex1-eps1").expect("builtin");
    let mesh = Mesh::<f64>::interval(8);
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let cons = dirichlet_of(&prob, &mesh, &space);
    let floor = quad_floor(&prob, &mesh, 2);
    let (u, rep_solve) = match solve(&prob, &mesh, &space, &cons, None, &SolverConfig::default(), floor) {
        Ok(x) => x,
        Err(e) => {
            rep.record("linear_energy_identity", false, format!("solver failed: {e}"));
            return;
        }
    };
    let doubled = FeFunction::<f64> { coeffs: u.coeffs.iter().map(|c| 2.0 * c).collect() };
    let e2 = energy(&prob, &mesh, &space, &doubled, floor);
    let e1 = rep_solve.energy;
    let pass = e1 < 0.0 && e2.abs() <= 1e-8 * e1.abs();
    rep.record(
        "linear_energy_identity",
        pass,
        format!("E(u_h) {e1:.6e}, E(2 u_h) {e2:.2e}"),
    );
}

fn check_marking_threshold(rep: &mut Report) {
    let decisions: Vec<ElementDecision<f64>> = [10.0, 4.0, 2.0]
        .iter()
        .enumerate()
        .map(|(i, &delta)| ElementDecision {
            element: i,
            best: Candidate::P,
            delta,
            patch_newton: 0,
        })
        .collect();
    let loose: Vec<usize> = mark(&decisions, 1.0 / 3.0).iter().map(|d| d.element).collect();
    let tight: Vec<usize> = mark(&decisions, 0.9).iter().map(|d| d.element).collect();
    let pass = loose == vec![0, 1] && tight == vec![0] && tight.iter().all(|e| loose.contains(e));
    rep.record(
        "marking_threshold",
        pass,
        format!("theta 1/3 marks {loose:?}, theta 0.9 marks {tight:?}"),
    );
}
