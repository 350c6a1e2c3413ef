use std::sync::Arc;

use hp_energy_core::fespace::{build_space, constrain_faces, Constraints, DegreeVector, FeFunction};
use hp_energy_core::forms::{
    example1, example2, example3, InitialMesh, LowerOrder, ProblemDef, ValueOfGrad, WarmStart,
};
use hp_energy_core::mesh::Mesh;
use hp_energy_core::solve::{solve, SolveError, SolverConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn dirichlet_of(prob: &ProblemDef<f64>, mesh: &Mesh<f64>, space: &hp_energy_core::fespace::Space) -> Constraints<f64> {
    let faces = mesh.domain_boundary_faces();
    let bc = prob.dirichlet.clone();
    constrain_faces(mesh, space, &faces, &move |_, _, x| bc(x))
}

#[test]
fn quadratic_energies_need_exactly_one_newton_step() {
    let prob = example1::<f64>(1.0);
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let bc = dirichlet_of(&prob, &mesh, &space);
    let cfg = SolverConfig::default();
    let (u, rep) = solve(&prob, &mesh, &space, &bc, None, &cfg, 0).unwrap();
    assert_eq!(rep.newton_iters, 1);
    assert!(rep.residual_inf <= 1e-10);
    assert!(u.coeffs.iter().all(|c| c.is_finite()));

    // Warm starting from the minimiser converges before any update.
    let (_, again) = solve(&prob, &mesh, &space, &bc, Some(&u), &cfg, 0).unwrap();
    assert_eq!(again.newton_iters, 0);
}

#[test]
fn linear_exact_solutions_are_reproduced() {
    let lin = |x: [f64; 2]| x[0] + 2.0 * x[1];
    let prob = ProblemDef::<f64> {
        name: "linear",
        dim: 2,
        mu: ValueOfGrad {
            f: Arc::new(|xi: [f64; 2]| 0.5 * (xi[0] * xi[0] + xi[1] * xi[1])),
            df: Arc::new(|xi: [f64; 2]| xi),
            d2f: Arc::new(|_| [[1.0, 0.0], [0.0, 1.0]]),
        },
        lower: LowerOrder::zero(),
        load: Arc::new(|_| 0.0),
        dirichlet: Arc::new(lin),
        exact: None,
        exact_energy: None,
        norm_p: 2.0,
        norm_weights: (1.0, 0.0),
        initial_mesh: InitialMesh::UnitSquare8,
        initial_degree: 1,
        quad_bump: 0,
        singular_vertices: Vec::new(),
        warm_start: WarmStart::Zeros,
    };
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let bc = dirichlet_of(&prob, &mesh, &space);
    let (u, rep) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
    assert_eq!(rep.newton_iters, 1);

    let mut rng = StdRng::seed_from_u64(4);
    for &e in &space.leaf_ids {
        for _ in 0..4 {
            let a: f64 = rng.gen_range(0.1..0.5);
            let b: f64 = rng.gen_range(0.1..0.4);
            let x = mesh.affine_map(e).from_ref([a, b]);
            let (v, g) = u.eval_ref(&mesh, &space, e, [a, b]);
            assert!((v - lin(x)).abs() <= 1e-10, "value off by {}", v - lin(x));
            assert!((g[0] - 1.0).abs() <= 1e-9 && (g[1] - 2.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn ritz_energies_bound_the_exact_energy_and_decrease() {
    let exact = example1::<f64>(1.0).exact_energy.unwrap();
    let mut last = f64::INFINITY;
    for n in [4usize, 8, 16] {
        let prob = example1::<f64>(1.0);
        let mesh = Mesh::<f64>::interval(n);
        let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 1));
        let bc = dirichlet_of(&prob, &mesh, &space);
        let (_, rep) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
        assert!(rep.energy >= exact - 1e-12, "n = {n}: {} < {exact}", rep.energy);
        assert!(rep.energy < last, "n = {n}: energy did not decrease");
        last = rep.energy;
    }

    // A fine cubic mesh nails the closed form energy.
    let prob = example1::<f64>(1.0);
    let mesh = Mesh::<f64>::interval(64);
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 3));
    let bc = dirichlet_of(&prob, &mesh, &space);
    let (_, rep) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
    assert!(
        (rep.energy - exact).abs() <= 1e-8,
        "fine solve energy {} vs {exact}",
        rep.energy
    );
}

#[test]
fn richer_spaces_never_raise_the_minimum() {
    let prob = example2::<f64>();
    let mesh = prob.initial_mesh.build::<f64>();
    let mut energies = Vec::new();
    for p in [1usize, 2, 3] {
        let space = build_space(&mesh, &DegreeVector::uniform(&mesh, p));
        let bc = dirichlet_of(&prob, &mesh, &space);
        let (_, rep) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
        energies.push(rep.energy);
    }
    assert!(energies[1] < energies[0] && energies[2] < energies[1], "{energies:?}");
    // All discrete minima sit above the continuum one.
    let exact = prob.exact_energy.unwrap();
    for e in energies {
        assert!(e >= exact - 1e-9);
    }
}

#[test]
fn degenerate_problems_converge_via_the_quadratic_warm_start() {
    let prob = example3::<f64>();
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let bc = dirichlet_of(&prob, &mesh, &space);
    let (u, rep) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
    assert!(rep.newton_iters <= 30);
    assert!(rep.residual_inf <= 1e-10);
    assert!(rep.energy >= prob.exact_energy.unwrap() - 1e-4);
    assert!(u.coeffs.iter().all(|c| c.is_finite()));
}

#[test]
fn constrained_dofs_keep_their_values_bitwise() {
    let prob = example2::<f64>();
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 3));
    let bc = dirichlet_of(&prob, &mesh, &space);
    let (u, _) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
    for (&d, &v) in &bc.fixed {
        assert_eq!(u.coeffs[d].to_bits(), v.to_bits(), "dof {d} drifted");
    }
}

#[test]
fn exhausted_iteration_budget_is_an_error() {
    let prob = example1::<f64>(1.0);
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let bc = dirichlet_of(&prob, &mesh, &space);
    let cfg = SolverConfig { max_newton: 0, ..SolverConfig::default() };
    match solve(&prob, &mesh, &space, &bc, None, &cfg, 0) {
        Err(SolveError::NoConvergence { iters: 0, .. }) => {}
        other => panic!("expected NoConvergence, got {other:?}"),
    }
}
