use std::sync::Arc;

use hp_energy_core::fespace::{build_space, DegreeVector, FeFunction};
use hp_energy_core::forms::{
    builtin, energy, energy_on, example1, example2, example3, fd_check_flux, fd_check_lower,
    residual_and_jacobian, LowerOrder, ProblemDef, ValueOfGrad, WarmStart,
};
use hp_energy_core::mesh::Mesh;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn poisson_1d() -> ProblemDef<f64> {
    ProblemDef {
        name: "poisson",
        dim: 1,
        mu: ValueOfGrad {
            f: Arc::new(|xi: [f64; 2]| 0.5 * (xi[0] * xi[0] + xi[1] * xi[1])),
            df: Arc::new(|xi: [f64; 2]| xi),
            d2f: Arc::new(|_| [[1.0, 0.0], [0.0, 1.0]]),
        },
        lower: LowerOrder::zero(),
        load: Arc::new(|_| 0.0),
        dirichlet: Arc::new(|_| 0.0),
        exact: None,
        exact_energy: None,
        norm_p: 2.0,
        norm_weights: (1.0, 0.0),
        initial_mesh: hp_energy_core::forms::InitialMesh::Interval(2),
        initial_degree: 1,
        quad_bump: 0,
        singular_vertices: Vec::new(),
        warm_start: WarmStart::Zeros,
    }
}

#[test]
fn hat_function_energy_matches_hand_integration() {
    // Hat of height 1 on two cells of width 1/2: slopes are +-2, so
    // int |u'|^2 / 2 = (4/2) * 1 = 2.
    let prob = poisson_1d();
    let mesh = Mesh::<f64>::interval(2);
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 1));
    let mut u = FeFunction::zeros(&space);
    u.coeffs[space.vertex_dof[&1]] = 1.0;
    let e = energy(&prob, &mesh, &space, &u, 0);
    assert!((e - 2.0).abs() <= 1e-14, "got {e}");
}

#[test]
fn zero_function_energy_integrates_the_zero_state_density() {
    // For ex2, mu(0) = -1/2 and g = 0, so E(0) = -area/2 = -3/2.
    let prob = example2::<f64>();
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 1));
    let u = FeFunction::zeros(&space);
    let e = energy(&prob, &mesh, &space, &u, 0);
    assert!((e + 1.5).abs() <= 1e-13, "got {e}");
}

#[test]
fn exact_energies_match_independent_values() {
    // Reference values computed with 40 digit arithmetic from the closed
    // forms: E1 = -(1 - (2/s) tanh(s/2))/2, E2 and E3 by adaptive
    // integration of the exact minimisers.
    let cases: [(ProblemDef<f64>, f64); 4] = [
        (example1(1.0), -0.03788284273999024149768152),
        (example1(1e-5), -0.4968377223398316206680011),
        (example2(), 0.3629413731214507206327326),
        (example3(), 0.613360364479273174060651),
    ];
    for (prob, want) in cases {
        let got = prob.exact_energy.expect("built-ins know their energy");
        assert!(
            ((got - want) / want).abs() <= 1e-14,
            "{}: got {got}, want {want}",
            prob.name
        );
    }
}

#[test]
fn flux_derivatives_agree_with_finite_differences() {
    let mut rng = StdRng::seed_from_u64(5);
    for name in ["ex1", "ex1-eps1", "ex2", "ex3"] {
        let prob = builtin::<f64>(name).unwrap();
        let samples: Vec<[f64; 2]> = (0..25)
            .map(|_| {
                // Stay away from the origin: ex3's second derivative has a
                // kink there that central differences straddle.
                let r = rng.gen_range(0.3..2.0);
                let t = rng.gen_range(0.0..std::f64::consts::TAU);
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        let (w1, w2) = fd_check_flux(&prob, &samples);
        assert!(w1 <= 1e-5, "{name}: d mu error {w1}");
        assert!(w2 <= 1e-4, "{name}: d2 mu error {w2}");
    }
    let prob = example1::<f64>(1.0);
    let vals: Vec<f64> = (0..25).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (w1, w2) = fd_check_lower(&prob, &vals);
    assert!(w1 <= 1e-5 && w2 <= 1e-5, "lower order: {w1}, {w2}");
}

#[test]
fn builtin_hessians_are_positive_definite_away_from_zero() {
    let mut rng = StdRng::seed_from_u64(9);
    for name in ["ex1-eps1", "ex2", "ex3"] {
        let prob = builtin::<f64>(name).unwrap();
        for _ in 0..40 {
            let xi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let h = (prob.mu.d2f)(xi);
            let (tr, det) = (h[0][0] + h[1][1], h[0][0] * h[1][1] - h[0][1] * h[1][0]);
            // ex1 is 1D: its Hessian is only semidefinite in the second slot.
            if name == "ex1-eps1" {
                assert!(h[0][0] > 0.0 && det >= -1e-15);
            } else {
                assert!(tr > 0.0 && det > 0.0, "{name} at {xi:?}: tr {tr}, det {det}");
            }
            assert!((h[0][1] - h[1][0]).abs() <= 1e-15);
        }
    }
}

#[test]
fn ex1_exact_solution_satisfies_the_ode() {
    for eps in [1.0, 1e-5] {
        let prob = example1::<f64>(eps);
        let exact = prob.exact.clone().unwrap();
        assert!(exact([0.0, 0.0]).0.abs() <= 1e-14);
        assert!(exact([1.0, 0.0]).0.abs() <= 1e-14);
        let h = 1e-4;
        for x in [0.3, 0.5, 0.62] {
            let (u, du) = exact([x, 0.0]);
            let upp = (exact([x + h, 0.0]).0 - 2.0 * u + exact([x - h, 0.0]).0) / (h * h);
            let fd_du = (exact([x + h, 0.0]).0 - exact([x - h, 0.0]).0) / (2.0 * h);
            assert!((fd_du - du[0]).abs() <= 1e-6 * (1.0 + du[0].abs()));
            // -eps u'' + u = 1.
            let resid = -eps * upp + u - 1.0;
            assert!(resid.abs() <= 1e-5, "eps {eps}, x {x}: residual {resid}");
        }
    }
}

/// Divergence of the flux by central differences of the exact gradient.
fn fd_flux_divergence(prob: &ProblemDef<f64>, x: [f64; 2], h: f64) -> f64 {
    let exact = prob.exact.clone().unwrap();
    let flux = |y: [f64; 2]| (prob.mu.df)(exact(y).1);
    let dx = (flux([x[0] + h, x[1]])[0] - flux([x[0] - h, x[1]])[0]) / (2.0 * h);
    let dy = (flux([x[0], x[1] + h])[1] - flux([x[0], x[1] - h])[1]) / (2.0 * h);
    dx + dy
}

#[test]
fn ex2_manufactured_load_matches_the_strong_form() {
    let prob = example2::<f64>();
    for x in [[0.5, 0.5], [-0.6, 0.3], [-0.4, -0.7], [0.8, 0.1]] {
        let div = fd_flux_divergence(&prob, x, 1e-5);
        let f = (prob.load)(x);
        assert!(
            (-div - f).abs() <= 1e-5 * (1.0 + f.abs()),
            "at {x:?}: -div {}, f {f}",
            -div
        );
    }
}

#[test]
fn ex3_manufactured_load_matches_the_strong_form() {
    let prob = example3::<f64>();
    for x in [[0.5, 0.5], [0.3, 0.8], [0.9, 0.2], [0.25, 0.3]] {
        let div = fd_flux_divergence(&prob, x, 1e-5);
        let f = (prob.load)(x);
        assert!(
            (-div - f).abs() <= 1e-4 * (1.0 + f.abs()),
            "at {x:?}: -div {}, f {f}",
            -div
        );
    }
}

fn random_state(space_ndof: usize, rng: &mut StdRng) -> FeFunction<f64> {
    FeFunction {
        coeffs: (0..space_ndof)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.gen_range(0.3..1.0)
            })
            .collect(),
    }
}

#[test]
fn residual_matches_finite_differences_of_the_energy() {
    let mut rng = StdRng::seed_from_u64(31);
    for name in ["ex1", "ex1-eps1", "ex2", "ex3"] {
        let prob = builtin::<f64>(name).unwrap();
        let mesh = prob.initial_mesh.build::<f64>();
        let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
        let u = random_state(space.ndof, &mut rng);
        let (r, _) = residual_and_jacobian(&prob, &mesh, &space, &u, 0);
        let h = 1e-6;
        for _ in 0..10 {
            let d = rng.gen_range(0..space.ndof);
            let mut up = u.clone();
            let mut um = u.clone();
            up.coeffs[d] += h;
            um.coeffs[d] -= h;
            let fd = (energy(&prob, &mesh, &space, &up, 0)
                - energy(&prob, &mesh, &space, &um, 0))
                / (2.0 * h);
            let scale = r[d].abs().max(1.0);
            assert!(
                (fd - r[d]).abs() / scale <= 1e-5,
                "{name} dof {d}: fd {fd}, residual {}",
                r[d]
            );
        }
    }
}

#[test]
fn jacobian_matches_finite_differences_of_the_residual() {
    let mut rng = StdRng::seed_from_u64(77);
    for name in ["ex1-eps1", "ex2", "ex3"] {
        let prob = builtin::<f64>(name).unwrap();
        let mesh = prob.initial_mesh.build::<f64>();
        let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
        let u = random_state(space.ndof, &mut rng);
        let (_, sys) = residual_and_jacobian(&prob, &mesh, &space, &u, 0);
        let h = 1e-6;
        for _ in 0..4 {
            let a = rng.gen_range(0..space.ndof);
            let mut up = u.clone();
            let mut um = u.clone();
            up.coeffs[a] += h;
            um.coeffs[a] -= h;
            let (rp, _) = residual_and_jacobian(&prob, &mesh, &space, &up, 0);
            let (rm, _) = residual_and_jacobian(&prob, &mesh, &space, &um, 0);
            let mut col = vec![0.0; space.ndof];
            let mut ea = vec![0.0; space.ndof];
            ea[a] = 1.0;
            sys.matvec(&ea, &mut col);
            for b in 0..space.ndof {
                let fd = (rp[b] - rm[b]) / (2.0 * h);
                let scale = col[b].abs().max(1.0);
                assert!(
                    (fd - col[b]).abs() / scale <= 2e-5,
                    "{name} entry ({a}, {b}): fd {fd}, jacobian {}",
                    col[b]
                );
            }
        }
    }
}

#[test]
fn energy_on_all_leaves_sums_to_the_total() {
    let prob = example2::<f64>();
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let mut rng = StdRng::seed_from_u64(2);
    let u = random_state(space.ndof, &mut rng);
    let total = energy(&prob, &mesh, &space, &u, 0);
    let split = energy_on(&prob, &mesh, &space, &u, &mesh.leaves(), 0);
    assert!((total - split).abs() <= 1e-12 * (1.0 + total.abs()));
    let leaves = mesh.leaves();
    let part = energy_on(&prob, &mesh, &space, &u, &leaves[..4], 0)
        + energy_on(&prob, &mesh, &space, &u, &leaves[4..], 0);
    assert!((total - part).abs() <= 1e-12 * (1.0 + total.abs()));
}

#[test]
fn builtin_lookup_covers_the_catalog() {
    assert_eq!(builtin::<f64>("ex1").unwrap().dim, 1);
    assert_eq!(builtin::<f64>("ex1-eps1").unwrap().dim, 1);
    assert_eq!(builtin::<f64>("ex2").unwrap().dim, 2);
    assert_eq!(builtin::<f64>("ex3").unwrap().dim, 2);
    assert!(builtin::<f64>("ex4").is_none());
    // The eps variants really differ.
    let stiff = builtin::<f64>("ex1").unwrap();
    let mild = builtin::<f64>("ex1-eps1").unwrap();
    assert!((stiff.mu.f)([1.0, 0.0]) < (mild.mu.f)([1.0, 0.0]));
}

#[test]
fn quad_orders_add_the_bump_and_singular_touch() {
    let prob = example2::<f64>();
    let mesh = prob.initial_mesh.build::<f64>();
    let mut touching = 0;
    for &e in &mesh.leaves() {
        let base = (2 * 3 + 2).max(4) + 4;
        let got = prob.quad_order(&mesh, e, 3);
        if prob.touches_singularity(&mesh, e) {
            touching += 1;
            assert_eq!(got, base + 2);
        } else {
            assert_eq!(got, base);
        }
    }
    // The origin is a corner of all three squares of the L, two fan
    // triangles each.
    assert_eq!(touching, 6);
    let plain = example1::<f64>(1.0);
    let imesh = Mesh::<f64>::interval(3);
    assert_eq!(plain.quad_order(&imesh, 0, 1), 4);
    assert_eq!(plain.quad_order(&imesh, 0, 5), 12);
}

#[test]
fn quadratic_surrogate_keeps_load_and_boundary_data() {
    let prob = example3::<f64>();
    let sur = prob.quadratic_surrogate();
    assert!(((sur.mu.f)([3.0, 4.0]) - 12.5).abs() <= 1e-15);
    assert_eq!((sur.mu.df)([3.0, 4.0]), [3.0, 4.0]);
    assert!(sur.exact.is_none() && sur.exact_energy.is_none());
    assert_eq!(sur.warm_start, WarmStart::Zeros);
    for x in [[0.3, 0.9], [0.7, 0.2]] {
        assert_eq!((sur.load)(x), (prob.load)(x));
        assert_eq!((sur.dirichlet)(x), (prob.dirichlet)(x));
    }
}
