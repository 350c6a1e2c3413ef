use std::sync::Arc;

use hp_energy_core::estimator::{
    boundary_flux_term, error_norms, leaf_modified_energy, region_boundary_segments, Flux,
};
use hp_energy_core::fespace::{build_space, constrain_faces, DegreeVector, FeFunction};
use hp_energy_core::forms::{
    builtin, energy, example1, InitialMesh, LowerOrder, ProblemDef, ValueOfGrad, WarmStart,
};
use hp_energy_core::mesh::Mesh;
use hp_energy_core::quadrature;
use hp_energy_core::solve::{solve, SolverConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn dirichlet_of(
    prob: &ProblemDef<f64>,
    mesh: &Mesh<f64>,
    space: &hp_energy_core::fespace::Space,
) -> hp_energy_core::fespace::Constraints<f64> {
    let faces = mesh.domain_boundary_faces();
    let bc = prob.dirichlet.clone();
    constrain_faces(mesh, space, &faces, &move |_, _, x| bc(x))
}

fn quad_floor(prob: &ProblemDef<f64>, mesh: &Mesh<f64>, p: usize) -> usize {
    mesh.leaves()
        .into_iter()
        .map(|e| prob.quad_order(mesh, e, p))
        .max()
        .unwrap()
}

#[test]
fn averaged_flux_leaf_energies_telescope_to_the_total() {
    for name in ["ex1", "ex1-eps1", "ex2", "ex3"] {
        let prob = builtin::<f64>(name).unwrap();
        let mesh = prob.initial_mesh.build::<f64>();
        let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
        let bc = dirichlet_of(&prob, &mesh, &space);
        let (u, _) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
        let flux = Flux::Averaged { prob: &prob, mesh: &mesh, space: &space, w: &u };
        let floor = quad_floor(&prob, &mesh, 2);

        let mut rng = StdRng::seed_from_u64(19);
        for trial in 0..20 {
            let mut v = FeFunction::<f64> {
                coeffs: (0..space.ndof).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            };
            for (&d, _) in &bc.fixed {
                v.coeffs[d] = 0.0;
            }
            let total = energy(&prob, &mesh, &space, &v, floor);
            let split: f64 = mesh
                .leaves()
                .into_iter()
                .map(|k| leaf_modified_energy(&prob, &mesh, &space, &v, k, &flux, floor))
                .sum();
            let tol = 1e-8 * (1.0 + total.abs());
            assert!(
                (split - total).abs() <= tol,
                "{name} trial {trial}: split {split} vs total {total}"
            );
        }
    }
}

/// Gauss integral of `f` over the physical cell `[xl, xr]`.
fn cell_integral(xl: f64, xr: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let rule = quadrature::interval_rule::<f64>(30);
    let (mid, half) = (0.5 * (xl + xr), 0.5 * (xr - xl));
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(pt, w)| w * half * f(mid + half * pt[0]))
        .sum()
}

#[test]
fn flux_corrected_energies_obey_the_quadratic_identity() {
    // For the linear problem the localised identity
    //     E'_k(u_hp) - E'_k(u*) = |u_hp - u*|_{E,k}^2 / 2
    // holds element by element when the frozen flux is the exact one.
    let eps = 1.0;
    let prob = example1::<f64>(eps);
    let mesh = Mesh::<f64>::interval(8);
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let bc = dirichlet_of(&prob, &mesh, &space);
    let (u, _) = solve(&prob, &mesh, &space, &bc, None, &SolverConfig::default(), 0).unwrap();
    let exact = prob.exact.clone().unwrap();

    let sigma = move |x: [f64; 2]| -> [f64; 2] {
        let (_, g) = exact(x);
        [eps * g[0], 0.0]
    };
    let flux = Flux::Analytic(&sigma);
    let floor = quad_floor(&prob, &mesh, 2);
    let exact = prob.exact.clone().unwrap();

    let mut sum_lhs = 0.0;
    let mut sum_half = 0.0;
    for &k in &mesh.leaves() {
        let verts = mesh.verts(k);
        let (xl, xr) = (mesh.vertex(verts[0])[0], mesh.vertex(verts[1])[0]);

        // Independent value of E'_k(u*): cell energy plus signed endpoint
        // fluxes on the interior endpoints.
        let ex = &exact;
        let mut ref_val = cell_integral(xl, xr, &|x| {
            let (v, g) = ex([x, 0.0]);
            0.5 * eps * g[0] * g[0] + 0.5 * v * v - v
        });
        for (xp, n) in [(xl, -1.0), (xr, 1.0)] {
            if xp > 0.0 && xp < 1.0 {
                let (v, g) = ex([xp, 0.0]);
                ref_val -= eps * g[0] * n * v;
            }
        }

        let lhs = leaf_modified_energy(&prob, &mesh, &space, &u, k, &flux, floor) - ref_val;
        let half_norm = 0.5
            * cell_integral(xl, xr, &|x| {
                let (v, g) = ex([x, 0.0]);
                let (uh, gh) = u.eval_phys(&mesh, &space, k, [x, 0.0]);
                let (dv, dg) = (uh - v, gh[0] - g[0]);
                eps * dg * dg + dv * dv
            });
        assert!(
            (lhs - half_norm).abs() <= 1e-8 * (1.0 + ref_val.abs()),
            "element {k}: lhs {lhs} vs half norm {half_norm}"
        );
        sum_lhs += lhs;
        sum_half += half_norm;
    }

    // Summed over the mesh this is the classical energy gap identity.
    let e_star = prob.exact_energy.unwrap();
    let e_hp = energy(&prob, &mesh, &space, &u, floor);
    assert!(((e_hp - e_star) - sum_half).abs() <= 1e-8 * e_star.abs());
    assert!((sum_lhs - sum_half).abs() <= 1e-8 * e_star.abs());
}

#[test]
fn averaged_flux_of_a_smooth_field_matches_the_analytic_one() {
    let prob = ProblemDef::<f64> {
        name: "poisson",
        dim: 2,
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
        initial_mesh: InitialMesh::UnitSquare8,
        initial_degree: 1,
        quad_bump: 0,
        singular_vertices: Vec::new(),
        warm_start: WarmStart::Zeros,
    };
    let mesh = Mesh::new(
        2,
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![vec![0, 1, 2], vec![0, 2, 3]],
    )
    .unwrap();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 1));
    // u = x + 2y: vertex dofs carry point values.
    let mut u = FeFunction::zeros(&space);
    for (v, &d) in &space.vertex_dof {
        let x = mesh.vertex(*v);
        u.coeffs[d] = x[0] + 2.0 * x[1];
    }
    let mut ones = FeFunction::zeros(&space);
    for (_, &d) in &space.vertex_dof {
        ones.coeffs[d] = 1.0;
    }
    // All three faces of leaf 0 contribute segments, split at midpoints; the
    // diagonal is the only two sided one. grad u = (1, 2) everywhere, so the
    // averaged flux agrees with the analytic field on every segment, the
    // diagonal part integrates to (1,2).n * sqrt(2) = 1, and the closed
    // boundary integral of a constant field vanishes.
    let segs = region_boundary_segments(&mesh, 0, &mesh);
    assert_eq!(segs.len(), 6);
    let diag: Vec<_> = segs.iter().filter(|s| s.flux_elems.1.is_some()).cloned().collect();
    assert_eq!(diag.len(), 2);
    let averaged = Flux::Averaged { prob: &prob, mesh: &mesh, space: &space, w: &u };
    let field = |_: [f64; 2]| [1.0, 2.0];
    let analytic = Flux::Analytic(&field);
    let a = boundary_flux_term(&segs, &averaged, &mesh, &space, &ones, &[0], 8);
    let b = boundary_flux_term(&segs, &analytic, &mesh, &space, &ones, &[0], 8);
    let d = boundary_flux_term(&diag, &averaged, &mesh, &space, &ones, &[0], 8);
    assert!(a.abs() <= 1e-12, "closed boundary flux of a constant field: {a}");
    assert!((a - b).abs() <= 1e-13);
    assert!((d - 1.0).abs() <= 1e-12, "diagonal flux term {d}");
}

#[test]
fn one_dimensional_averaged_flux_means_the_sides_and_is_one_sided_at_the_boundary() {
    let eps = 1.0;
    let prob = example1::<f64>(eps);
    let mesh = Mesh::<f64>::interval(2);
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 1));
    let mut rng = StdRng::seed_from_u64(23);
    let u = FeFunction::<f64> {
        coeffs: (0..space.ndof).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let mut ones = FeFunction::zeros(&space);
    for (_, &d) in &space.vertex_dof {
        ones.coeffs[d] = 1.0;
    }
    // Slopes on the two cells of width 1/2 from the vertex values.
    let c = |v: usize| u.coeffs[space.vertex_dof[&v]];
    let (s0, s1) = (2.0 * (c(1) - c(0)), 2.0 * (c(2) - c(1)));

    // Leaf 0 owns two endpoint segments: the domain endpoint x = 0 takes the
    // one sided trace with normal -1, the interior vertex the two sided mean
    // with normal +1.
    let segs = region_boundary_segments(&mesh, 0, &mesh);
    assert_eq!(segs.len(), 2);
    let outer: Vec<_> = segs.iter().filter(|s| s.flux_elems.1.is_none()).cloned().collect();
    assert_eq!(outer.len(), 1);
    assert_eq!(outer[0].a[0], 0.0);
    let flux = Flux::Averaged { prob: &prob, mesh: &mesh, space: &space, w: &u };
    let got_outer = boundary_flux_term(&outer, &flux, &mesh, &space, &ones, &[0], 4);
    let want_outer = -eps * s0;
    assert!((got_outer - want_outer).abs() <= 1e-13, "one sided term {got_outer}, want {want_outer}");
    let got = boundary_flux_term(&segs, &flux, &mesh, &space, &ones, &[0], 4);
    let want = want_outer + 0.5 * (eps * s0 + eps * s1);
    assert!((got - want).abs() <= 1e-13, "got {got}, want {want}");
}

#[test]
fn error_norms_at_zero_match_independent_integrals() {
    // Pieces of the norms of the exact solutions, integrated to 40 digits in
    // polar coordinates.
    let ex2_grad_sq = 1.836226661875162634428309f64;
    let ex2_val_sq = 1.084455833098490189114366f64;
    let ex3_lp_cubed = 0.6526454382770871030655274f64;
    let ex3_w1p_cubed = 0.6133603644792731740606510f64;

    let prob = builtin::<f64>("ex2").unwrap();
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 1));
    let zero = FeFunction::zeros(&space);
    let rep = error_norms(&prob, &mesh, &space, &zero).unwrap();
    let h1 = (ex2_grad_sq + ex2_val_sq).sqrt();
    println!(
        "ex2 at zero: energy_norm {} (want {h1}), lp {} (want {}), w1p {} (want {})",
        rep.energy_norm,
        rep.lp,
        ex2_val_sq.sqrt(),
        rep.w1p,
        ex2_grad_sq.sqrt()
    );
    // The gradient terms integrate r^(-2/3) against a fixed order rule, so
    // only the corner elements limit the accuracy.
    assert!((rep.energy_norm - h1).abs() / h1 <= 1e-3);
    assert!((rep.lp - ex2_val_sq.sqrt()).abs() / ex2_val_sq.sqrt() <= 1e-6);
    assert!((rep.w1p - ex2_grad_sq.sqrt()).abs() / ex2_grad_sq.sqrt() <= 1e-3);

    let prob = builtin::<f64>("ex3").unwrap();
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 1));
    let zero = FeFunction::zeros(&space);
    let rep = error_norms(&prob, &mesh, &space, &zero).unwrap();
    let lp = ex3_lp_cubed.powf(1.0 / 3.0);
    let w1p = ex3_w1p_cubed.powf(1.0 / 3.0);
    println!(
        "ex3 at zero: lp {} (want {lp}), w1p {} (want {w1p}), energy_norm {}",
        rep.lp, rep.w1p, rep.energy_norm
    );
    assert!((rep.lp - lp).abs() / lp <= 1e-8);
    assert!((rep.w1p - w1p).abs() / w1p <= 1e-3);
    // Weights (1, 0): the energy norm is the W(1,3) seminorm.
    assert!((rep.energy_norm - rep.w1p).abs() <= 1e-14);
}

#[test]
fn interpolated_linear_solutions_have_zero_error() {
    let lin = |x: [f64; 2]| -> (f64, [f64; 2]) { (x[0] + 2.0 * x[1], [1.0, 2.0]) };
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
        dirichlet: Arc::new(move |x| lin(x).0),
        exact: Some(Arc::new(lin)),
        exact_energy: None,
        norm_p: 2.0,
        norm_weights: (1.0, 1.0),
        initial_mesh: InitialMesh::UnitSquare8,
        initial_degree: 1,
        quad_bump: 0,
        singular_vertices: Vec::new(),
        warm_start: WarmStart::Zeros,
    };
    let mesh = prob.initial_mesh.build::<f64>();
    let space = build_space(&mesh, &DegreeVector::uniform(&mesh, 2));
    let mut u = FeFunction::zeros(&space);
    for (v, &d) in &space.vertex_dof {
        u.coeffs[d] = lin(mesh.vertex(*v)).0;
    }
    let rep = error_norms(&prob, &mesh, &space, &u).unwrap();
    assert!(rep.energy_norm <= 1e-12 && rep.lp <= 1e-12 && rep.w1p <= 1e-12);

    // Without an exact solution there is no report.
    let blind = ProblemDef { exact: None, ..prob };
    assert!(error_norms(&blind, &mesh, &space, &u).is_none());
}
