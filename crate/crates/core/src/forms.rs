//! Problem definitions and assembly of the energy functional
//!
//! ```text
//!     E(u) = integral of  mu(grad u) + g(u) - f u  over the domain,
//! ```
//!
//! with `mu` convex and smooth away from the origin and `g` convex. The
//! built-in problems are a singularly perturbed 1D reaction diffusion
//! functional, a quasilinear L-shape problem with a corner singularity, and
//! a p-Laplacian type problem (p = 3) with a point singularity.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::{BasisTable, ElementLayout};
use crate::fespace::{FeFunction, Space};
use crate::linalg::SymSystem;
use crate::mesh::Mesh;
use crate::quadrature::{self, QuadRule};
use crate::scalar::Real;

pub type PointFn<T> = Arc<dyn Fn([T; 2]) -> T + Send + Sync>;
pub type FluxFn<T> = Arc<dyn Fn([T; 2]) -> [T; 2] + Send + Sync>;
pub type HessFn<T> = Arc<dyn Fn([T; 2]) -> [[T; 2]; 2] + Send + Sync>;
pub type ValueFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type ExactFn<T> = Arc<dyn Fn([T; 2]) -> (T, [T; 2]) + Send + Sync>;

/// Initial guess strategy for the global Newton solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarmStart {
    /// Start from zero (with boundary values applied).
    Zeros,
    /// Solve the quadratic surrogate `mu = |xi|^2 / 2` first; needed when
    /// the true Hessian degenerates at zero gradient.
    Quadratic,
}

/// Coarse meshes the built-in problems start from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialMesh {
    Interval(usize),
    LShape,
    UnitSquare8,
}

impl InitialMesh {
    pub fn build<T: Real>(self) -> Mesh<T> {
        match self {
            InitialMesh::Interval(n) => Mesh::interval(n),
            InitialMesh::LShape => Mesh::l_shape(),
            InitialMesh::UnitSquare8 => Mesh::unit_square_8(),
        }
    }
}

/// A convex variational problem with Dirichlet data, plus the metadata the
/// adaptive driver and the error reporting need.
#[derive(Clone)]
pub struct ProblemDef<T: Real> {
    pub name: &'static str,
    pub dim: usize,
    pub mu: ValueOfGrad<T>,
    pub lower: LowerOrder<T>,
    /// Right hand side f(x).
    pub load: PointFn<T>,
    /// Dirichlet datum on the whole boundary.
    pub dirichlet: PointFn<T>,
    /// Exact solution and gradient, when known.
    pub exact: Option<ExactFn<T>>,
    pub exact_energy: Option<T>,
    /// Errors are reported in `(int gw |grad v|^p + vw |v|^p)^(1/p)`;
    /// see [`crate::estimator::error_norms`].
    pub norm_p: T,
    pub norm_weights: (T, T),
    pub initial_mesh: InitialMesh,
    pub initial_degree: usize,
    /// Extra quadrature orders for non-polynomial integrands.
    pub quad_bump: usize,
    /// Elements touching these points get a further quadrature bump.
    pub singular_vertices: Vec<[T; 2]>,
    pub warm_start: WarmStart,
}

/// `mu` and its first two derivatives with respect to the gradient.
#[derive(Clone)]
pub struct ValueOfGrad<T: Real> {
    pub f: PointFn<T>,
    pub df: FluxFn<T>,
    pub d2f: HessFn<T>,
}

/// `g` and its first two derivatives with respect to the value.
#[derive(Clone)]
pub struct LowerOrder<T: Real> {
    pub f: ValueFn<T>,
    pub df: ValueFn<T>,
    pub d2f: ValueFn<T>,
}

impl<T: Real> LowerOrder<T> {
    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_| T::zero()),
            df: Arc::new(|_| T::zero()),
            d2f: Arc::new(|_| T::zero()),
        }
    }
}

impl<T: Real> ProblemDef<T> {
    /// Quadrature order for integrating degree `p` trial functions on
    /// element `e`: `2p + 2` plus the problem bump, plus 2 on elements that
    /// touch a singular point.
    pub fn quad_order(&self, mesh: &Mesh<T>, e: usize, p: usize) -> usize {
        let mut q = (2 * p + 2).max(4) + self.quad_bump;
        if self.touches_singularity(mesh, e) {
            q += 2;
        }
        q
    }

    pub fn touches_singularity(&self, mesh: &Mesh<T>, e: usize) -> bool {
        let tol = T::of(1e-12);
        self.singular_vertices.iter().any(|sv| {
            mesh.verts(e).iter().any(|&v| {
                let x = mesh.vertex(v);
                (x[0] - sv[0]).abs() <= tol && (x[1] - sv[1]).abs() <= tol
            })
        })
    }

    /// The quadratic surrogate with the same load and boundary data; its
    /// minimiser seeds the Newton iteration for degenerate problems.
    pub fn quadratic_surrogate(&self) -> ProblemDef<T> {
        let half = T::of(0.5);
        ProblemDef {
            name: "surrogate",
            mu: ValueOfGrad {
                f: Arc::new(move |xi: [T; 2]| half * (xi[0] * xi[0] + xi[1] * xi[1])),
                df: Arc::new(|xi: [T; 2]| xi),
                d2f: Arc::new(|_| [[T::one(), T::zero()], [T::zero(), T::one()]]),
            },
            lower: LowerOrder::zero(),
            exact: None,
            exact_energy: None,
            warm_start: WarmStart::Zeros,
            ..self.clone()
        }
    }
}

/// Key for sharing tabulated bases between elements: same layout and same
/// quadrature order means the same table.
type TableKey = (usize, ElementLayout);

/// Quadrature rules and basis tables for each leaf of a space, shared
/// between identical layouts. `floor` raises every element's order to at
/// least that value (candidate comparisons need one fixed rule per cell).
pub struct Tables<T: Real> {
    map: HashMap<TableKey, (QuadRule<T>, BasisTable<T>)>,
    keys: Vec<TableKey>,
}

impl<T: Real> Tables<T> {
    pub fn build(prob: &ProblemDef<T>, mesh: &Mesh<T>, space: &Space, floor: usize) -> Self {
        let mut map: HashMap<TableKey, (QuadRule<T>, BasisTable<T>)> = HashMap::new();
        let mut keys = Vec::with_capacity(space.elems.len());
        for ed in &space.elems {
            let order = prob.quad_order(mesh, ed.element, ed.layout.p).max(floor);
            let key = (order, ed.layout.clone());
            map.entry(key.clone()).or_insert_with(|| {
                let rule = quadrature::reference_rule(mesh.dim(), order);
                let table = crate::basis::tabulate(&ed.layout, &rule.points);
                (rule, table)
            });
            keys.push(key);
        }
        Self { map, keys }
    }

    pub fn get(&self, idx: usize) -> (&QuadRule<T>, &BasisTable<T>) {
        let (r, t) = &self.map[&self.keys[idx]];
        (r, t)
    }
}

/// Per-element energy contributions, in `space.elems` order.
fn element_energies<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    u: &FeFunction<T>,
    tables: &Tables<T>,
) -> Vec<T> {
    let eval_one = |idx: usize| -> T {
        let ed = &space.elems[idx];
        let (rule, table) = tables.get(idx);
        let map = mesh.affine_map(ed.element);
        let det = map.det.abs();
        let n = ed.layout.ndof();
        let mut acc = T::zero();
        for q in 0..rule.points.len() {
            let mut val = T::zero();
            let mut gref = [T::zero(); 2];
            for s in 0..n {
                let c = u.coeffs[ed.dofs[s]];
                val += c * table.values[q * n + s];
                let g = table.grads[q * n + s];
                gref[0] += c * g[0];
                gref[1] += c * g[1];
            }
            let grad = map.grad_to_phys(gref);
            let x = map.from_ref(rule.points[q]);
            let w = rule.weights[q] * det;
            acc += w * ((prob.mu.f)(grad) + (prob.lower.f)(val) - (prob.load)(x) * val);
        }
        acc
    };
    if space.elems.len() >= 64 {
        (0..space.elems.len()).into_par_iter().map(eval_one).collect()
    } else {
        (0..space.elems.len()).map(eval_one).collect()
    }
}

/// Total energy E(u). Summation order is fixed for reproducibility.
pub fn energy<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    u: &FeFunction<T>,
    floor: usize,
) -> T {
    let tables = Tables::build(prob, mesh, space, floor);
    energy_with(prob, mesh, space, u, &tables)
}

/// Like [`energy`] but reusing prebuilt tables (line searches call this
/// many times per solve).
pub fn energy_with<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    u: &FeFunction<T>,
    tables: &Tables<T>,
) -> T {
    element_energies(prob, mesh, space, u, tables).into_iter().sum()
}

/// Energy restricted to the given leaves.
pub fn energy_on<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    u: &FeFunction<T>,
    elems: &[usize],
    floor: usize,
) -> T {
    let tables = Tables::build(prob, mesh, space, floor);
    let all = element_energies(prob, mesh, space, u, &tables);
    elems.iter().map(|&e| all[space.pos_of(e)]).sum()
}

/// First and second variation of E at `u`: the gradient vector and the
/// (symmetric positive definite, by convexity) Hessian.
pub fn residual_and_jacobian<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    u: &FeFunction<T>,
    floor: usize,
) -> (Vec<T>, SymSystem<T>) {
    let tables = Tables::build(prob, mesh, space, floor);
    residual_and_jacobian_with(prob, mesh, space, u, &tables)
}

/// Like [`residual_and_jacobian`] but reusing prebuilt tables.
pub fn residual_and_jacobian_with<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    u: &FeFunction<T>,
    tables: &Tables<T>,
) -> (Vec<T>, SymSystem<T>) {
    let eval_one = |idx: usize| -> (Vec<T>, Vec<T>) {
        let ed = &space.elems[idx];
        let (rule, table) = tables.get(idx);
        let map = mesh.affine_map(ed.element);
        let det = map.det.abs();
        let n = ed.layout.ndof();
        let mut r = vec![T::zero(); n];
        // Local Hessian, packed upper triangle (a <= b).
        let mut h = vec![T::zero(); n * (n + 1) / 2];
        let mut gphys = vec![[T::zero(); 2]; n];
        for q in 0..rule.points.len() {
            let mut val = T::zero();
            let mut gref = [T::zero(); 2];
            for s in 0..n {
                let c = u.coeffs[ed.dofs[s]];
                val += c * table.values[q * n + s];
                let g = table.grads[q * n + s];
                gref[0] += c * g[0];
                gref[1] += c * g[1];
                gphys[s] = map.grad_to_phys(g);
            }
            let grad = map.grad_to_phys(gref);
            let x = map.from_ref(rule.points[q]);
            let w = rule.weights[q] * det;
            let dmu = (prob.mu.df)(grad);
            let d2mu = (prob.mu.d2f)(grad);
            let dg = (prob.lower.df)(val);
            let d2g = (prob.lower.d2f)(val);
            let f = (prob.load)(x);
            for a in 0..n {
                let va = table.values[q * n + a];
                let ga = gphys[a];
                r[a] += w * (dmu[0] * ga[0] + dmu[1] * ga[1] + (dg - f) * va);
                let ha = [
                    d2mu[0][0] * ga[0] + d2mu[0][1] * ga[1],
                    d2mu[1][0] * ga[0] + d2mu[1][1] * ga[1],
                ];
                let base = a * (2 * n - a + 1) / 2;
                for b in a..n {
                    let gb = gphys[b];
                    let vb = table.values[q * n + b];
                    h[base + b - a] += w * (ha[0] * gb[0] + ha[1] * gb[1] + d2g * va * vb);
                }
            }
        }
        (r, h)
    };
    let locals: Vec<(Vec<T>, Vec<T>)> = if space.elems.len() >= 64 {
        (0..space.elems.len()).into_par_iter().map(eval_one).collect()
    } else {
        (0..space.elems.len()).map(eval_one).collect()
    };
    let mut grad = vec![T::zero(); space.ndof];
    let mut sys = SymSystem::new(space.ndof);
    for (idx, (r, h)) in locals.iter().enumerate() {
        let ed = &space.elems[idx];
        let n = ed.layout.ndof();
        for a in 0..n {
            grad[ed.dofs[a]] += r[a];
            let base = a * (2 * n - a + 1) / 2;
            for b in a..n {
                sys.add(ed.dofs[a], ed.dofs[b], h[base + b - a]);
            }
        }
    }
    (grad, sys)
}

/// Central difference check of the flux derivatives at the given gradient
/// samples. Returns the worst relative errors of (`mu.df` vs `mu.f`,
/// `mu.d2f` vs `mu.df`).
pub fn fd_check_flux<T: Real>(prob: &ProblemDef<T>, samples: &[[T; 2]]) -> (f64, f64) {
    let h = T::of(1e-6);
    let two_h = h + h;
    let mut worst1 = 0.0f64;
    let mut worst2 = 0.0f64;
    for &xi in samples {
        let dmu = (prob.mu.df)(xi);
        let d2mu = (prob.mu.d2f)(xi);
        for c in 0..2 {
            let mut xp = xi;
            let mut xm = xi;
            xp[c] += h;
            xm[c] -= h;
            let fd = ((prob.mu.f)(xp) - (prob.mu.f)(xm)) / two_h;
            let scale = dmu[c].abs().max(T::one()).as_f64();
            worst1 = worst1.max((fd - dmu[c]).abs().as_f64() / scale);
            let dp = (prob.mu.df)(xp);
            let dm = (prob.mu.df)(xm);
            for r in 0..2 {
                let fd2 = (dp[r] - dm[r]) / two_h;
                let scale = d2mu[r][c].abs().max(T::one()).as_f64();
                worst2 = worst2.max((fd2 - d2mu[r][c]).abs().as_f64() / scale);
            }
        }
    }
    (worst1, worst2)
}

/// Central difference check of the lower order term derivatives.
pub fn fd_check_lower<T: Real>(prob: &ProblemDef<T>, samples: &[T]) -> (f64, f64) {
    let h = T::of(1e-6);
    let two_h = h + h;
    let mut worst1 = 0.0f64;
    let mut worst2 = 0.0f64;
    for &v in samples {
        let fd = ((prob.lower.f)(v + h) - (prob.lower.f)(v - h)) / two_h;
        let dg = (prob.lower.df)(v);
        worst1 = worst1.max((fd - dg).abs().as_f64() / dg.abs().max(T::one()).as_f64());
        let fd2 = ((prob.lower.df)(v + h) - (prob.lower.df)(v - h)) / two_h;
        let d2g = (prob.lower.d2f)(v);
        worst2 = worst2.max((fd2 - d2g).abs().as_f64() / d2g.abs().max(T::one()).as_f64());
    }
    (worst1, worst2)
}

/// 1D reaction diffusion with boundary layers of width `sqrt(eps)`:
/// `mu = eps xi^2 / 2`, `g = u^2 / 2`, `f = 1` on (0, 1) with zero boundary
/// values. The exact minimiser and energy are closed form.
pub fn example1<T: Real>(eps: f64) -> ProblemDef<T> {
    let e = T::of(eps);
    let s = T::of(1.0 / eps.sqrt());
    let half = T::of(0.5);
    let exact = move |x: [T; 2]| -> (T, [T; 2]) {
        let t = x[0];
        // Stable form: only decaying exponentials.
        let den = T::one() + (-s).exp();
        let (ea, eb) = ((-s * (T::one() - t)).exp(), (-s * t).exp());
        let u = T::one() - (ea + eb) / den;
        let du = -(s * ea - s * eb) / den;
        (u, [du, T::zero()])
    };
    // E(u*) = -(1 - (2/s) tanh(s/2)) / 2 by inserting u* and integrating.
    let tanh_half = (s.as_f64() / 2.0).tanh();
    let energy = -(1.0 - 2.0 * tanh_half / s.as_f64()) / 2.0;
    ProblemDef {
        name: "ex1",
        dim: 1,
        mu: ValueOfGrad {
            f: Arc::new(move |xi: [T; 2]| half * e * xi[0] * xi[0]),
            df: Arc::new(move |xi: [T; 2]| [e * xi[0], T::zero()]),
            d2f: Arc::new(move |_| [[e, T::zero()], [T::zero(), T::zero()]]),
        },
        lower: LowerOrder {
            f: Arc::new(move |v: T| half * v * v),
            df: Arc::new(|v: T| v),
            d2f: Arc::new(|_| T::one()),
        },
        load: Arc::new(|_| T::one()),
        dirichlet: Arc::new(|_| T::zero()),
        exact: Some(Arc::new(exact)),
        exact_energy: Some(T::of(energy)),
        norm_p: T::of(2.0),
        norm_weights: (e, T::one()),
        initial_mesh: InitialMesh::Interval(4),
        initial_degree: 1,
        quad_bump: 0,
        singular_vertices: Vec::new(),
        warm_start: WarmStart::Zeros,
    }
}

/// Quasilinear problem on the L-shape with `mu = (|xi|^2 - exp(-|xi|^2))/2`
/// and exact solution `r^(2/3) sin(2 phi / 3)`, singular at the re-entrant
/// corner. Errors are reported in the full H1 norm.
pub fn example2<T: Real>() -> ProblemDef<T> {
    let half = T::of(0.5);
    let exact = |x: [T; 2]| -> (T, [T; 2]) {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let r = r2.sqrt();
        let phi = wrap_angle(x);
        let a = T::of(2.0 / 3.0) * phi;
        let (sin_a, cos_a) = (a.sin(), a.cos());
        let u = r.powf(T::of(2.0 / 3.0)) * sin_a;
        let c = T::of(2.0 / 3.0) * r2.powf(T::of(-2.0 / 3.0));
        let gx = c * (x[0] * sin_a - x[1] * cos_a);
        let gy = c * (x[1] * sin_a + x[0] * cos_a);
        (u, [gx, gy])
    };
    // With u* as above, |grad u*|^2 = (4/9) r^(-2/3) and the strong form
    // yields f = -(16/81) r^(-2) exp(-(4/9) r^(-2/3)) sin(2 phi / 3).
    let load = |x: [T; 2]| -> T {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let phi = wrap_angle(x);
        let q = T::of(4.0 / 9.0) * r2.powf(T::of(-1.0 / 3.0));
        -T::of(16.0 / 81.0) / r2 * (-q).exp() * (T::of(2.0 / 3.0) * phi).sin()
    };
    ProblemDef {
        name: "ex2",
        dim: 2,
        mu: ValueOfGrad {
            f: Arc::new(move |xi: [T; 2]| {
                let n2 = xi[0] * xi[0] + xi[1] * xi[1];
                half * (n2 - (-n2).exp())
            }),
            df: Arc::new(|xi: [T; 2]| {
                let n2 = xi[0] * xi[0] + xi[1] * xi[1];
                let c = T::one() + (-n2).exp();
                [c * xi[0], c * xi[1]]
            }),
            d2f: Arc::new(|xi: [T; 2]| {
                let n2 = xi[0] * xi[0] + xi[1] * xi[1];
                let e = (-n2).exp();
                let c = T::one() + e;
                let two = T::of(2.0);
                [
                    [c - two * e * xi[0] * xi[0], -two * e * xi[0] * xi[1]],
                    [-two * e * xi[0] * xi[1], c - two * e * xi[1] * xi[1]],
                ]
            }),
        },
        lower: LowerOrder::zero(),
        load: Arc::new(load),
        dirichlet: Arc::new(move |x: [T; 2]| exact(x).0),
        exact: Some(Arc::new(exact)),
        exact_energy: Some(T::of(0.36294137312145072063)),
        norm_p: T::of(2.0),
        norm_weights: (T::one(), T::one()),
        initial_mesh: InitialMesh::LShape,
        initial_degree: 1,
        quad_bump: 4,
        singular_vertices: vec![[T::zero(), T::zero()]],
        warm_start: WarmStart::Zeros,
    }
}

/// Angle of `x` measured from the positive x1 axis, wrapped to [0, 2 pi) so
/// it is continuous across the L-shape interior.
fn wrap_angle<T: Real>(x: [T; 2]) -> T {
    let phi = x[1].atan2(x[0]);
    if phi < T::zero() {
        phi + T::of(std::f64::consts::PI * 2.0)
    } else {
        phi
    }
}

/// Degenerate problem `mu = |xi|^3 / 3` on the unit square with exact
/// solution `r^(3/4)`. The Hessian is regularised with `delta = 1e-10`
/// inside the norm only; energy and flux stay exact. Errors are reported in
/// W(1,3) and L3.
pub fn example3<T: Real>() -> ProblemDef<T> {
    let third = T::of(1.0 / 3.0);
    let exact = |x: [T; 2]| -> (T, [T; 2]) {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let u = r2.powf(T::of(3.0 / 8.0));
        let c = T::of(0.75) * r2.powf(T::of(-5.0 / 8.0));
        (u, [c * x[0], c * x[1]])
    };
    // div(|grad u*| grad u*) for u* = r^(3/4) gives f = -(9/32) r^(-3/2).
    let load = |x: [T; 2]| -> T {
        let r2 = x[0] * x[0] + x[1] * x[1];
        -T::of(9.0 / 32.0) * r2.powf(T::of(-0.75))
    };
    ProblemDef {
        name: "ex3",
        dim: 2,
        mu: ValueOfGrad {
            f: Arc::new(move |xi: [T; 2]| {
                let n2 = xi[0] * xi[0] + xi[1] * xi[1];
                third * n2 * n2.sqrt()
            }),
            df: Arc::new(|xi: [T; 2]| {
                let n = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                [n * xi[0], n * xi[1]]
            }),
            d2f: Arc::new(|xi: [T; 2]| {
                // |xi| I + xi xi^T / |xi|, with |xi| regularised so the
                // Newton matrix stays definite at zero gradient.
                let delta2 = T::of(1e-20);
                let n = (xi[0] * xi[0] + xi[1] * xi[1] + delta2).sqrt();
                [
                    [n + xi[0] * xi[0] / n, xi[0] * xi[1] / n],
                    [xi[0] * xi[1] / n, n + xi[1] * xi[1] / n],
                ]
            }),
        },
        lower: LowerOrder::zero(),
        load: Arc::new(load),
        dirichlet: Arc::new(move |x: [T; 2]| exact(x).0),
        exact: Some(Arc::new(exact)),
        exact_energy: Some(T::of(0.61336036447927317406)),
        norm_p: T::of(3.0),
        norm_weights: (T::one(), T::zero()),
        initial_mesh: InitialMesh::UnitSquare8,
        initial_degree: 1,
        quad_bump: 4,
        singular_vertices: vec![[T::zero(), T::zero()]],
        warm_start: WarmStart::Quadratic,
    }
}

/// Looks up a built-in problem: `ex1`, `ex1-eps1` (unit diffusion variant),
/// `ex2`, or `ex3`.
pub fn builtin<T: Real>(name: &str) -> Option<ProblemDef<T>> {
    match name {
        "ex1" => Some(example1(1e-5)),
        "ex1-eps1" => Some(example1(1.0)),
        "ex2" => Some(example2()),
        "ex3" => Some(example3()),
        _ => None,
    }
}
