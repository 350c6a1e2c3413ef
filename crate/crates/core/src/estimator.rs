//! The localised, flux-corrected energy driving the refinement decisions:
//!
//! ```text
//!     E'_k(v) = E_k(v) - integral over (boundary of k) of <flux> . n_k v ds,
//! ```
//!
//! where `<flux>` averages `mu'(grad w)` across each face of a reference
//! function `w` (one sided on the domain boundary), or is a given single
//! valued field. Candidate comparisons evaluate this with one frozen flux,
//! so differences measure genuine energy reduction and not quadrature noise.
//! For single valued flux the interior face terms cancel in pairs, so the
//! leaf values sum to E(v) for any v vanishing on the domain boundary; tests
//! pin both properties.
//!
//! Keeping the domain boundary part of the integral also keeps candidate
//! comparisons fair when Dirichlet data is only interpolated: a candidate
//! whose trace moves closer to the datum is credited with the first order
//! energy shift that move causes, instead of being penalised for it.
//!
//! Also provides the elevated-order error norms used for reporting.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::basis::{self, BasisTable};
use crate::fespace::{FeFunction, Space};
use crate::forms::{self, ProblemDef};
use crate::mesh::Mesh;
use crate::quadrature::{self, QuadRule};
use crate::scalar::Real;

/// One straight piece of a region boundary, with the flux-mesh leaves on its
/// two sides. In 1D a "segment" is a single endpoint (`a == b`).
#[derive(Clone, Debug)]
pub struct Segment<T: Real> {
    pub a: [T; 2],
    pub b: [T; 2],
    /// Outward unit normal of the region (signed direction in 1D).
    pub normal: [T; 2],
    /// Flux-mesh leaves adjacent to the segment, ascending id.
    pub flux_elems: (usize, Option<usize>),
}

/// Flux field entering the modified energy.
pub enum Flux<'a, T: Real> {
    /// A single valued field, typically `mu'(grad u*)`.
    Analytic(&'a (dyn Fn([T; 2]) -> [T; 2] + Sync)),
    /// The average of `mu'(grad w)` over the sides of each face.
    Averaged {
        prob: &'a ProblemDef<T>,
        mesh: &'a Mesh<T>,
        space: &'a Space,
        w: &'a FeFunction<T>,
    },
}

impl<'a, T: Real> Flux<'a, T> {
    fn eval(&self, seg: &Segment<T>, x: [T; 2]) -> [T; 2] {
        match self {
            Flux::Analytic(f) => f(x),
            Flux::Averaged { prob, mesh, space, w } => {
                let (_, g0) = w.eval_phys(mesh, space, seg.flux_elems.0, x);
                let s0 = (prob.mu.df)(g0);
                match seg.flux_elems.1 {
                    None => s0,
                    Some(e1) => {
                        let (_, g1) = w.eval_phys(mesh, space, e1, x);
                        let s1 = (prob.mu.df)(g1);
                        let half = T::of(0.5);
                        [half * (s0[0] + s1[0]), half * (s0[1] + s1[1])]
                    }
                }
            }
        }
    }
}

/// Boundary segments of leaf `kappa` of `region_mesh`, covering all of its
/// faces; domain boundary faces resolve to a single adjacent flux leaf and
/// so carry the one sided flux. 2D faces are split at their midpoint so
/// every segment lies inside one face of the (possibly finer) flux mesh;
/// adjacency is resolved there by point location.
pub fn region_boundary_segments<T: Real>(
    region_mesh: &Mesh<T>,
    kappa: usize,
    flux_mesh: &Mesh<T>,
) -> Vec<Segment<T>> {
    let mut out = Vec::new();
    let half = T::of(0.5);
    for f in 0..region_mesh.num_faces() {
        if region_mesh.dim() == 1 {
            let (v, _) = region_mesh.face_verts(kappa, f);
            let x = region_mesh.vertex(v);
            let sign = if f == 0 { -T::one() } else { T::one() };
            out.push(make_segment(x, x, [sign, T::zero()], flux_mesh));
        } else {
            let verts = region_mesh.verts(kappa);
            let a = region_mesh.vertex(verts[f]);
            let b = region_mesh.vertex(verts[(f + 1) % 3]);
            let m = [half * (a[0] + b[0]), half * (a[1] + b[1])];
            let (n, _) = region_mesh.face_normal(kappa, f);
            out.push(make_segment(a, m, n, flux_mesh));
            out.push(make_segment(m, b, n, flux_mesh));
        }
    }
    out
}

fn make_segment<T: Real>(
    a: [T; 2],
    b: [T; 2],
    normal: [T; 2],
    flux_mesh: &Mesh<T>,
) -> Segment<T> {
    let half = T::of(0.5);
    let mid = [half * (a[0] + b[0]), half * (a[1] + b[1])];
    let tol = T::of(1e-10);
    let mut sides: Vec<usize> = flux_mesh
        .leaves()
        .into_iter()
        .filter(|&e| flux_mesh.contains(e, mid, tol))
        .collect();
    sides.truncate(2);
    assert!(!sides.is_empty(), "flux mesh does not cover a region boundary segment");
    Segment { a, b, normal, flux_elems: (sides[0], sides.get(1).copied()) }
}

/// Integral of `flux . n  v` over the segments. `hint` lists leaves of the
/// v-mesh to try first when locating quadrature points.
pub fn boundary_flux_term<T: Real>(
    segments: &[Segment<T>],
    flux: &Flux<T>,
    vmesh: &Mesh<T>,
    vspace: &Space,
    v: &FeFunction<T>,
    hint: &[usize],
    order: usize,
) -> T {
    let tol = T::of(1e-10);
    let locate = |x: [T; 2]| -> usize {
        hint.iter()
            .copied()
            .find(|&e| vmesh.contains(e, x, tol))
            .or_else(|| vmesh.containing_leaf(x))
            .expect("segment point lies outside the v mesh")
    };
    let mut total = T::zero();
    if vmesh.dim() == 1 {
        for seg in segments {
            let e = locate(seg.a);
            let (val, _) = v.eval_phys(vmesh, vspace, e, seg.a);
            let s = flux.eval(seg, seg.a);
            total += s[0] * seg.normal[0] * val;
        }
        return total;
    }
    let rule: QuadRule<T> = quadrature::interval_rule(order);
    let half = T::of(0.5);
    for seg in segments {
        let d = [seg.b[0] - seg.a[0], seg.b[1] - seg.a[1]];
        let jac = half * d[0].hypot(d[1]);
        let mut acc = T::zero();
        for (q, pt) in rule.points.iter().enumerate() {
            let t = (pt[0] + T::one()) * half;
            let x = [seg.a[0] + t * d[0], seg.a[1] + t * d[1]];
            let e = locate(x);
            let (val, _) = v.eval_phys(vmesh, vspace, e, x);
            let s = flux.eval(seg, x);
            acc += rule.weights[q] * (s[0] * seg.normal[0] + s[1] * seg.normal[1]) * val;
        }
        total += jac * acc;
    }
    total
}

/// The modified local energy of `v` on the region given by `region` (leaves
/// of the v-mesh), with precomputed boundary `segments` and a frozen `flux`.
/// `floor` fixes the cell quadrature order; the face rule uses the same
/// order.
pub fn modified_energy<T: Real>(
    prob: &ProblemDef<T>,
    vmesh: &Mesh<T>,
    vspace: &Space,
    v: &FeFunction<T>,
    region: &[usize],
    segments: &[Segment<T>],
    flux: &Flux<T>,
    floor: usize,
) -> T {
    let cell = forms::energy_on(prob, vmesh, vspace, v, region, floor);
    let face = boundary_flux_term(segments, flux, vmesh, vspace, v, region, floor.max(4));
    cell - face
}

/// Modified energy of global leaf `kappa`, with flux and test function both
/// on the global mesh. Test helper for the exactness and summation
/// properties.
pub fn leaf_modified_energy<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    v: &FeFunction<T>,
    kappa: usize,
    flux: &Flux<T>,
    floor: usize,
) -> T {
    let segs = region_boundary_segments(mesh, kappa, mesh);
    modified_energy(prob, mesh, space, v, &[kappa], &segs, flux, floor)
}

/// Error norms of `u` against the exact solution, or `None` without one.
/// All three are integrated at elevated quadrature order.
#[derive(Clone, Copy, Debug)]
pub struct ErrorReport<T: Real> {
    /// `(int gw |grad d|^p + vw |d|^p)^(1/p)` with the problem's weights.
    pub energy_norm: T,
    pub lp: T,
    pub w1p: T,
}

pub fn error_norms<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    u: &FeFunction<T>,
) -> Option<ErrorReport<T>> {
    let exact = prob.exact.as_ref()?;
    let p = prob.norm_p;
    let (gw, vw) = prob.norm_weights;
    let mut cache: HashMap<(usize, crate::basis::ElementLayout), (QuadRule<T>, BasisTable<T>)> =
        HashMap::new();
    for ed in &space.elems {
        let order = prob.quad_order(mesh, ed.element, ed.layout.p) + 4;
        cache.entry((order, ed.layout.clone())).or_insert_with(|| {
            let rule = quadrature::reference_rule(mesh.dim(), order);
            let table = basis::tabulate(&ed.layout, &rule.points);
            (rule, table)
        });
    }
    let per_elem = |idx: usize| -> [T; 3] {
        let ed = &space.elems[idx];
        let order = prob.quad_order(mesh, ed.element, ed.layout.p) + 4;
        let (rule, table) = &cache[&(order, ed.layout.clone())];
        let map = mesh.affine_map(ed.element);
        let det = map.det.abs();
        let n = ed.layout.ndof();
        let mut acc = [T::zero(); 3];
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
            let (uex, gex) = exact(x);
            let dv = (val - uex).abs();
            let dg = (grad[0] - gex[0]).hypot(grad[1] - gex[1]);
            let w = rule.weights[q] * det;
            acc[0] += w * (gw * dg.powf(p) + vw * dv.powf(p));
            acc[1] += w * dv.powf(p);
            acc[2] += w * dg.powf(p);
        }
        acc
    };
    let sums: Vec<[T; 3]> = if space.elems.len() >= 64 {
        (0..space.elems.len()).into_par_iter().map(per_elem).collect()
    } else {
        (0..space.elems.len()).map(per_elem).collect()
    };
    let mut tot = [T::zero(); 3];
    for s in sums {
        tot[0] += s[0];
        tot[1] += s[1];
        tot[2] += s[2];
    }
    let inv = T::one() / p;
    Some(ErrorReport {
        energy_norm: tot[0].powf(inv),
        lp: tot[1].powf(inv),
        w1p: tot[2].powf(inv),
    })
}
