//! Finite element spaces over a [`Mesh`]: per-element degrees, global degree
//! of freedom numbering with the minimum rule on shared edges, coefficient
//! vectors, Dirichlet constraints, and transfer of a global solution onto a
//! patch space.
//!
//! Numbering is deterministic: vertex dofs first (ascending vertex id), then
//! edge dofs (ascending edge key), then interior dofs (ascending element id).

use std::collections::{BTreeMap, HashMap};

use crate::basis::{self, ElementLayout, Shape};
use crate::linalg;
use crate::mesh::{FaceKey, Mesh, Patch};
use crate::quadrature;
use crate::scalar::Real;

/// Per-element polynomial degrees, indexed by element id. Entries for dead or
/// refined elements are kept but ignored.
#[derive(Clone, Debug)]
pub struct DegreeVector {
    p: Vec<usize>,
}

impl DegreeVector {
    pub fn uniform<T: Real>(mesh: &Mesh<T>, p: usize) -> Self {
        assert!(p >= 1, "degrees start at 1");
        Self { p: vec![p; mesh.num_elements()] }
    }

    pub fn get(&self, e: usize) -> usize {
        self.p[e]
    }

    /// Sets the degree of `e`, growing the vector if needed.
    pub fn set(&mut self, e: usize, p: usize) {
        assert!(p >= 1, "degrees start at 1");
        if e >= self.p.len() {
            self.p.resize(e + 1, 1);
        }
        self.p[e] = p;
    }

    /// Replays a refinement log: split children inherit the parent degree,
    /// retracting a green closure lifts the parent to the maximum child
    /// degree so no approximation power is lost.
    pub fn apply(&mut self, log: &crate::mesh::RefineLog) {
        for ev in &log.events {
            match ev {
                crate::mesh::RefineEvent::Split { parent, children, .. } => {
                    let pd = self.p[*parent];
                    for &c in children {
                        self.set(c, pd);
                    }
                }
                crate::mesh::RefineEvent::Ungreen { parent, children } => {
                    let lift = children.iter().map(|&c| self.p[c]).max().unwrap_or(1);
                    let pd = self.p[*parent].max(lift);
                    self.set(*parent, pd);
                }
            }
        }
    }
}

/// Dof metadata for one leaf: its layout plus the global dof of every shape.
#[derive(Clone, Debug)]
pub struct ElemDofs {
    pub element: usize,
    pub layout: ElementLayout,
    pub dofs: Vec<usize>,
}

/// A conforming hierarchic space on the leaves of a mesh. Holds no scalar
/// data; pair it with an [`FeFunction`] for coefficients.
#[derive(Clone, Debug)]
pub struct Space {
    pub dim: usize,
    pub ndof: usize,
    pub num_vertex_dofs: usize,
    /// Leaf element ids, ascending; `elems` is aligned with this.
    pub leaf_ids: Vec<usize>,
    pub elems: Vec<ElemDofs>,
    leaf_pos: HashMap<usize, usize>,
    pub vertex_dof: HashMap<usize, usize>,
    /// Edge key -> (first dof, mode count); mode `k` maps to `first + k - 2`.
    pub edge_dofs: HashMap<FaceKey, (usize, usize)>,
}

impl Space {
    /// Index into `elems` for leaf `e`. Panics if `e` is not a leaf of the
    /// space.
    pub fn pos_of(&self, e: usize) -> usize {
        *self.leaf_pos.get(&e).unwrap_or_else(|| panic!("element {e} is not a leaf of this space"))
    }

    pub fn elem_dofs(&self, e: usize) -> &ElemDofs {
        &self.elems[self.pos_of(e)]
    }
}

/// Builds the space for `mesh` with vertex ids as the edge orientation rank.
pub fn build_space<T: Real>(mesh: &Mesh<T>, degrees: &DegreeVector) -> Space {
    build_space_ranked(mesh, degrees, None)
}

/// Builds the space with an explicit vertex rank controlling the canonical
/// (low to high rank) direction of edge modes. Patch spaces pass global
/// vertex ids here so that shared-edge coefficients transfer without sign
/// flips; see [`patch_rank`].
pub fn build_space_ranked<T: Real>(
    mesh: &Mesh<T>,
    degrees: &DegreeVector,
    rank: Option<&[usize]>,
) -> Space {
    let dim = mesh.dim();
    let leaf_ids = mesh.leaves();
    let rank_of = |v: usize| -> usize {
        match rank {
            Some(r) => r[v],
            None => v,
        }
    };

    // Vertex dofs: every vertex referenced by a leaf, ascending id.
    let mut vset: Vec<usize> = Vec::new();
    for &e in &leaf_ids {
        vset.extend_from_slice(mesh.verts(e));
    }
    vset.sort_unstable();
    vset.dedup();
    let mut vertex_dof = HashMap::new();
    for (i, &v) in vset.iter().enumerate() {
        vertex_dof.insert(v, i);
    }
    let num_vertex_dofs = vset.len();
    let mut next = num_vertex_dofs;

    // Minimum rule: each shared edge carries modes up to the smaller of the
    // two adjacent element degrees.
    let mut edge_p: BTreeMap<FaceKey, usize> = BTreeMap::new();
    if dim == 2 {
        for &e in &leaf_ids {
            let p = degrees.get(e);
            assert!(p >= 1, "degrees start at 1");
            for f in 0..3 {
                let key = mesh.face_key(e, f);
                edge_p
                    .entry(key)
                    .and_modify(|q| *q = (*q).min(p))
                    .or_insert(p);
            }
        }
    }
    let mut edge_dofs = HashMap::new();
    for (&key, &pe) in &edge_p {
        let count = pe.saturating_sub(1);
        edge_dofs.insert(key, (next, count));
        next += count;
    }

    // Interior dofs element by element, then assemble the per-leaf tables.
    let mut elems = Vec::with_capacity(leaf_ids.len());
    let mut leaf_pos = HashMap::new();
    for (idx, &e) in leaf_ids.iter().enumerate() {
        let p = degrees.get(e);
        let verts = mesh.verts(e);
        let layout = if dim == 1 {
            ElementLayout::new_1d(p)
        } else {
            let mut ep = [1usize; 3];
            let mut flip = [false; 3];
            for f in 0..3 {
                ep[f] = edge_p[&mesh.face_key(e, f)];
                let (a, b) = (verts[f], verts[(f + 1) % 3]);
                flip[f] = rank_of(a) > rank_of(b);
            }
            ElementLayout::new_2d(p, ep, flip)
        };
        let interior_base = next;
        let mut interior_count = 0usize;
        let mut dofs = Vec::with_capacity(layout.ndof());
        for s in &layout.shapes {
            let d = match *s {
                Shape::Vertex(i) => vertex_dof[&verts[i]],
                Shape::Edge { e: f, k } => {
                    if dim == 1 {
                        // 1D interior modes are private to the element.
                        interior_count = interior_count.max(k - 1);
                        interior_base + (k - 2)
                    } else {
                        let (first, count) = edge_dofs[&mesh.face_key(e, f)];
                        debug_assert!(k - 2 < count);
                        first + (k - 2)
                    }
                }
                Shape::Bubble { .. } => {
                    interior_count += 1;
                    interior_base + interior_count - 1
                }
            };
            dofs.push(d);
        }
        next += interior_count;
        leaf_pos.insert(e, idx);
        elems.push(ElemDofs { element: e, layout, dofs });
    }

    Space {
        dim,
        ndof: next,
        num_vertex_dofs,
        leaf_ids,
        elems,
        leaf_pos,
        vertex_dof,
        edge_dofs,
    }
}

/// Vertex rank for a patch space: global vertex ids where they exist, and
/// ids above every global one for created midpoints. Keeps edge orientations
/// of the patch consistent with the enclosing mesh.
pub fn patch_rank<T: Real>(patch: &Patch<T>) -> Vec<usize> {
    let base = usize::MAX / 2;
    (0..patch.local.num_vertices())
        .map(|v| match patch.global_vertex_of(v) {
            Some(g) => {
                debug_assert!(g < base);
                g
            }
            None => base + v,
        })
        .collect()
}

/// Coefficients of a function in a [`Space`].
#[derive(Clone, Debug)]
pub struct FeFunction<T: Real> {
    pub coeffs: Vec<T>,
}

impl<T: Real> FeFunction<T> {
    pub fn zeros(space: &Space) -> Self {
        Self { coeffs: vec![T::zero(); space.ndof] }
    }

    /// Value and physical gradient at a reference point of leaf `elem`.
    pub fn eval_ref(
        &self,
        mesh: &Mesh<T>,
        space: &Space,
        elem: usize,
        r: [T; 2],
    ) -> (T, [T; 2]) {
        let ed = space.elem_dofs(elem);
        let n = ed.layout.ndof();
        let mut vals = vec![T::zero(); n];
        let mut grads = vec![[T::zero(); 2]; n];
        basis::eval_shapes(&ed.layout, r, &mut vals, &mut grads);
        let mut u = T::zero();
        let mut g = [T::zero(); 2];
        for (i, &d) in ed.dofs.iter().enumerate() {
            let c = self.coeffs[d];
            u += c * vals[i];
            g[0] += c * grads[i][0];
            g[1] += c * grads[i][1];
        }
        let map = mesh.affine_map(elem);
        (u, map.grad_to_phys(g))
    }

    /// Value and physical gradient at a physical point inside leaf `elem`.
    pub fn eval_phys(
        &self,
        mesh: &Mesh<T>,
        space: &Space,
        elem: usize,
        x: [T; 2],
    ) -> (T, [T; 2]) {
        let map = mesh.affine_map(elem);
        self.eval_ref(mesh, space, elem, map.to_ref(x))
    }
}

/// Dirichlet constraints: a sorted map from fixed dof to its value.
#[derive(Clone, Debug, Default)]
pub struct Constraints<T: Real> {
    pub fixed: BTreeMap<usize, T>,
}

impl<T: Real> Constraints<T> {
    pub fn new() -> Self {
        Self { fixed: BTreeMap::new() }
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed.contains_key(&dof)
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    /// Writes the fixed values into `u`.
    pub fn apply_to(&self, u: &mut FeFunction<T>) {
        for (&d, &v) in &self.fixed {
            u.coeffs[d] = v;
        }
    }
}

/// Constrains the given leaf faces to interpolate/project `datum`. Vertex
/// dofs take point values; edge modes take the L2 projection of the residual
/// trace, so polynomial data of degree at most the edge degree is reproduced
/// exactly.
///
/// `datum` receives `(element, face, x)` so patch boundaries can dispatch to
/// per-face trace data.
pub fn constrain_faces<T: Real>(
    mesh: &Mesh<T>,
    space: &Space,
    faces: &[(usize, usize)],
    datum: &dyn Fn(usize, usize, [T; 2]) -> T,
) -> Constraints<T> {
    let mut c = Constraints::new();
    for &(e, f) in faces {
        let verts = mesh.verts(e);
        if mesh.dim() == 1 {
            let v = verts[f];
            c.fixed.insert(space.vertex_dof[&v], datum(e, f, mesh.vertex(v)));
            continue;
        }
        let (va, vb) = (verts[f], verts[(f + 1) % 3]);
        let ed = space.elem_dofs(e);
        // Endpoints in the canonical (low to high rank) direction of the
        // edge modes, so the parametrisation below matches the basis.
        let (lo, hi) = if ed.layout.flip[f] { (vb, va) } else { (va, vb) };
        let (xlo, xhi) = (mesh.vertex(lo), mesh.vertex(hi));
        let (ulo, uhi) = (datum(e, f, xlo), datum(e, f, xhi));
        c.fixed.insert(space.vertex_dof[&lo], ulo);
        c.fixed.insert(space.vertex_dof[&hi], uhi);

        let pe = ed.layout.edge_p[f];
        if pe < 2 {
            continue;
        }
        let m = pe - 1;
        let rule = quadrature::interval_rule(2 * pe + 6);
        let mut gram = vec![vec![T::zero(); m]; m];
        let mut rhs = vec![T::zero(); m];
        let half = T::of(0.5);
        for (q, &pt) in rule.points.iter().enumerate() {
            let s = pt[0];
            let w = rule.weights[q];
            let a = (T::one() - s) * half;
            let b = (T::one() + s) * half;
            let x = [a * xlo[0] + b * xhi[0], a * xlo[1] + b * xhi[1]];
            let resid = datum(e, f, x) - (a * ulo + b * uhi);
            let lk: Vec<T> = (2..=pe).map(|k| basis::integrated_legendre(k, s)).collect();
            for i in 0..m {
                rhs[i] += w * resid * lk[i];
                for j in 0..m {
                    gram[i][j] += w * lk[i] * lk[j];
                }
            }
        }
        linalg::cholesky_solve_dense(&mut gram, &mut rhs)
            .expect("edge trace Gram matrix is positive definite");
        let (first, count) = space.edge_dofs[&mesh.face_key(e, f)];
        debug_assert_eq!(count, m);
        for (i, &coef) in rhs.iter().enumerate() {
            c.fixed.insert(first + i, coef);
        }
    }
    c
}

/// Seeds a patch-space function from the global solution `u`: vertex values
/// are evaluated in place, coefficients of shared edges and of unsplit
/// member interiors are copied, and everything else starts at zero. The
/// patch space must have been built with [`patch_rank`] so edge orientations
/// agree.
pub fn transfer_to_patch<T: Real>(
    gmesh: &Mesh<T>,
    gspace: &Space,
    u: &FeFunction<T>,
    patch: &Patch<T>,
    lspace: &Space,
) -> FeFunction<T> {
    let mut out = FeFunction::zeros(lspace);
    let lmesh = &patch.local;

    // Vertex dofs: copy the global coefficient when the vertex exists
    // globally (hierarchic bases carry point values there), else evaluate.
    for (&lv, &ld) in &lspace.vertex_dof {
        match patch.global_vertex_of(lv).and_then(|g| gspace.vertex_dof.get(&g)) {
            Some(&gd) => out.coeffs[ld] = u.coeffs[gd],
            None => {
                let leaf = *lspace
                    .leaf_ids
                    .iter()
                    .find(|&&e| lmesh.verts(e).contains(&lv))
                    .expect("patch vertex belongs to some leaf");
                let src = patch.source_of(leaf);
                let (val, _) = u.eval_phys(gmesh, gspace, src, lmesh.vertex(lv));
                out.coeffs[ld] = val;
            }
        }
    }

    // Shared edge modes, matched by global edge key. Orientations agree by
    // construction, so coefficients copy over unchanged.
    for (&(la, lb), &(lfirst, lcount)) in &lspace.edge_dofs {
        let (ga, gb) = match (patch.global_vertex_of(la), patch.global_vertex_of(lb)) {
            (Some(a), Some(b)) => (a.min(b), a.max(b)),
            _ => continue,
        };
        if let Some(&(gfirst, gcount)) = gspace.edge_dofs.get(&(ga, gb)) {
            for i in 0..lcount.min(gcount) {
                out.coeffs[lfirst + i] = u.coeffs[gfirst + i];
            }
        }
    }

    // Interior modes of members that are still leaves locally: match shapes
    // one to one with the source element.
    for ed in &lspace.elems {
        let l = ed.element;
        if lmesh.element(l).parent.is_some() {
            continue;
        }
        let src = patch.source_of(l);
        let ged = gspace.elem_dofs(src);
        let mut gmap: HashMap<Shape, usize> = HashMap::new();
        for (i, s) in ged.layout.shapes.iter().enumerate() {
            if interior_shape(gspace.dim, s) {
                gmap.insert(*s, ged.dofs[i]);
            }
        }
        for (i, s) in ed.layout.shapes.iter().enumerate() {
            if !interior_shape(lspace.dim, s) {
                continue;
            }
            if let Some(&gd) = gmap.get(s) {
                out.coeffs[ed.dofs[i]] = u.coeffs[gd];
            }
        }
    }
    out
}

fn interior_shape(dim: usize, s: &Shape) -> bool {
    match s {
        Shape::Vertex(_) => false,
        Shape::Edge { .. } => dim == 1,
        Shape::Bubble { .. } => true,
    }
}
