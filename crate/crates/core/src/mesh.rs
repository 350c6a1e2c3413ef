//! Simplicial meshes with red/green refinement.
//!
//! Elements are intervals (1D) or counterclockwise triangles (2D) stored in a
//! forest: refinement appends children and never moves or renumbers existing
//! elements, so element ids are stable for the lifetime of a mesh. Removing a
//! green closure marks the children dead instead of deleting them.
//!
//! Red refinement splits an element at its edge midpoints (2 children in 1D,
//! 4 in 2D). Midpoint vertices are deduplicated by index through an edge table,
//! so a neighbour refining the same edge reuses the same vertex. Conformity is
//! restored by [`Mesh::close_green`], which bisects elements with exactly one
//! hanging midpoint toward it (green), red-refines elements with two or more,
//! and retracts green closures whose hanging pattern changed. Green elements
//! are never refined directly.
//!
//! Face conventions: in 2D, face `i` of a triangle joins local vertices `i`
//! and `(i+1)%3`; in 1D, face 0 is the left endpoint and face 1 the right.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("element {0} is not a leaf")]
    NotALeaf(usize),
    #[error("element {0} is not alive")]
    Dead(usize),
    #[error("element {0} is a green child; green closure must be removed first")]
    GreenChild(usize),
    #[error("mesh is not conforming at face of element {0}")]
    Nonconforming(usize),
    #[error("degenerate element: {0}")]
    Degenerate(String),
    #[error("bad mesh file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How an element was created.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Root,
    Red,
    Green,
}

#[derive(Clone, Debug)]
pub struct Element {
    /// Vertex ids; the first `dim + 1` entries are used.
    pub verts: [usize; 3],
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub kind: ElementKind,
    pub level: u32,
    pub alive: bool,
    /// `boundary[f]` is true iff face `f` lies on the domain boundary.
    pub boundary: [bool; 3],
    /// For an element with green children: the face carrying the hanging
    /// midpoint the closure was built toward.
    pub green_face: Option<usize>,
}

/// Key identifying a face independently of orientation.
/// 1D faces are vertices, encoded as `(v, usize::MAX)`.
pub type FaceKey = (usize, usize);

#[derive(Clone, Debug)]
pub struct Mesh<T: Real> {
    dim: usize,
    vertices: Vec<[T; 2]>,
    elements: Vec<Element>,
    edge_midpoints: HashMap<(usize, usize), usize>,
}

/// One structural change applied to a mesh.
#[derive(Clone, Debug)]
pub enum RefineEvent {
    /// `parent` gained `children` (red or green split).
    Split {
        parent: usize,
        children: Vec<usize>,
        green: bool,
    },
    /// The green closure below `parent` was retracted.
    Ungreen { parent: usize, children: Vec<usize> },
}

/// Ordered log of structural changes, for replaying degree bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct RefineLog {
    pub events: Vec<RefineEvent>,
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh from explicit cells. Triangle orientation is normalized
    /// to counterclockwise; boundary faces are those with a single adjacent
    /// cell.
    pub fn new(dim: usize, vertices: Vec<[T; 2]>, cells: Vec<Vec<usize>>) -> Result<Self, MeshError> {
        assert!(dim == 1 || dim == 2, "only 1D and 2D meshes are supported");
        let mut elements = Vec::with_capacity(cells.len());
        for (i, c) in cells.iter().enumerate() {
            if c.len() != dim + 1 {
                return Err(MeshError::Format(format!(
                    "cell {i} has {} vertices, expected {}",
                    c.len(),
                    dim + 1
                )));
            }
            for &v in c {
                if v >= vertices.len() {
                    return Err(MeshError::Format(format!("cell {i} references vertex {v} out of range")));
                }
            }
            let mut verts = [c[0], c[1], if dim == 2 { c[2] } else { usize::MAX }];
            if dim == 1 {
                if vertices[verts[0]][0] > vertices[verts[1]][0] {
                    verts.swap(0, 1);
                }
                if vertices[verts[0]][0] == vertices[verts[1]][0] {
                    return Err(MeshError::Degenerate(format!("cell {i} has zero length")));
                }
            } else {
                let det = tri_det(&vertices, verts[0], verts[1], verts[2]);
                if det == T::zero() {
                    return Err(MeshError::Degenerate(format!("cell {i} has zero area")));
                }
                if det < T::zero() {
                    verts.swap(1, 2);
                }
            }
            elements.push(Element {
                verts,
                parent: None,
                children: Vec::new(),
                kind: ElementKind::Root,
                level: 0,
                alive: true,
                boundary: [false; 3],
                green_face: None,
            });
        }
        let mut mesh = Mesh {
            dim,
            vertices,
            elements,
            edge_midpoints: HashMap::new(),
        };
        // Mark boundary faces from root adjacency.
        let mut count: HashMap<FaceKey, usize> = HashMap::new();
        for e in 0..mesh.elements.len() {
            for f in 0..mesh.num_faces() {
                *count.entry(mesh.face_key(e, f)).or_insert(0) += 1;
            }
        }
        for e in 0..mesh.elements.len() {
            for f in 0..mesh.num_faces() {
                let c = count[&mesh.face_key(e, f)];
                if c > 2 {
                    return Err(MeshError::Format(format!("face shared by {c} cells")));
                }
                mesh.elements[e].boundary[f] = c == 1;
            }
        }
        Ok(mesh)
    }

    /// Uniform mesh of `(0,1)` with `n` intervals.
    pub fn interval(n: usize) -> Self {
        assert!(n >= 1);
        let vertices: Vec<[T; 2]> = (0..=n)
            .map(|i| [T::of(i as f64 / n as f64), T::zero()])
            .collect();
        let cells = (0..n).map(|i| vec![i, i + 1]).collect();
        Mesh::new(1, vertices, cells).expect("interval mesh is valid")
    }

    /// L-shaped domain `(-1,1)^2` minus the quadrant `[0,1) x (-1,0]`,
    /// triangulated into 12 triangles (each unit square split at its centre).
    pub fn l_shape() -> Self {
        let sq = [
            ([-1.0, -1.0], [0.0, -1.0], [0.0, 0.0], [-1.0, 0.0]),
            ([-1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]),
            ([0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]),
        ];
        let mut vertices: Vec<[T; 2]> = Vec::new();
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut vid = |vs: &mut Vec<[T; 2]>, p: [f64; 2]| -> usize {
            let key = ((p[0] * 2.0) as i64, (p[1] * 2.0) as i64);
            *index.entry(key).or_insert_with(|| {
                vs.push([T::of(p[0]), T::of(p[1])]);
                vs.len() - 1
            })
        };
        let mut cells = Vec::new();
        for (a, b, c, d) in sq {
            let m = [(a[0] + c[0]) / 2.0, (a[1] + c[1]) / 2.0];
            let [va, vb, vc, vd, vm] = [
                vid(&mut vertices, a),
                vid(&mut vertices, b),
                vid(&mut vertices, c),
                vid(&mut vertices, d),
                vid(&mut vertices, m),
            ];
            cells.push(vec![va, vb, vm]);
            cells.push(vec![vb, vc, vm]);
            cells.push(vec![vc, vd, vm]);
            cells.push(vec![vd, va, vm]);
        }
        Mesh::new(2, vertices, cells).expect("L-shape mesh is valid")
    }

    /// Unit square `(0,1)^2` as a 2x2 grid of squares, each split along the
    /// diagonal away from the origin: 8 triangles.
    pub fn unit_square_8() -> Self {
        let mut vertices = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                vertices.push([T::of(i as f64 / 2.0), T::of(j as f64 / 2.0)]);
            }
        }
        let at = |i: usize, j: usize| j * 3 + i;
        let mut cells = Vec::new();
        for j in 0..2 {
            for i in 0..2 {
                let (ll, lr, ur, ul) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
                cells.push(vec![ll, lr, ur]);
                cells.push(vec![ll, ur, ul]);
            }
        }
        Mesh::new(2, vertices, cells).expect("unit square mesh is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_faces(&self) -> usize {
        self.dim + 1
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertex(&self, v: usize) -> [T; 2] {
        self.vertices[v]
    }

    pub fn element(&self, e: usize) -> &Element {
        &self.elements[e]
    }

    /// Vertex ids of element `e` (length `dim + 1`).
    pub fn verts(&self, e: usize) -> &[usize] {
        &self.elements[e].verts[..self.dim + 1]
    }

    pub fn is_leaf(&self, e: usize) -> bool {
        let el = &self.elements[e];
        el.alive && el.children.is_empty()
    }

    /// Leaf element ids in ascending id order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.elements.len()).filter(|&e| self.is_leaf(e)).collect()
    }

    pub fn num_leaves(&self) -> usize {
        (0..self.elements.len()).filter(|&e| self.is_leaf(e)).count()
    }

    /// Local vertices of face `f` of element `e`: `(a, Some(b))` in 2D,
    /// `(a, None)` in 1D.
    pub fn face_verts(&self, e: usize, f: usize) -> (usize, Option<usize>) {
        let v = self.verts(e);
        if self.dim == 1 {
            (v[f], None)
        } else {
            (v[f], Some(v[(f + 1) % 3]))
        }
    }

    pub fn face_key(&self, e: usize, f: usize) -> FaceKey {
        match self.face_verts(e, f) {
            (a, None) => (a, usize::MAX),
            (a, Some(b)) => (a.min(b), a.max(b)),
        }
    }

    pub fn is_boundary_face(&self, e: usize, f: usize) -> bool {
        self.elements[e].boundary[f]
    }

    /// Length (1D) or area (2D).
    pub fn measure(&self, e: usize) -> T {
        let v = self.verts(e);
        if self.dim == 1 {
            self.vertices[v[1]][0] - self.vertices[v[0]][0]
        } else {
            tri_det(&self.vertices, v[0], v[1], v[2]) / T::of(2.0)
        }
    }

    /// Element diameter: interval length, or longest triangle edge.
    pub fn diameter(&self, e: usize) -> T {
        let v = self.verts(e);
        if self.dim == 1 {
            self.measure(e)
        } else {
            let mut d = T::zero();
            for f in 0..3 {
                let (a, b) = (self.vertices[v[f]], self.vertices[v[(f + 1) % 3]]);
                let l = (a[0] - b[0]).hypot(a[1] - b[1]);
                d = d.max(l);
            }
            d
        }
    }

    pub fn centroid(&self, e: usize) -> [T; 2] {
        let v = self.verts(e);
        let n = T::of((self.dim + 1) as f64);
        let mut c = [T::zero(); 2];
        for &vi in v {
            c[0] += self.vertices[vi][0];
            c[1] += self.vertices[vi][1];
        }
        [c[0] / n, c[1] / n]
    }

    /// Affine map from the reference element; see [`AffineMap`].
    pub fn affine_map(&self, e: usize) -> AffineMap<T> {
        let v = self.verts(e);
        if self.dim == 1 {
            let (a, b) = (self.vertices[v[0]][0], self.vertices[v[1]][0]);
            let h = (b - a) / T::of(2.0);
            AffineMap {
                origin: [(a + b) / T::of(2.0), T::zero()],
                m: [[h, T::zero()], [T::zero(), T::one()]],
                inv: [[T::one() / h, T::zero()], [T::zero(), T::one()]],
                det: h,
            }
        } else {
            let p0 = self.vertices[v[0]];
            let p1 = self.vertices[v[1]];
            let p2 = self.vertices[v[2]];
            let m = [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
            AffineMap {
                origin: p0,
                m,
                inv,
                det,
            }
        }
    }

    /// Barycentric coordinates of physical `x` in triangle `e`.
    pub fn barycentric(&self, e: usize, x: [T; 2]) -> [T; 3] {
        debug_assert_eq!(self.dim, 2);
        let r = self.affine_map(e).to_ref(x);
        [T::one() - r[0] - r[1], r[0], r[1]]
    }

    /// Whether element `e` contains physical point `x` (with tolerance `tol`
    /// relative to the element scale).
    pub fn contains(&self, e: usize, x: [T; 2], tol: T) -> bool {
        if self.dim == 1 {
            let v = self.verts(e);
            let (a, b) = (self.vertices[v[0]][0], self.vertices[v[1]][0]);
            let h = b - a;
            x[0] >= a - tol * h && x[0] <= b + tol * h
        } else {
            let l = self.barycentric(e, x);
            l.iter().all(|&li| li >= -tol)
        }
    }

    /// Leaf containing `x`, if any (linear scan; meshes here are small).
    pub fn containing_leaf(&self, x: [T; 2]) -> Option<usize> {
        let tol = T::of(1e-12);
        self.leaves().into_iter().find(|&e| self.contains(e, x, tol))
    }

    /// Outward unit normal and length of face `f` of triangle `e`.
    pub fn face_normal(&self, e: usize, f: usize) -> ([T; 2], T) {
        debug_assert_eq!(self.dim, 2);
        let (a, b) = match self.face_verts(e, f) {
            (a, Some(b)) => (self.vertices[a], self.vertices[b]),
            _ => unreachable!(),
        };
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = d[0].hypot(d[1]);
        // CCW orientation: rotating the edge direction by -90 deg points outward.
        ([d[1] / len, -d[0] / len], len)
    }

    fn midpoint_key(a: usize, b: usize) -> (usize, usize) {
        (a.min(b), a.max(b))
    }

    /// Midpoint vertex of edge `(a, b)` if one has been created.
    pub fn midpoint_of(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_midpoints.get(&Self::midpoint_key(a, b)).copied()
    }

    fn get_or_create_midpoint(&mut self, a: usize, b: usize) -> usize {
        let key = Self::midpoint_key(a, b);
        if let Some(&m) = self.edge_midpoints.get(&key) {
            return m;
        }
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let two = T::of(2.0);
        self.vertices.push([(pa[0] + pb[0]) / two, (pa[1] + pb[1]) / two]);
        let m = self.vertices.len() - 1;
        self.edge_midpoints.insert(key, m);
        m
    }

    fn push_child(
        &mut self,
        parent: usize,
        verts: [usize; 3],
        kind: ElementKind,
        boundary: [bool; 3],
    ) -> usize {
        let level = self.elements[parent].level + 1;
        self.elements.push(Element {
            verts,
            parent: Some(parent),
            children: Vec::new(),
            kind,
            level,
            alive: true,
            boundary,
            green_face: None,
        });
        let id = self.elements.len() - 1;
        self.elements[parent].children.push(id);
        id
    }

    /// Red refinement of leaf `e`: bisection in 1D, four congruent children in
    /// 2D. In 2D, child `i` (i = 0,1,2) is the corner child containing local
    /// vertex `i` of `e`; child 3 is the central child. Returns the child ids.
    pub fn refine_red(&mut self, e: usize) -> Result<Vec<usize>, MeshError> {
        let el = &self.elements[e];
        if !el.alive {
            return Err(MeshError::Dead(e));
        }
        if !el.children.is_empty() {
            return Err(MeshError::NotALeaf(e));
        }
        if el.kind == ElementKind::Green {
            return Err(MeshError::GreenChild(e));
        }
        let b = el.boundary;
        if self.dim == 1 {
            let [v0, v1, _] = el.verts;
            let m = self.get_or_create_midpoint(v0, v1);
            let c0 = self.push_child(e, [v0, m, usize::MAX], ElementKind::Red, [b[0], false, false]);
            let c1 = self.push_child(e, [m, v1, usize::MAX], ElementKind::Red, [false, b[1], false]);
            Ok(vec![c0, c1])
        } else {
            let [v0, v1, v2] = el.verts;
            let m01 = self.get_or_create_midpoint(v0, v1);
            let m12 = self.get_or_create_midpoint(v1, v2);
            let m20 = self.get_or_create_midpoint(v2, v0);
            let c0 = self.push_child(e, [v0, m01, m20], ElementKind::Red, [b[0], false, b[2]]);
            let c1 = self.push_child(e, [v1, m12, m01], ElementKind::Red, [b[1], false, b[0]]);
            let c2 = self.push_child(e, [v2, m20, m12], ElementKind::Red, [b[2], false, b[1]]);
            let c3 = self.push_child(e, [m01, m12, m20], ElementKind::Red, [false, false, false]);
            Ok(vec![c0, c1, c2, c3])
        }
    }

    /// Green bisection of leaf `e` toward the (existing) midpoint of face `f`.
    fn refine_green(&mut self, e: usize, f: usize) -> Vec<usize> {
        debug_assert_eq!(self.dim, 2);
        let el = &self.elements[e];
        debug_assert!(el.alive && el.children.is_empty() && el.kind != ElementKind::Green);
        let [v0, v1, v2] = el.verts;
        let b = el.boundary;
        let (va, vb, vc, ba, bb, bc) = match f {
            // Face f joins (va, vb); vc is the apex. (ba, bb, bc) are the
            // boundary flags of faces (va,vb), (vb,vc), (vc,va).
            0 => (v0, v1, v2, b[0], b[1], b[2]),
            1 => (v1, v2, v0, b[1], b[2], b[0]),
            2 => (v2, v0, v1, b[2], b[0], b[1]),
            _ => unreachable!(),
        };
        let m = self
            .midpoint_of(va, vb)
            .expect("green refinement requires an existing midpoint");
        let g0 = self.push_child(e, [va, m, vc], ElementKind::Green, [ba, false, bc]);
        let g1 = self.push_child(e, [m, vb, vc], ElementKind::Green, [ba, bb, false]);
        self.elements[e].green_face = Some(f);
        vec![g0, g1]
    }

    /// Retracts the green closure below `parent`; children are marked dead.
    pub fn ungreen(&mut self, parent: usize) -> Vec<usize> {
        let children = std::mem::take(&mut self.elements[parent].children);
        debug_assert!(children
            .iter()
            .all(|&c| self.elements[c].kind == ElementKind::Green && self.elements[c].children.is_empty()));
        for &c in &children {
            self.elements[c].alive = false;
        }
        self.elements[parent].green_face = None;
        children
    }

    fn is_descendant_of(&self, mut e: usize, ancestor: usize) -> bool {
        while let Some(p) = self.elements[e].parent {
            if p == ancestor {
                return true;
            }
            e = p;
        }
        false
    }

    /// Map from leaf face keys to `(element, local face)` pairs.
    pub fn leaf_face_map(&self) -> HashMap<FaceKey, Vec<(usize, usize)>> {
        let mut map: HashMap<FaceKey, Vec<(usize, usize)>> = HashMap::new();
        for e in self.leaves() {
            for f in 0..self.num_faces() {
                map.entry(self.face_key(e, f)).or_default().push((e, f));
            }
        }
        map
    }

    /// The leaf sharing face `f` of leaf `e`, for a conforming mesh.
    pub fn neighbor(&self, map: &HashMap<FaceKey, Vec<(usize, usize)>>, e: usize, f: usize) -> Option<(usize, usize)> {
        map.get(&self.face_key(e, f))?
            .iter()
            .copied()
            .find(|&(o, _)| o != e)
    }

    /// Whether some leaf outside `e`'s subtree occupies a strict subdivision
    /// of edge `(a, b)`: a half, a quarter, and so on.
    fn covered_below(&self, map: &HashMap<FaceKey, Vec<(usize, usize)>>, e: usize, a: usize, b: usize) -> bool {
        let m = match self.midpoint_of(a, b) {
            Some(m) => m,
            None => return false,
        };
        [(a, m), (m, b)].iter().any(|&(p, q)| {
            let direct = map.get(&(p.min(q), p.max(q))).is_some_and(|adj| {
                adj.iter().any(|&(o, _)| o != e && !self.is_descendant_of(o, e))
            });
            direct || self.covered_below(map, e, p, q)
        })
    }

    /// Faces of `e` whose midpoint is active from the other side, i.e. some
    /// non-descendant leaf uses the midpoint vertex on that edge.
    fn hanging_faces(&self, map: &HashMap<FaceKey, Vec<(usize, usize)>>, e: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for f in 0..self.num_faces() {
            if self.elements[e].boundary[f] {
                continue;
            }
            let (a, b) = match self.face_verts(e, f) {
                (a, Some(b)) => (a, b),
                _ => continue, // 1D: bisection creates no hanging vertices
            };
            if self.covered_below(map, e, a, b) {
                out.push(f);
            }
        }
        out
    }

    /// Whether the far side of hanging face `f` goes more than one level deep.
    /// A green bisection only matches a far side that is exactly one level
    /// down, so a deep hang forces a red split instead.
    fn deep_hang(&self, map: &HashMap<FaceKey, Vec<(usize, usize)>>, e: usize, f: usize) -> bool {
        let (a, b) = match self.face_verts(e, f) {
            (a, Some(b)) => (a, b),
            _ => return false,
        };
        let m = match self.midpoint_of(a, b) {
            Some(m) => m,
            None => return false,
        };
        self.covered_below(map, e, a, m) || self.covered_below(map, e, m, b)
    }

    /// Restores conformity after red refinements. Elements with one hanging
    /// midpoint are green-bisected toward it; elements with two or more are
    /// red-refined (which may cascade); existing green closures whose hanging
    /// pattern changed are retracted first. Returns the structural log so the
    /// caller can replay degree bookkeeping.
    pub fn close_green(&mut self) -> RefineLog {
        let mut log = RefineLog::default();
        if self.dim == 1 {
            return log;
        }
        let mut rounds = 0usize;
        loop {
            rounds += 1;
            assert!(
                rounds <= 8 * self.elements.len() + 64,
                "green closure failed to terminate"
            );
            let map = self.leaf_face_map();
            // Closure management happens on the red tree: alive non-green
            // elements that are childless or carry only a green closure.
            let hosts: Vec<usize> = (0..self.elements.len())
                .filter(|&e| {
                    let el = &self.elements[e];
                    el.alive
                        && el.kind != ElementKind::Green
                        && (el.children.is_empty() || el.green_face.is_some())
                })
                .collect();

            let mut stale = Vec::new();
            for &e in &hosts {
                if let Some(gf) = self.elements[e].green_face {
                    // A closure stays only while the host hangs at exactly the
                    // green face and the far side is exactly one level down;
                    // anything else (including a neighbour refined past the
                    // green children) retracts it.
                    if self.hanging_faces(&map, e) != vec![gf] || self.deep_hang(&map, e, gf) {
                        stale.push(e);
                    }
                }
            }
            if !stale.is_empty() {
                for e in stale {
                    let children = self.ungreen(e);
                    log.events.push(RefineEvent::Ungreen { parent: e, children });
                }
                continue;
            }

            let mut reds = Vec::new();
            let mut greens = Vec::new();
            for &e in &hosts {
                if !self.elements[e].children.is_empty() {
                    continue;
                }
                let hang = self.hanging_faces(&map, e);
                match hang.len() {
                    0 => {}
                    1 if !self.deep_hang(&map, e, hang[0]) => greens.push((e, hang[0])),
                    _ => reds.push(e),
                }
            }
            if !reds.is_empty() {
                for e in reds {
                    let children = self.refine_red(e).expect("closure red split");
                    log.events.push(RefineEvent::Split {
                        parent: e,
                        children,
                        green: false,
                    });
                }
                continue;
            }
            if !greens.is_empty() {
                for (e, f) in greens {
                    let children = self.refine_green(e, f);
                    log.events.push(RefineEvent::Split {
                        parent: e,
                        children,
                        green: true,
                    });
                }
                continue;
            }
            break;
        }
        // Structural conformity only: patch-local meshes have open boundaries.
        debug_assert!(self.is_conforming(false));
        log
    }

    /// Whether every leaf face is either matched by exactly one other leaf
    /// face or lies on the boundary. With `require_domain_boundary`, unmatched
    /// faces must carry the domain-boundary mark (true for global meshes;
    /// patch-local meshes have open interior boundaries).
    pub fn is_conforming(&self, require_domain_boundary: bool) -> bool {
        let map = self.leaf_face_map();
        for (key, adj) in &map {
            match adj.len() {
                1 => {
                    let (e, f) = adj[0];
                    if require_domain_boundary && !self.elements[e].boundary[f] {
                        return false;
                    }
                    // An unmatched face must not have leaves below it on the
                    // other side (at any depth).
                    if self.dim == 2 && self.covered_below(&map, e, key.0, key.1) {
                        return false;
                    }
                }
                2 => {}
                _ => return false,
            }
        }
        true
    }

    /// All leaf faces on the domain boundary, in (element, face) order.
    pub fn domain_boundary_faces(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for e in self.leaves() {
            for f in 0..self.num_faces() {
                if self.elements[e].boundary[f] {
                    out.push((e, f));
                }
            }
        }
        out
    }

    /// Total measure of all leaves.
    pub fn total_measure(&self) -> T {
        self.leaves().into_iter().map(|e| self.measure(e)).sum()
    }

    pub fn max_level(&self) -> u32 {
        self.leaves().into_iter().map(|e| self.elements[e].level).max().unwrap_or(0)
    }

    /// Builds the unrefined neighbourhood patch of leaf `kappa`: the element
    /// itself plus its face neighbours. The mesh must be conforming.
    pub fn build_patch(&self, kappa: usize) -> Result<Patch<T>, MeshError> {
        self.patch_of(kappa, false)
    }

    /// Builds the refined neighbourhood patch: `kappa` is red-refined and the
    /// neighbours are green-bisected toward the new midpoints (1D: `kappa` is
    /// bisected and the neighbours kept).
    pub fn build_refined_patch(&self, kappa: usize) -> Result<Patch<T>, MeshError> {
        self.patch_of(kappa, true)
    }

    fn patch_of(&self, kappa: usize, refined: bool) -> Result<Patch<T>, MeshError> {
        if !self.elements[kappa].alive {
            return Err(MeshError::Dead(kappa));
        }
        if !self.is_leaf(kappa) {
            return Err(MeshError::NotALeaf(kappa));
        }
        let map = self.leaf_face_map();
        let mut members = vec![kappa];
        for f in 0..self.num_faces() {
            if self.elements[kappa].boundary[f] {
                continue;
            }
            match self.neighbor(&map, kappa, f) {
                Some((n, _)) => members.push(n),
                None => return Err(MeshError::Nonconforming(kappa)),
            }
        }

        let mut global_vertex = Vec::new();
        let mut local_of: HashMap<usize, usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut cells = Vec::new();
        for &e in &members {
            let mut cell = Vec::new();
            for &gv in self.verts(e) {
                let lv = *local_of.entry(gv).or_insert_with(|| {
                    global_vertex.push(gv);
                    vertices.push(self.vertices[gv]);
                    vertices.len() - 1
                });
                cell.push(lv);
            }
            cells.push(cell);
        }
        let mut local = Mesh::new(self.dim, vertices, cells)?;
        // Boundary marks must reflect the global mesh, not patch adjacency:
        // patch-boundary faces interior to the domain stay unmarked.
        for (li, &ge) in members.iter().enumerate() {
            local.elements[li].boundary = [false; 3];
            for f in 0..self.num_faces() {
                local.elements[li].boundary[f] = self.elements[ge].boundary[f];
            }
        }
        let mut patch = Patch {
            center: kappa,
            local,
            local_center: 0,
            center_children: Vec::new(),
            source: members,
            global_vertex,
            refined,
        };
        if refined {
            patch.center_children = patch.local.refine_red(0).expect("patch centre split");
            patch.local.close_green();
        }
        Ok(patch)
    }

    /// Writes the leaves as a flat mesh: `dim nv ne`, vertex lines, then
    /// element lines (vertex ids followed by the element degree).
    /// `degrees[i]` belongs to the `i`-th leaf in [`Mesh::leaves`] order,
    /// mirroring what [`Mesh::load`] returns.
    pub fn save<W: Write>(&self, degrees: &[usize], w: &mut W) -> std::io::Result<()> {
        let leaves = self.leaves();
        assert_eq!(degrees.len(), leaves.len(), "one degree per leaf");
        let mut vid = HashMap::new();
        let mut verts = Vec::new();
        for &e in &leaves {
            for &v in self.verts(e) {
                vid.entry(v).or_insert_with(|| {
                    verts.push(v);
                    verts.len() - 1
                });
            }
        }
        writeln!(w, "# hp-energy mesh")?;
        writeln!(w, "{} {} {}", self.dim, verts.len(), leaves.len())?;
        for &v in &verts {
            let p = self.vertices[v];
            if self.dim == 1 {
                writeln!(w, "{:.17e}", p[0].as_f64())?;
            } else {
                writeln!(w, "{:.17e} {:.17e}", p[0].as_f64(), p[1].as_f64())?;
            }
        }
        for (i, &e) in leaves.iter().enumerate() {
            for &v in self.verts(e) {
                write!(w, "{} ", vid[&v])?;
            }
            writeln!(w, "{}", degrees[i])?;
        }
        Ok(())
    }

    /// Reads the format written by [`Mesh::save`]. Lines may carry `#`
    /// comments. Returns the mesh and the per-element degrees.
    pub fn load<R: BufRead>(r: R) -> Result<(Self, Vec<usize>), MeshError> {
        let mut tokens: Vec<String> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let stripped = line.split('#').next().unwrap_or("");
            tokens.extend(stripped.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        let mut next = |what: &str| -> Result<String, MeshError> {
            it.next().ok_or_else(|| MeshError::Format(format!("missing {what}")))
        };
        let dim: usize = next("dim")?.parse().map_err(|_| MeshError::Format("bad dim".into()))?;
        if dim != 1 && dim != 2 {
            return Err(MeshError::Format(format!("dim must be 1 or 2, got {dim}")));
        }
        let nv: usize = next("vertex count")?.parse().map_err(|_| MeshError::Format("bad vertex count".into()))?;
        let ne: usize = next("element count")?.parse().map_err(|_| MeshError::Format("bad element count".into()))?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let x: f64 = next("coordinate")?.parse().map_err(|_| MeshError::Format("bad coordinate".into()))?;
            let y: f64 = if dim == 2 {
                next("coordinate")?.parse().map_err(|_| MeshError::Format("bad coordinate".into()))?
            } else {
                0.0
            };
            vertices.push([T::of(x), T::of(y)]);
        }
        let mut cells = Vec::with_capacity(ne);
        let mut degrees = Vec::with_capacity(ne);
        for _ in 0..ne {
            let mut cell = Vec::with_capacity(dim + 1);
            for _ in 0..dim + 1 {
                let v: usize = next("vertex id")?.parse().map_err(|_| MeshError::Format("bad vertex id".into()))?;
                cell.push(v);
            }
            let p: usize = next("degree")?.parse().map_err(|_| MeshError::Format("bad degree".into()))?;
            if p == 0 {
                return Err(MeshError::Format("degree must be >= 1".into()));
            }
            cells.push(cell);
            degrees.push(p);
        }
        if it.next().is_some() {
            return Err(MeshError::Format("trailing tokens".into()));
        }
        let mesh = Mesh::new(dim, vertices, cells)?;
        Ok((mesh, degrees))
    }
}

fn tri_det<T: Real>(vertices: &[[T; 2]], a: usize, b: usize, c: usize) -> T {
    let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
    (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
}

/// Affine map `x = origin + M ξ` from the reference element (interval
/// `[-1, 1]` embedded in the first coordinate, or the unit triangle with
/// vertices (0,0), (1,0), (0,1)).
#[derive(Clone, Copy, Debug)]
pub struct AffineMap<T> {
    pub origin: [T; 2],
    pub m: [[T; 2]; 2],
    pub inv: [[T; 2]; 2],
    /// Jacobian determinant: `h/2` in 1D, twice the area in 2D.
    pub det: T,
}

impl<T: Real> AffineMap<T> {
    pub fn from_ref(&self, r: [T; 2]) -> [T; 2] {
        [
            self.origin[0] + self.m[0][0] * r[0] + self.m[0][1] * r[1],
            self.origin[1] + self.m[1][0] * r[0] + self.m[1][1] * r[1],
        ]
    }

    pub fn to_ref(&self, x: [T; 2]) -> [T; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }

    /// Push a reference gradient to a physical gradient: `inv^T g`.
    pub fn grad_to_phys(&self, g: [T; 2]) -> [T; 2] {
        [
            self.inv[0][0] * g[0] + self.inv[1][0] * g[1],
            self.inv[0][1] * g[0] + self.inv[1][1] * g[1],
        ]
    }
}

/// Neighbourhood of one element: a standalone local mesh whose roots copy the
/// patch members (centre first), with maps back to the global mesh.
#[derive(Clone, Debug)]
pub struct Patch<T: Real> {
    /// Global id of the centre element.
    pub center: usize,
    pub local: Mesh<T>,
    /// Local id of the centre copy (always 0).
    pub local_center: usize,
    /// Local ids of the centre's children (empty for unrefined patches).
    /// In 2D, children 0..=2 are corner children and child 3 is central.
    pub center_children: Vec<usize>,
    /// Local root id -> global element id.
    pub source: Vec<usize>,
    /// Local vertex id -> global vertex id (`usize::MAX` for created midpoints).
    pub global_vertex: Vec<usize>,
    pub refined: bool,
}

impl<T: Real> Patch<T> {
    /// Global element whose interior covers local leaf `l`.
    pub fn source_of(&self, mut l: usize) -> usize {
        while let Some(p) = self.local.element(l).parent {
            l = p;
        }
        self.source[l]
    }

    /// Global vertex id of local vertex `v`, if it exists globally.
    pub fn global_vertex_of(&self, v: usize) -> Option<usize> {
        self.global_vertex.get(v).copied().filter(|&g| g != usize::MAX)
    }

    /// Local leaf faces with no local neighbour (the patch boundary), each
    /// tagged with whether it lies on the domain boundary.
    pub fn boundary_faces(&self) -> Vec<PatchFace> {
        let map = self.local.leaf_face_map();
        let mut out = Vec::new();
        for e in self.local.leaves() {
            for f in 0..self.local.num_faces() {
                if self.local.neighbor(&map, e, f).is_none() {
                    out.push(PatchFace {
                        element: e,
                        face: f,
                        on_domain_boundary: self.local.is_boundary_face(e, f),
                        source: self.source_of(e),
                    });
                }
            }
        }
        out.sort_by_key(|pf| (pf.element, pf.face));
        out
    }
}

/// A face on the boundary of a patch.
#[derive(Clone, Copy, Debug)]
pub struct PatchFace {
    pub element: usize,
    pub face: usize,
    pub on_domain_boundary: bool,
    /// Global element providing trace data across this face.
    pub source: usize,
}
