//! Hierarchic shape functions on the reference interval and triangle.
//!
//! The basis is the usual vertex / edge / bubble hierarchy: barycentric hat
//! functions at vertices, integrated-Legendre modes of degree `2..=p_e` on
//! each edge, and interior bubbles up to the element's total degree. Edge
//! modes are parameterized from the lower to the higher *global* vertex id of
//! the edge, so traces of shared edge modes agree between neighbouring
//! elements without sign fixups at assembly time.
//!
//! The integrated Legendre function `L_k(x) = ∫_{-1}^x P_{k-1}` is evaluated
//! through its bubble form `L_k = (1 - x^2)/4 · ψ_k(x)` with the polynomial
//! kernel `ψ_k(x) = -4 P'_{k-1}(x) / (k (k-1))`, which extends to the triangle
//! as `λ_a λ_b ψ_k(λ_b - λ_a)`.

use crate::scalar::Real;

/// One shape function of an element, identified structurally.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    /// Hat function of local vertex `v`.
    Vertex(usize),
    /// Edge mode of polynomial degree `k >= 2` on local edge `e`.
    /// In 1D the element's interior modes are edge modes of its only "edge".
    Edge { e: usize, k: usize },
    /// Interior bubble `λ0 λ1 λ2 P_i(λ1 - λ0) P_j(2 λ2 - 1)` (2D only).
    Bubble { i: usize, j: usize },
}

/// Degrees, edge orientations and the resulting shape list of one element.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ElementLayout {
    pub dim: usize,
    /// Interior (element) degree.
    pub p: usize,
    /// Edge degrees after the minimum rule; `edge_p[0] == p` in 1D.
    pub edge_p: [usize; 3],
    /// Whether the canonical (global lo -> hi) direction of edge `e` is
    /// reversed relative to the local vertex order.
    pub flip: [bool; 3],
    pub shapes: Vec<Shape>,
}

impl ElementLayout {
    pub fn new_1d(p: usize) -> Self {
        assert!(p >= 1);
        let mut shapes = vec![Shape::Vertex(0), Shape::Vertex(1)];
        for k in 2..=p {
            shapes.push(Shape::Edge { e: 0, k });
        }
        ElementLayout {
            dim: 1,
            p,
            edge_p: [p, 0, 0],
            flip: [false; 3],
            shapes,
        }
    }

    pub fn new_2d(p: usize, edge_p: [usize; 3], flip: [bool; 3]) -> Self {
        assert!(p >= 1 && edge_p.iter().all(|&q| (1..=p).contains(&q)));
        let mut shapes = vec![Shape::Vertex(0), Shape::Vertex(1), Shape::Vertex(2)];
        for e in 0..3 {
            for k in 2..=edge_p[e] {
                shapes.push(Shape::Edge { e, k });
            }
        }
        if p >= 3 {
            for i in 0..=p - 3 {
                for j in 0..=p - 3 - i {
                    shapes.push(Shape::Bubble { i, j });
                }
            }
        }
        ElementLayout {
            dim: 2,
            p,
            edge_p,
            flip,
            shapes,
        }
    }

    pub fn ndof(&self) -> usize {
        self.shapes.len()
    }
}

/// `P_0..=P_n` at `x`, with first and second derivatives.
fn legendre_table<T: Real>(n: usize, x: T, p: &mut Vec<T>, d1: &mut Vec<T>, d2: &mut Vec<T>) {
    p.clear();
    d1.clear();
    d2.clear();
    p.push(T::one());
    d1.push(T::zero());
    d2.push(T::zero());
    if n == 0 {
        return;
    }
    p.push(x);
    d1.push(T::one());
    d2.push(T::zero());
    for k in 2..=n {
        let a = T::of((2 * k - 1) as f64);
        let b = T::of((k - 1) as f64);
        let c = T::of(k as f64);
        p.push((a * x * p[k - 1] - b * p[k - 2]) / c);
        d1.push(d1[k - 2] + a * p[k - 1]);
        d2.push(d2[k - 2] + a * d1[k - 1]);
    }
}

/// Integrated Legendre `L_k` on `[-1, 1]` (`k >= 2`), for test oracles.
pub fn integrated_legendre<T: Real>(k: usize, x: T) -> T {
    assert!(k >= 2);
    let (mut p, mut d1, mut d2) = (Vec::new(), Vec::new(), Vec::new());
    legendre_table(k, x, &mut p, &mut d1, &mut d2);
    (p[k] - p[k - 2]) / T::of((2 * k - 1) as f64)
}

/// Kernel `ψ_k` and its derivative: `ψ_k = -4 P'_{k-1} / (k (k-1))`.
fn kernel<T: Real>(k: usize, d1: &[T], d2: &[T]) -> (T, T) {
    let s = T::of(-4.0) / T::of((k * (k - 1)) as f64);
    (s * d1[k - 1], s * d2[k - 1])
}

/// Evaluates all shapes of `layout` at one reference point, writing values
/// and reference gradients (1D gradients use the first component).
pub fn eval_shapes<T: Real>(layout: &ElementLayout, point: [T; 2], values: &mut [T], grads: &mut [[T; 2]]) {
    assert_eq!(values.len(), layout.ndof());
    assert_eq!(grads.len(), layout.ndof());

    if layout.dim == 1 {
        let x = point[0];
        let half = T::of(0.5);
        // λ0 = (1-x)/2, λ1 = (1+x)/2 with derivatives ∓1/2.
        let lam = [(T::one() - x) * half, (T::one() + x) * half];
        let dlam = [-half, half];
        let (mut pt, mut d1t, mut d2t) = (Vec::new(), Vec::new(), Vec::new());
        legendre_table(layout.p.max(1), x, &mut pt, &mut d1t, &mut d2t);
        for (s, shape) in layout.shapes.iter().enumerate() {
            match *shape {
                Shape::Vertex(v) => {
                    values[s] = lam[v];
                    grads[s] = [dlam[v], T::zero()];
                }
                Shape::Edge { k, .. } => {
                    let (psi, dpsi) = kernel(k, &d1t, &d2t);
                    values[s] = lam[0] * lam[1] * psi;
                    let dprod = dlam[0] * lam[1] + lam[0] * dlam[1];
                    grads[s] = [dprod * psi + lam[0] * lam[1] * dpsi, T::zero()];
                }
                Shape::Bubble { .. } => unreachable!("no bubbles in 1D"),
            }
        }
        return;
    }

    let (x, y) = (point[0], point[1]);
    let lam = [T::one() - x - y, x, y];
    let dlam = [[-T::one(), -T::one()], [T::one(), T::zero()], [T::zero(), T::one()]];
    // Local edge e joins vertices (e, e+1 mod 3).
    let edge_ends = [(0usize, 1usize), (1, 2), (2, 0)];

    let (mut pb1, mut db1) = (Vec::new(), Vec::new());
    let (mut pb2, mut db2) = (Vec::new(), Vec::new());
    let mut scratch2a = Vec::new();
    let mut scratch2b = Vec::new();
    if layout.p >= 3 {
        let nb = layout.p - 3;
        legendre_table(nb, lam[1] - lam[0], &mut pb1, &mut db1, &mut scratch2a);
        legendre_table(nb, T::of(2.0) * lam[2] - T::one(), &mut pb2, &mut db2, &mut scratch2b);
    }

    // Per-edge kernel tables at the canonical argument.
    let mut edge_tab: [Option<(Vec<T>, Vec<T>, Vec<T>)>; 3] = [None, None, None];
    for e in 0..3 {
        if layout.edge_p[e] >= 2 {
            let (a, b) = edge_ends[e];
            let sign = if layout.flip[e] { -T::one() } else { T::one() };
            let arg = sign * (lam[b] - lam[a]);
            let (mut p, mut d1, mut d2) = (Vec::new(), Vec::new(), Vec::new());
            legendre_table(layout.edge_p[e], arg, &mut p, &mut d1, &mut d2);
            edge_tab[e] = Some((p, d1, d2));
        }
    }

    for (s, shape) in layout.shapes.iter().enumerate() {
        match *shape {
            Shape::Vertex(v) => {
                values[s] = lam[v];
                grads[s] = dlam[v];
            }
            Shape::Edge { e, k } => {
                let (a, b) = edge_ends[e];
                let sign = if layout.flip[e] { -T::one() } else { T::one() };
                let tab = edge_tab[e].as_ref().expect("edge table");
                let (psi, dpsi) = kernel(k, &tab.1, &tab.2);
                let prod = lam[a] * lam[b];
                values[s] = prod * psi;
                // ∇(λa λb) ψ + λa λb ψ' · sign ∇(λb - λa)
                for c in 0..2 {
                    let dprod = dlam[a][c] * lam[b] + lam[a] * dlam[b][c];
                    let darg = sign * (dlam[b][c] - dlam[a][c]);
                    grads[s][c] = dprod * psi + prod * dpsi * darg;
                }
            }
            Shape::Bubble { i, j } => {
                let bubble = lam[0] * lam[1] * lam[2];
                let (pi, dpi) = (pb1[i], db1[i]);
                let (pj, dpj) = (pb2[j], db2[j]);
                values[s] = bubble * pi * pj;
                for c in 0..2 {
                    let dbubble = dlam[0][c] * lam[1] * lam[2]
                        + lam[0] * dlam[1][c] * lam[2]
                        + lam[0] * lam[1] * dlam[2][c];
                    let darg1 = dlam[1][c] - dlam[0][c];
                    let darg2 = T::of(2.0) * dlam[2][c];
                    grads[s][c] = dbubble * pi * pj
                        + bubble * dpi * darg1 * pj
                        + bubble * pi * dpj * darg2;
                }
            }
        }
    }
}

/// Shape values and reference gradients tabulated at a set of points,
/// stored row-major: entry `q * nshape + s`.
#[derive(Clone, Debug)]
pub struct BasisTable<T> {
    pub nshape: usize,
    pub values: Vec<T>,
    pub grads: Vec<[T; 2]>,
}

pub fn tabulate<T: Real>(layout: &ElementLayout, points: &[[T; 2]]) -> BasisTable<T> {
    let n = layout.ndof();
    let mut values = vec![T::zero(); n * points.len()];
    let mut grads = vec![[T::zero(); 2]; n * points.len()];
    for (q, &pt) in points.iter().enumerate() {
        eval_shapes(layout, pt, &mut values[q * n..(q + 1) * n], &mut grads[q * n..(q + 1) * n]);
    }
    BasisTable {
        nshape: n,
        values,
        grads,
    }
}
