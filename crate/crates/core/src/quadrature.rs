//! Quadrature rules on the reference interval `[-1, 1]` and the reference
//! triangle (0,0)-(1,0)-(0,1).
//!
//! Triangle rules are built from a tensor Gauss-Legendre rule on the square
//! through the collapsed-coordinate map `(u, v) -> (u (1 - v), v)`; the map's
//! Jacobian `1 - v` is absorbed into the weights. The point counts are chosen
//! so the stated polynomial degree is integrated exactly.

use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct QuadRule<T> {
    /// Reference coordinates; 1D rules use the first component only.
    pub points: Vec<[T; 2]>,
    pub weights: Vec<T>,
    /// Total polynomial degree integrated exactly.
    pub exact_degree: usize,
}

impl<T: Real> QuadRule<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Nodes are found by Newton iteration on `P_n` from Chebyshev initial
/// guesses; this converges to machine precision for the orders used here.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1);
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let two = T::of(2.0);
    for i in 0..n {
        let guess = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut x = T::of(guess);
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x = x - step;
            if step.abs() <= T::epsilon() * (T::one() + x.abs()) {
                let (_, d2) = legendre_with_derivative(n, x);
                dp = d2;
                break;
            }
        }
        // Nodes come out in descending order; store ascending.
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = two / ((T::one() - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` via the three-term recurrence.
fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    if n == 0 {
        return (p0, T::zero());
    }
    for k in 2..=n {
        let kf = T::of(k as f64);
        let p2 = ((T::of((2 * k - 1) as f64)) * x * p1 - T::of((k - 1) as f64) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = T::of(n as f64) * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// 1D rule on `[-1, 1]` exact for polynomials of degree `degree`.
pub fn interval_rule<T: Real>(degree: usize) -> QuadRule<T> {
    let n = degree / 2 + 1; // 2n - 1 >= degree
    let (nodes, weights) = gauss_legendre::<T>(n);
    QuadRule {
        points: nodes.into_iter().map(|x| [x, T::zero()]).collect(),
        weights,
        exact_degree: 2 * n - 1,
    }
}

/// Triangle rule exact for total degree `degree`; weights sum to 1/2.
pub fn triangle_rule<T: Real>(degree: usize) -> QuadRule<T> {
    // The collapsed map raises the degree in v by one (Jacobian), so the
    // tensor factors must handle degree + 1.
    let n = (degree + 1) / 2 + 1; // 2n - 1 >= degree + 1
    let (nodes, weights) = gauss_legendre::<T>(n);
    let half = T::of(0.5);
    let mut points = Vec::with_capacity(n * n);
    let mut w = Vec::with_capacity(n * n);
    for j in 0..n {
        let v = (nodes[j] + T::one()) * half;
        let wv = weights[j] * half;
        for i in 0..n {
            let u = (nodes[i] + T::one()) * half;
            let wu = weights[i] * half;
            points.push([u * (T::one() - v), v]);
            w.push(wu * wv * (T::one() - v));
        }
    }
    QuadRule {
        points,
        weights: w,
        exact_degree: degree,
    }
}

/// Rule for the reference element of dimension `dim`.
pub fn reference_rule<T: Real>(dim: usize, degree: usize) -> QuadRule<T> {
    match dim {
        1 => interval_rule(degree),
        2 => triangle_rule(degree),
        _ => panic!("unsupported dimension {dim}"),
    }
}
