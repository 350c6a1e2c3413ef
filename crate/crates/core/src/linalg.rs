//! Symmetric positive definite linear algebra for the Newton steps: a
//! coordinate-free symmetric store, reverse Cuthill-McKee ordering, a skyline
//! LDLT factorisation with one step of iterative refinement, and a Jacobi
//! preconditioned conjugate gradient fallback.
//!
//! Everything is deterministic: orderings break ties by index and no
//! floating point reduction depends on data-dependent iteration order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("iterative solver stalled at relative residual {residual}")]
    DidNotConverge { residual: f64 },
}

/// Dense SPD solve by Cholesky, in place; `a` and `b` are overwritten.
/// Meant for small Gram systems (trace projections), not assembled operators.
pub fn cholesky_solve_dense<T: Real>(a: &mut [Vec<T>], b: &mut [T]) -> Result<(), LinalgError> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d.as_f64() });
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    Ok(())
}

/// Sparse symmetric matrix, upper triangle stored row-wise in sorted maps.
#[derive(Clone, Debug)]
pub struct SymSystem<T: Real> {
    n: usize,
    rows: Vec<BTreeMap<usize, T>>,
}

impl<T: Real> SymSystem<T> {
    pub fn new(n: usize) -> Self {
        Self { n, rows: vec![BTreeMap::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Accumulates `v` at the symmetric position `(i, j)`.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let (r, c) = (i.min(j), i.max(j));
        *self.rows[r].entry(c).or_insert_with(T::zero) += v;
    }

    pub fn diag(&self, i: usize) -> T {
        self.rows[i].get(&i).copied().unwrap_or_else(T::zero)
    }

    /// y = A x.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        for v in y.iter_mut() {
            *v = T::zero();
        }
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &v) in row {
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
    }

    /// Restriction to a subset of indices. `idx_map[old]` is the new index
    /// or `usize::MAX` for dropped rows/columns.
    pub fn restrict(&self, idx_map: &[usize], n_new: usize) -> SymSystem<T> {
        let mut out = SymSystem::new(n_new);
        for (i, row) in self.rows.iter().enumerate() {
            let ni = idx_map[i];
            if ni == usize::MAX {
                continue;
            }
            for (&j, &v) in row {
                let nj = idx_map[j];
                if nj == usize::MAX {
                    continue;
                }
                out.add(ni, nj, v);
            }
        }
        out
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, _) in row {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Reverse Cuthill-McKee ordering; returns `perm` with `perm[new] = old`.
/// Ties are broken by vertex id for reproducibility.
pub fn reverse_cuthill_mckee<T: Real>(sys: &SymSystem<T>) -> Vec<usize> {
    let n = sys.n;
    let adj = sys.adjacency();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    loop {
        let start = (0..n)
            .filter(|&v| !seen[v])
            .min_by_key(|&v| (adj[v].len(), v));
        let Some(start) = start else { break };
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Skyline LDLT factorisation of an RCM-permuted [`SymSystem`].
pub struct SkylineFactor<T: Real> {
    perm: Vec<usize>,
    /// Column j holds L[j][r] for r in cmin[j]..j; d[j] is the pivot.
    cmin: Vec<usize>,
    cols: Vec<Vec<T>>,
    d: Vec<T>,
}

impl<T: Real> SkylineFactor<T> {
    pub fn new(sys: &SymSystem<T>) -> Result<Self, LinalgError> {
        let n = sys.n;
        let perm = reverse_cuthill_mckee(sys);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Column profiles in the permuted numbering.
        let mut cmin: Vec<usize> = (0..n).collect();
        for (i, row) in sys.rows.iter().enumerate() {
            for (&j, _) in row {
                let (a, b) = (iperm[i].min(iperm[j]), iperm[i].max(iperm[j]));
                cmin[b] = cmin[b].min(a);
            }
        }
        let mut cols: Vec<Vec<T>> = (0..n).map(|j| vec![T::zero(); j - cmin[j]]).collect();
        let mut d = vec![T::zero(); n];
        for (i, row) in sys.rows.iter().enumerate() {
            for (&j, &v) in row {
                let (a, b) = (iperm[i].min(iperm[j]), iperm[i].max(iperm[j]));
                if a == b {
                    d[a] += v;
                } else {
                    cols[b][a - cmin[b]] += v;
                }
            }
        }

        // In-place LDLT: s[r] = A[r][j] - sum_k L[r][k] s[k], L[j][r] =
        // s[r] / D[r], D[j] = A[j][j] - sum_r L[j][r] s[r].
        let mut s = vec![T::zero(); n];
        for j in 0..n {
            let c0 = cmin[j];
            for r in c0..j {
                let mut v = cols[j][r - c0];
                let k0 = cmin[r].max(c0);
                for k in k0..r {
                    v -= cols[r][k - cmin[r]] * s[k];
                }
                s[r] = v;
            }
            let mut dj = d[j];
            for r in c0..j {
                let l = s[r] / d[r];
                dj -= l * s[r];
                cols[j][r - c0] = l;
            }
            if !(dj > T::zero()) || !dj.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { index: j, pivot: dj.as_f64() });
            }
            d[j] = dj;
        }
        Ok(Self { perm, cmin, cols, d })
    }

    /// Solves A x = b using the factorisation.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = b.len();
        let mut z: Vec<T> = (0..n).map(|j| b[self.perm[j]]).collect();
        for j in 0..n {
            let c0 = self.cmin[j];
            let mut v = z[j];
            for r in c0..j {
                v -= self.cols[j][r - c0] * z[r];
            }
            z[j] = v;
        }
        for j in 0..n {
            z[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let c0 = self.cmin[j];
            let zj = z[j];
            for r in c0..j {
                z[r] -= self.cols[j][r - c0] * zj;
            }
        }
        let mut x = vec![T::zero(); n];
        for j in 0..n {
            x[self.perm[j]] = z[j];
        }
        x
    }
}

/// Jacobi preconditioned conjugate gradients from a zero start. Stops when
/// the residual infinity norm drops below `tol * max(1, |b|_inf)`.
pub fn cg_jacobi<T: Real>(
    sys: &SymSystem<T>,
    b: &[T],
    tol: T,
    max_iter: usize,
) -> Result<Vec<T>, LinalgError> {
    let n = sys.n;
    let inv_diag: Vec<T> = (0..n)
        .map(|i| {
            let d = sys.diag(i);
            if d > T::zero() {
                T::one() / d
            } else {
                T::one()
            }
        })
        .collect();
    let bnorm = b.iter().fold(T::zero(), |m, &v| m.max(v.abs())).max(T::one());
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&r, &m)| r * m).collect();
    let mut p = z.clone();
    let mut rz: T = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
    let mut ap = vec![T::zero(); n];
    for _ in 0..max_iter {
        let rinf = r.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if rinf <= tol * bnorm {
            return Ok(x);
        }
        sys.matvec(&p, &mut ap);
        let pap: T = p.iter().zip(&ap).map(|(&a, &b)| a * b).sum();
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: T = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rinf = r.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if rinf <= tol * bnorm {
        Ok(x)
    } else {
        Err(LinalgError::DidNotConverge { residual: (rinf / bnorm).as_f64() })
    }
}

/// Direct solve with one step of iterative refinement, falling back to CG if
/// the factorisation reports a nonpositive pivot (roundoff on nearly
/// semidefinite Hessians).
pub fn solve_spd<T: Real>(sys: &SymSystem<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    match SkylineFactor::new(sys) {
        Ok(f) => {
            let mut x = f.solve(b);
            let mut ax = vec![T::zero(); sys.n];
            sys.matvec(&x, &mut ax);
            let r: Vec<T> = b.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
            let e = f.solve(&r);
            for i in 0..sys.n {
                x[i] += e[i];
            }
            Ok(x)
        }
        Err(_) => cg_jacobi(sys, b, T::of(1e-12), 40 * sys.n.max(50)),
    }
}
