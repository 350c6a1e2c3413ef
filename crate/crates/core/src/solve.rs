//! Damped Newton minimisation of the discrete energy. Each step solves the
//! (SPD) Hessian system on the free dofs and backtracks along the Newton
//! direction until the Armijo condition holds; an absolute slack of order
//! machine epsilon keeps the search from failing on pure roundoff near the
//! minimum.

use thiserror::Error;

use crate::fespace::{Constraints, FeFunction, Space};
use crate::forms::{self, ProblemDef, Tables, WarmStart};
use crate::linalg::{self, LinalgError};
use crate::mesh::Mesh;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig<T: Real> {
    /// Convergence threshold on the infinity norm of the free residual.
    pub newton_tol: T,
    pub max_newton: usize,
    /// Armijo slope fraction.
    pub armijo_c: T,
    pub max_backtrack: usize,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            newton_tol: T::of(1e-10),
            max_newton: 30,
            armijo_c: T::of(1e-4),
            max_backtrack: 40,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveReport<T: Real> {
    /// Newton updates actually applied.
    pub newton_iters: usize,
    pub residual_inf: T,
    pub energy: T,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("line search stalled at Newton iteration {iter} (residual {residual})")]
    LineSearchStalled { iter: usize, residual: f64 },
    #[error("no convergence in {iters} Newton iterations (residual {residual})")]
    NoConvergence { iters: usize, residual: f64 },
}

/// Minimises the energy over the constrained space. `start` seeds the
/// iteration (boundary values are always overwritten); without a seed,
/// problems flagged [`WarmStart::Quadratic`] first minimise their quadratic
/// surrogate.
pub fn solve<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    constraints: &Constraints<T>,
    start: Option<&FeFunction<T>>,
    cfg: &SolverConfig<T>,
    quad_floor: usize,
) -> Result<(FeFunction<T>, SolveReport<T>), SolveError> {
    let mut u = match start {
        Some(s) => s.clone(),
        None if prob.warm_start == WarmStart::Quadratic => {
            let surrogate = prob.quadratic_surrogate();
            let (s, _) = solve(&surrogate, mesh, space, constraints, None, cfg, quad_floor)?;
            s
        }
        None => FeFunction::zeros(space),
    };
    constraints.apply_to(&mut u);

    let free: Vec<usize> = (0..space.ndof).filter(|d| !constraints.is_fixed(*d)).collect();
    let mut idx_map = vec![usize::MAX; space.ndof];
    for (i, &d) in free.iter().enumerate() {
        idx_map[d] = i;
    }

    let tables = Tables::build(prob, mesh, space, quad_floor);
    let mut iters = 0usize;
    loop {
        let (grad, sys) = forms::residual_and_jacobian_with(prob, mesh, space, &u, &tables);
        let r: Vec<T> = free.iter().map(|&d| -grad[d]).collect();
        let rinf = r.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if rinf <= cfg.newton_tol {
            let energy = forms::energy_with(prob, mesh, space, &u, &tables);
            return Ok((u, SolveReport { newton_iters: iters, residual_inf: rinf, energy }));
        }
        if iters >= cfg.max_newton {
            return Err(SolveError::NoConvergence { iters, residual: rinf.as_f64() });
        }

        let reduced = sys.restrict(&idx_map, free.len());
        let d = linalg::solve_spd(&reduced, &r)?;
        // Directional derivative g . d (negative for a descent direction).
        let gd: T = free.iter().zip(&d).map(|(&dof, &di)| grad[dof] * di).sum();

        let e0 = forms::energy_with(prob, mesh, space, &u, &tables);
        let slack = T::of(1e-14) * (T::one() + e0.abs());
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..=cfg.max_backtrack {
            let mut trial = u.clone();
            for (i, &dof) in free.iter().enumerate() {
                trial.coeffs[dof] += t * d[i];
            }
            let et = forms::energy_with(prob, mesh, space, &trial, &tables);
            if et <= e0 + cfg.armijo_c * t * gd + slack {
                u = trial;
                accepted = true;
                break;
            }
            t *= T::of(0.5);
        }
        if !accepted {
            return Err(SolveError::LineSearchStalled { iter: iters, residual: rinf.as_f64() });
        }
        iters += 1;
    }
}
