//! Competitive hp-adaptivity. For each leaf, a reference solution on its
//! red-refined neighbourhood patch freezes an averaged flux; every candidate
//! refinement (degree lift, or a split with one of the degree tuples whose
//! centre dof count matches the lift) is solved on the patch with the global
//! trace as boundary data, and its modified local energy is compared against
//! the current solution's. The winners are marked by a maximum criterion and
//! applied, with green closure keeping the mesh conforming.
//!
//! All randomness (candidate subsampling) is per-element, per-iteration
//! ChaCha streams derived from one seed, so runs are reproducible bit for
//! bit at any thread count.

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::estimator::{self, ErrorReport, Flux};
use crate::fespace::{
    self, build_space, build_space_ranked, constrain_faces, patch_rank, DegreeVector, FeFunction,
    Space,
};
use crate::forms::ProblemDef;
use crate::mesh::{ElementKind, Mesh, Patch};
use crate::scalar::Real;
use crate::solve::{self, SolveError, SolverConfig};

/// One candidate refinement of an element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Candidate {
    /// Raise the element degree by one.
    P,
    /// Red-refine; entry `i` is the degree of child `i` (1D: left, right;
    /// 2D: corner children 0..=2, then the central child).
    Hp(Vec<usize>),
}

/// Dofs of a single element of degree `p + 1`: the budget every candidate
/// must match on the centre region.
pub fn target_dofs(dim: usize, p: usize) -> usize {
    if dim == 1 {
        p + 2
    } else {
        (p + 2) * (p + 3) / 2
    }
}

/// Centre-region dof count of a 1D split with child degrees `q`.
pub fn center_dofs_1d(q: &[usize; 2]) -> usize {
    q[0] + q[1] + 1
}

/// Centre-region dof count of a 2D split with child degrees `t`: 6 child
/// vertices, the interior edges shared with the central child, two halves
/// of each outer edge, and the child interiors.
pub fn center_dofs_2d(t: &[usize; 4]) -> usize {
    let mut n = 6;
    for i in 0..3 {
        n += t[i].min(t[3]) - 1 + 2 * (t[i] - 1);
    }
    let quad: usize = t.iter().map(|&p| (p - 1) * p.saturating_sub(2)).sum();
    n + quad / 2
}

/// All candidates for an element of degree `p`: the degree lift first, then
/// every dof-matched split tuple in lexicographic order.
pub fn enumerate_candidates(dim: usize, p: usize) -> Vec<Candidate> {
    let mut out = vec![Candidate::P];
    if dim == 1 {
        for q1 in 1..=p {
            out.push(Candidate::Hp(vec![q1, p + 1 - q1]));
        }
    } else {
        let target = target_dofs(2, p);
        let hi = p + 2;
        for p1 in 1..=hi {
            for p2 in 1..=hi {
                for p3 in 1..=hi {
                    for p4 in 1..=hi {
                        if center_dofs_2d(&[p1, p2, p3, p4]) == target {
                            out.push(Candidate::Hp(vec![p1, p2, p3, p4]));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Deterministic per-element, per-iteration random stream.
pub fn rng_for(seed: u64, elem: usize, iter: usize) -> ChaCha8Rng {
    let s = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((elem as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((iter as u64).wrapping_mul(0x94D0_49BB_1331_11EB));
    ChaCha8Rng::seed_from_u64(s)
}

/// Keeps the degree lift and at most `nmax` split candidates, sampled
/// uniformly without replacement; indices are re-sorted so the surviving
/// list stays in lexicographic order.
pub fn subsample(
    cands: &[Candidate],
    nmax: Option<usize>,
    seed: u64,
    elem: usize,
    iter: usize,
) -> Vec<Candidate> {
    let Some(nmax) = nmax else {
        return cands.to_vec();
    };
    let hp = cands.len() - 1;
    if hp <= nmax {
        return cands.to_vec();
    }
    let mut rng = rng_for(seed, elem, iter);
    let mut idx = rand::seq::index::sample(&mut rng, hp, nmax).into_vec();
    idx.sort_unstable();
    let mut out = vec![Candidate::P];
    out.extend(idx.into_iter().map(|i| cands[i + 1].clone()));
    out
}

#[derive(Clone, Copy, Debug)]
pub struct AdaptConfig<T: Real> {
    /// Marking threshold: elements with reduction above `theta` times the
    /// maximum are refined.
    pub theta: T,
    /// Cap on split candidates per element (None examines all).
    pub nmax: Option<usize>,
    pub seed: u64,
    pub solver: SolverConfig<T>,
}

impl<T: Real> Default for AdaptConfig<T> {
    fn default() -> Self {
        Self {
            theta: T::of(1.0 / 3.0),
            nmax: None,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

/// Outcome of the candidate tournament on one element.
#[derive(Clone, Debug)]
pub struct ElementDecision<T: Real> {
    pub element: usize,
    pub best: Candidate,
    /// Modified energy reduction of the winner (may be nonpositive).
    pub delta: T,
    /// Worst Newton iteration count over the patch solves.
    pub patch_newton: usize,
}

/// Quadrature order covering every candidate space on the patch (degrees up
/// to `pmax`), so all comparisons integrate with the same rule per cell.
fn patch_floor<T: Real>(prob: &ProblemDef<T>, patch_mesh: &Mesh<T>, pmax: usize) -> usize {
    let mut f = (2 * pmax + 2).max(4) + prob.quad_bump;
    if patch_mesh.leaves().into_iter().any(|e| prob.touches_singularity(patch_mesh, e)) {
        f += 2;
    }
    f
}

/// Patch degrees at `base` everywhere, raised wherever the source element
/// already carries more in the global space. Local solves must enrich the
/// current approximation; flattening a high-order neighbour down to `base`
/// would hand the tournament a worse space than the one it is judging.
fn floored_degrees<T: Real>(patch: &Patch<T>, degrees: &DegreeVector, base: usize) -> DegreeVector {
    let mut d = DegreeVector::uniform(&patch.local, base);
    for e in patch.local.leaves() {
        let cur = degrees.get(patch.source_of(e));
        if cur > base {
            d.set(e, cur);
        }
    }
    d
}

/// Boundary data of a patch: face list plus `(on domain boundary, source)`.
fn patch_bc<T: Real>(patch: &Patch<T>) -> (Vec<(usize, usize)>, HashMap<(usize, usize), (bool, usize)>) {
    let mut faces = Vec::new();
    let mut info = HashMap::new();
    for pf in patch.boundary_faces() {
        faces.push((pf.element, pf.face));
        info.insert((pf.element, pf.face), (pf.on_domain_boundary, pf.source));
    }
    (faces, info)
}

/// Solves the problem on a patch with the given degrees, boundary values
/// taken from the global solution (or the problem datum on the domain
/// boundary), warm started by transfer. Returns the space, the minimiser
/// and the Newton iteration count.
fn solve_on_patch<T: Real>(
    prob: &ProblemDef<T>,
    gmesh: &Mesh<T>,
    gspace: &Space,
    u: &FeFunction<T>,
    patch: &Patch<T>,
    degrees: &DegreeVector,
    solver: &SolverConfig<T>,
    floor: usize,
) -> Result<(Space, FeFunction<T>, usize), SolveError> {
    let rank = patch_rank(patch);
    let space = build_space_ranked(&patch.local, degrees, Some(&rank));
    let (faces, info) = patch_bc(patch);
    let datum = |e: usize, f: usize, x: [T; 2]| -> T {
        let (on_domain, source) = info[&(e, f)];
        if on_domain {
            (prob.dirichlet)(x)
        } else {
            u.eval_phys(gmesh, gspace, source, x).0
        }
    };
    let cons = constrain_faces(&patch.local, &space, &faces, &datum);
    let start = fespace::transfer_to_patch(gmesh, gspace, u, patch, &space);
    let (sol, rep) = solve::solve(prob, &patch.local, &space, &cons, Some(&start), solver, floor)?;
    Ok((space, sol, rep.newton_iters))
}

/// Runs the candidate tournament for leaf `kappa`: reference solve on the
/// refined patch, frozen averaged flux, one patch solve per candidate.
pub fn estimate_element<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    degrees: &DegreeVector,
    u: &FeFunction<T>,
    kappa: usize,
    iter: usize,
    cfg: &AdaptConfig<T>,
) -> Result<ElementDecision<T>, SolveError> {
    let p = degrees.get(kappa);
    let refined = mesh.build_refined_patch(kappa).expect("conforming mesh around leaf");
    let plain = mesh.build_patch(kappa).expect("conforming mesh around leaf");
    let pcur = plain.source.iter().map(|&g| degrees.get(g)).max().unwrap_or(p);
    let floor = patch_floor(prob, &refined.local, (p + 2).max(pcur));

    // Reference solution: the refined patch at degree p + 1.
    let dref = floored_degrees(&refined, degrees, p + 1);
    let (sref, uref, n_ref) =
        solve_on_patch(prob, mesh, space, u, &refined, &dref, &cfg.solver, floor)?;
    let mut patch_newton = n_ref;

    let flux = Flux::Averaged { prob, mesh: &refined.local, space: &sref, w: &uref };
    let segments = estimator::region_boundary_segments(&refined.local, refined.local_center, &refined.local);
    let e_hp = estimator::modified_energy(prob, mesh, space, u, &[kappa], &segments, &flux, floor);

    let cands = subsample(
        &enumerate_candidates(mesh.dim(), p),
        cfg.nmax,
        cfg.seed,
        kappa,
        iter,
    );
    let mut best_idx = 0usize;
    let mut best_delta = T::neg_infinity();
    for (ci, cand) in cands.iter().enumerate() {
        let (patch, region, deg) = match cand {
            Candidate::P => (
                &plain,
                vec![plain.local_center],
                floored_degrees(&plain, degrees, p + 1),
            ),
            Candidate::Hp(t) => {
                let mut d = floored_degrees(&refined, degrees, p);
                for (i, &c) in refined.center_children.iter().enumerate() {
                    d.set(c, t[i]);
                }
                (&refined, refined.center_children.clone(), d)
            }
        };
        let (sc, uc, n_c) =
            solve_on_patch(prob, mesh, space, u, patch, &deg, &cfg.solver, floor)?;
        patch_newton = patch_newton.max(n_c);
        let e_c =
            estimator::modified_energy(prob, &patch.local, &sc, &uc, &region, &segments, &flux, floor);
        let delta = e_hp - e_c;
        if delta > best_delta {
            best_delta = delta;
            best_idx = ci;
        }
    }
    Ok(ElementDecision {
        element: kappa,
        best: cands[best_idx].clone(),
        delta: best_delta,
        patch_newton,
    })
}

/// Re-solving the patch in the unchanged space must not report an energy
/// reduction; this runs that null tournament for one leaf and returns its
/// delta. Exposed for validation.
pub fn null_refinement_delta<T: Real>(
    prob: &ProblemDef<T>,
    mesh: &Mesh<T>,
    space: &Space,
    degrees: &DegreeVector,
    u: &FeFunction<T>,
    kappa: usize,
    solver: &SolverConfig<T>,
) -> Result<T, SolveError> {
    let p = degrees.get(kappa);
    let refined = mesh.build_refined_patch(kappa).expect("conforming mesh around leaf");
    let plain = mesh.build_patch(kappa).expect("conforming mesh around leaf");
    let pcur = plain.source.iter().map(|&g| degrees.get(g)).max().unwrap_or(p);
    let floor = patch_floor(prob, &refined.local, (p + 2).max(pcur));

    let dref = floored_degrees(&refined, degrees, p + 1);
    let (sref, uref, _) = solve_on_patch(prob, mesh, space, u, &refined, &dref, solver, floor)?;
    let flux = Flux::Averaged { prob, mesh: &refined.local, space: &sref, w: &uref };
    let segments = estimator::region_boundary_segments(&refined.local, refined.local_center, &refined.local);
    let e_hp = estimator::modified_energy(prob, mesh, space, u, &[kappa], &segments, &flux, floor);

    // The "candidate": the patch exactly as it stands in the global space.
    let mut d = DegreeVector::uniform(&plain.local, 1);
    for (li, &ge) in plain.source.iter().enumerate() {
        d.set(li, degrees.get(ge));
    }
    let (sc, uc, _) = solve_on_patch(prob, mesh, space, u, &plain, &d, solver, floor)?;
    let e_c = estimator::modified_energy(
        prob,
        &plain.local,
        &sc,
        &uc,
        &[plain.local_center],
        &segments,
        &flux,
        floor,
    );
    Ok(e_hp - e_c)
}

/// Elements whose reduction exceeds `theta` times the best positive
/// reduction. Nothing is marked when no candidate improves.
pub fn mark<T: Real>(decisions: &[ElementDecision<T>], theta: T) -> Vec<&ElementDecision<T>> {
    let dmax = decisions.iter().fold(T::zero(), |m, d| m.max(d.delta));
    if !(dmax > T::zero()) {
        return Vec::new();
    }
    decisions.iter().filter(|d| d.delta > theta * dmax).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RefineOutcome {
    pub p_steps: usize,
    pub h_steps: usize,
}

/// Applies the chosen refinements in element id order, then restores
/// conformity. A split decision on a green leaf retracts and red-refines
/// its parent instead (green children must not be refined directly); the
/// children inherit the maximum degree of the former closure, and decisions
/// for elements no longer alive are skipped.
pub fn apply_refinements<T: Real>(
    mesh: &mut Mesh<T>,
    degrees: &mut DegreeVector,
    chosen: &[&ElementDecision<T>],
) -> RefineOutcome {
    let mut list: Vec<&ElementDecision<T>> = chosen.to_vec();
    list.sort_by_key(|d| d.element);
    let mut out = RefineOutcome::default();
    for d in list {
        let e = d.element;
        if !mesh.element(e).alive || !mesh.is_leaf(e) {
            continue;
        }
        match &d.best {
            Candidate::P => {
                degrees.set(e, degrees.get(e) + 1);
                out.p_steps += 1;
            }
            Candidate::Hp(t) => {
                if mesh.element(e).kind == ElementKind::Green {
                    let parent = mesh.element(e).parent.expect("green leaves have parents");
                    let kids = mesh.element(parent).children.clone();
                    let lift = kids.iter().map(|&c| degrees.get(c)).max().unwrap_or(1);
                    mesh.ungreen(parent);
                    degrees.set(parent, degrees.get(parent).max(lift));
                    let children = mesh.refine_red(parent).expect("retracted parent is a leaf");
                    for &c in &children {
                        degrees.set(c, lift);
                    }
                } else {
                    let children = mesh.refine_red(e).expect("marked element is a leaf");
                    for (i, &c) in children.iter().enumerate() {
                        degrees.set(c, t[i]);
                    }
                }
                out.h_steps += 1;
            }
        }
    }
    let log = mesh.close_green();
    degrees.apply(&log);
    out
}

/// One row of the convergence history.
#[derive(Clone, Copy, Debug)]
pub struct IterationRecord<T: Real> {
    pub iter: usize,
    pub ndof: usize,
    pub energy: T,
    /// |E - E(u*)| when the exact energy is known.
    pub energy_gap: Option<T>,
    pub errors: Option<ErrorReport<T>>,
    pub newton_iters: usize,
    /// Worst Newton count over all patch solves this iteration.
    pub patch_newton: usize,
    pub marked: usize,
    pub p_steps: usize,
    pub h_steps: usize,
    pub seconds: f64,
}

/// Final state of an adaptive run.
pub struct AdaptState<T: Real> {
    pub mesh: Mesh<T>,
    pub degrees: DegreeVector,
    pub space: Space,
    pub u: FeFunction<T>,
    pub history: Vec<IterationRecord<T>>,
}

/// Runs `refine_steps` adapt iterations (solve, estimate, mark, refine) and
/// one final solve, returning `refine_steps + 1` history records and the
/// final discrete solution.
pub fn run_adaptive<T: Real>(
    prob: &ProblemDef<T>,
    cfg: &AdaptConfig<T>,
    refine_steps: usize,
) -> Result<AdaptState<T>, SolveError> {
    run_adaptive_observed(prob, cfg, refine_steps, &mut |_, _, _, _, _| {})
}

/// Like [`run_adaptive`], but calls `observe` after each solve with the mesh,
/// degrees, space and solution of that iteration, before any refinement.
pub fn run_adaptive_observed<T: Real>(
    prob: &ProblemDef<T>,
    cfg: &AdaptConfig<T>,
    refine_steps: usize,
    observe: &mut dyn FnMut(usize, &Mesh<T>, &DegreeVector, &Space, &FeFunction<T>),
) -> Result<AdaptState<T>, SolveError> {
    let mut mesh: Mesh<T> = prob.initial_mesh.build();
    let mut degrees = DegreeVector::uniform(&mesh, prob.initial_degree);
    let mut history = Vec::new();
    let mut last: Option<(Space, FeFunction<T>)> = None;

    for it in 0..=refine_steps {
        let t0 = Instant::now();
        let space = build_space(&mesh, &degrees);
        let faces = mesh.domain_boundary_faces();
        let datum = |_e: usize, _f: usize, x: [T; 2]| (prob.dirichlet)(x);
        let cons = constrain_faces(&mesh, &space, &faces, &datum);
        let (u, rep) = solve::solve(prob, &mesh, &space, &cons, None, &cfg.solver, 0)?;
        let errors = estimator::error_norms(prob, &mesh, &space, &u);
        let energy_gap = prob.exact_energy.map(|ee| (rep.energy - ee).abs());
        observe(it, &mesh, &degrees, &space, &u);

        let mut marked = 0usize;
        let mut patch_newton = 0usize;
        let mut outcome = RefineOutcome::default();
        if it < refine_steps {
            let leaves = mesh.leaves();
            let decisions: Result<Vec<_>, SolveError> = leaves
                .par_iter()
                .map(|&k| estimate_element(prob, &mesh, &space, &degrees, &u, k, it, cfg))
                .collect();
            let decisions = decisions?;
            patch_newton = decisions.iter().map(|d| d.patch_newton).max().unwrap_or(0);
            let chosen = mark(&decisions, cfg.theta);
            marked = chosen.len();
            outcome = apply_refinements(&mut mesh, &mut degrees, &chosen);
        }
        history.push(IterationRecord {
            iter: it,
            ndof: space.ndof,
            energy: rep.energy,
            energy_gap,
            errors,
            newton_iters: rep.newton_iters,
            patch_newton,
            marked,
            p_steps: outcome.p_steps,
            h_steps: outcome.h_steps,
            seconds: t0.elapsed().as_secs_f64(),
        });
        last = Some((space, u));
    }

    let (space, u) = last.expect("at least one iteration ran");
    Ok(AdaptState { mesh, degrees, space, u, history })
}
