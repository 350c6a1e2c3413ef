//! Linear algebra checks: dense Cholesky, the skyline LDLT against a dense
//! reference on random SPD systems, CG agreement, and RCM ordering.

use hp_energy_core::linalg::{
    cg_jacobi, cholesky_solve_dense, reverse_cuthill_mckee, solve_spd, LinalgError, SkylineFactor,
    SymSystem,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Random banded SPD matrix (diagonally dominant) as both a dense copy and a
/// [`SymSystem`].
fn random_spd(n: usize, band: usize, rng: &mut StdRng) -> (Vec<Vec<f64>>, SymSystem<f64>) {
    let mut dense: Vec<Vec<f64>> = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..(i + band + 1).min(n) {
            if rng.gen_bool(0.8) {
                let v = rng.gen_range(-1.0..1.0);
                dense[i][j] = v;
                dense[j][i] = v;
            }
        }
    }
    for i in 0..n {
        let off: f64 = dense[i].iter().map(|v| v.abs()).sum();
        dense[i][i] = off + rng.gen_range(0.5..2.0);
    }
    let mut sys = SymSystem::new(n);
    for i in 0..n {
        for j in i..n {
            if dense[i][j] != 0.0 {
                sys.add(i, j, dense[i][j]);
            }
        }
    }
    (dense, sys)
}

fn residual_inf(dense: &[Vec<f64>], x: &[f64], b: &[f64]) -> f64 {
    let n = b.len();
    (0..n)
        .map(|i| {
            let ax: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            (ax - b[i]).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn dense_cholesky_solves_a_known_system() {
    // A = [[4,2],[2,3]] maps [1,2] to [8,8].
    let mut a: Vec<Vec<f64>> = vec![vec![4.0, 2.0], vec![2.0, 3.0]];
    let mut b: Vec<f64> = vec![8.0, 8.0];
    cholesky_solve_dense(&mut a, &mut b).unwrap();
    assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 2.0).abs() < 1e-14);
}

#[test]
fn dense_cholesky_rejects_indefinite_matrices() {
    let mut a = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
    let mut b = vec![1.0, 1.0];
    match cholesky_solve_dense(&mut a, &mut b) {
        Err(LinalgError::NotPositiveDefinite { .. }) => {}
        other => panic!("expected NotPositiveDefinite, got {other:?}"),
    }
}

#[test]
fn sym_system_entries_are_orientation_free() {
    let mut sys = SymSystem::new(3);
    sys.add(2, 1, 5.0);
    sys.add(1, 2, 1.0);
    sys.add(0, 0, 2.0);
    let x = [1.0, 1.0, 1.0];
    let mut y = [0.0; 3];
    sys.matvec(&x, &mut y);
    // Row 1 and row 2 both see the accumulated off-diagonal 6.
    assert_eq!(y, [2.0, 6.0, 6.0]);
    assert_eq!(sys.diag(0), 2.0);
}

#[test]
fn matvec_is_symmetric() {
    let mut rng = StdRng::seed_from_u64(31);
    let (_, sys) = random_spd(17, 4, &mut rng);
    let x: Vec<f64> = (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut ax = vec![0.0; 17];
    let mut ay = vec![0.0; 17];
    sys.matvec(&x, &mut ax);
    sys.matvec(&y, &mut ay);
    let xay: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
    let yax: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
    assert!((xay - yax).abs() < 1e-12);
}

#[test]
fn skyline_matches_dense_on_random_spd_systems() {
    let mut rng = StdRng::seed_from_u64(2024);
    for n in [1, 2, 3, 5, 13, 29, 47] {
        for _ in 0..4 {
            let (dense, sys) = random_spd(n, 3 + n / 8, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();

            let factor = SkylineFactor::new(&sys).unwrap();
            let x = factor.solve(&b);
            assert!(residual_inf(&dense, &x, &b) < 1e-10, "n={n}");

            let mut adense = dense.clone();
            let mut xd = b.clone();
            cholesky_solve_dense(&mut adense, &mut xd).unwrap();
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-9, "n={n} i={i}");
            }
        }
    }
}

#[test]
fn skyline_rejects_indefinite_matrices() {
    let mut sys = SymSystem::new(2);
    sys.add(0, 0, 1.0);
    sys.add(1, 1, 1.0);
    sys.add(0, 1, 2.0);
    match SkylineFactor::new(&sys) {
        Err(LinalgError::NotPositiveDefinite { .. }) => {}
        other => panic!("expected NotPositiveDefinite, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn cg_agrees_with_the_direct_solver() {
    let mut rng = StdRng::seed_from_u64(99);
    let (dense, sys) = random_spd(31, 5, &mut rng);
    let b: Vec<f64> = (0..31).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = cg_jacobi(&sys, &b, 1e-13, 10_000).unwrap();
    assert!(residual_inf(&dense, &x, &b) < 1e-10);
    let xd = solve_spd(&sys, &b).unwrap();
    for i in 0..31 {
        assert!((x[i] - xd[i]).abs() < 1e-8);
    }
}

#[test]
fn solve_spd_refines_to_small_residuals() {
    let mut rng = StdRng::seed_from_u64(5150);
    for n in [8, 24, 64] {
        let (dense, sys) = random_spd(n, 6, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = solve_spd(&sys, &b).unwrap();
        assert!(residual_inf(&dense, &x, &b) < 1e-11, "n={n}");
    }
}

#[test]
fn rcm_returns_a_permutation_and_shrinks_the_band() {
    // A path graph labeled by a fixed shuffle has large bandwidth; RCM must
    // recover an ordering with bandwidth 1.
    let n = 20;
    let labels: Vec<usize> = {
        let mut v: Vec<usize> = (0..n).collect();
        let mut rng = StdRng::seed_from_u64(8);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            v.swap(i, j);
        }
        v
    };
    let mut sys = SymSystem::new(n);
    for i in 0..n {
        sys.add(i, i, 2.0);
    }
    for w in labels.windows(2) {
        sys.add(w[0], w[1], -1.0);
    }
    let perm = reverse_cuthill_mckee(&sys);
    let mut seen = vec![false; n];
    for &p in &perm {
        assert!(!seen[p], "permutation repeats {p}");
        seen[p] = true;
    }
    let mut iperm = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        iperm[old] = new;
    }
    let bandwidth = labels
        .windows(2)
        .map(|w| iperm[w[0]].abs_diff(iperm[w[1]]))
        .max()
        .unwrap();
    assert_eq!(bandwidth, 1);
}

#[test]
fn restrict_drops_constrained_rows_and_columns() {
    let mut sys = SymSystem::new(4);
    for i in 0..4 {
        sys.add(i, i, (i + 1) as f64);
    }
    sys.add(0, 1, 0.5);
    sys.add(1, 2, 0.25);
    sys.add(2, 3, 0.125);
    // Keep dofs 1 and 3 as 0 and 1 of the reduced system.
    let idx_map = [usize::MAX, 0, usize::MAX, 1];
    let small = sys.restrict(&idx_map, 2);
    assert_eq!(small.n(), 2);
    assert_eq!(small.diag(0), 2.0);
    assert_eq!(small.diag(1), 4.0);
    let mut y = [0.0; 2];
    small.matvec(&[1.0, 1.0], &mut y);
    // Dof pair (1,3) had no coupling entry, so rows are pure diagonal.
    assert_eq!(y, [2.0, 4.0]);
}
