// Temporary diagnostic: measure the Dirichlet trace defect of the adaptive
// ex2 state and its first order energy effect. If the energy undershoot
// matches the boundary flux pairing with (u_h - g), the negative gap is the
// trace interpolation crime.

use hp_energy_core::adapt::{run_adaptive, AdaptConfig};
use hp_energy_core::forms::builtin;
use hp_energy_core::quadrature;

fn main() {
    let prob = builtin::<f64>("ex2").unwrap();
    let cfg = AdaptConfig::<f64>::default();
    let state = run_adaptive(&prob, &cfg, 12).unwrap();
    let last = state.history.last().unwrap();
    println!(
        "ndof {}  gap(signed) {:+.4e}",
        last.ndof,
        last.energy - prob.exact_energy.unwrap()
    );

    let mesh = &state.mesh;
    let rule = quadrature::interval_rule::<f64>(24);
    let exact = prob.exact.clone().unwrap();
    let mut l2_trace = 0.0;
    let mut de_pred = 0.0;
    let mut per_edge: Vec<(f64, f64, usize, f64)> = Vec::new(); // contrib, h, p, mid-r
    for (e, f) in mesh.domain_boundary_faces() {
        let verts = mesh.verts(e);
        let (va, vb) = (verts[f], verts[(f + 1) % 3]);
        let (xa, xb) = (mesh.vertex(va), mesh.vertex(vb));
        let len = ((xb[0] - xa[0]).powi(2) + (xb[1] - xa[1]).powi(2)).sqrt();
        let p_edge = state.space.elem_dofs(e).layout.edge_p[f];
        let (mut l2_e, mut de_e) = (0.0, 0.0);
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let s = 0.5 * (pt[0] + 1.0);
            let x = [xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])];
            let (uh, _) = state.u.eval_phys(mesh, &state.space, e, x);
            let (g, grad_star) = exact(x);
            let d = uh - g;
            // outward normal flux of the exact solution
            let sigma = (prob.mu.df)(grad_star);
            let (n, _) = mesh.face_normal(e, f);
            let sn = sigma[0] * n[0] + sigma[1] * n[1];
            l2_e += w * 0.5 * len * d * d;
            de_e += w * 0.5 * len * sn * d;
        }
        l2_trace += l2_e;
        de_pred += de_e;
        let mid = [(xa[0] + xb[0]) * 0.5, (xa[1] + xb[1]) * 0.5];
        per_edge.push((de_e, len, p_edge, (mid[0] * mid[0] + mid[1] * mid[1]).sqrt()));
    }
    println!("trace L2 error^2 {l2_trace:.3e}  (-> L2 {:.3e})", l2_trace.sqrt());
    println!("first order dE from trace defect: {de_pred:+.4e}");
    per_edge.sort_by(|a, b| b.0.abs().partial_cmp(&a.0.abs()).unwrap());
    println!("worst edges by |dE| (contrib, h, edge p, mid radius):");
    for &(c, h, p, r) in per_edge.iter().take(10) {
        println!("  {c:+.3e}  h {h:.3}  p {p}  r {r:.2}");
    }
}
