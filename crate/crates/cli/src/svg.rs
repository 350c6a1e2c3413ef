//! SVG rendering of hp meshes: one colored cell per leaf element with a
//! degree legend, plus an optional zoom window.

use std::fmt::Write as _;

use hp_energy_core::mesh::Mesh;

/// Fill colors by polynomial degree; degree `p` uses entry `(p - 1) % 10`.
pub const PALETTE: [&str; 10] = [
    "#4575b4", "#74add1", "#abd9e9", "#e0f3f8", "#ffffbf", "#fee090", "#fdae61", "#f46d43",
    "#d73027", "#a50026",
];

pub fn color_for(degree: usize) -> &'static str {
    PALETTE[(degree.max(1) - 1) % PALETTE.len()]
}

const PLOT: f64 = 600.0;
const MARGIN: f64 = 20.0;
const LEGEND_W: f64 = 110.0;
const BAND_H: f64 = 48.0;

/// Renders the leaf cells of `mesh`, filled by `deg_of(leaf)`. `zoom` is an
/// optional `[xmin, ymin, xmax, ymax]` window in mesh coordinates (for 1D
/// meshes only the x range is used).
pub fn mesh_svg(mesh: &Mesh<f64>, deg_of: &dyn Fn(usize) -> usize, zoom: Option<[f64; 4]>) -> String {
    let leaves = mesh.leaves();
    let degrees: Vec<usize> = leaves.iter().map(|&e| deg_of(e)).collect();
    let legend: Vec<usize> = {
        let mut d = degrees.clone();
        d.sort_unstable();
        d.dedup();
        d
    };

    // Window in mesh coordinates.
    let (x0, y0, x1, y1) = match zoom {
        Some([a, b, c, d]) => (a, b, c, d),
        None => {
            let (mut a, mut b, mut c, mut d) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for v in 0..mesh.num_vertices() {
                let p = mesh.vertex(v);
                a = a.min(p[0]);
                b = b.min(p[1]);
                c = c.max(p[0]);
                d = d.max(p[1]);
            }
            (a, b, c, d)
        }
    };
    assert!(x1 > x0, "empty x range in render window");
    if mesh.dim() == 2 {
        assert!(y1 > y0, "empty y range in render window");
    }

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");

    if mesh.dim() == 1 {
        render_1d(&mut out, mesh, &leaves, &degrees, &legend, x0, x1);
        return out;
    }

    let scale = (PLOT / (x1 - x0)).min(PLOT / (y1 - y0));
    let (pw, ph) = ((x1 - x0) * scale, (y1 - y0) * scale);
    let width = MARGIN + pw + MARGIN + LEGEND_W;
    let height = (ph + 2.0 * MARGIN).max(MARGIN + 22.0 * legend.len() as f64 + MARGIN);
    let px = |x: f64| MARGIN + (x - x0) * scale;
    // SVG y grows downward; mesh y grows upward.
    let py = |y: f64| MARGIN + (y1 - y) * scale;

    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<defs><clipPath id=\"plot\"><rect x=\"{:.2}\" y=\"{:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\"/></clipPath></defs>",
        MARGIN, MARGIN
    );
    out.push_str("<g clip-path=\"url(#plot)\" stroke=\"#333333\" stroke-width=\"0.6\">\n");
    for (i, &e) in leaves.iter().enumerate() {
        let vs = mesh.verts(e);
        let mut pts = String::new();
        for &v in vs {
            let p = mesh.vertex(v);
            let _ = write!(pts, "{:.2},{:.2} ", px(p[0]), py(p[1]));
        }
        let _ = writeln!(
            out,
            "<polygon points=\"{}\" fill=\"{}\"/>",
            pts.trim_end(),
            color_for(degrees[i])
        );
    }
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>",
        MARGIN, MARGIN
    );
    render_legend(&mut out, &legend, MARGIN + pw + MARGIN, MARGIN);
    out.push_str("</svg>\n");
    out
}

fn render_1d(
    out: &mut String,
    mesh: &Mesh<f64>,
    leaves: &[usize],
    degrees: &[usize],
    legend: &[usize],
    x0: f64,
    x1: f64,
) {
    let width = MARGIN + PLOT + MARGIN + LEGEND_W;
    let height = (MARGIN + BAND_H + 2.0 * MARGIN).max(MARGIN + 22.0 * legend.len() as f64 + MARGIN);
    let scale = PLOT / (x1 - x0);
    let px = |x: f64| MARGIN + (x - x0) * scale;
    let (top, bot) = (MARGIN, MARGIN + BAND_H);

    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<defs><clipPath id=\"plot\"><rect x=\"{MARGIN:.2}\" y=\"{top:.2}\" width=\"{PLOT:.2}\" height=\"{BAND_H:.2}\"/></clipPath></defs>"
    );

    // Sort cells by left endpoint so labels land in reading order.
    let mut order: Vec<usize> = (0..leaves.len()).collect();
    order.sort_by(|&a, &b| {
        let xa = mesh.vertex(mesh.verts(leaves[a])[0])[0].min(mesh.vertex(mesh.verts(leaves[a])[1])[0]);
        let xb = mesh.vertex(mesh.verts(leaves[b])[0])[0].min(mesh.vertex(mesh.verts(leaves[b])[1])[0]);
        xa.partial_cmp(&xb).unwrap()
    });

    out.push_str("<g clip-path=\"url(#plot)\" stroke=\"#333333\" stroke-width=\"0.6\">\n");
    for &i in &order {
        let vs = mesh.verts(leaves[i]);
        let (a, b) = (mesh.vertex(vs[0])[0], mesh.vertex(vs[1])[0]);
        let (l, r) = (a.min(b), a.max(b));
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{BAND_H:.2}\" fill=\"{}\"/>",
            px(l),
            (r - l) * scale,
            color_for(degrees[i])
        );
    }
    out.push_str("</g>\n");

    // Degree labels where the cell is wide enough to hold them.
    for &i in &order {
        let vs = mesh.verts(leaves[i]);
        let (a, b) = (mesh.vertex(vs[0])[0], mesh.vertex(vs[1])[0]);
        let (l, r) = (a.min(b), a.max(b));
        if (r - l) * scale >= 16.0 {
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>",
                px(0.5 * (l + r)),
                0.5 * (top + bot) + 4.0,
                degrees[i]
            );
        }
    }
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN:.2}\" y=\"{top:.2}\" width=\"{PLOT:.2}\" height=\"{BAND_H:.2}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>"
    );
    render_legend(out, legend, MARGIN + PLOT + MARGIN, MARGIN);
    out.push_str("</svg>\n");
}

fn render_legend(out: &mut String, degrees: &[usize], x: f64, y: f64) {
    for (i, &p) in degrees.iter().enumerate() {
        let yy = y + 22.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{yy:.2}\" width=\"14\" height=\"14\" fill=\"{}\" stroke=\"#333333\" stroke-width=\"0.6\"/>",
            color_for(p)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" font-family=\"sans-serif\">p = {p}</text>",
            x + 20.0,
            yy + 11.5
        );
    }
}
