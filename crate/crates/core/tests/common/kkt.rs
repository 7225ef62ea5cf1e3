//! Two-dimensional constrained trust-region problems solved by geometry.

pub struct Problem {
    pub h: [[f64; 2]; 2],
    pub g: [f64; 2],
    pub b: [f64; 2],
    pub c: f64,
    pub delta: f64,
}

pub fn inv2(h: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    [(h[1][1] * v[0] - h[0][1] * v[1]) / det, (-h[1][0] * v[0] + h[0][0] * v[1]) / det]
}

pub fn quad(h: [[f64; 2]; 2], x: [f64; 2]) -> f64 {
    0.5 * (x[0] * (h[0][0] * x[0] + h[0][1] * x[1]) + x[1] * (h[1][0] * x[0] + h[1][1] * x[1]))
}

fn d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Minimizer by enumerating the boundary candidates of the feasible set
/// {c + bᵀx ≤ 0} ∩ {½xᵀHx ≤ δ}: a linear objective over this convex set is
/// minimized either at the trust-region-only optimum (if it satisfies the
/// linear constraint) or at one of the two points where the line meets the
/// ellipse. With an empty feasible set the answer is the step that most
/// decreases bᵀx inside the ellipse.
pub fn kkt_oracle(p: &Problem) -> ([f64; 2], bool) {
    // H = LLᵀ; y = Lᵀx turns the ellipse into the disc |y|² ≤ 2δ
    let l00 = p.h[0][0].sqrt();
    let l10 = p.h[1][0] / l00;
    let l11 = (p.h[1][1] - l10 * l10).sqrt();
    let to_x = |y: [f64; 2]| {
        // solve Lᵀx = y
        let x1 = y[1] / l11;
        [(y[0] - l10 * x1) / l00, x1]
    };
    let linv = |v: [f64; 2]| {
        // solve L w = v
        let w0 = v[0] / l00;
        [w0, (v[1] - l10 * w0) / l11]
    };
    let r = (2.0 * p.delta).sqrt();
    let gy = linv(p.g);
    let wy = linv(p.b);
    let gy_norm = d2(gy, gy).sqrt();
    let tr = to_x([-r * gy[0] / gy_norm, -r * gy[1] / gy_norm]);
    if p.c + d2(p.b, tr) <= 1e-12 {
        return (tr, false);
    }
    let w2 = d2(wy, wy);
    let foot = [-p.c * wy[0] / w2, -p.c * wy[1] / w2];
    let rem = 2.0 * p.delta - p.c * p.c / w2;
    if rem < 0.0 {
        let wn = w2.sqrt();
        return (to_x([-r * wy[0] / wn, -r * wy[1] / wn]), true);
    }
    let t = rem.sqrt();
    let perp = [-wy[1] / w2.sqrt(), wy[0] / w2.sqrt()];
    let cands = [to_x([foot[0] + t * perp[0], foot[1] + t * perp[1]]), to_x([foot[0] - t * perp[0], foot[1] - t * perp[1]])];
    let best = if d2(p.g, cands[0]) <= d2(p.g, cands[1]) { cands[0] } else { cands[1] };
    (best, false)
}
