//! The constrained trust-region step on a two-parameter problem, in each of
//! its dual cases.

use steproute::cpo::constrained_step;

fn solve(h: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    [(h[1][1] * v[0] - h[0][1] * v[1]) / det, (h[0][0] * v[1] - h[1][0] * v[0]) / det]
}

fn main() {
    let h = [[2.0, 0.3], [0.3, 1.0]];
    let g = [1.0, -0.5];
    let b = [-0.2, -1.0];
    let delta = 0.01;
    // c is the constraint value at the current parameters, feasible when ≤ 0
    for c in [-0.5, 0.1, 0.5, 0.0] {
        let gb = if c == 0.0 { [0.0, 0.0] } else { g };
        let sol = constrained_step(&gb, &b, &solve(h, gb), &solve(h, b), c, delta);
        let x = &sol.step;
        let kl = 0.5 * (h[0][0] * x[0] * x[0] + 2.0 * h[0][1] * x[0] * x[1] + h[1][1] * x[1] * x[1]);
        println!(
            "c = {c:>5}: {:?} step [{:.4}, {:.4}]  ½xᵀHx = {kl:.5}  constraint after {:.4}",
            sol.case,
            x[0],
            x[1],
            c + b[0] * x[0] + b[1] * x[1]
        );
    }
}
