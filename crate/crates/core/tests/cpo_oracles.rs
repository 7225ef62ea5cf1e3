//! Conjugate gradient and the constrained step against independent solvers.

mod common;

use common::kkt::*;
use common::*;
use rand::Rng;
use steproute::cpo::{conjugate_gradient, constrained_step, DualCase};

#[test]
fn cg_matches_direct_solve() {
    let mut rng = rng(1);
    for n in [2, 5, 10, 20] {
        for _ in 0..10 {
            let a = random_spd(&mut rng, n);
            let b = random_vec(&mut rng, n);
            let oracle = dense_solve(&a, &b);
            let r = conjugate_gradient(|v| Ok(matvec(&a, v)), &b, 10 * n, 1e-14).unwrap();
            for (x, y) in r.x.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-8, "n={n}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn cg_rejects_indefinite_operator() {
    let r = conjugate_gradient(|v| Ok(v.iter().map(|x| -x).collect()), &[1.0, 2.0], 5, 1e-12);
    assert!(matches!(r, Err(steproute::Error::Numeric(_))));
}

#[test]
fn constrained_step_matches_kkt_oracle() {
    let mut rng = rng(7);
    let mut counts = [0usize; 3];
    for _ in 0..2000 {
        let a = random_spd(&mut rng, 2);
        let p = Problem {
            h: [[a[0][0], a[0][1]], [a[1][0], a[1][1]]],
            g: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            b: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            c: rng.random_range(-0.3..0.3),
            delta: rng.random_range(0.001..0.05),
        };
        let hg = inv2(p.h, p.g);
        let hb = inv2(p.h, p.b);
        let sol = constrained_step(&p.g, &p.b, &hg, &hb, p.c, p.delta);
        let (x, infeasible) = kkt_oracle(&p);
        for i in 0..2 {
            assert!((sol.step[i] - x[i]).abs() < 1e-6, "{:?}: {:?} vs {x:?} ({:?})", (p.g, p.b, p.c, p.delta), sol.step, sol.case);
        }
        assert_eq!(infeasible, sol.case == DualCase::Recovery);
        let idx = match sol.case {
            DualCase::Objective => 0,
            DualCase::Binding => 1,
            _ => 2,
        };
        counts[idx] += 1;
        // returned steps respect the trust region
        assert!(quad(p.h, [sol.step[0], sol.step[1]]) <= p.delta * (1.0 + 1e-9));
    }
    assert!(counts.iter().all(|c| *c > 50), "every dual case exercised: {counts:?}");
}

#[test]
fn zero_gradients_give_no_op() {
    let z = [0.0, 0.0];
    let sol = constrained_step(&z, &z, &z, &z, -0.1, 0.01);
    assert_eq!(sol.case, DualCase::NoOp);
    assert_eq!(sol.step, vec![0.0, 0.0]);
}
