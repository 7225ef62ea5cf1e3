//! Property tests for invariants that must hold on every input.

mod common;

use proptest::prelude::*;
use rand::Rng;
use steproute::calibrate::{CalibratorState, Schedule};
use steproute::env::{Environment, SyntheticEnv};
use steproute::features::NormStats;
use steproute::nn::PolicyHead;
use steproute::policy::{ThresholdPolicy, UniformRandom};
use steproute::rollout::run_episode;
use steproute::trace::{Branch, ModelId, StepRecord, TerminalLabel, TraceNode, TraceTree, T_MAX};
use steproute::vtrace::{vtrace_episode, VTraceConfig};
use steproute::Action;

fn random_step<R: Rng>(rng: &mut R, fin: bool, labeled: bool) -> StepRecord {
    StepRecord {
        text_len_tokens: rng.random_range(1..400),
        uncertainty: rng.random_range(-5.0..5.0),
        is_final_answer: fin,
        verifier_bit: match rng.random_range(0..3) {
            0 if !labeled => None,
            0 | 1 => Some(false),
            _ => Some(true),
        },
        input_tokens_billed: rng.random_range(0..5000),
        cached_tokens_billed: rng.random_range(0..5000),
        output_tokens_billed: rng.random_range(0..400),
    }
}

struct Shape {
    leaf_depth: usize,
    k: usize,
    keep: f64,
    labeled: bool,
}

/// Node after step `depth - 1` by `model`; escalations are expanded with
/// probability `shape.keep`.
fn random_node<R: Rng>(rng: &mut R, depth: usize, model: usize, shape: &Shape) -> TraceNode {
    if depth == shape.leaf_depth {
        return TraceNode::leaf(
            depth,
            TerminalLabel { routed_correct: rng.random_bool(0.5), large_model_correct: rng.random_bool(0.5) },
        );
    }
    let mut children = Vec::new();
    for a in Action::available(model, shape.k) {
        if a.is_escalation() && !rng.random_bool(shape.keep) {
            continue;
        }
        let step = random_step(rng, depth + 1 == shape.leaf_depth, shape.labeled);
        children.push((a, Branch { step, node: random_node(rng, depth + 1, a.target(model), shape) }));
    }
    TraceNode::inner(depth, children)
}

fn random_tree(seed: u64, k: usize, horizon: usize, keep: f64) -> TraceTree {
    let mut rng = common::rng(seed);
    let shape = Shape { leaf_depth: horizon + 1, k, keep, labeled: rng.random_bool(0.5) };
    let y0 = random_step(&mut rng, horizon == 0, shape.labeled);
    let first = random_node(&mut rng, 1, 0, &shape);
    TraceTree {
        problem_id: format!("p{seed}"),
        difficulty: rng.random_bool(0.5).then(|| rng.random_range(0.0..1.0)),
        verifier_labeled: shape.labeled,
        model_pool: (0..k)
            .map(|i| ModelId { index: i, param_count: 1_000_000 * (i as u64 + 1), pricing: None })
            .collect(),
        root: TraceNode::inner(0, [(Action::Continue, Branch { step: y0, node: first })]),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_tree_round_trips(seed in any::<u64>(), k in 1usize..4, horizon in 0usize..4, keep in 0.0f64..1.0) {
        let tree = random_tree(seed, k, horizon, keep);
        tree.validate(T_MAX).unwrap();
        let line = tree.to_canonical_line();
        let back = TraceTree::from_line(&line, 1).unwrap();
        prop_assert_eq!(&back, &tree);
        prop_assert_eq!(back.to_canonical_line(), line);
    }

    #[test]
    fn model_index_never_decreases(seed in any::<u64>(), horizon in 1usize..8, k in 2usize..5) {
        let mut cfg = common::small_config(horizon, 5);
        cfg.step_costs = (1..=k).map(|i| i as f64).collect();
        for s in &mut cfg.states {
            s.success = (0..k).map(|i| 0.5 + 0.4 * i as f64 / k as f64).collect();
        }
        let mut env = SyntheticEnv::new(cfg).unwrap();
        let mut rng = common::rng(seed);
        let log = run_episode(&mut env, &UniformRandom { num_models: k }, seed, &mut rng).unwrap();
        let mut current = 0;
        for step in &log.steps {
            prop_assert_eq!(step.observation.model_index, current);
            let next = step.action.target(current);
            prop_assert!(next >= current && next < k);
            current = next;
        }
        prop_assert_eq!(env.current_model(), current);
        prop_assert_eq!(log.len(), horizon);
    }

    #[test]
    fn action_sets_shrink_as_threshold_rises(seed in any::<u64>(), k in 2usize..5, lo in 0.0f64..=1.0, hi in 0.0f64..=1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let mut rng = common::rng(seed);
        let head = PolicyHead::new(k, &mut rng);
        let obs = common::random_obs(&mut rng, k);
        let loose = ThresholdPolicy::new(head.clone(), lo);
        let strict = ThresholdPolicy::new(head, hi);
        let wide = loose.action_set(&obs);
        let narrow = strict.action_set(&obs);
        prop_assert!(!narrow.is_empty());
        prop_assert!(narrow.iter().all(|a| wide.contains(a)));
        if strict.route_inference(&obs).is_escalation() {
            prop_assert!(loose.route_inference(&obs).is_escalation());
        }
        let s = loose.filtered_distribution(&obs);
        prop_assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, p) in s.actions.iter().zip(&s.probs) {
            prop_assert_eq!(*p > 0.0, wide.contains(a));
        }
    }

    #[test]
    fn standardization_is_shift_invariant(
        xs in prop::collection::vec(-100.0f64..100.0, 2..50),
        shift in -1000.0f64..1000.0,
        y in -100.0f64..100.0,
    ) {
        let a = NormStats::fit(xs.iter().copied());
        let b = NormStats::fit(xs.iter().map(|x| x + shift));
        prop_assert!((a.std - b.std).abs() <= 1e-9 * (1.0 + a.std));
        prop_assert!((a.standardize(y) - b.standardize(y + shift)).abs() < 1e-6);
    }

    #[test]
    fn kappa_moves_by_one_of_two_amounts(
        kappa in 0.0f64..=1.0,
        alpha in 0.001f64..0.5,
        eta in 0.0001f64..1.0,
        covered in prop::collection::vec(any::<bool>(), 1..50),
        inverse_sqrt in any::<bool>(),
    ) {
        let schedule = if inverse_sqrt { Schedule::InverseSqrt } else { Schedule::Fixed };
        let mut s = CalibratorState::new(kappa, alpha, eta, schedule).unwrap();
        for c in covered {
            let before = s.kappa;
            let eta_k = s.step_size();
            let u = s.update(c);
            prop_assert_eq!(u.eta, eta_k);
            let expect = if c { -eta_k * alpha } else { eta_k * (1.0 - alpha) };
            prop_assert!((u.delta - expect).abs() <= 1e-15);
            prop_assert_eq!(s.kappa, (before + u.delta).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn on_policy_vtrace_is_the_return(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..12),
        values_seed in any::<u64>(),
    ) {
        let mut rng = common::rng(values_seed);
        let values: Vec<f64> = rewards.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        let cfg = VTraceConfig::default();
        let out = vtrace_episode(&rewards, &values, &vec![1.0; rewards.len()], &cfg);
        let mut ret = 0.0;
        for s in (0..rewards.len()).rev() {
            ret += rewards[s];
            prop_assert!((out.targets[s] - ret).abs() <= 1e-9 * (1.0 + ret.abs()));
        }
    }
}
