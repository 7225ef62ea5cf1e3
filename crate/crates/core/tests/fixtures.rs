//! The checked-in GSM8K-shaped trace fixture: canonical round trip and
//! replay costs against a walk of the raw JSON.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use steproute::costs::CostBasis;
use steproute::env::{Environment, TraceEnv};
use steproute::features::{FeatureBuilder, NormStats};
use steproute::policy::{AlwaysContinue, AlwaysEscalate};
use steproute::rollout::run_episode;
use steproute::trace::{encode_traces, load_trace_file, TraceTree};
use steproute::Error;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/gsm8k_mini.jsonl")
}

fn fixture_text() -> String {
    std::fs::read_to_string(fixture_path()).unwrap()
}

fn env(trees: Vec<TraceTree>, basis: CostBasis) -> TraceEnv {
    let norm = NormStats::fit(trees.iter().flat_map(|t| t.steps()).map(|s| s.uncertainty));
    TraceEnv::new(trees, FeatureBuilder::new(8, 2, norm), basis).unwrap()
}

/// Cost of following `first` at the first routed decision and `continue`
/// afterwards, read straight off the JSON.
fn json_path_cost(tree: &Value, first: &str, basis: CostBasis) -> Option<f64> {
    let pool = tree["model_pool"].as_array().unwrap();
    let bill = |model: usize, step: &Value| -> f64 {
        let m = &pool[model];
        let get = |k: &str| step[k].as_u64().unwrap() as f64;
        match basis {
            CostBasis::Flops => 2.0 * m["param_count"].as_u64().unwrap() as f64 * get("output_tokens_billed") / 1e12,
            CostBasis::Api => match m.get("pricing") {
                Some(p) => {
                    let rate = |k: &str| p[k].as_f64().unwrap();
                    (get("input_tokens_billed") * rate("input_per_mtok")
                        + get("cached_tokens_billed") * rate("cached_input_per_mtok")
                        + get("output_tokens_billed") * rate("output_per_mtok"))
                        / 1e6
                }
                None => 0.0,
            },
        }
    };
    let root = &tree["root"]["children"]["continue"];
    let mut total = bill(0, &root["step"]);
    let mut node = &root["node"];
    let mut model = 0;
    let mut decision = 0;
    while !node["children"].as_object().unwrap().is_empty() {
        let key = if decision == 0 { first } else { "continue" };
        let branch = node["children"].get(key)?;
        if key != "continue" {
            model = 1;
        }
        total += bill(model, &branch["step"]);
        node = &branch["node"];
        decision += 1;
    }
    Some(total)
}

#[test]
fn fixture_round_trips_byte_for_byte() {
    let trees = load_trace_file(fixture_path()).unwrap();
    assert_eq!(trees.len(), 10);
    assert_eq!(encode_traces(&trees), fixture_text());
}

#[test]
fn replay_costs_match_json_walk() {
    let text = fixture_text();
    let raw: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for basis in [CostBasis::Flops, CostBasis::Api] {
        let mut e = env(load_trace_file(fixture_path()).unwrap(), basis);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for tree in &raw {
            let log = run_episode(&mut e, &AlwaysContinue { num_models: 2 }, 0, &mut rng).unwrap();
            let expect = json_path_cost(tree, "continue", basis).unwrap();
            assert!((log.total_cost() - expect).abs() < 1e-9, "{basis:?}: {} vs {expect}", log.total_cost());
        }
        assert!(matches!(e.reset(0), Err(Error::Exhausted)));

        e.rewind();
        let mut aborted = 0;
        for tree in &raw {
            match run_episode(&mut e, &AlwaysEscalate { num_models: 2 }, 0, &mut rng) {
                Ok(log) => {
                    let expect = json_path_cost(tree, "escalate:1", basis).unwrap();
                    assert!((log.total_cost() - expect).abs() < 1e-9);
                }
                Err(Error::MissingBranch { .. }) => {
                    assert!(json_path_cost(tree, "escalate:1", basis).is_none());
                    aborted += 1;
                }
                Err(other) => panic!("{other}"),
            }
        }
        assert_eq!(aborted, 1);
        assert_eq!(e.missing_branches(), 1);
    }
}

#[test]
fn replay_labels_match_leaves() {
    let trees = load_trace_file(fixture_path()).unwrap();
    let mut e = env(trees.clone(), CostBasis::Flops);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for tree in &trees {
        let log = run_episode(&mut e, &AlwaysContinue { num_models: 2 }, 0, &mut rng).unwrap();
        let mut node = &tree.root;
        while let Some(b) = node.children.get(&steproute::Action::Continue) {
            node = &b.node;
        }
        assert_eq!(Some(log.terminal), node.terminal);
        assert_eq!(log.len(), tree.max_routed_steps());
    }
}
