//! Problem, step and trace-tree types, and the line-delimited trace file format.
//!
//! Each line of a trace file is one JSON object with `schema_version: 1` and
//! keys in sorted order, so re-serializing a loaded file is byte-stable.
//!
//! Node depth counts generated steps: the root (depth 0) has exactly one
//! `continue` child holding the initial step `y_0` produced by model 0; a
//! node at depth `d >= 1` sits after step `y_{d-1}`. A root-to-leaf path of
//! leaf depth `d` therefore contains `d - 1` routed steps, which must not
//! exceed `T_max`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Default maximum number of routed steps per episode.
pub const T_MAX: usize = 32;

/// API prices in US cents per 10^6 tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiPricing {
    pub input_per_mtok: f64,
    pub cached_input_per_mtok: f64,
    pub output_per_mtok: f64,
}

impl ApiPricing {
    /// GPT-4.1-mini list prices: $0.40 / $0.10 / $1.60 per 1M tokens.
    pub const GPT_4_1_MINI: ApiPricing = ApiPricing {
        input_per_mtok: 40.0,
        cached_input_per_mtok: 10.0,
        output_per_mtok: 160.0,
    };

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.input_per_mtok,
            self.cached_input_per_mtok,
            self.output_per_mtok,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Validation(format!(
                "pricing rates must be finite and nonnegative: {self:?}"
            )));
        }
        if self.cached_input_per_mtok > self.input_per_mtok {
            return Err(Error::Validation(
                "cached input rate exceeds input rate".into(),
            ));
        }
        Ok(())
    }
}

/// One model of the pool, ordered by increasing capability and cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelId {
    pub index: usize,
    pub param_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pricing: Option<ApiPricing>,
}

/// A single generated reasoning step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub text_len_tokens: u64,
    pub uncertainty: f64,
    pub is_final_answer: bool,
    #[serde(default, with = "opt_bit", skip_serializing_if = "Option::is_none")]
    pub verifier_bit: Option<bool>,
    pub input_tokens_billed: u64,
    pub cached_tokens_billed: u64,
    pub output_tokens_billed: u64,
}

/// Outcome bits attached to every leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalLabel {
    #[serde(with = "bit")]
    pub routed_correct: bool,
    #[serde(with = "bit")]
    pub large_model_correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub step: StepRecord,
    pub node: TraceNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub depth: usize,
    #[serde(default, with = "children_map")]
    pub children: BTreeMap<Action, Branch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalLabel>,
}

impl TraceNode {
    pub fn leaf(depth: usize, label: TerminalLabel) -> Self {
        TraceNode {
            depth,
            children: BTreeMap::new(),
            terminal: Some(label),
        }
    }

    pub fn inner(depth: usize, children: impl IntoIterator<Item = (Action, Branch)>) -> Self {
        TraceNode {
            depth,
            children: children.into_iter().collect(),
            terminal: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceTree {
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
    #[serde(default)]
    pub verifier_labeled: bool,
    pub model_pool: Vec<ModelId>,
    pub root: TraceNode,
}

#[derive(Serialize, Deserialize)]
struct Record {
    schema_version: u32,
    #[serde(flatten)]
    tree: TraceTree,
}

impl TraceTree {
    pub fn num_models(&self) -> usize {
        self.model_pool.len()
    }

    /// Checks every type invariant; `t_max` bounds the routed steps per path.
    pub fn validate(&self, t_max: usize) -> Result<()> {
        let fail = |message: String| Error::InvalidTree {
            problem_id: self.problem_id.clone(),
            message,
        };
        if self.model_pool.is_empty() {
            return Err(fail("empty model pool".into()));
        }
        for (i, m) in self.model_pool.iter().enumerate() {
            if m.index != i {
                return Err(fail(format!("model indices must be dense 0..K-1, found {} at position {i}", m.index)));
            }
            if let Some(p) = &m.pricing {
                p.validate().map_err(|e| fail(e.to_string()))?;
            }
        }
        if let Some(d) = self.difficulty {
            if !(0.0..=1.0).contains(&d) {
                return Err(fail(format!("difficulty {d} outside [0, 1]")));
            }
        }
        if self.root.depth != 0 {
            return Err(fail(format!("root depth is {}", self.root.depth)));
        }
        if self.root.terminal.is_none() {
            if self.root.children.len() != 1 || !self.root.children.contains_key(&Action::Continue) {
                return Err(fail("root must have exactly one `continue` child (the initial step)".into()));
            }
        }
        self.validate_node(&self.root, 0, t_max).map_err(fail)
    }

    fn validate_node(&self, node: &TraceNode, model: usize, t_max: usize) -> std::result::Result<(), String> {
        match (&node.terminal, node.children.is_empty()) {
            (Some(_), false) => {
                return Err(format!("node at depth {} has both a terminal label and children", node.depth))
            }
            (None, true) => return Err(format!("leaf at depth {} has no terminal label", node.depth)),
            _ => {}
        }
        if node.depth > t_max + 1 {
            return Err(format!(
                "path exceeds T_max = {t_max} routed steps (node depth {})",
                node.depth
            ));
        }
        for (action, branch) in &node.children {
            if node.depth > 0 {
                action
                    .validate(model, self.num_models())
                    .map_err(|e| format!("depth {}: {e}", node.depth))?;
            }
            if branch.node.depth != node.depth + 1 {
                return Err(format!(
                    "child depth {} under parent depth {}",
                    branch.node.depth, node.depth
                ));
            }
            let s = &branch.step;
            if !s.uncertainty.is_finite() {
                return Err(format!("non-finite uncertainty at depth {}", branch.node.depth));
            }
            if self.verifier_labeled && s.verifier_bit.is_none() {
                return Err(format!(
                    "verifier-labeled tree has an unlabeled step at depth {}",
                    branch.node.depth
                ));
            }
            let next_model = if node.depth == 0 { 0 } else { action.target(model) };
            self.validate_node(&branch.node, next_model, t_max)?;
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        fn walk(n: &TraceNode) -> usize {
            if n.is_leaf() {
                1
            } else {
                n.children.values().map(|b| walk(&b.node)).sum()
            }
        }
        walk(&self.root)
    }

    /// Longest root-to-leaf path measured in routed steps (initial step excluded).
    pub fn max_routed_steps(&self) -> usize {
        fn walk(n: &TraceNode) -> usize {
            n.children.values().map(|b| walk(&b.node)).max().unwrap_or(n.depth)
        }
        walk(&self.root).saturating_sub(1)
    }

    /// All leaf labels in depth-first order.
    pub fn leaves(&self) -> Vec<&TerminalLabel> {
        fn walk<'a>(n: &'a TraceNode, out: &mut Vec<&'a TerminalLabel>) {
            if let Some(t) = &n.terminal {
                out.push(t);
            }
            for b in n.children.values() {
                walk(&b.node, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Every step record in the tree (depth-first).
    pub fn steps(&self) -> Vec<&StepRecord> {
        fn walk<'a>(n: &'a TraceNode, out: &mut Vec<&'a StepRecord>) {
            for b in n.children.values() {
                out.push(&b.step);
                walk(&b.node, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// The canonical single-line encoding (sorted keys, no whitespace).
    pub fn to_canonical_line(&self) -> String {
        let record = Record {
            schema_version: SCHEMA_VERSION,
            tree: self.clone(),
        };
        // serde_json's default map is ordered, so converting through Value sorts keys.
        let value = serde_json::to_value(&record).expect("trace tree serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn from_line(line: &str, line_no: usize) -> Result<TraceTree> {
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unsupported schema_version {}", record.schema_version),
            });
        }
        Ok(record.tree)
    }
}

/// Parses trace records from text, one per line. Blank lines are ignored.
pub fn parse_traces(text: &str, t_max: usize) -> Result<Vec<TraceTree>> {
    let mut trees = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tree = TraceTree::from_line(line, i + 1)?;
        tree.validate(t_max)?;
        trees.push(tree);
    }
    Ok(trees)
}

pub fn load_trace_file(path: impl AsRef<Path>) -> Result<Vec<TraceTree>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_traces(&text, T_MAX)
}

pub fn encode_traces(trees: &[TraceTree]) -> String {
    let mut out = String::new();
    for t in trees {
        let _ = writeln!(out, "{}", t.to_canonical_line());
    }
    out
}

pub fn save_trace_file(trees: &[TraceTree], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_traces(trees)).map_err(|e| Error::io(path, e))
}

mod bit {
    use super::*;

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!("expected bit 0 or 1, got {other}"))),
        }
    }
}

mod opt_bit {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&u8::from(*b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<bool>, D::Error> {
        match Option::<u8>::deserialize(d)? {
            None => Ok(None),
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            Some(other) => Err(de::Error::custom(format!("expected bit 0 or 1, got {other}"))),
        }
    }
}

mod children_map {
    use super::*;

    pub fn serialize<S: Serializer>(
        children: &BTreeMap<Action, Branch>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(children.len()))?;
        for (action, branch) in children {
            map.serialize_entry(&action.key(), branch)?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<Action, Branch>, D::Error> {
        let raw = BTreeMap::<String, Branch>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                Action::from_key(&k)
                    .map(|a| (a, v))
                    .ok_or_else(|| de::Error::custom(format!("unknown action key `{k}`")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(u: f64, fin: bool) -> StepRecord {
        StepRecord {
            text_len_tokens: 40,
            uncertainty: u,
            is_final_answer: fin,
            verifier_bit: Some(true),
            input_tokens_billed: 100,
            cached_tokens_billed: 0,
            output_tokens_billed: 40,
        }
    }

    fn pool() -> Vec<ModelId> {
        vec![
            ModelId { index: 0, param_count: 1_500_000_000, pricing: None },
            ModelId { index: 1, param_count: 7_000_000_000, pricing: None },
        ]
    }

    fn label(r: bool, m: bool) -> TerminalLabel {
        TerminalLabel { routed_correct: r, large_model_correct: m }
    }

    fn single_leaf_tree() -> TraceTree {
        TraceTree {
            problem_id: "p0".into(),
            difficulty: None,
            verifier_labeled: true,
            model_pool: pool(),
            root: TraceNode::inner(
                0,
                [(
                    Action::Continue,
                    Branch { step: step(1.0, true), node: TraceNode::leaf(1, label(true, true)) },
                )],
            ),
        }
    }

    #[test]
    fn empty_text_is_empty_list() {
        assert!(parse_traces("", T_MAX).unwrap().is_empty());
    }

    #[test]
    fn single_leaf_round_trip() {
        let t = single_leaf_tree();
        let text = encode_traces(std::slice::from_ref(&t));
        assert_eq!(text.lines().count(), 1);
        let back = parse_traces(&text, T_MAX).unwrap();
        assert_eq!(back, vec![t]);
        assert_eq!(back[0].leaves(), vec![&label(true, true)]);
    }

    #[test]
    fn canonical_keys_sorted() {
        let line = single_leaf_tree().to_canonical_line();
        let first_keys: Vec<_> = ["\"difficulty\"", "\"model_pool\"", "\"problem_id\"", "\"root\"", "\"schema_version\"", "\"verifier_labeled\""]
            .iter()
            .filter_map(|k| line.find(k))
            .collect();
        let mut sorted = first_keys.clone();
        sorted.sort();
        assert_eq!(first_keys, sorted);
        assert!(line.contains("\"schema_version\":1"));
    }

    #[test]
    fn rejects_terminal_with_children() {
        let mut t = single_leaf_tree();
        t.root.terminal = Some(label(false, false));
        let err = t.validate(T_MAX).unwrap_err();
        assert!(matches!(err, Error::InvalidTree { ref problem_id, .. } if problem_id == "p0"));
    }

    #[test]
    fn rejects_bad_depth_and_escalation() {
        let mut t = single_leaf_tree();
        t.root.children.get_mut(&Action::Continue).unwrap().node.depth = 3;
        assert!(t.validate(T_MAX).is_err());

        // escalate twice to the same model
        let leaf = TraceNode::leaf(3, label(true, true));
        let n2 = TraceNode::inner(2, [(Action::Escalate(1), Branch { step: step(0.0, true), node: leaf })]);
        let n1 = TraceNode::inner(1, [(Action::Escalate(1), Branch { step: step(0.0, false), node: n2 })]);
        let mut t = single_leaf_tree();
        t.root = TraceNode::inner(0, [(Action::Continue, Branch { step: step(0.0, false), node: n1 })]);
        assert!(t.validate(T_MAX).is_err());
    }

    #[test]
    fn rejects_missing_verifier_bit() {
        let mut t = single_leaf_tree();
        t.root.children.get_mut(&Action::Continue).unwrap().step.verifier_bit = None;
        assert!(t.validate(T_MAX).is_err());
        t.verifier_labeled = false;
        assert!(t.validate(T_MAX).is_ok());
    }

    #[test]
    fn rejects_long_paths() {
        let mut node = TraceNode::leaf(4, label(true, true));
        for d in (1..4).rev() {
            node = TraceNode::inner(d, [(Action::Continue, Branch { step: step(0.0, d == 3), node })]);
        }
        let mut t = single_leaf_tree();
        t.root = TraceNode::inner(0, [(Action::Continue, Branch { step: step(0.0, false), node })]);
        assert!(t.validate(3).is_ok());
        assert_eq!(t.max_routed_steps(), 3);
        assert!(t.validate(2).is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = single_leaf_tree().to_canonical_line();
        let text = format!("{good}\n{{not json\n");
        match parse_traces(&text, T_MAX) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bits_must_be_binary() {
        let line = single_leaf_tree()
            .to_canonical_line()
            .replace("\"routed_correct\":1", "\"routed_correct\":2");
        assert!(parse_traces(&line, T_MAX).is_err());
    }
}
