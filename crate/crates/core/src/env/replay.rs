//! Replay of offline trace trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvStep, Environment};
use crate::action::Action;
use crate::costs::{step_cost, CostBasis};
use crate::error::{Error, Result};
use crate::features::FeatureBuilder;
use crate::trace::{TraceNode, TraceTree};

/// How [`TraceEnv::reset`] picks the next tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceOrder {
    /// Each tree once, in file order; then [`Error::Exhausted`].
    Sequential,
    /// A tree drawn uniformly with the reset seed, forever.
    Sampled,
}

#[derive(Clone, Debug)]
struct Cursor {
    tree: usize,
    path: Vec<Action>,
    model: usize,
}

/// Serves episodes by walking trace trees along the chosen actions.
///
/// A requested branch that was never expanded offline aborts the episode
/// with [`Error::MissingBranch`] and is counted in
/// [`missing_branches`](TraceEnv::missing_branches).
#[derive(Clone, Debug)]
pub struct TraceEnv {
    trees: Vec<TraceTree>,
    features: FeatureBuilder,
    basis: CostBasis,
    order: TraceOrder,
    next: usize,
    cursor: Option<Cursor>,
    missing: usize,
}

impl TraceEnv {
    pub fn new(trees: Vec<TraceTree>, features: FeatureBuilder, basis: CostBasis) -> Result<Self> {
        let k = trees.first().map_or(features.num_models, |t| t.num_models());
        if let Some(t) = trees.iter().find(|t| t.num_models() != k) {
            return Err(Error::InvalidTree {
                problem_id: t.problem_id.clone(),
                message: format!("model pool of size {} differs from {k}", t.num_models()),
            });
        }
        if k != features.num_models {
            return Err(Error::Dimension { expected: features.num_models, actual: k });
        }
        Ok(TraceEnv {
            trees,
            features,
            basis,
            order: TraceOrder::Sequential,
            next: 0,
            cursor: None,
            missing: 0,
        })
    }

    pub fn with_order(mut self, order: TraceOrder) -> Self {
        self.order = order;
        self
    }

    pub fn trees(&self) -> &[TraceTree] {
        &self.trees
    }

    /// Number of episodes aborted on an unexpanded branch.
    pub fn missing_branches(&self) -> usize {
        self.missing
    }

    /// Index of the tree of the running (or last) episode.
    pub fn current_tree(&self) -> Option<usize> {
        self.cursor.as_ref().map(|c| c.tree)
    }

    /// Rewinds sequential order to the first tree.
    pub fn rewind(&mut self) {
        self.next = 0;
        self.cursor = None;
    }

    /// Starts an episode on tree `index`.
    pub fn reset_tree(&mut self, index: usize) -> Result<EnvStep> {
        if index >= self.trees.len() {
            return Err(Error::Exhausted);
        }
        self.cursor = Some(Cursor { tree: index, path: Vec::new(), model: 0 });
        if self.trees[index].root.is_leaf() {
            // a tree without any expansion: the problem ends before a step
            let tree = &self.trees[index];
            let label = tree.root.terminal;
            self.cursor = None;
            return Ok(EnvStep {
                observation: self.features.build_raw(0.0, 0, true, 0, tree.difficulty, 0),
                cost: 0.0,
                verifier_bit: None,
                terminal: true,
                terminal_label: label,
            });
        }
        self.advance(Action::Continue)
    }

    fn node(&self, cursor: &Cursor) -> &TraceNode {
        let mut node = &self.trees[cursor.tree].root;
        for a in &cursor.path {
            node = &node.children[a].node;
        }
        node
    }

    fn advance(&mut self, action: Action) -> Result<EnvStep> {
        let mut cursor = self.cursor.take().ok_or(Error::EpisodeInactive)?;
        let tree = &self.trees[cursor.tree];
        let node = self.node(&cursor);
        let Some(branch) = node.children.get(&action) else {
            let err = Error::MissingBranch {
                problem_id: tree.problem_id.clone(),
                action: action.key(),
                depth: node.depth,
            };
            self.missing += 1;
            return Err(err);
        };
        let model = if cursor.path.is_empty() { 0 } else { action.target(cursor.model) };
        let t = node.depth;
        let step = &branch.step;
        let out = EnvStep {
            observation: self.features.build(step, t, tree.difficulty, model),
            cost: step_cost(&tree.model_pool[model], step, self.basis),
            verifier_bit: step.verifier_bit,
            terminal: branch.node.is_leaf(),
            terminal_label: branch.node.terminal,
        };
        cursor.path.push(action);
        cursor.model = model;
        if !out.terminal {
            self.cursor = Some(cursor);
        }
        Ok(out)
    }
}

impl Environment for TraceEnv {
    fn num_models(&self) -> usize {
        self.features.num_models
    }

    fn reset(&mut self, seed: u64) -> Result<EnvStep> {
        let index = match self.order {
            TraceOrder::Sequential => {
                let i = self.next;
                if i >= self.trees.len() {
                    return Err(Error::Exhausted);
                }
                self.next += 1;
                i
            }
            TraceOrder::Sampled => {
                if self.trees.is_empty() {
                    return Err(Error::Exhausted);
                }
                ChaCha8Rng::seed_from_u64(seed).random_range(0..self.trees.len())
            }
        };
        self.reset_tree(index)
    }

    fn step(&mut self, action: Action) -> Result<EnvStep> {
        let model = self.cursor.as_ref().ok_or(Error::EpisodeInactive)?.model;
        action.validate(model, self.num_models())?;
        self.advance(action)
    }

    fn current_model(&self) -> usize {
        self.cursor.as_ref().map_or(0, |c| c.model)
    }
}
