//! Binary regression trees shared by the hard (BART) and soft (SBART)
//! samplers: split rules, hard descent, logistic-gated soft leaf weights,
//! the depth-based structure prior, and Metropolis-Hastings structure moves.
//!
//! Covariates are addressed by a global variable index: discrete columns
//! first (`0..p`), then continuous columns (`p..p+r`).

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Read access to unit covariates by global variable index.
pub trait CovariateSource {
    fn code(&self, unit: usize, var: usize) -> u32;
    fn value(&self, unit: usize, var: usize) -> f64;
}

impl CovariateSource for crate::frames::Covariates {
    fn code(&self, unit: usize, var: usize) -> u32 {
        self.discrete(unit, var)
    }

    fn value(&self, unit: usize, var: usize) -> f64 {
        self.continuous(unit, var - self.n_discrete())
    }
}

/// A single unit's covariates; the `unit` argument is ignored.
#[derive(Clone, Copy, Debug)]
pub struct Row<'a> {
    pub discrete: &'a [u32],
    pub continuous: &'a [f64],
}

impl CovariateSource for Row<'_> {
    fn code(&self, _unit: usize, var: usize) -> u32 {
        self.discrete[var]
    }

    fn value(&self, _unit: usize, var: usize) -> f64 {
        self.continuous[var - self.discrete.len()]
    }
}

/// How a split routes units: continuous cut (`x <= cut` goes left) or a
/// set of discrete levels that go left.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitKind {
    Cut(f64),
    Levels(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitRule {
    pub var: usize,
    pub kind: SplitKind,
}

impl SplitRule {
    pub fn cut(var: usize, cut: f64) -> Self {
        SplitRule {
            var,
            kind: SplitKind::Cut(cut),
        }
    }

    pub fn levels(var: usize, left: Vec<bool>) -> Self {
        SplitRule {
            var,
            kind: SplitKind::Levels(left),
        }
    }

    #[inline]
    pub fn goes_left<C: CovariateSource>(&self, src: &C, unit: usize) -> bool {
        match &self.kind {
            SplitKind::Cut(c) => src.value(unit, self.var) <= *c,
            SplitKind::Levels(left) => left.get(src.code(unit, self.var) as usize).copied().unwrap_or(false),
        }
    }

    /// Probability of going left under a logistic gate with bandwidth `tau`.
    /// Discrete splits stay hard.
    #[inline]
    pub fn prob_left<C: CovariateSource>(&self, src: &C, unit: usize, tau: f64) -> f64 {
        match &self.kind {
            SplitKind::Cut(c) => logistic((c - src.value(unit, self.var)) / tau),
            SplitKind::Levels(left) => {
                if left.get(src.code(unit, self.var) as usize).copied().unwrap_or(false) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Leaf { value: f64 },
    Internal { rule: SplitRule, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub depth: u32,
    pub parent: Option<usize>,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Arena-backed binary tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn root(value: f64) -> Self {
        Tree {
            nodes: vec![Node {
                depth: 0,
                parent: None,
                kind: NodeKind::Leaf { value },
            }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    /// Turn leaf `id` into an internal node with two leaves carrying the
    /// old leaf value. Returns the new child ids.
    pub fn split(&mut self, id: usize, rule: SplitRule) -> (usize, usize) {
        let value = match self.nodes[id].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Internal { .. } => panic!("split of an internal node"),
        };
        let depth = self.nodes[id].depth + 1;
        let left = self.nodes.len();
        let right = left + 1;
        for _ in 0..2 {
            self.nodes.push(Node {
                depth,
                parent: Some(id),
                kind: NodeKind::Leaf { value },
            });
        }
        self.nodes[id].kind = NodeKind::Internal { rule, left, right };
        (left, right)
    }

    /// Collapse internal node `id` whose children are both leaves.
    pub fn collapse(&mut self, id: usize) {
        let (l, r) = match &self.nodes[id].kind {
            NodeKind::Internal { left, right, .. } => (*left, *right),
            NodeKind::Leaf { .. } => panic!("collapse of a leaf"),
        };
        let value = match (&self.nodes[l].kind, &self.nodes[r].kind) {
            (NodeKind::Leaf { value: a }, NodeKind::Leaf { value: b }) => 0.5 * (a + b),
            _ => panic!("collapse of a node with internal children"),
        };
        self.nodes[id].kind = NodeKind::Leaf { value };
        self.compact();
    }

    /// Rebuild the arena in depth-first order, dropping unreachable nodes.
    fn compact(&mut self) {
        let mut out: Vec<Node> = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, None::<usize>, false, 0usize)];
        // (old id, new parent, is right child, unused)
        while let Some((old, parent, is_right, _)) = stack.pop() {
            let new_id = out.len();
            let node = &self.nodes[old];
            out.push(Node {
                depth: node.depth,
                parent,
                kind: node.kind.clone(),
            });
            if let Some(p) = parent {
                if let NodeKind::Internal { left, right, .. } = &mut out[p].kind {
                    if is_right {
                        *right = new_id;
                    } else {
                        *left = new_id;
                    }
                }
            }
            if let NodeKind::Internal { left, right, .. } = node.kind {
                stack.push((right, Some(new_id), true, 0));
                stack.push((left, Some(new_id), false, 0));
            }
        }
        self.nodes = out;
    }

    /// Node ids of the leaves, left to right.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match &self.nodes[id].kind {
                NodeKind::Leaf { .. } => out.push(id),
                NodeKind::Internal { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    /// For each node id, its position among `leaves()` (or `u32::MAX`).
    pub fn leaf_positions(&self) -> Vec<u32> {
        let mut pos = vec![u32::MAX; self.nodes.len()];
        for (k, id) in self.leaves().into_iter().enumerate() {
            pos[id] = k as u32;
        }
        pos
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf()).collect()
    }

    /// Internal nodes whose two children are leaves.
    pub fn prunable_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| match &self.nodes[i].kind {
                NodeKind::Internal { left, right, .. } => {
                    self.nodes[*left].is_leaf() && self.nodes[*right].is_leaf()
                }
                NodeKind::Leaf { .. } => false,
            })
            .collect()
    }

    /// `(parent, child)` pairs of internal nodes.
    pub fn swappable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.nodes.len() {
            if let NodeKind::Internal { left, right, .. } = &self.nodes[i].kind {
                for c in [*left, *right] {
                    if !self.nodes[c].is_leaf() {
                        out.push((i, c));
                    }
                }
            }
        }
        out
    }

    pub fn rule(&self, id: usize) -> Option<&SplitRule> {
        match &self.nodes[id].kind {
            NodeKind::Internal { rule, .. } => Some(rule),
            NodeKind::Leaf { .. } => None,
        }
    }

    fn set_rule(&mut self, id: usize, new_rule: SplitRule) {
        if let NodeKind::Internal { rule, .. } = &mut self.nodes[id].kind {
            *rule = new_rule;
        }
    }

    /// Leaf values in `leaves()` order.
    pub fn leaf_values(&self) -> Vec<f64> {
        self.leaves()
            .into_iter()
            .map(|id| match self.nodes[id].kind {
                NodeKind::Leaf { value } => value,
                NodeKind::Internal { .. } => unreachable!(),
            })
            .collect()
    }

    pub fn set_leaf_values(&mut self, values: &[f64]) {
        for (id, &v) in self.leaves().into_iter().zip(values) {
            self.nodes[id].kind = NodeKind::Leaf { value: v };
        }
    }

    /// Split variables of all internal nodes.
    pub fn split_vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Internal { rule, .. } => Some(rule.var),
            NodeKind::Leaf { .. } => None,
        })
    }

    /// Proper binary tree with consistent parent links and depths.
    pub fn is_valid(&self) -> bool {
        let mut reached = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        let mut internal = 0;
        let mut leaves = 0;
        if self.nodes.is_empty() || self.nodes[0].parent.is_some() || self.nodes[0].depth != 0 {
            return false;
        }
        while let Some(id) = stack.pop() {
            if reached[id] {
                return false;
            }
            reached[id] = true;
            match &self.nodes[id].kind {
                NodeKind::Leaf { .. } => leaves += 1,
                NodeKind::Internal { left, right, .. } => {
                    internal += 1;
                    for &c in [left, right] {
                        if c >= self.nodes.len()
                            || self.nodes[c].parent != Some(id)
                            || self.nodes[c].depth != self.nodes[id].depth + 1
                        {
                            return false;
                        }
                        stack.push(c);
                    }
                }
            }
        }
        reached.iter().all(|&r| r) && leaves == internal + 1
    }

    /// Node id of the leaf reached by hard descent.
    #[inline]
    pub fn descend<C: CovariateSource>(&self, src: &C, unit: usize) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Internal { rule, left, right } => {
                    id = if rule.goes_left(src, unit) { *left } else { *right };
                }
            }
        }
    }

    /// Write soft path probabilities of `unit` into `out` (indexed by leaf
    /// position from `positions`).
    pub fn fill_soft_weights<C: CovariateSource>(
        &self,
        positions: &[u32],
        tau: f64,
        src: &C,
        unit: usize,
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|w| *w = 0.0);
        let mut stack: [(usize, f64); 64] = [(0, 0.0); 64];
        let mut top = 1;
        stack[0] = (0, 1.0);
        while top > 0 {
            top -= 1;
            let (id, w) = stack[top];
            match &self.nodes[id].kind {
                NodeKind::Leaf { .. } => out[positions[id] as usize] = w,
                NodeKind::Internal { rule, left, right } => {
                    let p = rule.prob_left(src, unit, tau);
                    let wl = w * p;
                    let wr = w - wl;
                    if wr != 0.0 {
                        stack[top] = (*right, wr);
                        top += 1;
                    }
                    if wl != 0.0 {
                        stack[top] = (*left, wl);
                        top += 1;
                    }
                }
            }
        }
    }
}

/// Value of the leaf reached by deterministic descent.
pub fn evaluate_hard<C: CovariateSource>(tree: &Tree, src: &C, unit: usize) -> f64 {
    match tree.nodes[tree.descend(src, unit)].kind {
        NodeKind::Leaf { value } => value,
        NodeKind::Internal { .. } => unreachable!(),
    }
}

/// Soft leaf weights of one unit in `leaves()` order. Continuous gates are
/// `P(left) = logistic((cut - x) / tau)`; discrete gates stay hard.
pub fn leaf_weights_soft<C: CovariateSource>(tree: &Tree, tau: f64, src: &C, unit: usize) -> Vec<f64> {
    assert!(tau > 0.0, "bandwidth must be positive");
    let mut out = vec![0.0; tree.n_leaves()];
    tree.fill_soft_weights(&tree.leaf_positions(), tau, src, unit, &mut out);
    out
}

pub fn evaluate_soft<C: CovariateSource>(tree: &Tree, tau: f64, src: &C, unit: usize) -> f64 {
    leaf_weights_soft(tree, tau, src, unit)
        .iter()
        .zip(tree.leaf_values())
        .map(|(w, v)| w * v)
        .sum()
}

/// Log prior of the tree shape: each node at depth `d` is internal with
/// probability `alpha (1 + d)^-beta`.
pub fn log_tree_prior(tree: &Tree, alpha: f64, beta: f64) -> f64 {
    tree.nodes
        .iter()
        .map(|n| {
            let p = alpha * (1.0 + n.depth as f64).powf(-beta);
            if n.is_leaf() {
                (1.0 - p).ln()
            } else {
                p.ln()
            }
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Grow => "grow",
            MoveKind::Prune => "prune",
            MoveKind::Change => "change",
            MoveKind::Swap => "swap",
        }
    }

    fn applicable(self, tree: &Tree) -> bool {
        match self {
            MoveKind::Grow => true,
            MoveKind::Prune => !tree.prunable_nodes().is_empty(),
            MoveKind::Change => tree.nodes.len() > 1,
            MoveKind::Swap => !tree.swappable_pairs().is_empty(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs {
            grow: 0.25,
            prune: 0.25,
            change: 0.40,
            swap: 0.10,
        }
    }
}

impl MoveProbs {
    /// No structural moves: the tree stays at its current shape.
    pub fn pinned() -> Self {
        MoveProbs {
            grow: 0.0,
            prune: 0.0,
            change: 0.0,
            swap: 0.0,
        }
    }

    pub fn get(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Grow => self.grow,
            MoveKind::Prune => self.prune,
            MoveKind::Change => self.change,
            MoveKind::Swap => self.swap,
        }
    }

    pub fn is_pinned(&self) -> bool {
        MoveKind::ALL.iter().all(|&k| self.get(k) <= 0.0)
    }

    /// Probability of picking `kind` on `tree` once inapplicable kinds are
    /// excluded and the rest renormalized.
    pub fn effective(&self, tree: &Tree, kind: MoveKind) -> f64 {
        if !kind.applicable(tree) {
            return 0.0;
        }
        let total: f64 = MoveKind::ALL
            .iter()
            .filter(|k| k.applicable(tree))
            .map(|&k| self.get(k))
            .sum();
        if total > 0.0 {
            self.get(kind) / total
        } else {
            0.0
        }
    }
}

/// Draw a move kind among those applicable to `tree`; `None` when every
/// applicable kind has zero probability.
pub fn choose_move<R: Rng + ?Sized>(tree: &Tree, probs: &MoveProbs, rng: &mut R) -> Option<MoveKind> {
    let weights: Vec<(MoveKind, f64)> = MoveKind::ALL
        .iter()
        .filter(|k| k.applicable(tree))
        .map(|&k| (k, probs.get(k)))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for &(k, w) in &weights {
        if u < w {
            return Some(k);
        }
        u -= w;
    }
    weights.last().map(|(k, _)| *k)
}

/// Prior over split rules: a variable from `var_probs`, then a cut drawn
/// uniformly from that variable's grid or a uniformly random nonempty
/// proper subset of its levels.
#[derive(Clone, Debug)]
pub struct SplitPrior {
    pub var_probs: Vec<f64>,
    pub candidates: Vec<SplitCandidates>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitCandidates {
    Cuts(Vec<f64>),
    Levels(u32),
    /// No split is possible on this variable.
    None,
}

impl SplitCandidates {
    pub fn splittable(&self) -> bool {
        match self {
            SplitCandidates::Cuts(c) => !c.is_empty(),
            SplitCandidates::Levels(k) => *k >= 2,
            SplitCandidates::None => false,
        }
    }
}

impl SplitPrior {
    /// Uniform over splittable variables.
    pub fn uniform(candidates: Vec<SplitCandidates>) -> Self {
        let k = candidates.iter().filter(|c| c.splittable()).count().max(1) as f64;
        let var_probs = candidates
            .iter()
            .map(|c| if c.splittable() { 1.0 / k } else { 0.0 })
            .collect();
        SplitPrior { var_probs, candidates }
    }

    pub fn n_vars(&self) -> usize {
        self.candidates.len()
    }

    pub fn draw_var<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: f64 = self.var_probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut last = 0;
        for (j, &p) in self.var_probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            if u < p {
                return j;
            }
            u -= p;
            last = j;
        }
        last
    }

    pub fn draw_rule<R: Rng + ?Sized>(&self, rng: &mut R) -> SplitRule {
        let var = self.draw_var(rng);
        match &self.candidates[var] {
            SplitCandidates::Cuts(cuts) => SplitRule::cut(var, cuts[rng.random_range(0..cuts.len())]),
            SplitCandidates::Levels(k) => {
                let k = *k as usize;
                loop {
                    let left: Vec<bool> = (0..k).map(|_| rng.random::<bool>()).collect();
                    let n_left = left.iter().filter(|&&b| b).count();
                    if n_left > 0 && n_left < k {
                        return SplitRule::levels(var, left);
                    }
                }
            }
            SplitCandidates::None => unreachable!("variable without split candidates drawn"),
        }
    }
}

/// A proposed tree with the log proposal probabilities of the forward and
/// reverse moves. Split-rule prior factors are left out on both sides: rules
/// are proposed from their prior, so those factors cancel in the MH ratio.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub tree: Tree,
    pub kind: MoveKind,
    pub log_forward: f64,
    pub log_reverse: f64,
}

pub fn propose_move<R: Rng + ?Sized>(
    tree: &Tree,
    kind: MoveKind,
    probs: &MoveProbs,
    prior: &SplitPrior,
    rng: &mut R,
) -> Result<Proposal> {
    if !kind.applicable(tree) {
        return Err(Error::InapplicableMove(kind.name()));
    }
    let mut new = tree.clone();
    let (log_forward, log_reverse) = match kind {
        MoveKind::Grow => {
            let leaves = tree.leaves();
            let id = leaves[rng.random_range(0..leaves.len())];
            new.split(id, prior.draw_rule(rng));
            let fwd = probs.effective(tree, MoveKind::Grow).ln() - (leaves.len() as f64).ln();
            let rev = probs.effective(&new, MoveKind::Prune).ln()
                - (new.prunable_nodes().len() as f64).ln();
            (fwd, rev)
        }
        MoveKind::Prune => {
            let nog = tree.prunable_nodes();
            let id = nog[rng.random_range(0..nog.len())];
            new.collapse(id);
            let fwd = probs.effective(tree, MoveKind::Prune).ln() - (nog.len() as f64).ln();
            let rev = probs.effective(&new, MoveKind::Grow).ln() - (new.n_leaves() as f64).ln();
            (fwd, rev)
        }
        MoveKind::Change => {
            let internal = tree.internal_nodes();
            let id = internal[rng.random_range(0..internal.len())];
            new.set_rule(id, prior.draw_rule(rng));
            let q = probs.effective(tree, MoveKind::Change).ln() - (internal.len() as f64).ln();
            (q, q)
        }
        MoveKind::Swap => {
            let pairs = tree.swappable_pairs();
            let (parent, child) = pairs[rng.random_range(0..pairs.len())];
            let a = tree.rule(parent).cloned().expect("internal");
            let b = tree.rule(child).cloned().expect("internal");
            new.set_rule(parent, b);
            new.set_rule(child, a);
            let q = probs.effective(tree, MoveKind::Swap).ln() - (pairs.len() as f64).ln();
            (q, q)
        }
    };
    Ok(Proposal {
        tree: new,
        kind,
        log_forward,
        log_reverse,
    })
}

impl fmt::Display for SplitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SplitKind::Cut(c) => write!(f, "v{} <= {}", self.var, c),
            SplitKind::Levels(left) => {
                let codes: Vec<String> = left
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(k, _)| k.to_string())
                    .collect();
                write!(f, "v{} in {{{}}}", self.var, codes.join(","))
            }
        }
    }
}

/// Nested, indented text form for debugging and golden tests.
impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(t: &Tree, id: usize, indent: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let pad = "  ".repeat(indent);
            match &t.nodes[id].kind {
                NodeKind::Leaf { value } => writeln!(f, "{pad}leaf {value}"),
                NodeKind::Internal { rule, left, right } => {
                    writeln!(f, "{pad}[{rule}]")?;
                    walk(t, *left, indent + 1, f)?;
                    walk(t, *right, indent + 1, f)
                }
            }
        }
        walk(self, 0, 0, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row<'a>(d: &'a [u32], c: &'a [f64]) -> Row<'a> {
        Row {
            discrete: d,
            continuous: c,
        }
    }

    fn stump(cut: f64, a: f64, b: f64) -> Tree {
        let mut t = Tree::root(0.0);
        let (l, r) = t.split(0, SplitRule::cut(0, cut));
        t.nodes[l].kind = NodeKind::Leaf { value: a };
        t.nodes[r].kind = NodeKind::Leaf { value: b };
        t
    }

    /// Three-level tree over one binary and two continuous variables.
    fn three_level() -> Tree {
        let mut t = Tree::root(0.0);
        let (l, r) = t.split(0, SplitRule::cut(1, 0.5));
        let (ll, lr) = t.split(l, SplitRule::levels(0, vec![true, false]));
        t.split(r, SplitRule::cut(2, 0.3));
        t.split(ll, SplitRule::cut(2, 0.7));
        let vals: Vec<f64> = (0..t.n_leaves()).map(|k| k as f64 + 1.0).collect();
        t.set_leaf_values(&vals);
        let _ = lr;
        t
    }

    /// Recursive descent written independently of `Tree::descend`.
    fn oracle_hard(t: &Tree, id: usize, d: &[u32], c: &[f64]) -> f64 {
        match &t.nodes()[id].kind {
            NodeKind::Leaf { value } => *value,
            NodeKind::Internal { rule, left, right } => {
                let go_left = match &rule.kind {
                    SplitKind::Cut(cut) => c[rule.var - d.len()] <= *cut,
                    SplitKind::Levels(set) => set[d[rule.var] as usize],
                };
                oracle_hard(t, if go_left { *left } else { *right }, d, c)
            }
        }
    }

    /// Enumerate every root-to-leaf path and multiply its gate probabilities.
    fn oracle_soft(t: &Tree, tau: f64, d: &[u32], c: &[f64]) -> f64 {
        fn paths(t: &Tree, id: usize, acc: f64, tau: f64, d: &[u32], c: &[f64], out: &mut Vec<(f64, f64)>) {
            match &t.nodes()[id].kind {
                NodeKind::Leaf { value } => out.push((acc, *value)),
                NodeKind::Internal { rule, left, right } => {
                    let p = match &rule.kind {
                        SplitKind::Cut(cut) => 1.0 / (1.0 + ((c[rule.var - d.len()] - cut) / tau).exp()),
                        SplitKind::Levels(set) => {
                            if set[d[rule.var] as usize] {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    paths(t, *left, acc * p, tau, d, c, out);
                    paths(t, *right, acc * (1.0 - p), tau, d, c, out);
                }
            }
        }
        let mut out = Vec::new();
        paths(t, 0, 1.0, tau, d, c, &mut out);
        out.iter().map(|(w, v)| w * v).sum()
    }

    #[test]
    fn root_only_tree_is_constant() {
        let t = Tree::root(5.0);
        assert_eq!(evaluate_hard(&t, &row(&[], &[0.1]), 0), 5.0);
        assert_eq!(evaluate_soft(&t, 0.3, &row(&[], &[123.0]), 0), 5.0);
    }

    #[test]
    fn stump_routes_by_cut() {
        let t = stump(0.5, 1.0, 2.0);
        assert_eq!(evaluate_hard(&t, &row(&[], &[0.3]), 0), 1.0);
        assert_eq!(evaluate_hard(&t, &row(&[], &[0.7]), 0), 2.0);
    }

    #[test]
    fn three_level_matches_recursive_oracle() {
        let t = three_level();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = [rng.random_range(0..2u32)];
            let c = [rng.random::<f64>(), rng.random::<f64>()];
            assert_eq!(evaluate_hard(&t, &row(&d, &c), 0), oracle_hard(&t, 0, &d, &c));
        }
    }

    #[test]
    fn soft_weights_at_cut_are_even() {
        let t = stump(0.4, 0.0, 10.0);
        let w = leaf_weights_soft(&t, 0.1, &row(&[], &[0.4]), 0);
        assert_eq!(w, vec![0.5, 0.5]);
        assert_eq!(evaluate_soft(&t, 0.1, &row(&[], &[0.4]), 0), 5.0);
    }

    #[test]
    fn soft_limits() {
        let t = stump(0.4, 3.0, 7.0);
        let w = leaf_weights_soft(&t, 1e-9, &row(&[], &[0.6]), 0);
        assert_eq!(w, vec![0.0, 1.0]);
        let wide = evaluate_soft(&t, 1e6, &row(&[], &[0.9]), 0);
        assert!((wide - 5.0).abs() < 1e-5);
    }

    #[test]
    fn soft_matches_path_enumeration_and_sums_to_one() {
        let t = three_level();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..1000 {
            let tau = [0.01, 0.1, 0.5, 3.0][k % 4];
            let d = [rng.random_range(0..2u32)];
            let c = [rng.random::<f64>(), rng.random::<f64>()];
            let r = row(&d, &c);
            let w = leaf_weights_soft(&t, tau, &r, 0);
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert!((evaluate_soft(&t, tau, &r, 0) - oracle_soft(&t, tau, &d, &c)).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_equals_soft_in_small_bandwidth_limit() {
        let t = three_level();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let d = [rng.random_range(0..2u32)];
            let c = [rng.random::<f64>(), rng.random::<f64>()];
            let r = row(&d, &c);
            assert!((evaluate_hard(&t, &r, 0) - evaluate_soft(&t, 1e-9, &r, 0)).abs() <= 1e-6);
        }
    }

    #[test]
    fn tree_prior_closed_forms() {
        let (a, b) = (0.95, 2.0);
        assert!((log_tree_prior(&Tree::root(0.0), a, b) - (1.0f64 - a).ln()).abs() < 1e-15);
        let t = stump(0.5, 0.0, 0.0);
        let expected = a.ln() + 2.0 * (1.0 - a * 2f64.powf(-b)).ln();
        assert!((log_tree_prior(&t, a, b) - expected).abs() < 1e-14);
    }

    /// Recursive prior over the shape, independent of the arena.
    fn oracle_prior(t: &Tree, id: usize, depth: u32, a: f64, b: f64) -> f64 {
        let p = a * (1.0 + depth as f64).powf(-b);
        match &t.nodes()[id].kind {
            NodeKind::Leaf { .. } => (1.0 - p).ln(),
            NodeKind::Internal { left, right, .. } => {
                p.ln() + oracle_prior(t, *left, depth + 1, a, b) + oracle_prior(t, *right, depth + 1, a, b)
            }
        }
    }

    #[test]
    fn tree_prior_matches_recursion_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut t = Tree::root(0.0);
            for _ in 0..rng.random_range(1..4) {
                let leaves = t.leaves();
                let id = leaves[rng.random_range(0..leaves.len())];
                t.split(id, SplitRule::cut(0, 0.5));
            }
            let (a, b) = (rng.random_range(0.1..0.99), rng.random_range(0.0..3.0));
            assert!((log_tree_prior(&t, a, b) - oracle_prior(&t, 0, 0, a, b)).abs() < 1e-12);
        }
    }

    fn prior() -> SplitPrior {
        SplitPrior::uniform(vec![
            SplitCandidates::Levels(3),
            SplitCandidates::Cuts(vec![0.2, 0.4, 0.6, 0.8]),
        ])
    }

    #[test]
    fn grow_then_prune_round_trips_topology() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let root = Tree::root(0.0);
        let probs = MoveProbs::default();
        let g = propose_move(&root, MoveKind::Grow, &probs, &prior(), &mut rng).unwrap();
        assert_eq!(g.tree.n_leaves(), 2);
        assert_eq!(g.tree.node(1).depth, 1);
        assert!(propose_move(&root, MoveKind::Prune, &probs, &prior(), &mut rng).is_err());
        let p = propose_move(&g.tree, MoveKind::Prune, &probs, &prior(), &mut rng).unwrap();
        assert_eq!(p.tree.nodes().len(), 1);
        assert!(p.tree.is_valid());
        // grow on a root: only grow applicable there; prune is one of three
        // applicable kinds on the stump.
        assert!((g.log_forward - 0.0).abs() < 1e-15);
        assert!((g.log_reverse - (0.25f64 / 0.90).ln()).abs() < 1e-12);
    }

    #[test]
    fn move_frequencies_follow_configuration() {
        let mut t = three_level();
        assert!(!t.swappable_pairs().is_empty() && !t.prunable_nodes().is_empty());
        t.set_leaf_values(&[0.0; 5]);
        let probs = MoveProbs::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let k = choose_move(&t, &probs, &mut rng).unwrap();
            counts[MoveKind::ALL.iter().position(|&m| m == k).unwrap()] += 1;
        }
        for (i, &k) in MoveKind::ALL.iter().enumerate() {
            let p = probs.get(k);
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let freq = counts[i] as f64 / draws as f64;
            assert!((freq - p).abs() <= 3.0 * se, "{k:?}: {freq} vs {p}");
        }
    }

    #[test]
    fn pinned_moves_choose_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(choose_move(&three_level(), &MoveProbs::pinned(), &mut rng).is_none());
    }

    #[test]
    fn discrete_rule_subsets_are_proper() {
        let p = SplitPrior::uniform(vec![SplitCandidates::Levels(4)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            match p.draw_rule(&mut rng).kind {
                SplitKind::Levels(l) => {
                    let k = l.iter().filter(|&&b| b).count();
                    assert!(k > 0 && k < 4);
                }
                SplitKind::Cut(_) => panic!(),
            }
        }
    }

    #[test]
    fn debug_text_form() {
        let t = stump(0.5, 1.0, 2.0);
        assert_eq!(t.to_string(), "[v0 <= 0.5]\n  leaf 1\n  leaf 2\n");
    }

    #[test]
    fn prior_is_invariant_to_arena_order() {
        // Build the same shape growing right first, then left.
        let mut a = Tree::root(0.0);
        let (l, r) = a.split(0, SplitRule::cut(0, 0.5));
        a.split(l, SplitRule::cut(0, 0.2));
        a.split(r, SplitRule::cut(0, 0.8));
        let mut b = Tree::root(0.0);
        let (l, r) = b.split(0, SplitRule::cut(0, 0.5));
        b.split(r, SplitRule::cut(0, 0.8));
        b.split(l, SplitRule::cut(0, 0.2));
        assert_ne!(a.nodes(), b.nodes());
        assert_eq!(log_tree_prior(&a, 0.95, 2.0), log_tree_prior(&b, 0.95, 2.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn moves_preserve_validity(seed in any::<u64>(), steps in 1usize..60) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let probs = MoveProbs::default();
                let prior = prior();
                let mut t = Tree::root(0.0);
                for _ in 0..steps {
                    let kind = choose_move(&t, &probs, &mut rng).unwrap();
                    let p = propose_move(&t, kind, &probs, &prior, &mut rng).unwrap();
                    prop_assert!(p.tree.is_valid());
                    prop_assert!(p.log_forward.is_finite() && p.log_reverse.is_finite());
                    t = p.tree;
                }
            }

            #[test]
            fn soft_rows_sum_to_one(seed in any::<u64>(), tau in 1e-6f64..10.0, x in -1.0f64..2.0, y in -1.0f64..2.0, z in 0u32..2) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let probs = MoveProbs { grow: 0.7, prune: 0.1, change: 0.1, swap: 0.1 };
                let prior = SplitPrior::uniform(vec![
                    SplitCandidates::Levels(2),
                    SplitCandidates::Cuts(vec![0.1, 0.5, 0.9]),
                    SplitCandidates::Cuts(vec![0.3, 0.6]),
                ]);
                let mut t = Tree::root(0.0);
                for _ in 0..8 {
                    let kind = choose_move(&t, &probs, &mut rng).unwrap();
                    t = propose_move(&t, kind, &probs, &prior, &mut rng).unwrap().tree;
                }
                let d = [z];
                let c = [x, y];
                let w = leaf_weights_soft(&t, tau, &row(&d, &c), 0);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
