//! Label-deterministic graphs generating the admissible loss sequences
//! of a weakly-hard constraint.
//!
//! Nodes stand for delivery histories sampled at delivery instants; an
//! edge with label l consumes one block `1 0^l`. The graph is built from
//! the safety automaton over single bits (state: the last s - 1 outcomes
//! of an extendable run), compressing each block into one labeled edge
//! and minimizing by partition refinement, so paths from the initial
//! node expand to exactly the satisfying loss words that start with a
//! delivery.

use crate::error::Error;
use crate::wh::{LabelWord, LossWord, WhConstraint};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Largest word length accepted by [`WhGraph::language_check`].
pub const LANGUAGE_CHECK_CAP: u32 = 20;

#[derive(Clone, Debug)]
pub struct WhGraph {
    constraint: WhConstraint,
    /// succ[v][l] = successor of node v under label l, if admissible.
    succ: Vec<Vec<Option<usize>>>,
    initial: usize,
}

/// A path through the graph: nodes.len() == labels.len() + 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphPath {
    pub nodes: Vec<usize>,
    pub labels: Vec<u32>,
}

impl GraphPath {
    pub fn label_word(&self) -> LabelWord {
        LabelWord(self.labels.clone())
    }

    pub fn expanded_len(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).sum()
    }
}

/// Bit history of length at most s - 1 packed into a u64, oldest bit
/// highest.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct History {
    bits: u64,
    len: u32,
}

impl History {
    fn all_ones(len: u32) -> Self {
        History { bits: (1u64 << len) - 1, len }
    }

    fn bit_from_end(&self, t: u32) -> bool {
        self.bits >> (t - 1) & 1 == 1
    }

    /// Appends one outcome if the run stays extendable, truncating to
    /// the last `cap` bits. Only suffixes ending at the new bit need
    /// checking: older windows were checked when their last bit arrived.
    fn append(&self, delivered: bool, cap: u32, max_zeros: u32) -> Option<History> {
        let mut zeros = if delivered { 0 } else { 1 };
        if zeros > max_zeros {
            return None;
        }
        for t in 1..=self.len {
            if !self.bit_from_end(t) {
                zeros += 1;
                if zeros > max_zeros {
                    return None;
                }
            }
        }
        let len = (self.len + 1).min(cap);
        let mask = if len == 0 { 0 } else { (1u64 << len) - 1 };
        let bits = (self.bits << 1 | u64::from(delivered)) & mask;
        Some(History { bits, len })
    }
}

impl WhGraph {
    /// Builds the minimal graph for a constraint. Nodes are numbered in
    /// breadth-first order from the initial node, following ascending
    /// labels, so the result is canonical.
    pub fn build(constraint: WhConstraint) -> WhGraph {
        let cap = constraint.s() - 1;
        let max_zeros = constraint.max_label();
        let labels = (max_zeros + 1) as usize;

        // Explore block transitions between delivery-aligned histories.
        let start = History::all_ones(cap);
        let mut index: HashMap<History, usize> = HashMap::new();
        let mut states: Vec<History> = vec![start];
        index.insert(start, 0);
        let mut succ: Vec<Vec<Option<usize>>> = Vec::new();
        let mut frontier = 0usize;
        while frontier < states.len() {
            let h = states[frontier];
            let mut row = vec![None; labels];
            for l in 0..labels {
                let mut cur = match h.append(true, cap, max_zeros) {
                    Some(next) => next,
                    None => break,
                };
                let mut ok = true;
                for _ in 0..l {
                    match cur.append(false, cap, max_zeros) {
                        Some(next) => cur = next,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                let id = *index.entry(cur).or_insert_with(|| {
                    states.push(cur);
                    states.len() - 1
                });
                row[l] = Some(id);
            }
            succ.push(row);
            frontier += 1;
        }

        // Partition refinement on outgoing behavior. All states accept,
        // so two states are equivalent iff they enable the same labels
        // with pairwise equivalent targets.
        let n = states.len();
        let mut class: Vec<usize> = vec![0; n];
        loop {
            let mut sig_index: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
            let mut next_class = vec![0; n];
            for v in 0..n {
                let sig: Vec<Option<usize>> =
                    succ[v].iter().map(|t| t.map(|u| class[u])).collect();
                let m = sig_index.len();
                let id = *sig_index.entry(sig).or_insert(m);
                next_class[v] = id;
            }
            let stable = (0..n).all(|v| {
                (0..n).all(|u| (class[v] == class[u]) == (next_class[v] == next_class[u]))
            });
            class = next_class;
            if stable {
                break;
            }
        }

        // Quotient, then renumber canonically by BFS from the initial
        // class in ascending label order.
        let n_classes = class.iter().max().map_or(0, |m| m + 1);
        let mut class_succ: Vec<Vec<Option<usize>>> = vec![vec![None; labels]; n_classes];
        for v in 0..n {
            for l in 0..labels {
                class_succ[class[v]][l] = succ[v][l].map(|u| class[u]);
            }
        }
        let mut order: Vec<Option<usize>> = vec![None; n_classes];
        let mut bfs = vec![class[0]];
        order[class[0]] = Some(0);
        let mut head = 0;
        while head < bfs.len() {
            let c = bfs[head];
            head += 1;
            for l in 0..labels {
                if let Some(t) = class_succ[c][l] {
                    if order[t].is_none() {
                        order[t] = Some(bfs.len());
                        bfs.push(t);
                    }
                }
            }
        }
        let mut final_succ = vec![vec![None; labels]; bfs.len()];
        for (c, &slot) in order.iter().enumerate() {
            if let Some(slot) = slot {
                for l in 0..labels {
                    final_succ[slot][l] = class_succ[c][l].map(|t| order[t].unwrap());
                }
            }
        }

        WhGraph { constraint, succ: final_succ, initial: 0 }
    }

    pub fn constraint(&self) -> WhConstraint {
        self.constraint
    }

    pub fn node_count(&self) -> usize {
        self.succ.len()
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().flatten().filter(|t| t.is_some()).count()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn step(&self, node: usize, label: u32) -> Option<usize> {
        self.succ.get(node)?.get(label as usize).copied().flatten()
    }

    /// Edges sorted by (source, label).
    pub fn edges(&self) -> Vec<(usize, u32, usize)> {
        let mut out = Vec::new();
        for (v, row) in self.succ.iter().enumerate() {
            for (l, t) in row.iter().enumerate() {
                if let Some(t) = t {
                    out.push((v, l as u32, *t));
                }
            }
        }
        out
    }

    pub fn node_name(&self, v: usize) -> String {
        format!("v{}", v + 1)
    }

    pub fn node_by_name(&self, name: &str) -> Result<usize, Error> {
        let idx = name
            .strip_prefix('v')
            .and_then(|rest| rest.parse::<usize>().ok())
            .and_then(|i| i.checked_sub(1));
        match idx {
            Some(i) if i < self.node_count() => Ok(i),
            _ => Err(Error::UnknownNode(name.to_string())),
        }
    }

    pub fn accepts_labels(&self, labels: &LabelWord) -> bool {
        let mut node = self.initial;
        for &l in labels.labels() {
            match self.step(node, l) {
                Some(next) => node = next,
                None => return false,
            }
        }
        true
    }

    /// Acceptance of a finite loss word: it must start with a delivery
    /// and its block decomposition must trace a path from the initial
    /// node.
    pub fn accepts(&self, word: &LossWord) -> bool {
        let bits = word.bits();
        if bits.is_empty() {
            return true;
        }
        if !bits[0] {
            return false;
        }
        let mut node = self.initial;
        let mut run = 0u32;
        for &b in &bits[1..] {
            if b {
                match self.step(node, run) {
                    Some(next) => node = next,
                    None => return false,
                }
                run = 0;
            } else {
                run += 1;
            }
        }
        self.step(node, run).is_some()
    }

    /// Exhaustively compares graph acceptance against the constraint
    /// semantics for every word of length <= max_len starting with a
    /// delivery. Returns the first mismatching word, if any.
    pub fn language_check(&self, max_len: u32) -> Result<Option<LossWord>, Error> {
        if max_len > LANGUAGE_CHECK_CAP {
            return Err(Error::HorizonTooLarge { got: max_len, cap: LANGUAGE_CHECK_CAP });
        }
        let mut bits = Vec::new();
        for len in 1..=max_len as usize {
            bits.clear();
            bits.resize(len, false);
            bits[0] = true;
            let total = 1u64 << (len - 1);
            for mask in 0..total {
                for i in 1..len {
                    bits[i] = mask >> (i - 1) & 1 == 1;
                }
                let word = LossWord::new(bits.clone());
                if self.accepts(&word) != self.constraint.satisfies(&word) {
                    return Ok(Some(word));
                }
            }
        }
        Ok(None)
    }

    /// Streams every path whose expansion has length exactly `horizon`.
    /// Since a label-0 edge is enabled everywhere, the prefixes of these
    /// paths cover all admissible words of length <= horizon.
    pub fn enumerate_paths(&self, horizon: usize) -> PathIter<'_> {
        PathIter::new(self, horizon)
    }

    /// Random path with expansion length exactly `horizon`, for
    /// falsification beyond the exhaustive range.
    pub fn sample_path(&self, horizon: usize, rng: &mut impl rand::Rng) -> GraphPath {
        let mut nodes = vec![self.initial];
        let mut labels = Vec::new();
        let mut remaining = horizon;
        while remaining > 0 {
            let node = *nodes.last().unwrap();
            let choices: Vec<u32> = self.succ[node]
                .iter()
                .enumerate()
                .filter_map(|(l, t)| {
                    (t.is_some() && l + 1 <= remaining).then_some(l as u32)
                })
                .collect();
            let l = choices[rng.gen_range(0..choices.len())];
            labels.push(l);
            nodes.push(self.step(node, l).unwrap());
            remaining -= l as usize + 1;
        }
        GraphPath { nodes, labels }
    }

    /// Shortest label sequence enabled from exactly one of two nodes,
    /// or None when the nodes are behaviorally equivalent. Used to
    /// confirm minimality: distinct nodes must be distinguishable.
    pub fn distinguishing_word(&self, a: usize, b: usize) -> Option<Vec<u32>> {
        let n = self.node_count();
        let mut seen = vec![false; n * n];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back((a, b, Vec::new()));
        seen[a * n + b] = true;
        while let Some((u, v, prefix)) = queue.pop_front() {
            for l in 0..self.succ[u].len() {
                let tu = self.succ[u][l];
                let tv = self.succ[v][l];
                let mut word = prefix.clone();
                word.push(l as u32);
                match (tu, tv) {
                    (Some(_), None) | (None, Some(_)) => return Some(word),
                    (Some(nu), Some(nv)) => {
                        if !seen[nu * n + nv] {
                            seen[nu * n + nv] = true;
                            queue.push_back((nu, nv, word));
                        }
                    }
                    (None, None) => {}
                }
            }
        }
        None
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "digraph wh_{}_{} {{\n  rankdir=LR;\n",
            self.constraint.r(),
            self.constraint.s()
        ));
        for v in 0..self.node_count() {
            let shape = if v == self.initial { "doublecircle" } else { "circle" };
            out.push_str(&format!("  {} [shape={shape}];\n", self.node_name(v)));
        }
        for (v, l, t) in self.edges() {
            out.push_str(&format!(
                "  {} -> {} [label=\"{l}\"];\n",
                self.node_name(v),
                self.node_name(t)
            ));
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            constraint: self.constraint,
            nodes: (0..self.node_count()).map(|v| self.node_name(v)).collect(),
            initial: self.node_name(self.initial),
            edges: self
                .edges()
                .into_iter()
                .map(|(v, l, t)| (self.node_name(v), l, self.node_name(t)))
                .collect(),
        }
    }
}

/// Serializable graph dump.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphJson {
    pub constraint: WhConstraint,
    pub nodes: Vec<String>,
    pub initial: String,
    pub edges: Vec<(String, u32, String)>,
}

/// Depth-first path stream; labels are explored in ascending order so
/// the output is deterministic.
pub struct PathIter<'g> {
    graph: &'g WhGraph,
    stack: Vec<Frame>,
    nodes: Vec<usize>,
    labels: Vec<u32>,
}

struct Frame {
    next_label: usize,
    remaining: usize,
}

impl<'g> PathIter<'g> {
    fn new(graph: &'g WhGraph, horizon: usize) -> Self {
        PathIter {
            graph,
            stack: vec![Frame { next_label: 0, remaining: horizon }],
            nodes: vec![graph.initial()],
            labels: Vec::new(),
        }
    }
}

impl Iterator for PathIter<'_> {
    type Item = GraphPath;

    fn next(&mut self) -> Option<GraphPath> {
        loop {
            let depth = self.stack.len().checked_sub(1)?;
            let node = self.nodes[depth];
            let remaining = self.stack[depth].remaining;
            if remaining == 0 {
                let path = GraphPath { nodes: self.nodes.clone(), labels: self.labels.clone() };
                self.stack.pop();
                self.nodes.pop();
                self.labels.pop();
                return Some(path);
            }
            let label_count = self.graph.succ[node].len();
            let mut advanced = false;
            while self.stack[depth].next_label < label_count {
                let l = self.stack[depth].next_label;
                self.stack[depth].next_label += 1;
                let cost = l + 1;
                if cost > remaining {
                    continue;
                }
                if let Some(t) = self.graph.succ[node][l] {
                    self.stack.push(Frame { next_label: 0, remaining: remaining - cost });
                    self.nodes.push(t);
                    self.labels.push(l as u32);
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                self.stack.pop();
                self.nodes.pop();
                self.labels.pop();
            }
        }
    }
}
