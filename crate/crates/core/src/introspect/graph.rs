use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nse::Trace;

/// A directed edge from the token read at `step` to the slot it addressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub step: usize,
    pub from: usize,
    pub to: usize,
    /// Self-masking was requested but no other slot exists, so the edge
    /// falls back to slot 0.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssociationGraph {
    /// Token at each position; position `i` is also memory slot `i`.
    pub tokens: Vec<String>,
    pub edges: Vec<Edge>,
}

/// One edge per record, to the argmax slot. With `self_mask`, a step whose
/// argmax is its own slot links to the best other slot instead.
pub fn build_graph(trace: &Trace, self_mask: bool) -> Result<AssociationGraph> {
    if trace.is_empty() {
        return Err(Error::Input("cannot build a graph from an empty trace".into()));
    }
    let tokens: Vec<String> = match &trace.tokens {
        Some(t) => t.clone(),
        None => trace.records.iter().map(|r| r.token.clone()).collect(),
    };
    let mut edges = Vec::with_capacity(trace.len());
    for r in &trace.records {
        if r.z.len() != tokens.len() {
            return Err(Error::Input(format!(
                "step {}: key vector over {} slots, but the sequence has {} tokens",
                r.step,
                r.z.len(),
                tokens.len()
            )));
        }
        if r.step >= tokens.len() || r.argmax >= r.z.len() {
            return Err(Error::Input(format!("step {} lies outside the memory", r.step)));
        }
        let (to, fallback) = if self_mask && r.argmax == r.step {
            match r.best_excluding(r.step) {
                Some(s) => (s, false),
                None => (0, true),
            }
        } else {
            (r.argmax, false)
        };
        edges.push(Edge {
            step: r.step,
            from: r.step,
            to,
            fallback,
        });
    }
    Ok(AssociationGraph { tokens, edges })
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz text. Nodes are `n<pos>` labeled `token@pos`; edges follow step
/// order, and fallback edges are dashed.
pub fn emit_dot(g: &AssociationGraph) -> String {
    let mut s = String::from("digraph nse {\n  rankdir=LR;\n  node [shape=box];\n");
    for (i, t) in g.tokens.iter().enumerate() {
        let _ = writeln!(s, "  n{i} [label=\"{}@{i}\"];", escape(t));
    }
    for e in &g.edges {
        let style = if e.fallback { " [style=dashed]" } else { "" };
        let _ = writeln!(s, "  n{} -> n{}{style};", e.from, e.to);
    }
    s.push_str("}\n");
    s
}
