//! Graphviz DOT rendering of finished rollouts.
//!
//! The full render shows every retrieved node and landed edge; the pruned
//! render keeps only nodes lying on some directed path from the query head
//! to the predicted answer. Output order follows graph insertion order, so
//! renders are deterministic.

use crate::kg::KnowledgeGraph;
use crate::reasoner::Rollout;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn node_attrs(is_head: bool, is_answer: bool) -> &'static str {
    match (is_head, is_answer) {
        (true, true) => " [style=filled, fillcolor=\"gold\", peripheries=2]",
        (true, false) => " [style=filled, fillcolor=\"lightblue\"]",
        (false, true) => " [style=filled, fillcolor=\"palegreen\", peripheries=2]",
        (false, false) => "",
    }
}

fn render(roll: &Rollout, kg: &KnowledgeGraph, keep: Option<&[bool]>, name: &str) -> String {
    let graph = &roll.graph;
    let head = graph.entity(0);
    let kept = |i: usize| keep.map(|k| k[i]).unwrap_or(true);

    let mut out = String::new();
    out.push_str(&format!("digraph {name} {{\n"));
    out.push_str("  rankdir=LR;\n");
    for (i, &e) in graph.nodes().iter().enumerate() {
        if !kept(i) {
            continue;
        }
        let label = escape(kg.entities().name(e));
        let attrs = node_attrs(e == head, e == roll.prediction);
        out.push_str(&format!("  \"{label}\"{attrs};\n"));
    }
    for &(src, rel, dst) in graph.edges() {
        if !kept(src) || !kept(dst) {
            continue;
        }
        let s = escape(kg.entities().name(graph.entity(src)));
        let t = escape(kg.entities().name(graph.entity(dst)));
        let r = escape(kg.relations().name(rel));
        out.push_str(&format!("  \"{s}\" -> \"{t}\" [label=\"{r}\"];\n"));
    }
    out.push_str("}\n");
    out
}

/// The whole cognitive graph.
pub fn render_full(roll: &Rollout, kg: &KnowledgeGraph) -> String {
    render(roll, kg, None, "cognitive_graph")
}

/// Nodes on directed paths from the query head to the predicted answer:
/// the intersection of what the head reaches and what reaches the answer.
/// Always contains the head and the answer.
pub fn render_pruned(roll: &Rollout, kg: &KnowledgeGraph) -> String {
    let keep = path_nodes(roll);
    render(roll, kg, Some(&keep), "reasoning_paths")
}

/// Per-node flag: lies on some head-to-answer path.
pub fn path_nodes(roll: &Rollout) -> Vec<bool> {
    let graph = &roll.graph;
    let n = graph.len();
    let answer_node = graph
        .node_of(roll.prediction)
        .expect("prediction is always a graph node");

    let mut forward = vec![false; n];
    forward[0] = true;
    let mut queue = vec![0usize];
    let mut fwd_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut back_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, _, t) in graph.edges() {
        fwd_adj[s].push(t);
        back_adj[t].push(s);
    }
    while let Some(u) = queue.pop() {
        for &v in &fwd_adj[u] {
            if !forward[v] {
                forward[v] = true;
                queue.push(v);
            }
        }
    }
    let mut backward = vec![false; n];
    backward[answer_node] = true;
    queue.push(answer_node);
    while let Some(u) = queue.pop() {
        for &v in &back_adj[u] {
            if !backward[v] {
                backward[v] = true;
                queue.push(v);
            }
        }
    }
    (0..n).map(|i| forward[i] && backward[i]).collect()
}

/// Light structural validity check used by tests and the CLI: one digraph
/// block, balanced braces, quoted identifiers.
pub fn looks_like_dot(s: &str) -> bool {
    let mut depth = 0i32;
    for c in s.chars() {
        match c {
            '{' => depth += 1,
            '}' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return false;
        }
    }
    depth == 0 && s.starts_with("digraph ") && s.trim_end().ends_with('}')
}
