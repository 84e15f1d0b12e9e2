//! Graphviz listing of a graph. Edges point from a node to its dependencies.

use std::fmt::Write;

use super::{ComputeGraph, NodeKind};

fn detail(kind: &NodeKind, graph: &ComputeGraph) -> String {
    match kind {
        NodeKind::InputVar { slot } | NodeKind::InputConst { slot } => {
            format!(" {}", graph.signature()[*slot].name)
        }
        NodeKind::Constant { value } => format!(" [{}]", value.len()),
        NodeKind::Affine {
            layer,
            in_width,
            out_width,
            bias,
        } => format!(
            " L{} {in_width}->{out_width}{}",
            layer.0,
            if *bias { " +b" } else { "" }
        ),
        NodeKind::Pointwise { nl, order } => format!(" {}^({order})", nl.name()),
        NodeKind::ScaleConst { factor } => format!(" x[{}]", factor.len()),
        NodeKind::Encode { encoding, order } => format!(
            " L={}{} ^({order})",
            encoding.freqs,
            if encoding.normalized { " norm" } else { "" }
        ),
        NodeKind::Repeat { times } => format!(" x{times}"),
        NodeKind::Hadamard | NodeKind::Sum | NodeKind::Concat | NodeKind::AffinePoint => {
            String::new()
        }
    }
}

pub(super) fn to_dot(graph: &ComputeGraph, name: &str) -> String {
    let live = graph.live();
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", name.replace('"', "'"));
    let _ = writeln!(s, "  rankdir=BT;");
    for (i, n) in graph.nodes().iter().enumerate() {
        if !live[i] {
            continue;
        }
        let shape = if n.kind.is_leaf() { "ellipse" } else { "box" };
        let periph = if graph.outputs().iter().any(|o| o.index() == i) {
            ", peripheries=2"
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "  n{i} [label=\"{i}: {}{}\", shape={shape}{periph}];",
            n.kind.name(),
            detail(&n.kind, graph)
        );
    }
    for (i, n) in graph.nodes().iter().enumerate() {
        if !live[i] {
            continue;
        }
        for x in &n.inputs {
            let _ = writeln!(s, "  n{i} -> n{};", x.index());
        }
    }
    s.push_str("}\n");
    s
}
