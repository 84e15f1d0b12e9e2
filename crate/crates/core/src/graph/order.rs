//! Evaluation orders. Both list leaves first and cover only live nodes.

use std::collections::BinaryHeap;

use super::{ComputeGraph, NodeId};

/// Level order: by longest distance from a leaf, ties broken by descending creation index.
pub fn topo_order(graph: &ComputeGraph) -> Vec<NodeId> {
    let live = graph.live();
    let mut depth = vec![0usize; graph.len()];
    for (i, n) in graph.nodes().iter().enumerate() {
        depth[i] = n
            .inputs
            .iter()
            .map(|x| depth[x.index()] + 1)
            .max()
            .unwrap_or(0);
    }
    let mut ids: Vec<NodeId> = (0..graph.len())
        .filter(|&i| live[i])
        .map(|i| NodeId(i as u32))
        .collect();
    ids.sort_by(|a, b| {
        depth[a.index()]
            .cmp(&depth[b.index()])
            .then(b.index().cmp(&a.index()))
    });
    ids
}

/// Lexicographic-topological order.
///
/// Kahn's algorithm from the leaves: the frontier holds nodes whose remaining
/// dependency count has dropped to zero, and among those the node created last
/// is scheduled first. Since derivation creates the deepest leg of a grad
/// network last, that leg is evaluated first and shorter legs can reuse its
/// prefix.
pub fn lex_topo_order(graph: &ComputeGraph) -> Vec<NodeId> {
    let live = graph.live();
    let n = graph.len();
    let mut pending = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in graph.nodes().iter().enumerate() {
        if !live[i] {
            continue;
        }
        pending[i] = node.inputs.len();
        for x in &node.inputs {
            consumers[x.index()].push(i);
        }
    }
    let mut frontier: BinaryHeap<usize> = (0..n).filter(|&i| live[i] && pending[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = frontier.pop() {
        order.push(NodeId(i as u32));
        for &c in &consumers[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                frontier.push(c);
            }
        }
    }
    order
}
