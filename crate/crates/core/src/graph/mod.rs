//! Explicit computational graphs over batched row vectors.
//!
//! A [`ComputeGraph`] is an append-only DAG: a node may only consume nodes
//! created before it, so acyclicity holds by construction. Every node value is
//! a `(rows, width)` matrix where `rows` is either the batch size or 1
//! (a row broadcast across the batch, used for constants).
//!
//! Edges point towards dependencies. The in-degree of a node is therefore the
//! number of live consumers; outputs have in-degree zero.

mod backward;
mod dot;
mod ops;
mod order;
mod plan;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::activation::{Nonlinearity, MAX_NL_ORDER};
use crate::nets::encoding::{Encoding, MAX_ENCODE_NODE_ORDER};
use crate::nets::params::LayerId;

pub use backward::{backward, Backward};
pub use plan::{evaluate, record_tape, EvalReport, Tape};

pub(crate) use plan::Plan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("input arity mismatch: {0}")]
    InputArity(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("width mismatch: {0}")]
    Width(String),
    #[error("derivative depth exceeded: {0}")]
    DerivativeDepth(String),
    #[error("unknown input `{0}`")]
    UnknownInput(String),
    #[error("`{0}` is not an integration variable of this graph")]
    NotAVariable(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("internal: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    /// The scalar variable of integration.
    Var,
    /// Any other network input.
    Const,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSlot {
    pub name: String,
    pub kind: SlotKind,
    pub width: usize,
}

impl InputSlot {
    pub fn var(name: &str) -> Self {
        InputSlot {
            name: name.to_string(),
            kind: SlotKind::Var,
            width: 1,
        }
    }

    pub fn constant(name: &str, width: usize) -> Self {
        InputSlot {
            name: name.to_string(),
            kind: SlotKind::Const,
            width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    InputVar {
        slot: usize,
    },
    InputConst {
        slot: usize,
    },
    /// A batch-independent row vector.
    Constant {
        value: Vec<f64>,
    },
    /// `y = W x (+ b)`. The derivative of an affine node is the same layer without bias.
    Affine {
        layer: LayerId,
        in_width: usize,
        out_width: usize,
        bias: bool,
    },
    Pointwise {
        nl: Nonlinearity,
        order: u8,
    },
    Hadamard,
    Sum,
    /// Multiply by a fixed row vector (length 1 broadcasts).
    ScaleConst {
        factor: Vec<f64>,
    },
    Encode {
        encoding: Encoding,
        order: u8,
    },
    /// Each component repeated `times` times consecutively.
    Repeat {
        times: usize,
    },
    Concat,
    /// `x = o + t d`, inputs `[o, t, d]`.
    AffinePoint,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::InputVar { .. } => "InputVar",
            NodeKind::InputConst { .. } => "InputConst",
            NodeKind::Constant { .. } => "Constant",
            NodeKind::Affine { .. } => "Affine",
            NodeKind::Pointwise { .. } => "Pointwise",
            NodeKind::Hadamard => "Hadamard",
            NodeKind::Sum => "Sum",
            NodeKind::ScaleConst { .. } => "ScaleConst",
            NodeKind::Encode { .. } => "Encode",
            NodeKind::Repeat { .. } => "Repeat",
            NodeKind::Concat => "Concat",
            NodeKind::AffinePoint => "AffinePoint",
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self,
            NodeKind::InputVar { .. } | NodeKind::InputConst { .. } | NodeKind::Constant { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub width: usize,
    pub creation_index: usize,
}

impl Node {
    pub fn param_ref(&self) -> Option<LayerId> {
        match self.kind {
            NodeKind::Affine { layer, .. } => Some(layer),
            _ => None,
        }
    }
}

#[derive(Debug, Default)]
struct Cache {
    reuse: OnceLock<Arc<Plan>>,
    naive: OnceLock<Arc<Plan>>,
    in_degree: OnceLock<Vec<usize>>,
}

impl Clone for Cache {
    fn clone(&self) -> Self {
        Cache::default()
    }
}

/// An append-only DAG of layer-level operations.
///
/// The leading nodes are the input slots, one node per slot in signature order.
#[derive(Debug, Clone)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
    signature: Vec<InputSlot>,
    cache: Cache,
}

impl ComputeGraph {
    pub fn new(signature: Vec<InputSlot>) -> Self {
        let mut g = ComputeGraph {
            nodes: Vec::new(),
            outputs: Vec::new(),
            signature: Vec::new(),
            cache: Cache::default(),
        };
        for (slot, s) in signature.iter().enumerate() {
            let kind = match s.kind {
                SlotKind::Var => NodeKind::InputVar { slot },
                SlotKind::Const => NodeKind::InputConst { slot },
            };
            let width = if s.kind == SlotKind::Var { 1 } else { s.width };
            g.push(kind, Vec::new(), width);
        }
        g.signature = signature
            .into_iter()
            .map(|mut s| {
                if s.kind == SlotKind::Var {
                    s.width = 1;
                }
                s
            })
            .collect();
        g
    }

    pub fn signature(&self) -> &[InputSlot] {
        &self.signature
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// All node ids in creation order, dead nodes included.
    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.signature.iter().position(|s| s.name == name)
    }

    /// Leaf node for the named input slot.
    pub fn input(&self, name: &str) -> Result<NodeId, GraphError> {
        self.slot_index(name)
            .map(|i| NodeId(i as u32))
            .ok_or_else(|| GraphError::UnknownInput(name.to_string()))
    }

    pub fn var_slots(&self) -> impl Iterator<Item = (usize, &InputSlot)> {
        self.signature
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == SlotKind::Var)
    }

    fn push(&mut self, kind: NodeKind, inputs: Vec<NodeId>, width: usize) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            kind,
            inputs,
            width,
            creation_index: id.index(),
        });
        self.cache = Cache::default();
        id
    }

    fn width_of(&self, id: NodeId) -> Result<usize, GraphError> {
        self.nodes
            .get(id.index())
            .map(|n| n.width)
            .ok_or_else(|| GraphError::Internal(format!("node {} does not exist", id.0)))
    }

    /// Appends a node after validating widths and derivative orders.
    pub fn add(&mut self, kind: NodeKind, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let widths = inputs
            .iter()
            .map(|&i| self.width_of(i))
            .collect::<Result<Vec<_>, _>>()?;
        let arity = |n: usize| -> Result<(), GraphError> {
            if widths.len() == n {
                Ok(())
            } else {
                Err(GraphError::Width(format!(
                    "{} expects {n} inputs, got {}",
                    kind.name(),
                    widths.len()
                )))
            }
        };
        let width = match &kind {
            NodeKind::InputVar { .. } | NodeKind::InputConst { .. } => {
                return Err(GraphError::Internal(
                    "input leaves are created from the signature".into(),
                ))
            }
            NodeKind::Constant { value } => {
                arity(0)?;
                value.len()
            }
            NodeKind::Affine {
                in_width,
                out_width,
                ..
            } => {
                arity(1)?;
                if widths[0] != *in_width {
                    return Err(GraphError::Width(format!(
                        "affine expects width {in_width}, input has {}",
                        widths[0]
                    )));
                }
                *out_width
            }
            NodeKind::Pointwise { order, .. } => {
                arity(1)?;
                if *order > MAX_NL_ORDER {
                    return Err(GraphError::DerivativeDepth(format!(
                        "pointwise order {order} exceeds {MAX_NL_ORDER}"
                    )));
                }
                widths[0]
            }
            NodeKind::Hadamard | NodeKind::Sum => {
                if widths.is_empty() {
                    return Err(GraphError::Width(format!("{} needs inputs", kind.name())));
                }
                if widths.iter().any(|&w| w != widths[0]) {
                    return Err(GraphError::Width(format!(
                        "{} inputs differ in width: {widths:?}",
                        kind.name()
                    )));
                }
                widths[0]
            }
            NodeKind::ScaleConst { factor } => {
                arity(1)?;
                if factor.len() != 1 && factor.len() != widths[0] {
                    return Err(GraphError::Width(format!(
                        "scale factor of length {} for width {}",
                        factor.len(),
                        widths[0]
                    )));
                }
                widths[0]
            }
            NodeKind::Encode { encoding, order } => {
                arity(1)?;
                if *order > MAX_ENCODE_NODE_ORDER {
                    return Err(GraphError::DerivativeDepth(format!(
                        "encode order {order} exceeds {MAX_ENCODE_NODE_ORDER}"
                    )));
                }
                encoding.out_width(widths[0])
            }
            NodeKind::Repeat { times } => {
                arity(1)?;
                widths[0] * times
            }
            NodeKind::Concat => {
                if widths.is_empty() {
                    return Err(GraphError::Width("concat needs inputs".into()));
                }
                widths.iter().sum()
            }
            NodeKind::AffinePoint => {
                arity(3)?;
                if widths[1] != 1 || widths[0] != widths[2] {
                    return Err(GraphError::Width(format!(
                        "affine point expects [o, t, d] with |o| = |d| and scalar t, got {widths:?}"
                    )));
                }
                widths[0]
            }
        };
        Ok(self.push(kind, inputs.to_vec(), width))
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Result<NodeId, GraphError> {
        self.add(NodeKind::Constant { value }, &[])
    }

    pub fn affine(
        &mut self,
        x: NodeId,
        layer: LayerId,
        in_width: usize,
        out_width: usize,
        bias: bool,
    ) -> Result<NodeId, GraphError> {
        self.add(
            NodeKind::Affine {
                layer,
                in_width,
                out_width,
                bias,
            },
            &[x],
        )
    }

    pub fn pointwise(&mut self, x: NodeId, nl: Nonlinearity, order: u8) -> Result<NodeId, GraphError> {
        self.add(NodeKind::Pointwise { nl, order }, &[x])
    }

    pub fn hadamard(&mut self, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.add(NodeKind::Hadamard, xs)
    }

    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.add(NodeKind::Sum, xs)
    }

    pub fn scale(&mut self, x: NodeId, factor: Vec<f64>) -> Result<NodeId, GraphError> {
        self.add(NodeKind::ScaleConst { factor }, &[x])
    }

    pub fn encode(&mut self, x: NodeId, encoding: Encoding, order: u8) -> Result<NodeId, GraphError> {
        self.add(NodeKind::Encode { encoding, order }, &[x])
    }

    pub fn repeat(&mut self, x: NodeId, times: usize) -> Result<NodeId, GraphError> {
        self.add(NodeKind::Repeat { times }, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.add(NodeKind::Concat, xs)
    }

    pub fn affine_point(&mut self, o: NodeId, t: NodeId, d: NodeId) -> Result<NodeId, GraphError> {
        self.add(NodeKind::AffinePoint, &[o, t, d])
    }

    pub fn set_outputs(&mut self, outputs: Vec<NodeId>) -> Result<(), GraphError> {
        for o in &outputs {
            self.width_of(*o)?;
        }
        self.outputs = outputs;
        self.cache = Cache::default();
        Ok(())
    }

    /// Nodes reachable from the outputs. Everything else is dead.
    pub fn live(&self) -> Vec<bool> {
        let mut live = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = self.outputs.clone();
        while let Some(id) = stack.pop() {
            if live[id.index()] {
                continue;
            }
            live[id.index()] = true;
            stack.extend(self.nodes[id.index()].inputs.iter().copied());
        }
        live
    }

    /// Number of live nodes (the naive, per-reference node count).
    pub fn live_count(&self) -> usize {
        self.live().iter().filter(|&&l| l).count()
    }

    /// Live consumer count per node, computed once per graph version.
    pub fn in_degree(&self) -> &[usize] {
        self.cache.in_degree.get_or_init(|| {
            let live = self.live();
            let mut deg = vec![0usize; self.nodes.len()];
            for (i, n) in self.nodes.iter().enumerate() {
                if live[i] {
                    for inp in &n.inputs {
                        deg[inp.index()] += 1;
                    }
                }
            }
            deg
        })
    }

    /// Copy of this graph without dead nodes. Input leaves are always kept;
    /// relative creation order is preserved.
    pub fn pruned(&self) -> ComputeGraph {
        let live = self.live();
        let mut remap = vec![None; self.nodes.len()];
        let mut out = ComputeGraph {
            nodes: Vec::new(),
            outputs: Vec::new(),
            signature: self.signature.clone(),
            cache: Cache::default(),
        };
        for (i, n) in self.nodes.iter().enumerate() {
            if !live[i] && !n.kind.is_input() {
                continue;
            }
            let inputs = n
                .inputs
                .iter()
                .map(|x| remap[x.index()].expect("inputs precede consumers"))
                .collect();
            remap[i] = Some(out.push(n.kind.clone(), inputs, n.width));
        }
        out.outputs = self
            .outputs
            .iter()
            .map(|o| remap[o.index()].expect("outputs are live"))
            .collect();
        out
    }

    pub(crate) fn plan(&self, reuse: bool) -> Arc<Plan> {
        let cell = if reuse {
            &self.cache.reuse
        } else {
            &self.cache.naive
        };
        cell.get_or_init(|| Arc::new(Plan::compile(self, reuse))).clone()
    }

    /// DOT listing of the live graph.
    pub fn to_dot(&self, name: &str) -> String {
        dot::to_dot(self, name)
    }
}

impl NodeKind {
    fn is_input(&self) -> bool {
        matches!(self, NodeKind::InputVar { .. } | NodeKind::InputConst { .. })
    }
}

pub use order::{lex_topo_order, topo_order};
