use super::tape::concat_rows;
use super::{NnError, Tensor, Var};

/// `x · Wᵀ + b`. A 1-D `x` is treated as a single row and the result is
/// returned as a vector.
pub fn linear<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, NnError> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.len() != 2 || xs.last() != Some(&ws[1]) || b.value().numel() != ws[0] {
        return Err(NnError::ShapeMismatch { op: "linear", left: xs, right: ws });
    }
    match xs.as_slice() {
        [n] => {
            let y = x.reshape(vec![1, *n])?.matmul(w.transpose()?)?.add_row(b)?;
            y.reshape(vec![ws[0]])
        }
        [_, _] => x.matmul(w.transpose()?)?.add_row(b),
        _ => Err(NnError::ShapeMismatch { op: "linear", left: xs, right: ws }),
    }
}

/// Single-head attention `softmax(Q Hᵀ / √d) H` with `d` the shared width.
pub fn scaled_attention<'t>(q: Var<'t>, h: Var<'t>) -> Result<Var<'t>, NnError> {
    let (qs, hs) = (q.shape(), h.shape());
    if qs.len() != 2 || hs.len() != 2 || qs[1] != hs[1] {
        return Err(NnError::ShapeMismatch { op: "scaled_attention", left: qs, right: hs });
    }
    let scale = 1.0 / (qs[1] as f64).sqrt();
    q.matmul(h.transpose()?)?.scale(scale).softmax_rows().matmul(h)
}

/// `max(d(a, p) − d(a, n) + alpha, 0)` with Euclidean `d`.
pub fn triplet_loss<'t>(a: Var<'t>, p: Var<'t>, n: Var<'t>, alpha: f64) -> Result<Var<'t>, NnError> {
    if a.shape() != p.shape() || a.shape() != n.shape() {
        let other = if a.shape() != p.shape() { p.shape() } else { n.shape() };
        return Err(NnError::ShapeMismatch { op: "triplet_loss", left: a.shape(), right: other });
    }
    Ok(a.distance(p)?.sub(a.distance(n)?)?.add_const(alpha).relu())
}

/// Edges as `(head, relation, tail)` index triples into the node and
/// relation feature rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphAdjacency {
    pub n_nodes: usize,
    pub n_relations: usize,
    pub edges: Vec<(usize, usize, usize)>,
}

impl GraphAdjacency {
    pub fn new(n_nodes: usize, n_relations: usize, edges: Vec<(usize, usize, usize)>) -> Result<Self, NnError> {
        for &(h, r, t) in &edges {
            for (i, len) in [(h, n_nodes), (t, n_nodes), (r, n_relations)] {
                if i >= len {
                    return Err(NnError::IndexOutOfRange { index: i, len });
                }
            }
        }
        Ok(GraphAdjacency { n_nodes, n_relations, edges })
    }

    /// Neighbors of each node as `(node, relation)`. The self-loop comes first
    /// with relation `None`; every edge is visible from both endpoints.
    pub fn neighbor_lists(&self) -> Vec<Vec<(usize, Option<usize>)>> {
        let mut lists: Vec<Vec<(usize, Option<usize>)>> = (0..self.n_nodes).map(|i| vec![(i, None)]).collect();
        for &(h, r, t) in &self.edges {
            lists[h].push((t, Some(r)));
            if h != t {
                lists[t].push((h, Some(r)));
            }
        }
        lists
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphLayerKind {
    /// Relation-aware messages and attention.
    Rgat,
    /// Attention without relation terms.
    Gat,
    /// Mean aggregation without relation terms.
    Gnn,
}

impl std::str::FromStr for GraphLayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgat" => Ok(GraphLayerKind::Rgat),
            "gat" => Ok(GraphLayerKind::Gat),
            "gnn" => Ok(GraphLayerKind::Gnn),
            other => Err(format!("unknown graph layer kind {other:?}; expected rgat, gat or gnn")),
        }
    }
}

impl GraphLayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphLayerKind::Rgat => "rgat",
            GraphLayerKind::Gat => "gat",
            GraphLayerKind::Gnn => "gnn",
        }
    }
}

/// Weights of one graph layer. `w_node` and `w_rel` are `[d, d]`, `attn` is
/// `[2d]`, `self_rel` is `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct GraphParams<'t> {
    pub w_node: Var<'t>,
    pub w_rel: Var<'t>,
    pub attn: Var<'t>,
    pub self_rel: Var<'t>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphLayer {
    pub kind: GraphLayerKind,
    pub leaky_slope: f64,
    pub elu_alpha: f64,
}

impl GraphLayer {
    pub fn new(kind: GraphLayerKind) -> Self {
        GraphLayer { kind, leaky_slope: 0.2, elu_alpha: 1.0 }
    }

    /// One round of message passing. For node `i` with neighbors `j`:
    /// `m_ij = W_h h_j + W_r g_r`, `e_ij = LeakyReLU(aᵀ[W_h h_i ; m_ij])`,
    /// `h'_i = ELU(Σ softmax_j(e_ij) m_ij)`.
    pub fn forward<'t>(
        &self,
        p: &GraphParams<'t>,
        nodes: Var<'t>,
        relations: Option<Var<'t>>,
        adj: &GraphAdjacency,
    ) -> Result<Var<'t>, NnError> {
        let ns = nodes.shape();
        if ns.len() != 2 || ns[0] != adj.n_nodes {
            return Err(NnError::ShapeMismatch { op: "graph_layer", left: ns, right: vec![adj.n_nodes] });
        }
        let d = ns[1];
        let wh = nodes.matmul(p.w_node.transpose()?)?;
        let rel_msgs = match self.kind {
            GraphLayerKind::Rgat => {
                let self_row = p.self_rel.reshape(vec![1, d])?;
                let table = match relations {
                    Some(r) if adj.n_relations > 0 => {
                        if r.shape() != vec![adj.n_relations, d] {
                            return Err(NnError::ShapeMismatch {
                                op: "graph_layer",
                                left: r.shape(),
                                right: vec![adj.n_relations, d],
                            });
                        }
                        concat_rows(&[r, self_row])?
                    }
                    _ if adj.edges.is_empty() => self_row,
                    _ => {
                        return Err(NnError::ShapeMismatch {
                            op: "graph_layer",
                            left: vec![],
                            right: vec![adj.n_relations, d],
                        })
                    }
                };
                let self_index = table.rows() - 1;
                Some((table.matmul(p.w_rel.transpose()?)?, self_index))
            }
            GraphLayerKind::Gat | GraphLayerKind::Gnn => None,
        };
        let attn = p.attn.reshape(vec![2 * d, 1])?;
        let mut rows = Vec::with_capacity(adj.n_nodes);
        for (i, neigh) in adj.neighbor_lists().into_iter().enumerate() {
            let js: Vec<usize> = neigh.iter().map(|(j, _)| *j).collect();
            let mut msgs = wh.gather_rows(&js)?;
            if let Some((table, self_index)) = rel_msgs {
                let rs: Vec<usize> = neigh.iter().map(|(_, r)| r.unwrap_or(self_index)).collect();
                msgs = msgs.add(table.gather_rows(&rs)?)?;
            }
            let k = js.len();
            let weights = match self.kind {
                GraphLayerKind::Gnn => nodes.tape().constant(Tensor::new(vec![1, k], vec![1.0 / k as f64; k])?),
                _ => {
                    let keys = wh.gather_rows(&vec![i; k])?;
                    let logits = keys.concat_cols(msgs)?.matmul(attn)?.transpose()?;
                    logits.leaky_relu(self.leaky_slope).softmax_rows()
                }
            };
            rows.push(weights.matmul(msgs)?);
        }
        Ok(concat_rows(&rows)?.elu(self.elu_alpha))
    }
}
