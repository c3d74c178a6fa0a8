//! Candidate hypergraph: subject, object and relation nodes joined by
//! subject-object-relation (`sor`), joint-crime (`jc`) and crime-parallel
//! (`cp`) hyperedges, with attention-weighted message passing and the
//! entity/relation classifier heads.
//!
//! Node layout for `P` candidates: subjects `0..P`, objects `P..2P`, then
//! one relation node per ordered pair `(a, b)`, `a ≠ b`, at
//! `2P + rel_index(a, b)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Builder, Ffnn, Linear, Mlp};
use crate::nn::{Graph, Var};

pub const DEFAULT_MAX_CANDIDATES: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Topology {
    NoEdge,
    Sor,
    Jc,
    Cp,
    SorJc,
    SorCp,
    JcCp,
    #[default]
    SorJcCp,
}

impl Topology {
    pub const ALL: [Topology; 8] =
        [Topology::NoEdge, Topology::Sor, Topology::Jc, Topology::Cp, Topology::SorJc, Topology::SorCp, Topology::JcCp, Topology::SorJcCp];

    pub fn name(self) -> &'static str {
        match self {
            Topology::NoEdge => "noedge",
            Topology::Sor => "sor",
            Topology::Jc => "jc",
            Topology::Cp => "cp",
            Topology::SorJc => "sorjc",
            Topology::SorCp => "sorcp",
            Topology::JcCp => "jccp",
            Topology::SorJcCp => "sorjccp",
        }
    }

    pub fn has_sor(self) -> bool {
        matches!(self, Topology::Sor | Topology::SorJc | Topology::SorCp | Topology::SorJcCp)
    }

    pub fn has_jc(self) -> bool {
        matches!(self, Topology::Jc | Topology::SorJc | Topology::JcCp | Topology::SorJcCp)
    }

    pub fn has_cp(self) -> bool {
        matches!(self, Topology::Cp | Topology::SorCp | Topology::JcCp | Topology::SorJcCp)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Topology::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown topology {s:?}; expected one of noedge, sor, jc, cp, sorjc, sorcp, jccp, sorjccp"))
        })
    }
}

impl Serialize for Topology {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Topology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sor,
    Jc,
    Cp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Subject(usize),
    Object(usize),
    Relation(usize, usize),
}

/// Index of ordered pair `(a, b)` among the `P(P−1)` relation nodes.
pub fn rel_index(p: usize, a: usize, b: usize) -> usize {
    debug_assert!(a != b && a < p && b < p);
    a * (p - 1) + if b < a { b } else { b - 1 }
}

/// One (node, hyperedge) membership.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Incidence {
    pub node: usize,
    /// Edge index in message order: sor edges, then jc, then cp.
    pub edge: usize,
    pub family: Family,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyDegree {
    pub sor: usize,
    pub jc: usize,
    pub cp: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypergraph {
    pub p: usize,
    pub topology: Topology,
    /// `(a, b)`: subject `a`, object `b`, relation `(a, b)`.
    pub sor: Vec<(usize, usize)>,
    /// `(a, b, c)` with `a < b`: relations `(a, c)` and `(b, c)` share object `c`.
    pub jc: Vec<(usize, usize, usize)>,
    /// `(a, b, c)` with `b < c`: relations `(a, b)` and `(a, c)` share subject `a`.
    pub cp: Vec<(usize, usize, usize)>,
    pub incidences: Vec<Incidence>,
}

impl Hypergraph {
    pub fn build(p: usize, topology: Topology) -> Self {
        let mut hg = Hypergraph { p, topology, sor: Vec::new(), jc: Vec::new(), cp: Vec::new(), incidences: Vec::new() };
        if topology.has_sor() {
            for a in 0..p {
                for b in (0..p).filter(|&b| b != a) {
                    hg.sor.push((a, b));
                }
            }
        }
        if topology.has_jc() {
            for c in 0..p {
                for a in (0..p).filter(|&a| a != c) {
                    for b in (a + 1..p).filter(|&b| b != c) {
                        hg.jc.push((a, b, c));
                    }
                }
            }
        }
        if topology.has_cp() {
            for a in 0..p {
                for b in (0..p).filter(|&b| b != a) {
                    for c in (b + 1..p).filter(|&c| c != a) {
                        hg.cp.push((a, b, c));
                    }
                }
            }
        }
        let mut inc = Vec::with_capacity(3 * hg.sor.len() + 2 * (hg.jc.len() + hg.cp.len()));
        for (e, &(a, b)) in hg.sor.iter().enumerate() {
            for node in [hg.subject(a), hg.object(b), hg.relation(a, b)] {
                inc.push(Incidence { node, edge: e, family: Family::Sor });
            }
        }
        let base = hg.sor.len();
        for (e, &(a, b, c)) in hg.jc.iter().enumerate() {
            for node in [hg.relation(a, c), hg.relation(b, c)] {
                inc.push(Incidence { node, edge: base + e, family: Family::Jc });
            }
        }
        let base = base + hg.jc.len();
        for (e, &(a, b, c)) in hg.cp.iter().enumerate() {
            for node in [hg.relation(a, b), hg.relation(a, c)] {
                inc.push(Incidence { node, edge: base + e, family: Family::Cp });
            }
        }
        hg.incidences = inc;
        hg
    }

    pub fn num_nodes(&self) -> usize {
        2 * self.p + self.num_relations()
    }

    pub fn num_relations(&self) -> usize {
        self.p * self.p.saturating_sub(1)
    }

    pub fn num_edges(&self) -> usize {
        self.sor.len() + self.jc.len() + self.cp.len()
    }

    pub fn subject(&self, a: usize) -> usize {
        a
    }

    pub fn object(&self, b: usize) -> usize {
        self.p + b
    }

    pub fn relation(&self, a: usize, b: usize) -> usize {
        2 * self.p + rel_index(self.p, a, b)
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        let p = self.p;
        if node < p {
            NodeKind::Subject(node)
        } else if node < 2 * p {
            NodeKind::Object(node - p)
        } else {
            let r = node - 2 * p;
            let a = r / (p - 1);
            let k = r % (p - 1);
            NodeKind::Relation(a, if k < a { k } else { k + 1 })
        }
    }

    pub fn degree(&self, node: usize) -> FamilyDegree {
        let mut d = FamilyDegree::default();
        for inc in self.incidences.iter().filter(|i| i.node == node) {
            match inc.family {
                Family::Sor => d.sor += 1,
                Family::Jc => d.jc += 1,
                Family::Cp => d.cp += 1,
            }
        }
        d
    }

    /// Per-node degrees in one pass.
    pub fn degrees(&self) -> Vec<FamilyDegree> {
        let mut out = vec![FamilyDegree::default(); self.num_nodes()];
        for inc in &self.incidences {
            let d = &mut out[inc.node];
            match inc.family {
                Family::Sor => d.sor += 1,
                Family::Jc => d.jc += 1,
                Family::Cp => d.cp += 1,
            }
        }
        out
    }

    /// Memberships that would carry a jc or cp message into an entity node.
    pub fn entity_non_sor_incidences(&self) -> usize {
        self.incidences.iter().filter(|i| i.node < 2 * self.p && i.family != Family::Sor).count()
    }
}

/// Hyperedge message counts seen by one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTraffic {
    pub sor_edges: usize,
    pub jc_edges: usize,
    pub cp_edges: usize,
    /// Messages delivered to subject or object nodes, by family.
    pub entity_from_sor: usize,
    pub entity_from_jc: usize,
    pub entity_from_cp: usize,
    pub relation_deliveries: usize,
}

impl MessageTraffic {
    pub fn of(hg: &Hypergraph) -> Self {
        let mut t = MessageTraffic { sor_edges: hg.sor.len(), jc_edges: hg.jc.len(), cp_edges: hg.cp.len(), ..Default::default() };
        for inc in &hg.incidences {
            if inc.node < 2 * hg.p {
                match inc.family {
                    Family::Sor => t.entity_from_sor += 1,
                    Family::Jc => t.entity_from_jc += 1,
                    Family::Cp => t.entity_from_cp += 1,
                }
            } else {
                t.relation_deliveries += 1;
            }
        }
        t
    }

    pub fn add(&mut self, other: &MessageTraffic) {
        self.sor_edges += other.sor_edges;
        self.jc_edges += other.jc_edges;
        self.cp_edges += other.cp_edges;
        self.entity_from_sor += other.entity_from_sor;
        self.entity_from_jc += other.entity_from_jc;
        self.entity_from_cp += other.entity_from_cp;
        self.relation_deliveries += other.relation_deliveries;
    }
}

/// One round of message passing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HgnnLayer {
    pub sor: Ffnn,
    pub jc: Ffnn,
    pub cp: Ffnn,
    pub node_proj: Ffnn,
    /// `W`, `b` of the attention score, on `[FFNN_V(g) ⊕ m]`.
    pub attn_hidden: Linear,
    /// `w`, `c` of the attention score.
    pub attn_out: Linear,
    pub dim: usize,
}

pub struct LayerOutput {
    pub states: Var,
    /// Attention weight per incidence, aligned with `Hypergraph::incidences`;
    /// `None` when the graph has no edges.
    pub attention: Option<Var>,
}

impl HgnnLayer {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize) -> Self {
        b.scoped(name, |b| HgnnLayer {
            sor: Ffnn::new(b, "sor", 3 * dim, dim),
            jc: Ffnn::new(b, "jc", 2 * dim, dim),
            cp: Ffnn::new(b, "cp", 2 * dim, dim),
            node_proj: Ffnn::new(b, "node", dim, dim),
            attn_hidden: Linear::new(b, "attn_hidden", 2 * dim, dim),
            attn_out: Linear::new(b, "attn_out", dim, 1),
            dim,
        })
    }

    /// `x · W[block]` for the `block`-th `dim`-row slice of a concatenated
    /// linear map. Applying each slice to its own input and summing equals
    /// applying the full map to the concatenation.
    fn project(&self, g: &mut Graph<'_>, x: Var, layer: &Linear, block: usize) -> Var {
        let w = g.param(layer.weight);
        let w = g.slice_rows(w, block * self.dim, self.dim);
        g.matmul(x, w)
    }

    /// Symmetrised pair message `½(φ(W₁x + W₂y + b) + φ(W₁y + W₂x + b))`.
    fn pair_messages(&self, g: &mut Graph<'_>, rel: Var, ffnn: &Ffnn, pairs: &[(usize, usize)]) -> Var {
        let first = self.project(g, rel, &ffnn.linear, 0);
        let second = self.project(g, rel, &ffnn.linear, 1);
        let bias = g.param(ffnn.linear.bias);
        let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let branch = |g: &mut Graph<'_>, x: &[usize], y: &[usize]| {
            let u = g.gather_rows(first, x.to_vec());
            let v = g.gather_rows(second, y.to_vec());
            let s = g.add(u, v);
            let s = g.add_row(s, bias);
            g.gelu(s)
        };
        let forward = branch(g, &left, &right);
        let backward = branch(g, &right, &left);
        let sum = g.add(forward, backward);
        g.scale(sum, 0.5)
    }

    pub fn forward(&self, g: &mut Graph<'_>, states: Var, hg: &Hypergraph) -> LayerOutput {
        if hg.num_edges() == 0 {
            return LayerOutput { states, attention: None };
        }
        let p = hg.p;
        let mut parts = Vec::with_capacity(3);
        if !hg.sor.is_empty() {
            let subj = g.slice_rows(states, 0, p);
            let obj = g.slice_rows(states, p, p);
            let rel = g.slice_rows(states, 2 * p, hg.num_relations());
            let ps = self.project(g, subj, &self.sor.linear, 0);
            let po = self.project(g, obj, &self.sor.linear, 1);
            let pr = self.project(g, rel, &self.sor.linear, 2);
            let s = g.gather_rows(ps, hg.sor.iter().map(|e| e.0).collect::<Vec<_>>());
            let o = g.gather_rows(po, hg.sor.iter().map(|e| e.1).collect::<Vec<_>>());
            let r = g.gather_rows(pr, hg.sor.iter().map(|&(a, b)| rel_index(p, a, b)).collect::<Vec<_>>());
            let pre = g.add(s, o);
            let pre = g.add(pre, r);
            let bias = g.param(self.sor.linear.bias);
            let pre = g.add_row(pre, bias);
            parts.push(g.gelu(pre));
        }
        if !hg.jc.is_empty() || !hg.cp.is_empty() {
            let rel = g.slice_rows(states, 2 * p, hg.num_relations());
            if !hg.jc.is_empty() {
                let pairs: Vec<_> = hg.jc.iter().map(|&(a, b, c)| (rel_index(p, a, c), rel_index(p, b, c))).collect();
                parts.push(self.pair_messages(g, rel, &self.jc, &pairs));
            }
            if !hg.cp.is_empty() {
                let pairs: Vec<_> = hg.cp.iter().map(|&(a, b, c)| (rel_index(p, a, b), rel_index(p, a, c))).collect();
                parts.push(self.pair_messages(g, rel, &self.cp, &pairs));
            }
        }
        let messages = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };

        let nodes: Vec<usize> = hg.incidences.iter().map(|i| i.node).collect();
        let edges: Vec<usize> = hg.incidences.iter().map(|i| i.edge).collect();
        let projected = self.node_proj.forward(g, states);
        let from_node = self.project(g, projected, &self.attn_hidden, 0);
        let from_msg = self.project(g, messages, &self.attn_hidden, 1);
        let a = g.gather_rows(from_node, nodes.clone());
        let m = g.gather_rows(from_msg, edges.clone());
        let pre = g.add(a, m);
        let bias = g.param(self.attn_hidden.bias);
        let pre = g.add_row(pre, bias);
        let hidden = g.tanh(pre);
        let scores = self.attn_out.forward(g, hidden);
        let beta = g.segment_softmax(scores, nodes.clone());

        let delivered = g.gather_rows(messages, edges);
        let weighted = g.mul_col(delivered, beta);
        let total = g.scatter_add_rows(weighted, nodes, hg.num_nodes());
        let update = g.tanh(total);
        LayerOutput { states: g.add(states, update), attention: Some(beta) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HgnnStack {
    pub layers: Vec<HgnnLayer>,
}

impl HgnnStack {
    pub fn new(b: &mut Builder<'_>, dim: usize, layers: usize) -> Self {
        b.scoped("hgnn", |b| HgnnStack { layers: (0..layers).map(|i| HgnnLayer::new(b, &format!("layer{i}"), dim)).collect() })
    }

    pub fn forward(&self, g: &mut Graph<'_>, states: Var, hg: &Hypergraph) -> Var {
        self.layers.iter().fold(states, |x, layer| layer.forward(g, x, hg).states)
    }
}

/// Entity and relation classifiers over final node states; class 0 is null.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Heads {
    pub entity: Mlp,
    pub relation: Mlp,
}

pub struct Logits {
    /// `P × (entity types + 1)`.
    pub entity: Var,
    /// `P(P−1) × (relation types + 1)` in `rel_index` order; `None` for `P < 2`.
    pub relation: Option<Var>,
}

impl Heads {
    pub fn new(b: &mut Builder<'_>, dim: usize, hidden: usize, entity_classes: usize, relation_classes: usize) -> Self {
        b.scoped("heads", |b| Heads {
            entity: Mlp::new(b, "entity", 2 * dim, hidden, entity_classes),
            relation: Mlp::new(b, "relation", dim, hidden, relation_classes),
        })
    }

    pub fn classify(&self, g: &mut Graph<'_>, states: Var, hg: &Hypergraph) -> Logits {
        let p = hg.p;
        let subj = g.slice_rows(states, 0, p);
        let obj = g.slice_rows(states, p, p);
        let pair = g.concat_cols(&[subj, obj]);
        let entity = self.entity.forward(g, pair);
        let relation = (p >= 2).then(|| {
            let rel = g.slice_rows(states, 2 * p, hg.num_relations());
            self.relation.forward(g, rel)
        });
        Logits { entity, relation }
    }
}

pub struct JointLoss {
    pub total: Var,
    pub ner: Var,
    pub re: Option<Var>,
}

/// Summed cross-entropy over candidates plus summed cross-entropy over
/// ordered pairs.
pub fn joint_loss(g: &mut Graph<'_>, logits: &Logits, entity_targets: &[usize], relation_targets: &[usize]) -> JointLoss {
    let ner = g.cross_entropy(logits.entity, entity_targets.to_vec());
    match logits.relation {
        Some(rel) => {
            let re = g.cross_entropy(rel, relation_targets.to_vec());
            JointLoss { total: g.add(ner, re), ner, re: Some(re) }
        }
        None => JointLoss { total: ner, ner, re: None },
    }
}

pub fn check_candidate_cap(p: usize, cap: usize) -> Result<()> {
    if p > cap {
        return Err(Error::TooManyCandidates { count: p, cap });
    }
    Ok(())
}
