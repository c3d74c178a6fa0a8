//! The joint entity/relation model: candidate encoding with lexicon
//! augmentation, hypergraph inference, decoding, and its training loop.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    pack_neighborhood, pack_subject_oriented, EncoderConfig, LegalAugment, PackedInput, SequenceEncoder, TransformerEncoder,
};
use crate::error::{Error, Result};
use crate::hypergraph::{
    check_candidate_cap, joint_loss, rel_index, Heads, HgnnStack, Hypergraph, JointLoss, Logits, MessageTraffic, Topology,
    DEFAULT_MAX_CANDIDATES,
};
use crate::lexicon::{build_mask, Lexicon, MaskMatrix};
use crate::nn::graph::MASK_PENALTY;
use crate::nn::layers::{Builder, Ffnn};
use crate::nn::{run_epoch, Adam, Graph, Mat, ParamGroup, ParamStore, TrainOptions, Var};
use crate::schema::{Document, EntityMention, LabelSchema, RelationMention, SpanRef};
use crate::spangen::{gold_spans, select_candidates, select_with_gold, CandidateSet, SpanGenerator};
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfig {
    /// Top-P ratio.
    pub gamma: f64,
    /// Fixed scale on the blended representation.
    pub omega: f64,
    /// Initial weight of the general representation in the blend.
    pub lambda_init: f64,
    pub topology: Topology,
    pub hgnn_layers: usize,
    /// Hidden size of the entity and relation classifiers.
    pub head_hidden: usize,
    pub max_candidates: usize,
    /// Add gold entity spans to the training candidates.
    pub force_gold: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            gamma: 0.5,
            omega: 0.5,
            lambda_init: 1.0,
            topology: Topology::SorJcCp,
            hgnn_layers: 2,
            head_hidden: 256,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            force_gold: true,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.hgnn_layers > 4 {
            return Err(Error::Config(format!("HGNN layer count {} outside 0..=4", self.hgnn_layers)));
        }
        if self.head_hidden == 0 || self.max_candidates == 0 {
            return Err(Error::Config("head size and candidate cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointModel {
    pub config: JointConfig,
    pub encoder: TransformerEncoder,
    pub legal: LegalAugment,
    /// Maps `[h_sub ⊕ h_obj]` of one subject context to a relation node state.
    pub relation_init: Ffnn,
    pub hgnn: HgnnStack,
    pub heads: Heads,
}

/// One sentence ready for the joint model.
#[derive(Clone, Debug)]
pub struct Example {
    pub ids: Vec<usize>,
    pub mask: MaskMatrix,
    pub candidates: CandidateSet,
    pub entity_targets: Vec<usize>,
    /// Indexed by `rel_index`.
    pub relation_targets: Vec<usize>,
}

pub struct Forward {
    pub hypergraph: Hypergraph,
    pub logits: Logits,
    pub traffic: MessageTraffic,
}

impl JointModel {
    pub fn new(
        store: &mut ParamStore,
        encoder_config: EncoderConfig,
        config: JointConfig,
        schema: &LabelSchema,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = encoder_config.dim;
        let (heads, ffn) = (encoder_config.heads, encoder_config.ffn_dim);
        let encoder = TransformerEncoder::new(&mut Builder::new(store, &mut rng, ParamGroup::Encoder), encoder_config)?;
        let mut b = Builder::new(store, &mut rng, ParamGroup::Task);
        let legal = LegalAugment::new(&mut b, d, heads, ffn, config.omega, config.lambda_init);
        let node_dim = 2 * d;
        let relation_init = Ffnn::new(&mut b, "relation_init", 2 * node_dim, node_dim);
        let hgnn = HgnnStack::new(&mut b, node_dim, config.hgnn_layers);
        let heads = Heads::new(&mut b, node_dim, config.head_hidden, schema.entity_classes(), schema.relation_classes());
        Ok(JointModel { config, encoder, legal, relation_init, hgnn, heads })
    }

    pub fn node_dim(&self) -> usize {
        2 * self.encoder.config.dim
    }

    /// Copies every encoder parameter from a trained span generator.
    pub fn warm_start(&self, store: &mut ParamStore, source: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        for id in source.ids() {
            let name = source.name(id);
            if !name.starts_with("encoder.") {
                continue;
            }
            let target = store.find(name).ok_or_else(|| Error::Checkpoint(format!("joint model has no parameter {name}")))?;
            if store.value(target).dim() != source.value(id).dim() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name} when warm-starting")));
            }
            store.value_mut(target).assign(source.value(id));
            copied += 1;
        }
        Ok(copied)
    }

    fn fused(&self, g: &mut Graph<'_>, packed: &PackedInput, mask: &MaskMatrix) -> Result<Var> {
        let general = self.encoder.encode(g, packed)?;
        Ok(self.legal.forward(g, general, packed, mask)?.fused)
    }

    /// `[H[first] ⊕ H[second]]` for each index pair.
    fn pair_states(g: &mut Graph<'_>, h: Var, first: Vec<usize>, second: Vec<usize>) -> Var {
        let a = g.gather_rows(h, first);
        let b = g.gather_rows(h, second);
        g.concat_cols(&[a, b])
    }

    /// Initial node states in hypergraph layout.
    pub fn init_nodes(&self, g: &mut Graph<'_>, ids: &[usize], mask: &MaskMatrix, candidates: &[SpanRef]) -> Result<Var> {
        let p = candidates.len();
        let window = self.encoder.config.window;
        if p == 1 {
            let packed = &pack_subject_oriented(ids, candidates[0], &[], window)?[0];
            let h = self.fused(g, packed, mask)?;
            let solid = packed.solid.expect("subject packing has solid markers");
            let subject = Self::pair_states(g, h, vec![solid.open], vec![solid.close]);
            let packed = &pack_neighborhood(ids, candidates, window)?[0];
            let h = self.fused(g, packed, mask)?;
            let m = packed.levitated[0];
            let object = Self::pair_states(g, h, vec![m.open], vec![m.close]);
            return Ok(g.concat_rows(&[subject, object]));
        }

        let mut subjects = Vec::with_capacity(p);
        let mut contexts = Vec::with_capacity(p);
        for (a, &span) in candidates.iter().enumerate() {
            let objects: Vec<SpanRef> = candidates.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, &s)| s).collect();
            let packs = pack_subject_oriented(ids, span, &objects, window)?;
            let mut rows = Vec::with_capacity(packs.len());
            for (k, packed) in packs.iter().enumerate() {
                let h = self.fused(g, packed, mask)?;
                if k == 0 {
                    let solid = packed.solid.expect("subject packing has solid markers");
                    subjects.push(Self::pair_states(g, h, vec![solid.open], vec![solid.close]));
                }
                let opens = packed.levitated.iter().map(|m| m.open).collect();
                let closes = packed.levitated.iter().map(|m| m.close).collect();
                rows.push(Self::pair_states(g, h, opens, closes));
            }
            contexts.push(if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) });
        }
        let subject_states = g.concat_rows(&subjects);

        let mut relation_inputs = Vec::with_capacity(p);
        let mut aligned = Vec::with_capacity(p);
        let width = self.node_dim();
        for (a, &ctx) in contexts.iter().enumerate() {
            let sub = g.gather_rows(subject_states, vec![a; p - 1]);
            relation_inputs.push(g.concat_cols(&[sub, ctx]));
            // Realign context rows to object index; the subject's own row is
            // filled with a large negative so max-pooling skips it.
            let idx: Vec<usize> = (0..p).map(|b| if b < a { b } else { b.saturating_sub(1) }).collect();
            let rows = g.gather_rows(ctx, idx);
            let pen = g.input(Mat::from_shape_fn((p, width), |(b, _)| if b == a { MASK_PENALTY } else { 0.0 }));
            aligned.push(g.add(rows, pen));
        }
        let object_states = g.max_of(&aligned);
        let relation_input = g.concat_rows(&relation_inputs);
        let relation_states = self.relation_init.forward(g, relation_input);
        Ok(g.concat_rows(&[subject_states, object_states, relation_states]))
    }

    pub fn forward(&self, g: &mut Graph<'_>, ids: &[usize], mask: &MaskMatrix, candidates: &[SpanRef]) -> Result<Forward> {
        let p = candidates.len();
        if p == 0 {
            return Err(Error::Config("the joint model needs at least one candidate span".into()));
        }
        check_candidate_cap(p, self.config.max_candidates)?;
        let hypergraph = Hypergraph::build(p, self.config.topology);
        let states = self.init_nodes(g, ids, mask, candidates)?;
        let states = self.hgnn.forward(g, states, &hypergraph);
        let logits = self.heads.classify(g, states, &hypergraph);
        let mut traffic = MessageTraffic::default();
        for _ in 0..self.hgnn.layers.len() {
            traffic.add(&MessageTraffic::of(&hypergraph));
        }
        Ok(Forward { hypergraph, logits, traffic })
    }

    pub fn loss(&self, g: &mut Graph<'_>, ex: &Example) -> Result<Option<JointLoss>> {
        if ex.candidates.is_empty() {
            return Ok(None);
        }
        let f = self.forward(g, &ex.ids, &ex.mask, &ex.candidates.spans)?;
        Ok(Some(joint_loss(g, &f.logits, &ex.entity_targets, &ex.relation_targets)))
    }

    /// Predicted entities and relations for one sentence.
    pub fn predict(
        &self,
        store: &ParamStore,
        ex: &Example,
        schema: &LabelSchema,
    ) -> Result<(Vec<EntityMention>, Vec<RelationMention>, MessageTraffic)> {
        if ex.candidates.is_empty() {
            return Ok((Vec::new(), Vec::new(), MessageTraffic::default()));
        }
        let mut g = Graph::new(store);
        let f = self.forward(&mut g, &ex.ids, &ex.mask, &ex.candidates.spans)?;
        let entity = g.value(f.logits.entity).clone();
        let relation = f.logits.relation.map(|r| g.value(r).clone());
        let (e, r) = decode(schema, &ex.candidates.spans, &entity, relation.as_ref());
        Ok((e, r, f.traffic))
    }
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Turns logits into mentions. A relation is kept only when both endpoint
/// candidates are predicted as entities.
pub fn decode(
    schema: &LabelSchema,
    candidates: &[SpanRef],
    entity: &Mat,
    relation: Option<&Mat>,
) -> (Vec<EntityMention>, Vec<RelationMention>) {
    let p = candidates.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by_key(|&i| candidates[i]);
    let mut entities = Vec::new();
    let mut slot = vec![None; p];
    for i in order {
        let class = argmax(entity.row(i));
        if class != 0 {
            slot[i] = Some(entities.len());
            let label = schema.entity_name(class).expect("class within schema").to_owned();
            entities.push(EntityMention { span: candidates[i], label });
        }
    }
    let mut relations = Vec::new();
    if let Some(rel) = relation {
        for a in 0..p {
            for b in (0..p).filter(|&b| b != a) {
                let class = argmax(rel.row(rel_index(p, a, b)));
                if let (true, Some(s), Some(o)) = (class != 0, slot[a], slot[b]) {
                    let label = schema.relation_name(class).expect("class within schema").to_owned();
                    relations.push(RelationMention { subject: s, object: o, label });
                }
            }
        }
    }
    relations.sort_by(|x, y| (x.subject, x.object, &x.label).cmp(&(y.subject, y.object, &y.label)));
    (entities, relations)
}

/// Gold class for every candidate and every ordered candidate pair. Gold
/// mentions whose spans are not candidates are unreachable and simply absent.
pub fn gold_targets(doc: &Document, schema: &LabelSchema, candidates: &[SpanRef]) -> (Vec<usize>, Vec<usize>) {
    let p = candidates.len();
    let mut by_span: HashMap<SpanRef, usize> = HashMap::new();
    for e in &doc.entities {
        by_span.entry(e.span).or_insert_with(|| schema.entity_class(&e.label).unwrap_or(0));
    }
    let entity = candidates.iter().map(|s| by_span.get(s).copied().unwrap_or(0)).collect();
    let pos: HashMap<SpanRef, usize> = candidates.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut relation = vec![0; p * p.saturating_sub(1)];
    for r in &doc.relations {
        let (s, o) = (doc.entities[r.subject].span, doc.entities[r.object].span);
        if let (Some(&a), Some(&b)) = (pos.get(&s), pos.get(&o)) {
            if a != b {
                relation[rel_index(p, a, b)] = schema.relation_class(&r.label).unwrap_or(0);
            }
        }
    }
    (entity, relation)
}

/// Scores spans with the generator, picks candidates and maps gold labels.
pub fn prepare_examples(
    docs: &[Document],
    schema: &LabelSchema,
    vocab: &Vocab,
    lexicon: &Lexicon,
    generator: (&SpanGenerator, &ParamStore),
    config: &JointConfig,
    force_gold: bool,
) -> Result<Vec<Example>> {
    let (spangen, sg_store) = generator;
    docs.iter()
        .map(|d| {
            let ids = vocab.ids(&d.tokens);
            let scored = spangen.score_spans(sg_store, &ids)?;
            let candidates = if scored.is_empty() {
                CandidateSet::default()
            } else if force_gold {
                select_with_gold(&scored, ids.len(), config.gamma, &gold_spans(d))
            } else {
                select_candidates(&scored, ids.len(), config.gamma)
            };
            check_candidate_cap(candidates.len(), config.max_candidates)?;
            let (entity_targets, relation_targets) = gold_targets(d, schema, &candidates.spans);
            Ok(Example { ids, mask: build_mask(&d.tokens, lexicon), candidates, entity_targets, relation_targets })
        })
        .collect()
}

/// Predicted documents, aligned with `docs`.
pub fn predict_documents(
    model: &JointModel,
    store: &ParamStore,
    docs: &[Document],
    examples: &[Example],
    schema: &LabelSchema,
) -> Result<(Vec<Document>, MessageTraffic)> {
    let mut traffic = MessageTraffic::default();
    let mut out = Vec::with_capacity(docs.len());
    for (d, ex) in docs.iter().zip(examples) {
        let (entities, relations, t) = model.predict(store, ex, schema)?;
        debug_assert!(entities.iter().all(|e| ex.candidates.contains(e.span)));
        traffic.add(&t);
        out.push(Document { doc_id: d.doc_id.clone(), tokens: d.tokens.clone(), entities, relations });
    }
    Ok((out, traffic))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub loss_ner: f64,
    pub loss_re: f64,
}

pub fn train_joint(
    model: &JointModel,
    store: &mut ParamStore,
    examples: &[Example],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&JointEpoch, &ParamStore) -> Result<()>,
) -> Result<Vec<JointEpoch>> {
    let mut adam = Adam::new(options.optimizer.clone(), store, options.total_steps(examples.len()));
    let mut history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let order = options.epoch_order(examples.len(), epoch);
        let means = run_epoch(store, &mut adam, &order, options.batch_size, |store, i| {
            let mut g = Graph::new(store);
            let Some(l) = model.loss(&mut g, &examples[i])? else { return Ok(None) };
            let re = l.re.map_or(0.0, |r| g.scalar(r));
            Ok(Some((vec![g.scalar(l.total), g.scalar(l.ner), re], g.backward(l.total))))
        })?;
        let at = |k: usize| means.get(k).copied().unwrap_or(0.0);
        let stats = JointEpoch { epoch: epoch + 1, loss: at(0), loss_ner: at(1), loss_re: at(2) };
        on_epoch(&stats, store)?;
        history.push(stats);
    }
    Ok(history)
}
