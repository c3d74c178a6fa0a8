//! Candidate span generation: biaffine scoring of every span up to a width
//! bound, a binary training objective, and top-P selection.

use std::collections::HashSet;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{pack_neighborhood, EncoderConfig, PackedInput, SequenceEncoder, TransformerEncoder};
use crate::error::{Error, Result};
use crate::nn::graph::sigmoid;
use crate::nn::layers::{Builder, Ffnn, Linear};
use crate::nn::{run_epoch, Adam, Graph, Init, Mat, ParamGroup, ParamId, ParamStore, TrainOptions, Var};
use crate::schema::{Document, SpanRef};
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpanGenConfig {
    /// Output size of the start and end feed-forward maps.
    pub boundary_dim: usize,
    /// Number of biaffine output channels before the final scoring map.
    pub biaffine_dim: usize,
    pub max_span_width: usize,
}

impl Default for SpanGenConfig {
    fn default() -> Self {
        SpanGenConfig { boundary_dim: 64, biaffine_dim: 32, max_span_width: 16 }
    }
}

/// `P = max(1, ⌈γ·n⌉)`.
pub fn candidate_count(n: usize, gamma: f64) -> usize {
    ((gamma * n as f64 - 1e-9).ceil() as usize).max(1)
}

/// Every span of width at most `max_width`, by start then width.
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<SpanRef> {
    (0..n).flat_map(|s| (s..n.min(s + max_width)).map(move |e| SpanRef::new(s, e))).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiaffineScorer {
    pub start: Ffnn,
    pub end: Ffnn,
    /// Bilinear tensor stored as `(d_st + 1) × (d_u · (d_end + 1))`; channel
    /// `c` occupies columns `c·(d_end+1) .. (c+1)·(d_end+1)`.
    pub tensor: ParamId,
    pub out: Linear,
    pub boundary_dim: usize,
    pub biaffine_dim: usize,
}

impl BiaffineScorer {
    pub fn new(b: &mut Builder<'_>, hidden: usize, boundary_dim: usize, biaffine_dim: usize) -> Self {
        b.scoped("biaffine", |b| BiaffineScorer {
            start: Ffnn::new(b, "start", 2 * hidden, boundary_dim),
            end: Ffnn::new(b, "end", 2 * hidden, boundary_dim),
            tensor: b.param("u", (boundary_dim + 1, biaffine_dim * (boundary_dim + 1)), Init::Xavier),
            out: Linear::new(b, "out", biaffine_dim, 1),
            boundary_dim,
            biaffine_dim,
        })
    }

    /// Biaffine channels `[h_st ⊕ 1] U [h_end ⊕ 1]ᵀ` for each row pair.
    pub fn biaffine(&self, g: &mut Graph<'_>, h_start: Var, h_end: Var) -> Var {
        let rows = g.value(h_start).nrows();
        let ones = g.input(Mat::ones((rows, 1)));
        let hs = g.concat_cols(&[h_start, ones]);
        let he = g.concat_cols(&[h_end, ones]);
        let u = g.param(self.tensor);
        let t = g.matmul(hs, u);
        g.row_block_dot(t, he, self.biaffine_dim)
    }

    /// Score logits from boundary-token and marker-token states.
    pub fn score(&self, g: &mut Graph<'_>, x_start: Var, x_open: Var, x_end: Var, x_close: Var) -> Var {
        let s = g.concat_cols(&[x_start, x_open]);
        let e = g.concat_cols(&[x_end, x_close]);
        let hs = self.start.forward(g, s);
        let he = self.end.forward(g, e);
        let channels = self.biaffine(g, hs, he);
        self.out.forward(g, channels)
    }

    /// One logit per levitated pair of `packed`, in marker order.
    pub fn forward(&self, g: &mut Graph<'_>, states: Var, packed: &PackedInput) -> Var {
        let pick = |f: &dyn Fn(&crate::encoder::MarkerPair) -> usize| -> Vec<usize> { packed.levitated.iter().map(f).collect() };
        let xs = g.gather_rows(states, pick(&|m| packed.text_index[m.span.start]));
        let xo = g.gather_rows(states, pick(&|m| m.open));
        let xe = g.gather_rows(states, pick(&|m| packed.text_index[m.span.end]));
        let xc = g.gather_rows(states, pick(&|m| m.close));
        self.score(g, xs, xo, xe, xc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub span: SpanRef,
    pub score: f64,
}

/// Top-P spans in descending score order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub spans: Vec<SpanRef>,
    pub scores: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn contains(&self, span: SpanRef) -> bool {
        self.spans.contains(&span)
    }
}

/// Descending score, then earlier start, then shorter width.
pub fn rank_spans(scored: &[ScoredSpan]) -> Vec<ScoredSpan> {
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.span.start.cmp(&b.span.start)).then(a.span.width().cmp(&b.span.width())));
    ranked
}

/// Keeps the `max(1, ⌈γ·n⌉)` best spans, capped at the number scored.
pub fn select_candidates(scored: &[ScoredSpan], n: usize, gamma: f64) -> CandidateSet {
    let p = candidate_count(n, gamma).min(scored.len());
    let ranked = rank_spans(scored);
    CandidateSet { spans: ranked[..p].iter().map(|s| s.span).collect(), scores: ranked[..p].iter().map(|s| s.score).collect() }
}

/// Like [`select_candidates`], but every span in `gold` that was scored is
/// kept, displacing the lowest-ranked others. When there are more such gold
/// spans than slots the set grows to hold them all.
pub fn select_with_gold(scored: &[ScoredSpan], n: usize, gamma: f64, gold: &[SpanRef]) -> CandidateSet {
    let p = candidate_count(n, gamma).min(scored.len());
    let gold: HashSet<SpanRef> = gold.iter().copied().collect();
    let ranked = rank_spans(scored);
    let forced = ranked.iter().filter(|s| gold.contains(&s.span)).count();
    let mut free = p.saturating_sub(forced);
    let mut out = CandidateSet::default();
    for s in &ranked {
        let keep = if gold.contains(&s.span) {
            true
        } else if free > 0 {
            free -= 1;
            true
        } else {
            false
        };
        if keep {
            out.spans.push(s.span);
            out.scores.push(s.score);
        }
    }
    out
}

/// Encoder plus biaffine scorer, trained on its own.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpanGenerator {
    pub config: SpanGenConfig,
    pub encoder: TransformerEncoder,
    pub scorer: BiaffineScorer,
}

impl SpanGenerator {
    pub fn new(store: &mut ParamStore, encoder_config: EncoderConfig, config: SpanGenConfig, seed: u64) -> Result<Self> {
        if config.max_span_width == 0 || config.boundary_dim == 0 || config.biaffine_dim == 0 {
            return Err(Error::Config("span generator sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = encoder_config.dim;
        let encoder = TransformerEncoder::new(&mut Builder::new(store, &mut rng, ParamGroup::Encoder), encoder_config)?;
        let mut b = Builder::new(store, &mut rng, ParamGroup::Task);
        let scorer = BiaffineScorer::new(&mut b, hidden, config.boundary_dim, config.biaffine_dim);
        Ok(SpanGenerator { config, encoder, scorer })
    }

    /// One logit per span of `spans`, in the same order.
    pub fn span_logits(&self, g: &mut Graph<'_>, text_ids: &[usize], spans: &[SpanRef]) -> Result<Var> {
        let packs = pack_neighborhood(text_ids, spans, self.encoder.config.window)?;
        let mut parts = Vec::with_capacity(packs.len());
        let mut order = Vec::with_capacity(spans.len());
        for p in &packs {
            let h = self.encoder.encode(g, p)?;
            parts.push(self.scorer.forward(g, h, p));
            order.extend(p.levitated.iter().map(|m| m.span_index));
        }
        let all = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        let mut row_of = vec![0; spans.len()];
        for (row, &i) in order.iter().enumerate() {
            row_of[i] = row;
        }
        Ok(g.gather_rows(all, row_of))
    }

    /// Probability for every enumerable span of the sentence.
    pub fn score_spans(&self, store: &ParamStore, text_ids: &[usize]) -> Result<Vec<ScoredSpan>> {
        let spans = enumerate_spans(text_ids.len(), self.config.max_span_width);
        if spans.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(store);
        let logits = self.span_logits(&mut g, text_ids, &spans)?;
        let z = g.value(logits);
        Ok(spans.into_iter().enumerate().map(|(i, span)| ScoredSpan { span, score: sigmoid(z[[i, 0]]) }).collect())
    }

    /// Mean binary cross-entropy over all enumerable spans; positives are
    /// the exact gold entity spans.
    pub fn loss(&self, g: &mut Graph<'_>, text_ids: &[usize], gold: &[SpanRef]) -> Result<Option<Var>> {
        let spans = enumerate_spans(text_ids.len(), self.config.max_span_width);
        if spans.is_empty() {
            return Ok(None);
        }
        let gold: HashSet<SpanRef> = gold.iter().copied().collect();
        let targets: Vec<f64> = spans.iter().map(|s| if gold.contains(s) { 1.0 } else { 0.0 }).collect();
        let logits = self.span_logits(g, text_ids, &spans)?;
        Ok(Some(g.bce_with_logits(logits, targets)))
    }
}

pub fn gold_spans(doc: &Document) -> Vec<SpanRef> {
    let mut spans: Vec<SpanRef> = doc.entities.iter().map(|e| e.span).collect();
    spans.sort();
    spans.dedup();
    spans
}

/// Per-epoch summary from [`train_spangen`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

pub fn train_spangen(
    model: &SpanGenerator,
    store: &mut ParamStore,
    docs: &[Document],
    vocab: &Vocab,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLoss, &ParamStore),
) -> Result<Vec<EpochLoss>> {
    if docs.iter().all(|d| d.entities.is_empty()) {
        warn!("training corpus has no entities; every span is a negative example");
    }
    let inputs: Vec<(Vec<usize>, Vec<SpanRef>)> = docs.iter().map(|d| (vocab.ids(&d.tokens), gold_spans(d))).collect();
    let mut adam = Adam::new(options.optimizer.clone(), store, options.total_steps(docs.len()));
    let mut history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let order = options.epoch_order(docs.len(), epoch);
        let means = run_epoch(store, &mut adam, &order, options.batch_size, |store, i| {
            let (ids, gold) = &inputs[i];
            let mut g = Graph::new(store);
            match model.loss(&mut g, ids, gold)? {
                Some(l) => Ok(Some((vec![g.scalar(l)], g.backward(l)))),
                None => Ok(None),
            }
        })?;
        let mean_loss = means.first().copied().unwrap_or(0.0);
        let e = EpochLoss { epoch: epoch + 1, mean_loss };
        on_epoch(&e, store);
        history.push(e);
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub gold: usize,
    pub covered: usize,
    pub recall: f64,
    /// Expected recall of choosing the same number of spans uniformly at random.
    pub random_baseline: f64,
}

/// Fraction of gold entity spans that land in the top-P candidates.
pub fn recall_at_p(model: &SpanGenerator, store: &ParamStore, docs: &[Document], vocab: &Vocab, gamma: f64) -> Result<RecallReport> {
    let mut report = RecallReport::default();
    let mut expected = 0.0;
    for d in docs {
        let gold = gold_spans(d);
        report.gold += gold.len();
        let scored = model.score_spans(store, &vocab.ids(&d.tokens))?;
        if scored.is_empty() {
            continue;
        }
        let cands = select_candidates(&scored, d.tokens.len(), gamma);
        report.covered += gold.iter().filter(|s| cands.contains(**s)).count();
        let reachable = gold.iter().filter(|s| s.width() <= model.config.max_span_width).count();
        expected += reachable as f64 * cands.len() as f64 / scored.len() as f64;
    }
    if report.gold > 0 {
        report.recall = report.covered as f64 / report.gold as f64;
        report.random_baseline = expected / report.gold as f64;
    }
    Ok(report)
}
