//! Sequence encoding: marker packing, a small transformer encoder and the
//! lexicon-gated augmentation layer.
//!
//! Two packing schemes are supported. Neighbourhood packing appends one
//! levitated marker pair per span after the text; subject-oriented packing
//! additionally wraps one subject span in solid markers placed in-line.
//! Levitated markers reuse the position ids of their span's boundary tokens,
//! attend to the whole text plus their own partner, and are invisible to the
//! text, so adding or reordering them never changes text representations.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::MaskMatrix;
use crate::nn::graph::MASK_PENALTY;
use crate::nn::layers::{Builder, LayerNorm, Mlp, MultiHeadAttention, TransformerLayer};
use crate::nn::{Graph, Init, Mat, ParamId, Var};
use crate::schema::SpanRef;
use crate::vocab::Vocab;

pub const DEFAULT_WINDOW: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    /// Maximum packed sequence length (context window).
    pub window: usize,
    #[serde(default)]
    pub positions: PositionMode,
}

/// How position ids become vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionMode {
    /// A trained table, one row per position.
    Learned,
    /// Fixed sinusoids plus a trained table initialised at zero.
    #[default]
    Sinusoidal,
}

/// Standard sine/cosine encoding of one position.
pub fn sinusoid(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let angle = pos as f64 * rate;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            dim: 128,
            heads: 4,
            layers: 2,
            ffn_dim: 256,
            window: DEFAULT_WINDOW,
            positions: PositionMode::default(),
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("hidden size {} is not divisible by {} heads", self.dim, self.heads)));
        }
        if self.window < 4 {
            return Err(Error::Config(format!("context window {} is too small", self.window)));
        }
        Ok(())
    }
}

/// A levitated or solid marker pair inside a packed sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarkerPair {
    /// Index of the span in the list handed to the packing function.
    pub span_index: usize,
    /// Span in text coordinates.
    pub span: SpanRef,
    /// Packed index of the opening marker.
    pub open: usize,
    /// Packed index of the closing marker.
    pub close: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedInput {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// Number of in-line positions (text tokens plus solid markers); every
    /// levitated marker sits after this prefix.
    pub inline_len: usize,
    /// Packed index of each text token.
    pub text_index: Vec<usize>,
    pub solid: Option<MarkerPair>,
    pub levitated: Vec<MarkerPair>,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Whether the token at `query` may attend to the token at `key`.
    pub fn visible(&self, query: usize, key: usize) -> bool {
        if key < self.inline_len {
            return true;
        }
        if query < self.inline_len {
            return false;
        }
        // Levitated pairs occupy (inline_len + 2m, inline_len + 2m + 1).
        (query - self.inline_len) / 2 == (key - self.inline_len) / 2
    }

    /// Additive attention penalty realising [`PackedInput::visible`].
    pub fn attention_penalty(&self) -> Mat {
        let n = self.len();
        Array2::from_shape_fn((n, n), |(q, k)| if self.visible(q, k) { 0.0 } else { MASK_PENALTY })
    }

    fn plain(text_ids: &[usize]) -> Self {
        let n = text_ids.len();
        PackedInput {
            ids: text_ids.to_vec(),
            positions: (0..n).collect(),
            inline_len: n,
            text_index: (0..n).collect(),
            solid: None,
            levitated: Vec::new(),
        }
    }

    fn append_levitated(&mut self, span_index: usize, span: SpanRef) {
        let open = self.ids.len();
        self.ids.extend([Vocab::LEV_OPEN_ID, Vocab::LEV_CLOSE_ID]);
        self.positions.push(self.positions[self.text_index[span.start]]);
        self.positions.push(self.positions[self.text_index[span.end]]);
        self.levitated.push(MarkerPair { span_index, span, open, close: open + 1 });
    }
}

fn check_spans(n: usize, spans: &[SpanRef]) -> Result<()> {
    match spans.iter().find(|s| s.start > s.end || s.end >= n) {
        Some(s) => Err(Error::Config(format!("span ({},{}) lies outside a {n}-token text", s.start, s.end))),
        None => Ok(()),
    }
}

/// Packs spans as levitated markers after the text. Spans are ordered by
/// `(start, end)` and cut into contiguous groups, each as large as the
/// window allows.
pub fn pack_neighborhood(text_ids: &[usize], spans: &[SpanRef], window: usize) -> Result<Vec<PackedInput>> {
    let n = text_ids.len();
    check_spans(n, spans)?;
    if n > window {
        return Err(Error::WindowOverflow { len: n, window });
    }
    if spans.is_empty() {
        return Ok(vec![PackedInput::plain(text_ids)]);
    }
    let per_group = (window - n) / 2;
    if per_group == 0 {
        return Err(Error::WindowOverflow { len: n + 2, window });
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].start, spans[i].end, i));
    Ok(order
        .chunks(per_group)
        .map(|chunk| {
            let mut p = PackedInput::plain(text_ids);
            for &i in chunk {
                p.append_levitated(i, spans[i]);
            }
            p
        })
        .collect())
}

/// Wraps `subject` in solid markers and appends one levitated pair per
/// object. Objects that do not fit are spread over several sequences, each
/// repeating the subject markers.
pub fn pack_subject_oriented(text_ids: &[usize], subject: SpanRef, objects: &[SpanRef], window: usize) -> Result<Vec<PackedInput>> {
    let n = text_ids.len();
    check_spans(n, std::slice::from_ref(&subject))?;
    check_spans(n, objects)?;
    let inline_len = n + 2;
    if inline_len > window {
        return Err(Error::WindowOverflow { len: inline_len, window });
    }
    let mut base = PackedInput {
        ids: Vec::with_capacity(inline_len + 2 * objects.len()),
        positions: Vec::new(),
        inline_len,
        text_index: Vec::with_capacity(n),
        solid: None,
        levitated: Vec::new(),
    };
    let (mut open, mut close) = (0, 0);
    for (t, &id) in text_ids.iter().enumerate() {
        if t == subject.start {
            open = base.ids.len();
            base.ids.push(Vocab::SOLID_OPEN_ID);
        }
        base.text_index.push(base.ids.len());
        base.ids.push(id);
        if t == subject.end {
            close = base.ids.len();
            base.ids.push(Vocab::SOLID_CLOSE_ID);
        }
    }
    base.positions = (0..inline_len).collect();
    base.solid = Some(MarkerPair { span_index: 0, span: subject, open, close });
    if objects.is_empty() {
        return Ok(vec![base]);
    }
    let per_group = (window - inline_len) / 2;
    if per_group == 0 {
        return Err(Error::WindowOverflow { len: inline_len + 2, window });
    }
    let indexed: Vec<usize> = (0..objects.len()).collect();
    Ok(indexed
        .chunks(per_group)
        .map(|chunk| {
            let mut p = base.clone();
            for &i in chunk {
                p.append_levitated(i, objects[i]);
            }
            p
        })
        .collect())
}

/// Anything that maps a packed sequence to one hidden vector per position.
pub trait SequenceEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, g: &mut Graph<'_>, packed: &PackedInput) -> Result<Var>;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerEncoder {
    pub config: EncoderConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub final_norm: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(b: &mut Builder<'_>, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = config.clone();
        Ok(b.scoped("encoder", |b| TransformerEncoder {
            token_embedding: b.param("token_embedding", (c.vocab_size, c.dim), Init::Uniform(0.1)),
            position_embedding: b.param(
                "position_embedding",
                (c.window, c.dim),
                match c.positions {
                    PositionMode::Learned => Init::Uniform(0.1),
                    PositionMode::Sinusoidal => Init::Zeros,
                },
            ),
            layers: (0..c.layers).map(|i| TransformerLayer::new(b, &format!("layer{i}"), c.dim, c.heads, c.ffn_dim)).collect(),
            final_norm: LayerNorm::new(b, "final_norm", c.dim),
            config,
        }))
    }
}

impl SequenceEncoder for TransformerEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    /// General representation: one `dim`-vector per packed position.
    fn encode(&self, g: &mut Graph<'_>, packed: &PackedInput) -> Result<Var> {
        if packed.len() > self.config.window {
            return Err(Error::WindowOverflow { len: packed.len(), window: self.config.window });
        }
        if let Some(&bad) = packed.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::Config(format!("token id {bad} outside a vocabulary of {}", self.config.vocab_size)));
        }
        let tok = g.param(self.token_embedding);
        let pos = g.param(self.position_embedding);
        let t = g.gather_rows(tok, packed.ids.clone());
        let p = g.gather_rows(pos, packed.positions.clone());
        let mut x = g.add(t, p);
        if self.config.positions == PositionMode::Sinusoidal {
            let d = self.config.dim;
            let table: Vec<f64> = packed.positions.iter().flat_map(|&pos| sinusoid(pos, d)).collect();
            let fixed = g.input(Mat::from_shape_vec((packed.len(), d), table).expect("sinusoid table shape"));
            x = g.add(x, fixed);
        }
        let penalty = packed.attention_penalty();
        for layer in &self.layers {
            x = layer.forward(g, x, &penalty);
        }
        Ok(self.final_norm.forward(g, x))
    }
}

/// Lexicon-gated attention penalty over a packed sequence, plus a per-row
/// factor that is 0 for rows with no visible key.
///
/// Query `a` may attend to key `b` only when `mask(a, b)` is set; marker
/// positions are never matched.
pub fn legal_penalty(packed: &PackedInput, mask: &MaskMatrix) -> Result<(Mat, Vec<f64>)> {
    let n_text = packed.text_index.len();
    if mask.size() != n_text {
        return Err(Error::Config(format!("mask covers {} tokens but the text has {n_text}", mask.size())));
    }
    let n = packed.len();
    let mut penalty = Mat::from_elem((n, n), MASK_PENALTY);
    let mut rows = vec![0.0; n];
    for (a, b) in mask.matches() {
        let (pa, pb) = (packed.text_index[a], packed.text_index[b]);
        penalty[[pa, pb]] = 0.0;
        rows[pa] = 1.0;
    }
    Ok((penalty, rows))
}

#[derive(Clone, Copy, Debug)]
pub struct EncodedSequence {
    /// `H_G`, the general representation.
    pub general: Var,
    /// `H_L`, the lexicon-specific representation.
    pub legal: Var,
    /// `ω · (λ · H_G + (1 − λ) · H_L)`.
    pub fused: Var,
}

/// Extra attention block restricted by the lexicon mask, blended with the
/// general representation through a learnable weight `λ` and a fixed scale
/// `ω`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LegalAugment {
    pub attention: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: Mlp,
    pub lambda: ParamId,
    pub omega: f64,
}

impl LegalAugment {
    pub fn new(b: &mut Builder<'_>, dim: usize, heads: usize, ffn_dim: usize, omega: f64, lambda_init: f64) -> Self {
        b.scoped("legal", |b| LegalAugment {
            attention: MultiHeadAttention::new(b, "attn", dim, heads),
            ffn_norm: LayerNorm::new(b, "ffn_norm", dim),
            ffn: Mlp::new(b, "ffn", dim, ffn_dim, dim),
            lambda: b.param("lambda", (1, 1), Init::Constant(lambda_init)),
            omega,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, general: Var, packed: &PackedInput, mask: &MaskMatrix) -> Result<EncodedSequence> {
        let (penalty, rows) = legal_penalty(packed, mask)?;
        let attended = self.attention.forward(g, general, &penalty);
        let normed = self.ffn_norm.forward(g, attended);
        let ff = self.ffn.forward(g, normed);
        let legal = g.add(attended, ff);
        let legal = g.mask_rows(legal, rows);

        let lambda = g.param(self.lambda);
        let keep = g.scale_by(general, lambda);
        let rest = g.one_minus(lambda);
        let blend = g.scale_by(legal, rest);
        let mixed = g.add(keep, blend);
        let fused = g.scale(mixed, self.omega);
        Ok(EncodedSequence { general, legal, fused })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{build_mask, Lexicon};
    use crate::nn::{ParamGroup, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sp(a: usize, b: usize) -> SpanRef {
        SpanRef::new(a, b)
    }

    fn small_encoder(store: &mut ParamStore, window: usize) -> (TransformerEncoder, LegalAugment) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = EncoderConfig { vocab_size: 20, dim: 8, heads: 2, layers: 2, ffn_dim: 16, window, positions: PositionMode::Sinusoidal };
        let mut b = Builder::new(store, &mut rng, ParamGroup::Encoder);
        let enc = TransformerEncoder::new(&mut b, cfg).unwrap();
        let legal = LegalAugment::new(&mut b, 8, 2, 16, 0.5, 1.0);
        (enc, legal)
    }

    #[test]
    fn neighborhood_single_span() {
        let packs = pack_neighborhood(&[6, 7, 8, 9, 10], &[sp(1, 3)], 512).unwrap();
        assert_eq!(packs.len(), 1);
        let p = &packs[0];
        assert_eq!(p.len(), 7);
        assert_eq!(p.ids[5..], [Vocab::LEV_OPEN_ID, Vocab::LEV_CLOSE_ID]);
        assert_eq!(p.positions[5..], [1, 3]);
        assert!(!p.visible(0, 5));
        assert!(p.visible(5, 0) && p.visible(5, 6) && p.visible(6, 5));
    }

    #[test]
    fn neighborhood_zero_spans_is_plain_text() {
        let packs = pack_neighborhood(&[6, 7, 8], &[], 512).unwrap();
        assert_eq!(packs, vec![PackedInput::plain(&[6, 7, 8])]);
    }

    #[test]
    fn neighborhood_groups_follow_window_arithmetic() {
        // 20 text tokens, window 220 → (220 - 20) / 2 = 100 pairs per group.
        let text: Vec<usize> = (0..20).map(|i| 6 + i % 10).collect();
        let spans: Vec<SpanRef> = (0..300).map(|i| sp(i % 20, (i % 20 + i / 20).min(19))).collect();
        let packs = pack_neighborhood(&text, &spans, 220).unwrap();
        assert_eq!(packs.len(), 3);
        let mut seen = vec![0; 300];
        let mut last = None;
        for p in &packs {
            assert!(p.len() <= 220);
            assert_eq!(p.levitated.len(), 100);
            for m in &p.levitated {
                seen[m.span_index] += 1;
                let key = (m.span.start, m.span.end, m.span_index);
                assert!(last.is_none_or(|l| l < key));
                last = Some(key);
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn neighborhood_overflow() {
        assert!(matches!(pack_neighborhood(&[6; 10], &[sp(0, 1)], 11), Err(Error::WindowOverflow { .. })));
    }

    #[test]
    fn subject_packing_layout() {
        let packs = pack_subject_oriented(&[6, 7, 8, 9, 10, 11], sp(2, 3), &[sp(0, 0)], 512).unwrap();
        let p = &packs[0];
        assert_eq!(p.len(), 10);
        let solid = p.solid.unwrap();
        assert_eq!((solid.open, solid.close), (2, 5));
        assert_eq!(p.ids[2], Vocab::SOLID_OPEN_ID);
        assert_eq!(p.ids[5], Vocab::SOLID_CLOSE_ID);
        assert_eq!(p.text_index, vec![0, 1, 3, 4, 6, 7]);
        // Tokens after the subject are shifted by two.
        assert_eq!(p.positions[p.text_index[5]], 7);
        assert_eq!(p.levitated[0].open, 8);
        assert_eq!(p.positions[8..], [0, 0]);
    }

    #[test]
    fn subject_is_whole_sentence() {
        let p = &pack_subject_oriented(&[6, 7, 8], sp(0, 2), &[], 512).unwrap()[0];
        assert_eq!(p.ids, vec![Vocab::SOLID_OPEN_ID, 6, 7, 8, Vocab::SOLID_CLOSE_ID]);
    }

    #[test]
    fn every_subject_packing_carries_the_other_candidates() {
        let cands = [sp(0, 0), sp(1, 2), sp(3, 3), sp(4, 5), sp(2, 4)];
        let text = [6, 7, 8, 9, 10, 11];
        let mut total = 0;
        for (i, &s) in cands.iter().enumerate() {
            let objects: Vec<SpanRef> = cands.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &c)| c).collect();
            let packs = pack_subject_oriented(&text, s, &objects, 512).unwrap();
            assert_eq!(packs.len(), 1);
            assert_eq!(packs[0].levitated.len(), 4);
            total += packs[0].levitated.len();
        }
        assert_eq!(total, 20);
    }

    #[test]
    fn subject_overflow_repeats_subject_markers() {
        // inline 8, window 12 → 2 object pairs per sequence.
        let packs = pack_subject_oriented(&[6; 6], sp(1, 1), &[sp(0, 0), sp(2, 2), sp(3, 3)], 12).unwrap();
        assert_eq!(packs.len(), 2);
        assert!(packs.iter().all(|p| p.solid.is_some() && p.len() <= 12));
    }

    #[test]
    fn levitated_markers_do_not_change_text_states() {
        let mut store = ParamStore::new();
        let (enc, _) = small_encoder(&mut store, 64);
        let text = [6, 7, 8, 9, 10, 11];
        let a = &pack_neighborhood(&text, &[sp(0, 1)], 64).unwrap()[0];
        let b = &pack_neighborhood(&text, &[sp(2, 4), sp(1, 1), sp(0, 5)], 64).unwrap()[0];
        let plain = &pack_neighborhood(&text, &[], 64).unwrap()[0];
        let mut g = Graph::new(&store);
        let ha = enc.encode(&mut g, a).unwrap();
        let hb = enc.encode(&mut g, b).unwrap();
        let hp = enc.encode(&mut g, plain).unwrap();
        for t in 0..6 {
            for d in 0..8 {
                // Row count changes the matmul blocking, so allow last-bit noise.
                assert!((g.value(ha)[[t, d]] - g.value(hb)[[t, d]]).abs() < 1e-12);
                assert!((g.value(ha)[[t, d]] - g.value(hp)[[t, d]]).abs() < 1e-12);
            }
        }
        assert_eq!(g.value(hb).dim(), (12, 8));
    }

    #[test]
    fn identity_blend_and_zero_mask() {
        let mut store = ParamStore::new();
        let (enc, mut legal) = small_encoder(&mut store, 64);
        let text = [6, 7, 8, 9, 10, 11];
        let p = &pack_subject_oriented(&text, sp(1, 2), &[sp(4, 4)], 64).unwrap()[0];
        let empty = MaskMatrix::zeros(6);
        let mut g = Graph::new(&store);
        let hg = enc.encode(&mut g, p).unwrap();
        let out = legal.forward(&mut g, hg, p, &empty).unwrap();
        let expect = g.value(hg) * 0.5;
        assert!(g.value(out.fused).iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(g.value(out.legal).iter().all(|&v| v == 0.0));

        legal.omega = 1.0;
        let mut g = Graph::new(&store);
        let hg = enc.encode(&mut g, p).unwrap();
        let mut mask = MaskMatrix::zeros(6);
        mask.set(1, 3);
        let out = legal.forward(&mut g, hg, p, &mask).unwrap();
        assert!(g.value(out.fused).iter().zip(g.value(hg).iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn single_entry_mask_focuses_attention() {
        let lex = Lexicon::parse("cd\n");
        let toks: Vec<String> = "abxcdy".chars().map(String::from).collect();
        let mask = build_mask(&toks, &lex);
        assert_eq!(mask.matches(), vec![(3, 4)]);
        let p = &pack_neighborhood(&[6; 6], &[sp(0, 1)], 64).unwrap()[0];
        let (penalty, rows) = legal_penalty(p, &mask).unwrap();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.input(Mat::from_shape_fn((8, 8), |(i, j)| (i * 8 + j) as f64 * 0.1));
        let w = g.masked_softmax(logits, &penalty);
        let w = g.value(w);
        assert_eq!(w[[3, 4]], 1.0);
        assert_eq!(w.row(3).sum(), 1.0);
        assert!(w.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(rows.iter().filter(|&&r| r == 1.0).count(), 1);
    }
}
