use std::collections::BTreeSet;
use std::path::Path;

use lexhyper::hypergraph::{Hypergraph, Topology};
use lexhyper::lexicon::{build_mask, Lexicon};
use lexhyper::metrics::{score_ner, score_re};
use lexhyper::pipeline::RunConfig;
use lexhyper::schema::{read_corpus, split_corpus, write_corpus};
use lexhyper::spangen::{candidate_count, enumerate_spans, rank_spans, select_candidates, select_with_gold, ScoredSpan};
use lexhyper::{Document, EntityMention, LabelSchema, RelationMention, SpanRef};
use proptest::prelude::*;

fn schema() -> LabelSchema {
    LabelSchema::new(vec!["A".into(), "B".into()], vec!["r".into(), "s".into()], 4).unwrap()
}

prop_compose! {
    fn document(id: usize)(n in 1usize..14)
        (tokens in prop::collection::vec("[a-d]", n),
         ents in prop::collection::vec((0..n, 0usize..4, 0usize..2), 0..6),
         rels in prop::collection::vec((0usize..6, 0usize..6, 0usize..2), 0..6)) -> Document {
        let n = tokens.len();
        let entities: Vec<EntityMention> = ents
            .into_iter()
            .map(|(s, w, t)| EntityMention { span: SpanRef::new(s, (s + w).min(n - 1)), label: ["A", "B"][t].into() })
            .collect();
        let m = entities.len();
        let relations = rels
            .into_iter()
            .filter(|&(a, b, _)| a < m && b < m && a != b)
            .map(|(a, b, t)| RelationMention { subject: a, object: b, label: ["r", "s"][t].into() })
            .collect();
        Document { doc_id: format!("d{id}"), tokens, entities, relations }
    }
}

fn corpus() -> impl Strategy<Value = Vec<Document>> {
    (0usize..12).prop_flat_map(|n| (0..n).map(document).collect::<Vec<_>>())
}

fn topology() -> impl Strategy<Value = Topology> {
    prop::sample::select(Topology::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_seeded_partition(docs in corpus(), ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, held) = split_corpus(docs.clone(), ratio, seed).unwrap();
        prop_assert_eq!(train.len() + held.len(), docs.len());
        prop_assert_eq!(held.len(), ((1.0 - ratio) * docs.len() as f64 + 1e-9).floor() as usize);
        let ids = |d: &[Document]| d.iter().map(|x| x.doc_id.clone()).collect::<BTreeSet<_>>();
        prop_assert!(ids(&train).is_disjoint(&ids(&held)));
        let mut all: Vec<_> = ids(&train).union(&ids(&held)).cloned().collect();
        all.sort();
        let mut expected: Vec<_> = docs.iter().map(|d| d.doc_id.clone()).collect();
        expected.sort();
        prop_assert_eq!(all, expected);
        prop_assert_eq!(split_corpus(docs, ratio, seed).unwrap(), (train, held));
    }

    #[test]
    fn corpus_round_trips_through_jsonl(docs in corpus()) {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &docs).unwrap();
        let back = read_corpus(&buf[..], Path::new("mem"), &schema()).unwrap();
        prop_assert_eq!(back, docs);
    }

    #[test]
    fn mask_matches_pairwise_membership(
        tokens in prop::collection::vec("[a-c]", 0..16),
        terms in prop::collection::vec(prop::collection::vec("[a-c]", 1..4), 0..8),
    ) {
        let lex = Lexicon::from_terms(terms.clone());
        let mask = build_mask(&tokens, &lex);
        prop_assert_eq!(mask.size(), tokens.len());
        for a in 0..tokens.len() {
            for b in 0..tokens.len() {
                let expected = a <= b && terms.iter().any(|t| t.as_slice() == &tokens[a..=b]);
                prop_assert_eq!(mask.get(a, b), expected, "pair ({}, {})", a, b);
            }
        }
    }

    #[test]
    fn selection_is_a_monotone_prefix_of_the_ranking(
        n in 1usize..20,
        scores in prop::collection::vec(-3i32..3, 1..80),
        g1 in 0.05f64..1.5,
        g2 in 0.05f64..1.5,
    ) {
        let spans = enumerate_spans(n, 4);
        let scored: Vec<ScoredSpan> = spans.iter().zip(scores.iter().cycle()).map(|(&span, &s)| ScoredSpan { span, score: s as f64 }).collect();
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let small = select_candidates(&scored, n, lo);
        let large = select_candidates(&scored, n, hi);
        prop_assert_eq!(small.len(), candidate_count(n, lo).min(scored.len()));
        prop_assert!(small.len() <= large.len());
        prop_assert_eq!(&large.spans[..small.len()], &small.spans[..]);
        let ranked = rank_spans(&scored);
        let ranked_spans: Vec<SpanRef> = ranked.iter().map(|s| s.span).collect();
        prop_assert_eq!(&ranked_spans[..large.len()], &large.spans[..]);
    }

    #[test]
    fn gold_forcing_keeps_every_scored_gold_span(
        n in 1usize..16,
        scores in prop::collection::vec(-3i32..3, 1..60),
        gold_idx in prop::collection::vec(0usize..60, 0..8),
        gamma in 0.05f64..1.0,
    ) {
        let spans = enumerate_spans(n, 4);
        let scored: Vec<ScoredSpan> = spans.iter().zip(scores.iter().cycle()).map(|(&span, &s)| ScoredSpan { span, score: s as f64 }).collect();
        let gold: Vec<SpanRef> = gold_idx.iter().filter_map(|&i| spans.get(i).copied()).collect();
        let distinct: BTreeSet<SpanRef> = gold.iter().copied().collect();
        let set = select_with_gold(&scored, n, gamma, &gold);
        prop_assert!(distinct.iter().all(|g| set.contains(*g)));
        prop_assert_eq!(set.len(), candidate_count(n, gamma).min(scored.len()).max(distinct.len()));
    }

    #[test]
    fn metrics_are_bounded_and_swap_symmetric(a in corpus(), seed in any::<u64>()) {
        // Pair each gold document with a perturbed copy of itself.
        let b: Vec<Document> = a.iter().enumerate().map(|(i, d)| {
            let mut d = d.clone();
            if (seed >> (i % 64)) & 1 == 1 {
                d.entities.reverse();
                d.relations.clear();
            }
            if (seed >> ((i + 7) % 64)) & 1 == 1 && !d.entities.is_empty() {
                d.entities[0].label = if d.entities[0].label == "A" { "B".into() } else { "A".into() };
            }
            d
        }).collect();
        for score in [score_ner, score_re] {
            let ab = score(&a, &b).unwrap();
            let ba = score(&b, &a).unwrap();
            prop_assert_eq!(ab.correct, ba.correct);
            prop_assert_eq!(ab.p, ba.r);
            prop_assert_eq!(ab.r, ba.p);
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
            for m in [ab, ba] {
                prop_assert!((0.0..=1.0).contains(&m.p) && (0.0..=1.0).contains(&m.r) && (0.0..=1.0).contains(&m.f1));
                prop_assert!(m.f1 <= m.p.max(m.r) + 1e-12);
                prop_assert!(m.correct <= m.pred.min(m.gold));
            }
            let same = score(&a, &a).unwrap();
            prop_assert!(same.gold == 0 || same.f1 == 1.0);
        }
    }

    #[test]
    fn hypergraph_degree_laws(p in 1usize..9, t in topology()) {
        let hg = Hypergraph::build(p, t);
        let degrees = hg.degrees();
        prop_assert_eq!(degrees.len(), 2 * p + p * p.saturating_sub(1));
        let total: usize = degrees.iter().map(|d| d.sor + d.jc + d.cp).sum();
        prop_assert_eq!(total, hg.incidences.len());
        let sor = usize::from(t.has_sor());
        for d in &degrees[..2 * p] {
            prop_assert_eq!((d.sor, d.jc, d.cp), (sor * (p - 1), 0, 0));
        }
        let pairs = p.saturating_sub(2);
        for d in &degrees[2 * p..] {
            prop_assert_eq!(d.sor, sor);
            prop_assert_eq!(d.jc, usize::from(t.has_jc()) * pairs);
            prop_assert_eq!(d.cp, usize::from(t.has_cp()) * pairs);
        }
        prop_assert_eq!(hg.entity_non_sor_incidences(), 0);
        for (node, d) in degrees.iter().enumerate() {
            prop_assert_eq!(*d, hg.degree(node));
        }
    }

    #[test]
    fn resolved_config_reloads_identically(
        seed in any::<u64>(),
        gamma in 0.05f64..1.0,
        layers in 1usize..5,
        t in topology(),
        dir in "[a-z]{1,8}",
    ) {
        let mut cfg = RunConfig { seed, output_dir: Path::new("/tmp").join(dir), ..Default::default() };
        cfg.joint.gamma = gamma;
        cfg.joint.hgnn_layers = layers;
        cfg.joint.topology = t;
        let resolved = cfg.resolve();
        let text = serde_json::to_string_pretty(&resolved).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &resolved);
        prop_assert_eq!(back.resolve(), resolved);
    }
}
