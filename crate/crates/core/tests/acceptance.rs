//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion and then asserts it. Criteria run one at a time so that their
//! wall-clock budgets are measured without contention.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use lexhyper::encoder::{pack_neighborhood, EncoderConfig, LegalAugment};
use lexhyper::hypergraph::{joint_loss, Heads, HgnnLayer, HgnnStack, Hypergraph, Topology};
use lexhyper::lexicon::{build_mask, Lexicon};
use lexhyper::metrics::{score_ner, score_re, Prf};
use lexhyper::model::{predict_documents, prepare_examples, train_joint, JointConfig, JointModel};
use lexhyper::nn::gradcheck::{check, GradCheck};
use lexhyper::nn::layers::Builder;
use lexhyper::nn::{Graph, Init, Mat, OptimizerConfig, ParamGroup, ParamId, ParamStore, TrainOptions, Var};
use lexhyper::pipeline::{cmd_ablate, cmd_generate, cmd_train_spangen, RunConfig};
use lexhyper::schema::split_corpus;
use lexhyper::spangen::{recall_at_p, train_spangen, BiaffineScorer, SpanGenConfig, SpanGenerator};
use lexhyper::synth::{generate_corpus, GeneratorConfig};
use lexhyper::vocab::Vocab;
use lexhyper::{Document, EntityMention, MetricsReport, RelationMention, SpanRef};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const BIAFFINE_TOL: f64 = 1e-10;
const BETA_TOL: f64 = 1e-6;
const EQUIVARIANCE_TOL: f64 = 1e-6;
const GAMMA: f64 = 0.5;

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let ok = pass && elapsed <= budget;
    println!(
        "criterion {id} [{}] {name}: {detail} ({:.1}s, budget {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
    assert!(elapsed <= budget, "criterion {id} ({name}) took {elapsed:?}, over its {budget:?} budget");
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

/// The encoder used for every learning criterion.
fn desk_encoder(vocab_size: usize) -> EncoderConfig {
    EncoderConfig { vocab_size, dim: 64, heads: 4, layers: 2, ffn_dim: 128, window: 512, ..Default::default() }
}

fn desk_spangen() -> SpanGenConfig {
    SpanGenConfig { max_span_width: 8, ..Default::default() }
}

fn options(epochs: usize, batch_size: usize) -> TrainOptions {
    TrainOptions { epochs, batch_size, seed: 1, optimizer: OptimizerConfig::default() }
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_hypergraph_combinatorics() {
    let _guard = serial();
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut graphs = 0;
    for p in 2..=8usize {
        for topology in Topology::ALL {
            graphs += 1;
            let hg = Hypergraph::build(p, topology);
            let pairs = p * (p - 1);
            let triples = p * (p - 1) * (p - 2) / 2;
            let expect = (
                if topology.has_sor() { pairs } else { 0 },
                if topology.has_jc() { triples } else { 0 },
                if topology.has_cp() { triples } else { 0 },
            );
            if (hg.sor.len(), hg.jc.len(), hg.cp.len()) != expect {
                failures.push(format!("P={p} {topology}: edges {:?} != {expect:?}", (hg.sor.len(), hg.jc.len(), hg.cp.len())));
            }
            // Brute-force relation degrees from the edge lists themselves.
            for a in 0..p {
                for b in (0..p).filter(|&b| b != a) {
                    let sor = hg.sor.iter().filter(|&&(s, o)| (s, o) == (a, b)).count();
                    let jc = hg.jc.iter().filter(|&&(x, y, c)| c == b && (x == a || y == a)).count();
                    let cp = hg.cp.iter().filter(|&&(s, x, y)| s == a && (x == b || y == b)).count();
                    let want = (
                        usize::from(topology.has_sor()),
                        if topology.has_jc() { p - 2 } else { 0 },
                        if topology.has_cp() { p - 2 } else { 0 },
                    );
                    let d = hg.degree(hg.relation(a, b));
                    if (sor, jc, cp) != want || (d.sor, d.jc, d.cp) != want {
                        failures.push(format!(
                            "P={p} {topology} relation ({a},{b}): edges {:?}, incidences {:?}, want {want:?}",
                            (sor, jc, cp),
                            (d.sor, d.jc, d.cp)
                        ));
                    }
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{graphs} graphs (P=2..8 x 8 topologies) exact")
    } else {
        failures[..failures.len().min(3)].join("; ")
    };
    verdict(1, "hypergraph combinatorics", failures.is_empty(), t.elapsed(), Duration::from_secs(1), &detail);
}

// ---------------------------------------------------------------- 2

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}

/// Weighted sum with fixed random weights, so that every output entry
/// contributes a distinct gradient.
fn probe(g: &mut Graph<'_>, x: Var, seed: u64) -> Var {
    let shape = g.value(x).dim();
    let w = g.input(random_mat(&mut rng(seed), shape.0, shape.1));
    let y = g.mul(x, w);
    g.sum(y)
}

fn gradcheck_biaffine() -> GradCheck {
    let mut store = ParamStore::new();
    let mut r = rng(21);
    let (scorer, xs) = {
        let mut b = Builder::new(&mut store, &mut r, ParamGroup::Task);
        let scorer = BiaffineScorer::new(&mut b, 4, 5, 3);
        let xs: Vec<ParamId> = (0..4).map(|i| b.param(&format!("x{i}"), (6, 4), Init::Uniform(1.0))).collect();
        (scorer, xs)
    };
    check(&mut store.clone(), &all_ids(&store), 12, GRAD_EPS, |g| {
        let v: Vec<Var> = xs.iter().map(|&id| g.param(id)).collect();
        let s = scorer.score(g, v[0], v[1], v[2], v[3]);
        probe(g, s, 1)
    })
}

fn gradcheck_legal() -> GradCheck {
    let mut store = ParamStore::new();
    let mut r = rng(22);
    // Six text tokens, three lexicon hits, two spans' markers appended.
    let tokens: Vec<String> = "abcabd".chars().map(String::from).collect();
    let lex = Lexicon::from_terms([vec!["a".to_string(), "b".to_string()], vec!["d".to_string()]]);
    let mask = build_mask(&tokens, &lex);
    assert!(mask.matches().len() >= 3 && (0..6).any(|a| mask.row_is_empty(a)));
    let packed = pack_neighborhood(&[6, 7, 8, 6, 7, 9], &[SpanRef::new(0, 1), SpanRef::new(3, 5)], 64).unwrap().remove(0);
    let (legal, input) = {
        let mut b = Builder::new(&mut store, &mut r, ParamGroup::Task);
        let legal = LegalAugment::new(&mut b, 8, 2, 12, 0.5, 0.3);
        let input = b.param("general", (packed.len(), 8), Init::Uniform(1.0));
        (legal, input)
    };
    check(&mut store.clone(), &all_ids(&store), 10, GRAD_EPS, |g| {
        let h = g.param(input);
        let out = legal.forward(g, h, &packed, &mask).unwrap();
        let a = probe(g, out.fused, 2);
        let b = probe(g, out.legal, 3);
        g.add(a, b)
    })
}

fn gradcheck_hgnn() -> GradCheck {
    let (p, d) = (3, 8);
    let hg = Hypergraph::build(p, Topology::SorJcCp);
    let mut store = ParamStore::new();
    let mut r = rng(23);
    let (stack, heads, input) = {
        let mut b = Builder::new(&mut store, &mut r, ParamGroup::Task);
        let stack = HgnnStack::new(&mut b, d, 2);
        let heads = Heads::new(&mut b, d, 8, 3, 3);
        let input = b.param("nodes", (hg.num_nodes(), d), Init::Uniform(1.0));
        (stack, heads, input)
    };
    let entity_targets = [1, 0, 2];
    let relation_targets = [0, 1, 2, 0, 0, 1];
    check(&mut store.clone(), &all_ids(&store), 8, GRAD_EPS, |g| {
        let x = g.param(input);
        let h = stack.forward(g, x, &hg);
        let logits = heads.classify(g, h, &hg);
        joint_loss(g, &logits, &entity_targets, &relation_targets).total
    })
}

#[test]
fn criterion_2_gradient_fidelity() {
    let _guard = serial();
    let t = Instant::now();
    let parts = [("biaffine", gradcheck_biaffine()), ("legal+mask", gradcheck_legal()), ("hgnn x2 + heads", gradcheck_hgnn())];
    let pass = parts.iter().all(|(_, c)| c.passes(GRAD_TOL));
    let detail =
        parts.iter().map(|(n, c)| format!("{n}: {} entries, max rel err {:.2e}", c.checked, c.max_rel_err)).collect::<Vec<_>>().join("; ");
    if !pass {
        for (n, c) in &parts {
            println!("  {n} worst entry: {:?}", c.worst);
        }
    }
    verdict(2, "gradient fidelity", pass, t.elapsed(), Duration::from_secs(30), &detail);
}

// ---------------------------------------------------------------- 3

/// Greedy one-to-one matching by linear search; independent of the
/// library's hashing counter.
fn brute_prf<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> (usize, usize, usize) {
    let (mut correct, mut pred, mut gold) = (0, 0, 0);
    for (p, g) in pairs {
        pred += p.len();
        gold += g.len();
        let mut used = vec![false; g.len()];
        for item in p {
            if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *item) {
                used[j] = true;
                correct += 1;
            }
        }
    }
    (correct, pred, gold)
}

fn oracle_f1(c: usize, p: usize, g: usize) -> (f64, f64, f64) {
    let prec = if p == 0 { 0.0 } else { c as f64 / p as f64 };
    let rec = if g == 0 { 0.0 } else { c as f64 / g as f64 };
    let f1 = if c == 0 { 0.0 } else { 2.0 * c as f64 / (p + g) as f64 };
    (prec, rec, f1)
}

fn random_doc(r: &mut ChaCha8Rng, id: usize, near: Option<&Document>) -> Document {
    let n = near.map_or_else(|| r.gen_range(1..12), |d| d.tokens.len());
    let types = ["A", "B", "C"];
    let mut entities: Vec<EntityMention> = match near {
        // Predictions start from the gold mentions and get corrupted.
        Some(d) => d.entities.iter().filter(|_| r.gen_bool(0.7)).cloned().collect(),
        None => Vec::new(),
    };
    for _ in 0..r.gen_range(0..5) {
        let s = r.gen_range(0..n);
        let e = (s + r.gen_range(0..3)).min(n - 1);
        entities.push(EntityMention { span: SpanRef::new(s, e), label: types[r.gen_range(0..3)].into() });
    }
    if r.gen_bool(0.2) && !entities.is_empty() {
        let dup = entities[0].clone();
        entities.push(dup);
    }
    entities.shuffle(r);
    let m = entities.len();
    let mut relations = Vec::new();
    if m >= 2 {
        for _ in 0..r.gen_range(0..6) {
            let a = r.gen_range(0..m);
            let b = (a + r.gen_range(1..m)) % m;
            relations.push(RelationMention { subject: a, object: b, label: ["r", "s"][r.gen_range(0..2)].into() });
        }
    }
    Document { doc_id: format!("d{id}"), tokens: vec!["x".into(); n], entities, relations }
}

fn check_prf(m: &Prf, (c, p, g): (usize, usize, usize)) -> bool {
    let (prec, rec, f1) = oracle_f1(c, p, g);
    (m.correct, m.pred, m.gold) == (c, p, g) && m.p == prec && m.r == rec && (m.f1 - f1).abs() <= 1e-15
}

fn biaffine_vs_loops(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (hidden, d, du, n) = (r.gen_range(1..6), r.gen_range(1..7), r.gen_range(1..5), r.gen_range(1..9));
    let mut store = ParamStore::new();
    let mut rr = rng(seed + 1);
    let scorer = BiaffineScorer::new(&mut Builder::new(&mut store, &mut rr, ParamGroup::Task), hidden, d, du);
    let (hs, he) = (random_mat(&mut r, n, d), random_mat(&mut r, n, d));
    let mut g = Graph::new(&store);
    let (s, e) = (g.input(hs.clone()), g.input(he.clone()));
    let channels = scorer.biaffine(&mut g, s, e);
    let logits = scorer.out.forward(&mut g, channels);
    let (channels, logits) = (g.value(channels).clone(), g.value(logits).clone());

    let u = store.value(scorer.tensor);
    let (w, bias) = (store.value(scorer.out.weight), store.value(scorer.out.bias));
    let ext = |m: &Mat, row: usize, i: usize| if i == d { 1.0 } else { m[[row, i]] };
    let mut worst: f64 = 0.0;
    for row in 0..n {
        let mut logit = bias[[0, 0]];
        for c in 0..du {
            let mut acc = 0.0;
            for i in 0..=d {
                for j in 0..=d {
                    acc += ext(&hs, row, i) * u[[i, c * (d + 1) + j]] * ext(&he, row, j);
                }
            }
            worst = worst.max((acc - channels[[row, c]]).abs());
            logit += acc * w[[c, 0]];
        }
        worst = worst.max((logit - logits[[row, 0]]).abs());
    }
    worst
}

#[test]
fn criterion_3_oracle_equivalence() {
    let _guard = serial();
    let t = Instant::now();
    let mut r = rng(31);
    let mut metric_failures = 0;
    for corpus in 0..100 {
        let gold: Vec<Document> = (0..r.gen_range(0..8)).map(|i| random_doc(&mut r, i, None)).collect();
        let pred: Vec<Document> = gold.iter().enumerate().map(|(i, g)| random_doc(&mut r, i, Some(g))).collect();
        let ent = |d: &Document| d.entities.iter().map(|e| (e.span.start, e.span.end, e.label.clone())).collect::<Vec<_>>();
        let rel = |d: &Document| {
            d.relations
                .iter()
                .map(|x| {
                    let (s, o) = (&d.entities[x.subject], &d.entities[x.object]);
                    (s.span.start, s.span.end, s.label.clone(), o.span.start, o.span.end, o.label.clone(), x.label.clone())
                })
                .collect::<Vec<_>>()
        };
        let ner_pairs: Vec<_> = pred.iter().zip(&gold).map(|(p, g)| (ent(p), ent(g))).collect();
        let re_pairs: Vec<_> = pred.iter().zip(&gold).map(|(p, g)| (rel(p), rel(g))).collect();
        let ok = check_prf(&score_ner(&pred, &gold).unwrap(), brute_prf(&ner_pairs))
            && check_prf(&score_re(&pred, &gold).unwrap(), brute_prf(&re_pairs));
        if !ok {
            metric_failures += 1;
            println!("  metrics mismatch on corpus {corpus}");
        }
    }
    let worst = (0..50).map(|s| biaffine_vs_loops(1000 + s)).fold(0.0, f64::max);
    let pass = metric_failures == 0 && worst < BIAFFINE_TOL;
    let detail = format!(
        "metrics exact on {}/100 corpora; biaffine max abs diff {worst:.1e} over 50 inputs (tol {BIAFFINE_TOL:.0e})",
        100 - metric_failures
    );
    verdict(3, "oracle equivalence", pass, t.elapsed(), Duration::from_secs(30), &detail);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_mask_correctness() {
    let _guard = serial();
    let t = Instant::now();
    let mut r = rng(41);
    let alphabet: Vec<String> = "甲乙丙丁戊己庚辛壬癸".chars().map(String::from).collect();
    let mut terms: HashSet<Vec<String>> = HashSet::new();
    while terms.len() < 50 {
        let len = r.gen_range(1..=4);
        terms.insert((0..len).map(|_| alphabet[r.gen_range(0..alphabet.len())].clone()).collect());
    }
    let lex = Lexicon::from_terms(terms.iter().cloned());
    let (mut mismatches, mut hits) = (0, 0);
    for _ in 0..200 {
        let n = r.gen_range(0..40);
        let tokens: Vec<String> = (0..n).map(|_| alphabet[r.gen_range(0..alphabet.len())].clone()).collect();
        let mask = build_mask(&tokens, &lex);
        for a in 0..n {
            for b in 0..n {
                let expected = a <= b && terms.iter().any(|t| t[..] == tokens[a..=b]);
                hits += usize::from(expected);
                mismatches += usize::from(mask.get(a, b) != expected);
            }
        }
    }
    let detail = format!("200 sentences, 50-term lexicon, {hits} true pairs, {mismatches} mismatches");
    verdict(4, "mask correctness", mismatches == 0 && hits > 0, t.elapsed(), Duration::from_secs(10), &detail);
}

// ---------------------------------------------------------------- 5

fn residual_identity() -> f64 {
    let dim = 6;
    let mut worst: f64 = 0.0;
    for topology in Topology::ALL {
        let hg = Hypergraph::build(4, topology);
        let mut store = ParamStore::new();
        let mut r = rng(51);
        let layer = HgnnLayer::new(&mut Builder::new(&mut store, &mut r, ParamGroup::Task), "layer", dim);
        for f in [&layer.sor, &layer.jc, &layer.cp] {
            f.zero(&mut store);
        }
        let x = random_mat(&mut r, hg.num_nodes(), dim);
        let mut g = Graph::new(&store);
        let v = g.input(x.clone());
        let out = layer.forward(&mut g, v, &hg);
        worst = worst.max((g.value(out.states) - &x).iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    worst
}

fn attention_normalisation() -> f64 {
    let dim = 6;
    let mut worst: f64 = 0.0;
    for p in 2..=6 {
        for topology in Topology::ALL.into_iter().filter(|t| *t != Topology::NoEdge) {
            let hg = Hypergraph::build(p, topology);
            if hg.num_edges() == 0 {
                continue;
            }
            let mut store = ParamStore::new();
            let mut r = rng(52 + p as u64);
            let layer = HgnnLayer::new(&mut Builder::new(&mut store, &mut r, ParamGroup::Task), "layer", dim);
            let mut g = Graph::new(&store);
            let v = g.input(random_mat(&mut r, hg.num_nodes(), dim));
            let beta = layer.forward(&mut g, v, &hg).attention.expect("graph has edges");
            let beta = g.value(beta);
            let mut sums: HashMap<usize, f64> = HashMap::new();
            for (k, inc) in hg.incidences.iter().enumerate() {
                *sums.entry(inc.node).or_default() += beta[[k, 0]];
            }
            worst = sums.values().fold(worst, |m, s| m.max((s - 1.0).abs()));
        }
    }
    worst
}

fn permutation_equivariance() -> f64 {
    let (p, dim) = (5, 8);
    let hg = Hypergraph::build(p, Topology::SorJcCp);
    let mut store = ParamStore::new();
    let mut r = rng(53);
    let (stack, heads) = {
        let mut b = Builder::new(&mut store, &mut r, ParamGroup::Task);
        (HgnnStack::new(&mut b, dim, 2), Heads::new(&mut b, dim, 16, 4, 3))
    };
    let x = random_mat(&mut r, hg.num_nodes(), dim);
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(&mut r);
    // Row of relabelled node k is the original row of the node it came from.
    let mut px = Mat::zeros(x.dim());
    for a in 0..p {
        px.row_mut(hg.subject(perm[a])).assign(&x.row(hg.subject(a)));
        px.row_mut(hg.object(perm[a])).assign(&x.row(hg.object(a)));
        for b in (0..p).filter(|&b| b != a) {
            px.row_mut(hg.relation(perm[a], perm[b])).assign(&x.row(hg.relation(a, b)));
        }
    }
    let run = |x: Mat| {
        let mut g = Graph::new(&store);
        let v = g.input(x);
        let h = stack.forward(&mut g, v, &hg);
        let l = heads.classify(&mut g, h, &hg);
        (g.value(l.entity).clone(), g.value(l.relation.unwrap()).clone())
    };
    let (e0, r0) = run(x);
    let (e1, r1) = run(px);
    let rel_row = |a: usize, b: usize| hg.relation(a, b) - 2 * p;
    let mut worst: f64 = 0.0;
    for a in 0..p {
        let diff = &e0.row(a) - &e1.row(perm[a]);
        worst = diff.iter().fold(worst, |m, d| m.max(d.abs()));
        for b in (0..p).filter(|&b| b != a) {
            let diff = &r0.row(rel_row(a, b)) - &r1.row(rel_row(perm[a], perm[b]));
            worst = diff.iter().fold(worst, |m, d| m.max(d.abs()));
        }
    }
    worst
}

#[test]
fn criterion_5_structural_identities() {
    let _guard = serial();
    let t = Instant::now();
    let (identity, beta, equivariance) = (residual_identity(), attention_normalisation(), permutation_equivariance());
    let pass = identity == 0.0 && beta < BETA_TOL && equivariance < EQUIVARIANCE_TOL;
    let detail = format!(
        "zeroed-message residual max diff {identity:.1e}; max |sum beta - 1| {beta:.1e} (tol {BETA_TOL:.0e}); permuted logits max diff {equivariance:.1e} (tol {EQUIVARIANCE_TOL:.0e})"
    );
    verdict(5, "structural identities", pass, t.elapsed(), Duration::from_secs(30), &detail);
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_span_generator_learning() {
    let _guard = serial();
    let t = Instant::now();
    let corpus = generate_corpus(&GeneratorConfig { num_docs: 200, ..Default::default() }).unwrap();
    let (train, held_out) = split_corpus(corpus.documents, 0.8, 7).unwrap();
    let vocab = Vocab::build(&train, []);
    let mut store = ParamStore::new();
    let model = SpanGenerator::new(&mut store, desk_encoder(vocab.len()), desk_spangen(), 1).unwrap();
    train_spangen(&model, &mut store, &train, &vocab, &options(12, 8), |_, _| {}).unwrap();
    let report = recall_at_p(&model, &store, &held_out, &vocab, GAMMA).unwrap();
    let detail = format!(
        "held-out recall@P {:.4} ({}/{} gold spans, {} docs), random baseline {:.4}, threshold 0.95",
        report.recall,
        report.covered,
        report.gold,
        held_out.len(),
        report.random_baseline
    );
    verdict(6, "span generator learning", report.recall >= 0.95, t.elapsed(), Duration::from_secs(300), &detail);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_end_to_end_overfit() {
    let _guard = serial();
    let t = Instant::now();
    let corpus = generate_corpus(&GeneratorConfig { num_docs: 50, ..Default::default() }).unwrap();
    let lexicon = corpus.lexicon();
    let train = corpus.documents;
    let vocab = Vocab::build(&train, []);
    let encoder = desk_encoder(vocab.len());

    let mut sg_store = ParamStore::new();
    let spangen = SpanGenerator::new(&mut sg_store, encoder.clone(), desk_spangen(), 1).unwrap();
    train_spangen(&spangen, &mut sg_store, &train, &vocab, &options(15, 2), |_, _| {}).unwrap();

    let cfg = JointConfig { topology: Topology::SorJcCp, hgnn_layers: 2, head_hidden: 128, ..Default::default() };
    let train_ex = prepare_examples(&train, &corpus.schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg, true).unwrap();
    let eval_ex = prepare_examples(&train, &corpus.schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg, false).unwrap();
    let mut store = ParamStore::new();
    let model = JointModel::new(&mut store, encoder, cfg, &corpus.schema, 2).unwrap();
    let epochs = train_joint(&model, &mut store, &train_ex, &options(30, 2), |_, _| Ok(())).unwrap();
    let (pred, _) = predict_documents(&model, &store, &train, &eval_ex, &corpus.schema).unwrap();
    let m = MetricsReport::evaluate(&pred, &train).unwrap();

    let (first, last) = (epochs.first().unwrap().loss, epochs.last().unwrap().loss);
    println!("  training loss {first:.4} -> {last:.4} ({:.2}% of the first epoch)", 100.0 * last / first);
    let detail = format!("train NER F1 {:.4} (>= 0.99), RE F1 {:.4} (>= 0.95)", m.ner.f1, m.re.f1);
    verdict(7, "end-to-end overfit", m.ner.f1 >= 0.99 && m.re.f1 >= 0.95, t.elapsed(), Duration::from_secs(600), &detail);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_generalization() {
    let _guard = serial();
    let t = Instant::now();
    let corpus = generate_corpus(&GeneratorConfig { num_docs: 600, p_joint_crime: 0.3, p_multi_crime: 0.3, ..Default::default() }).unwrap();
    let lexicon = corpus.lexicon();
    let (train, test) = split_corpus(corpus.documents, 500.0 / 600.0, 11).unwrap();
    assert_eq!((train.len(), test.len()), (500, 100));
    let vocab = Vocab::build(&train, []);
    let encoder = desk_encoder(vocab.len());

    let mut sg_store = ParamStore::new();
    let spangen = SpanGenerator::new(&mut sg_store, encoder.clone(), desk_spangen(), 1).unwrap();
    train_spangen(&spangen, &mut sg_store, &train, &vocab, &options(6, 8), |_, _| {}).unwrap();
    let recall = recall_at_p(&spangen, &sg_store, &test, &vocab, GAMMA).unwrap();

    let cfg = JointConfig { head_hidden: 128, ..Default::default() };
    let train_ex = prepare_examples(&train, &corpus.schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg, true).unwrap();
    let test_ex = prepare_examples(&test, &corpus.schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg, false).unwrap();
    let mut store = ParamStore::new();
    let model = JointModel::new(&mut store, encoder, cfg, &corpus.schema, 2).unwrap();
    train_joint(&model, &mut store, &train_ex, &options(10, 4), |_, _| Ok(())).unwrap();
    let (pred, _) = predict_documents(&model, &store, &test, &test_ex, &corpus.schema).unwrap();
    let m = MetricsReport::evaluate(&pred, &test).unwrap();

    let detail =
        format!("held-out NER F1 {:.4} (>= 0.90), RE F1 {:.4} (>= 0.80); candidate recall {:.4}", m.ner.f1, m.re.f1, recall.recall);
    verdict(8, "generalization", m.ner.f1 >= 0.90 && m.re.f1 >= 0.80, t.elapsed(), Duration::from_secs(1500), &detail);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_ablation_machinery() {
    let _guard = serial();
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { output_dir: dir.path().to_owned(), seed: 3, ..Default::default() };
    cfg.generator.num_docs = 80;
    cfg.encoder = desk_encoder(0);
    cfg.spangen = desk_spangen();
    cfg.spangen_train = options(4, 4);
    cfg.joint.head_hidden = 128;
    cfg.joint_train = options(3, 4);
    cfg.ablation.reduced = true;
    cmd_generate(&cfg).unwrap();
    cmd_train_spangen(&cfg).unwrap();
    let report = cmd_ablate(&cfg).unwrap();
    print!("{}", report.table());

    let names: Vec<&str> = report.topology_rows().map(|r| r.topology.name()).collect();
    let expected_names = ["noedge", "sor", "jc", "cp", "sorjc", "sorcp", "jccp", "sorjccp"];
    let layers: Vec<usize> = report.layer_rows().map(|r| r.layers).collect();
    let entity_traffic =
        |r: &lexhyper::pipeline::AblationRow| r.traffic.entity_from_sor + r.traffic.entity_from_jc + r.traffic.entity_from_cp;
    let silent_ok = report.rows.iter().filter(|r| !r.topology.has_sor()).all(|r| entity_traffic(r) == 0);
    let sor_reaches = report.rows.iter().filter(|r| r.topology.has_sor()).all(|r| entity_traffic(r) > 0);
    let non_sor_never = report.rows.iter().all(|r| r.traffic.entity_from_jc + r.traffic.entity_from_cp == 0);
    let written = dir.path().join("ablation.json").exists() && dir.path().join("ablation.txt").exists();
    let pass = names == expected_names && layers == [1, 2, 3, 4] && silent_ok && sor_reaches && non_sor_never && written;
    let detail = format!(
        "topology rows {names:?}, layer sweep {layers:?}, zero entity traffic without sor edges: {silent_ok}, jc/cp never reach entities: {non_sor_never} (reduced grid, {} train / {} dev docs, {} epochs)",
        report.train_docs, report.dev_docs, report.epochs
    );
    verdict(9, "ablation machinery", pass, t.elapsed(), Duration::from_secs(600), &detail);
}
