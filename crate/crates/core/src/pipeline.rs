//! End-to-end commands: corpus generation, two-stage training, evaluation,
//! prediction and ablation sweeps, driven by one [`RunConfig`].

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{ensure_same_schema, Checkpoint, JointState, SpanGenState};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::hypergraph::{MessageTraffic, Topology};
use crate::lexicon::{load_lexicon, Lexicon};
use crate::metrics::{MetricsReport, Prf};
use crate::model::{predict_documents, prepare_examples, train_joint, Example, JointConfig, JointEpoch, JointModel};
use crate::nn::{ParamStore, TrainOptions};
use crate::schema::{load_corpus, save_corpus, split_corpus, Document, LabelSchema};
use crate::spangen::{recall_at_p, train_spangen, EpochLoss, RecallReport, SpanGenConfig, SpanGenerator};
use crate::synth::{generate_corpus, GeneratorConfig, PatternCounts};
use crate::vocab::Vocab;

pub const OUTPUT_ROOT_ENV: &str = "LEXHYPER_OUTPUT_ROOT";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Small, fast grid: fewer documents and epochs per run.
    pub reduced: bool,
    pub reduced_train_docs: usize,
    pub reduced_dev_docs: usize,
    pub reduced_epochs: usize,
    /// Layer counts swept at the full topology.
    pub layer_sweep: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { reduced: false, reduced_train_docs: 40, reduced_dev_docs: 20, reduced_epochs: 3, layer_sweep: vec![1, 2, 3, 4] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Directory for generated corpus files; defaults to `<output_dir>/data`.
    pub data_dir: Option<PathBuf>,
    pub train_file: Option<PathBuf>,
    pub dev_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub lexicon_file: Option<PathBuf>,
    pub schema_file: Option<PathBuf>,
    pub spangen_checkpoint: Option<PathBuf>,
    pub joint_checkpoint: Option<PathBuf>,
    pub bundle_checkpoint: Option<PathBuf>,
    /// Seed for model initialisation and data shuffling.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub train_ratio: f64,
    pub dev_ratio: f64,
    pub encoder: EncoderConfig,
    pub spangen: SpanGenConfig,
    /// Overrides the schema's span width bound when set.
    pub max_span_width: Option<usize>,
    pub joint: JointConfig,
    pub spangen_train: TrainOptions,
    pub joint_train: TrainOptions,
    /// Start the joint encoder from the span generator's encoder.
    pub warm_start: bool,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            data_dir: None,
            train_file: None,
            dev_file: None,
            test_file: None,
            lexicon_file: None,
            schema_file: None,
            spangen_checkpoint: None,
            joint_checkpoint: None,
            bundle_checkpoint: None,
            seed: 42,
            generator: GeneratorConfig::default(),
            train_ratio: 0.8,
            dev_ratio: 0.1,
            encoder: EncoderConfig::default(),
            spangen: SpanGenConfig::default(),
            max_span_width: None,
            joint: JointConfig::default(),
            spangen_train: TrainOptions { epochs: 12, batch_size: 4, ..TrainOptions::default() },
            joint_train: TrainOptions { epochs: 20, batch_size: 4, ..TrainOptions::default() },
            warm_start: false,
            ablation: AblationConfig::default(),
        }
    }
}

fn required(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("paths are filled by RunConfig::resolve")
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::file(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills every unset path from the output directory. A relative output
    /// directory is placed under `$LEXHYPER_OUTPUT_ROOT` when that is set.
    /// Resolving twice changes nothing.
    pub fn resolve(&self) -> RunConfig {
        let mut c = self.clone();
        if c.output_dir.is_relative() {
            if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|r| !r.is_empty()) {
                c.output_dir = PathBuf::from(root).join(&c.output_dir);
            }
        }
        let out = c.output_dir.clone();
        let data = c.data_dir.get_or_insert_with(|| out.join("data")).clone();
        let fill = |slot: &mut Option<PathBuf>, default: PathBuf| {
            slot.get_or_insert(default);
        };
        fill(&mut c.train_file, data.join("train.jsonl"));
        fill(&mut c.dev_file, data.join("dev.jsonl"));
        fill(&mut c.test_file, data.join("test.jsonl"));
        fill(&mut c.lexicon_file, data.join("lexicon.txt"));
        fill(&mut c.schema_file, data.join("schema.json"));
        fill(&mut c.spangen_checkpoint, out.join("spangen.ckpt"));
        fill(&mut c.joint_checkpoint, out.join("joint.ckpt"));
        fill(&mut c.bundle_checkpoint, out.join("bundle.ckpt"));
        c
    }

    pub fn validate(&self) -> Result<()> {
        let ratios_ok = self.train_ratio > 0.0 && self.dev_ratio > 0.0 && self.train_ratio + self.dev_ratio < 1.0;
        if !ratios_ok {
            return Err(Error::Config(format!(
                "split ratios must be positive and leave room for a test split (train {}, dev {})",
                self.train_ratio, self.dev_ratio
            )));
        }
        if self.spangen_train.batch_size == 0 || self.joint_train.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.encoder.validate()?;
        self.joint.validate()
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        fs::create_dir_all(&self.output_dir).map_err(Error::file(&self.output_dir))?;
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(Error::file(&path))?;
        Ok(path)
    }

    fn events(&self) -> EventLog {
        EventLog { path: self.output_dir.join(EVENTS_FILE) }
    }

    fn load_schema(&self) -> Result<LabelSchema> {
        LabelSchema::load(required(&self.schema_file))
    }

    fn span_width(&self, schema: &LabelSchema) -> usize {
        self.max_span_width.unwrap_or(schema.max_span_width)
    }
}

/// Resolves, validates and echoes the configuration for one command.
fn prepare(cfg: &RunConfig) -> Result<RunConfig> {
    let cfg = cfg.resolve();
    cfg.validate()?;
    cfg.write_resolved()?;
    Ok(cfg)
}

/// Append-only JSON-lines log.
pub struct EventLog {
    path: PathBuf,
}

impl EventLog {
    pub fn emit(&self, event: serde_json::Value) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(Error::file(&self.path))?;
        writeln!(f, "{event}").map_err(Error::file(&self.path))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(Error::file(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub tallies: PatternCounts,
    pub data_dir: PathBuf,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let cfg = prepare(cfg)?;
    let corpus = generate_corpus(&cfg.generator)?;
    let split_seed = cfg.generator.seed;
    let (train, rest) = split_corpus(corpus.documents, cfg.train_ratio, split_seed)?;
    let dev_share = cfg.dev_ratio / (1.0 - cfg.train_ratio);
    let (dev, test) = if rest.is_empty() { (Vec::new(), Vec::new()) } else { split_corpus(rest, dev_share, split_seed.wrapping_add(1))? };
    let data = cfg.data_dir.clone().expect("resolved");
    fs::create_dir_all(&data).map_err(Error::file(&data))?;
    save_corpus(required(&cfg.train_file), &train)?;
    save_corpus(required(&cfg.dev_file), &dev)?;
    save_corpus(required(&cfg.test_file), &test)?;
    let lex_path = required(&cfg.lexicon_file);
    fs::write(lex_path, &corpus.lexicon_text).map_err(Error::file(lex_path))?;
    corpus.schema.save(required(&cfg.schema_file))?;
    let summary = GenerateSummary { train: train.len(), dev: dev.len(), test: test.len(), tallies: corpus.tallies, data_dir: data };
    cfg.events().emit(json!({"event": "generate", "summary": &summary}))?;
    Ok(summary)
}

fn build_vocab(train: &[Document], lexicon: &Lexicon) -> Vocab {
    let terms: Vec<String> = lexicon.sorted_terms().into_iter().flatten().cloned().collect();
    Vocab::build(train, terms.iter().map(String::as_str))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanGenReport {
    pub gamma: f64,
    pub dev: RecallReport,
    pub epochs: Vec<EpochLoss>,
}

pub fn cmd_train_spangen(cfg: &RunConfig) -> Result<SpanGenReport> {
    let cfg = prepare(cfg)?;
    let schema = cfg.load_schema()?;
    let train = load_corpus(required(&cfg.train_file), &schema)?;
    let dev = load_corpus(required(&cfg.dev_file), &schema)?;
    let lexicon = load_lexicon(required(&cfg.lexicon_file))?;
    let vocab = build_vocab(&train, &lexicon);
    let encoder = EncoderConfig { vocab_size: vocab.len(), ..cfg.encoder.clone() };
    let sg_cfg = SpanGenConfig { max_span_width: cfg.span_width(&schema), ..cfg.spangen.clone() };
    let mut store = ParamStore::new();
    let model = SpanGenerator::new(&mut store, encoder, sg_cfg, cfg.seed)?;
    let log = cfg.events();
    let options = TrainOptions { seed: cfg.seed, ..cfg.spangen_train.clone() };
    let epochs = train_spangen(&model, &mut store, &train, &vocab, &options, |e, _| {
        info!("span generator epoch {} loss {:.5}", e.epoch, e.mean_loss);
        let _ = log.emit(json!({"event": "epoch", "stage": "spangen", "epoch": e.epoch, "loss": e.mean_loss}));
    })?;
    let report = recall_at_p(&model, &store, &dev, &vocab, cfg.joint.gamma)?;
    Checkpoint::Spangen(SpanGenState::capture(&model, &store, &schema, &vocab)).save(required(&cfg.spangen_checkpoint))?;
    log.emit(json!({"event": "spangen_done", "dev_recall": report.recall, "random_baseline": report.random_baseline}))?;
    let out = SpanGenReport { gamma: cfg.joint.gamma, dev: report, epochs };
    write_json(&cfg.output_dir.join("spangen_report.json"), &out)?;
    Ok(out)
}

/// Trained span generator and joint model, ready to label text.
pub struct Pipeline {
    pub spangen: SpanGenerator,
    pub spangen_store: ParamStore,
    pub joint: JointModel,
    pub joint_store: ParamStore,
    pub vocab: Vocab,
    pub schema: LabelSchema,
    pub lexicon: Lexicon,
}

impl Pipeline {
    /// From a bundle checkpoint, or from the configured checkpoint pair and
    /// lexicon file when `bundle` is `None`.
    pub fn load(cfg: &RunConfig, bundle: Option<&Path>) -> Result<Self> {
        let (sg_state, joint_state, lexicon) = match bundle {
            Some(path) => {
                let ck = Checkpoint::load(path)?;
                let lexicon = ck.lexicon().ok_or_else(|| Error::Checkpoint(format!("{} is not a bundle", path.display())))?;
                (ck.spangen()?.clone(), ck.joint()?.clone(), lexicon)
            }
            None => {
                let sg = Checkpoint::load(required(&cfg.spangen_checkpoint))?;
                let joint = Checkpoint::load(required(&cfg.joint_checkpoint))?;
                (sg.spangen()?.clone(), joint.joint()?.clone(), load_lexicon(required(&cfg.lexicon_file))?)
            }
        };
        ensure_same_schema(&sg_state.schema, &joint_state.schema, "the span generator")?;
        let (spangen, spangen_store, vocab) = sg_state.restore()?;
        let (joint, joint_store, joint_vocab) = joint_state.restore()?;
        if vocab != joint_vocab {
            return Err(Error::Checkpoint("span generator and joint model use different vocabularies".into()));
        }
        Ok(Pipeline { spangen, spangen_store, joint, joint_store, vocab, schema: joint_state.schema, lexicon })
    }

    pub fn examples(&self, docs: &[Document]) -> Result<Vec<Example>> {
        prepare_examples(docs, &self.schema, &self.vocab, &self.lexicon, (&self.spangen, &self.spangen_store), &self.joint.config, false)
    }

    pub fn predict(&self, docs: &[Document]) -> Result<(Vec<Document>, MessageTraffic)> {
        let ex = self.examples(docs)?;
        predict_documents(&self.joint, &self.joint_store, docs, &ex, &self.schema)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub losses: JointEpoch,
    pub dev_ner_f1: f64,
    pub dev_re_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub dev: MetricsReport,
}

fn evaluate(
    model: &JointModel,
    store: &ParamStore,
    docs: &[Document],
    ex: &[Example],
    schema: &LabelSchema,
) -> Result<(MetricsReport, MessageTraffic)> {
    let (pred, traffic) = predict_documents(model, store, docs, ex, schema)?;
    Ok((MetricsReport::evaluate(&pred, docs)?, traffic))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let cfg = prepare(cfg)?;
    let schema = cfg.load_schema()?;
    let ck = Checkpoint::load(required(&cfg.spangen_checkpoint))?;
    let sg_state = ck.spangen()?;
    ensure_same_schema(&sg_state.schema, &schema, "the span generator checkpoint")?;
    let (spangen, sg_store, vocab) = sg_state.restore()?;
    let train = load_corpus(required(&cfg.train_file), &schema)?;
    let dev = load_corpus(required(&cfg.dev_file), &schema)?;
    let lexicon_text = fs::read_to_string(required(&cfg.lexicon_file)).map_err(Error::file(required(&cfg.lexicon_file)))?;
    let lexicon = Lexicon::parse(&lexicon_text);

    let train_ex = prepare_examples(&train, &schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg.joint, cfg.joint.force_gold)?;
    let dev_ex = prepare_examples(&dev, &schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg.joint, false)?;
    let encoder = EncoderConfig { vocab_size: vocab.len(), ..cfg.encoder.clone() };
    let mut store = ParamStore::new();
    let model = JointModel::new(&mut store, encoder, cfg.joint.clone(), &schema, cfg.seed.wrapping_add(1))?;
    if cfg.warm_start {
        if model.encoder.config != spangen.encoder.config {
            return Err(Error::Config("warm start needs identical encoder settings in both stages".into()));
        }
        model.warm_start(&mut store, &sg_store)?;
    }
    let log = cfg.events();
    let options = TrainOptions { seed: cfg.seed, ..cfg.joint_train.clone() };
    let mut records = Vec::new();
    train_joint(&model, &mut store, &train_ex, &options, |e, store| {
        let (m, _) = evaluate(&model, store, &dev, &dev_ex, &schema)?;
        info!("joint epoch {} loss {:.4} dev NER {:.4} RE {:.4}", e.epoch, e.loss, m.ner.f1, m.re.f1);
        log.emit(json!({
            "event": "epoch", "stage": "joint", "epoch": e.epoch,
            "loss": e.loss, "loss_ner": e.loss_ner, "loss_re": e.loss_re,
            "dev": {"ner": m.ner, "re": m.re},
        }))?;
        records.push(EpochRecord { losses: *e, dev_ner_f1: m.ner.f1, dev_re_f1: m.re.f1 });
        Ok(())
    })?;

    let joint_state = JointState::capture(&model, &store, &schema, &vocab);
    Checkpoint::Joint(joint_state.clone()).save(required(&cfg.joint_checkpoint))?;
    Checkpoint::Bundle { spangen: sg_state.clone(), joint: joint_state, lexicon: lexicon_text }.save(required(&cfg.bundle_checkpoint))?;
    let (dev_report, _) = evaluate(&model, &store, &dev, &dev_ex, &schema)?;
    let dev_report = with_run_meta(dev_report, &cfg);
    write_json(&cfg.output_dir.join("dev_metrics.json"), &dev_report)?;
    Ok(TrainReport { epochs: records, dev: dev_report })
}

fn with_run_meta(report: MetricsReport, cfg: &RunConfig) -> MetricsReport {
    report.with_meta("topology", cfg.joint.topology.name()).with_meta("layers", cfg.joint.hgnn_layers).with_meta("seed", cfg.seed)
}

/// Scores `corpus` with a trained pipeline. Writes `eval-<stem>.json`.
pub fn cmd_eval(cfg: &RunConfig, bundle: Option<&Path>, corpus: &Path) -> Result<MetricsReport> {
    let cfg = prepare(cfg)?;
    let pipeline = Pipeline::load(&cfg, bundle)?;
    let gold = load_corpus(corpus, &pipeline.schema)?;
    let (pred, _) = pipeline.predict(&gold)?;
    let report = MetricsReport::evaluate(&pred, &gold)?;
    let report = with_run_meta(report, &RunConfig { joint: pipeline.joint.config.clone(), ..cfg.clone() })
        .with_meta("corpus", corpus.display().to_string());
    let stem = corpus.file_stem().map_or("corpus".into(), |s| s.to_string_lossy().into_owned());
    write_json(&cfg.output_dir.join(format!("eval-{stem}.json")), &report)?;
    Ok(report)
}

/// Character tokens of one raw line, whitespace dropped.
pub fn tokenize_line(line: &str) -> Vec<String> {
    line.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
}

/// Labels raw text, one sentence per line, writing corpus-format JSONL.
/// Returns the number of sentences written.
pub fn cmd_predict(cfg: &RunConfig, bundle: Option<&Path>, input: &Path, output: &Path) -> Result<usize> {
    let cfg = prepare(cfg)?;
    let pipeline = Pipeline::load(&cfg, bundle)?;
    let file = fs::File::open(input).map_err(Error::file(input))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::file(input))?;
        let tokens = tokenize_line(&line);
        if tokens.is_empty() {
            continue;
        }
        docs.push(Document { doc_id: format!("line-{:05}", i + 1), tokens, entities: Vec::new(), relations: Vec::new() });
    }
    let (pred, _) = pipeline.predict(&docs)?;
    save_corpus(output, &pred)?;
    Ok(pred.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `topology` for the topology grid, `layers` for the layer sweep.
    pub sweep: String,
    pub topology: Topology,
    pub layers: usize,
    pub ner: Prf,
    pub re: Prf,
    pub traffic: MessageTraffic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reduced: bool,
    pub epochs: usize,
    pub train_docs: usize,
    pub dev_docs: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut out = format!("{:<9} {:<8} {:>6} {:>8} {:>8} {:>10}\n", "sweep", "topology", "layers", "NER F1", "RE F1", "entity_msg");
        for r in &self.rows {
            let entity = r.traffic.entity_from_sor + r.traffic.entity_from_jc + r.traffic.entity_from_cp;
            out.push_str(&format!(
                "{:<9} {:<8} {:>6} {:>8.2} {:>8.2} {:>10}\n",
                r.sweep,
                r.topology.name(),
                r.layers,
                100.0 * r.ner.f1,
                100.0 * r.re.f1,
                entity
            ));
        }
        out
    }

    pub fn topology_rows(&self) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(|r| r.sweep == "topology")
    }

    pub fn layer_rows(&self) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(|r| r.sweep == "layers")
    }
}

/// Trains one joint model per topology (at the configured layer count) and
/// per layer count (at the full topology), reporting dev F1 for each.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let cfg = prepare(cfg)?;
    let schema = cfg.load_schema()?;
    let ck = Checkpoint::load(required(&cfg.spangen_checkpoint))?;
    let sg_state = ck.spangen()?;
    ensure_same_schema(&sg_state.schema, &schema, "the span generator checkpoint")?;
    let (spangen, sg_store, vocab) = sg_state.restore()?;
    let mut train = load_corpus(required(&cfg.train_file), &schema)?;
    let mut dev = load_corpus(required(&cfg.dev_file), &schema)?;
    let lexicon = load_lexicon(required(&cfg.lexicon_file))?;
    let mut options = TrainOptions { seed: cfg.seed, ..cfg.joint_train.clone() };
    if cfg.ablation.reduced {
        train.truncate(cfg.ablation.reduced_train_docs);
        dev.truncate(cfg.ablation.reduced_dev_docs);
        options.epochs = cfg.ablation.reduced_epochs;
    }
    let train_ex = prepare_examples(&train, &schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg.joint, cfg.joint.force_gold)?;
    let dev_ex = prepare_examples(&dev, &schema, &vocab, &lexicon, (&spangen, &sg_store), &cfg.joint, false)?;
    let encoder = EncoderConfig { vocab_size: vocab.len(), ..cfg.encoder.clone() };
    let log = cfg.events();

    let run = |topology: Topology, layers: usize| -> Result<(Prf, Prf, MessageTraffic)> {
        let joint = JointConfig { topology, hgnn_layers: layers, ..cfg.joint.clone() };
        let mut store = ParamStore::new();
        let model = JointModel::new(&mut store, encoder.clone(), joint, &schema, cfg.seed.wrapping_add(1))?;
        train_joint(&model, &mut store, &train_ex, &options, |_, _| Ok(()))?;
        let (m, traffic) = evaluate(&model, &store, &dev, &dev_ex, &schema)?;
        info!("ablation {topology} N={layers}: NER {:.4} RE {:.4}", m.ner.f1, m.re.f1);
        log.emit(json!({"event": "ablation_run", "topology": topology, "layers": layers, "ner": m.ner, "re": m.re, "traffic": traffic}))?;
        Ok((m.ner, m.re, traffic))
    };

    let base_layers = cfg.joint.hgnn_layers;
    let mut rows = Vec::new();
    for topology in Topology::ALL {
        let (ner, re, traffic) = run(topology, base_layers)?;
        if !topology.has_sor() && traffic.entity_from_sor + traffic.entity_from_jc + traffic.entity_from_cp != 0 {
            return Err(Error::Config(format!("topology {topology} delivered messages to entity nodes")));
        }
        rows.push(AblationRow { sweep: "topology".into(), topology, layers: base_layers, ner, re, traffic });
    }
    for &layers in &cfg.ablation.layer_sweep {
        let reuse = rows.iter().find(|r| r.topology == Topology::SorJcCp && r.layers == layers).cloned();
        let row = match reuse {
            Some(r) => AblationRow { sweep: "layers".into(), ..r },
            None => {
                let (ner, re, traffic) = run(Topology::SorJcCp, layers)?;
                AblationRow { sweep: "layers".into(), topology: Topology::SorJcCp, layers, ner, re, traffic }
            }
        };
        rows.push(row);
    }
    let report =
        AblationReport { reduced: cfg.ablation.reduced, epochs: options.epochs, train_docs: train.len(), dev_docs: dev.len(), rows };
    write_json(&cfg.output_dir.join("ablation.json"), &report)?;
    fs::write(cfg.output_dir.join("ablation.txt"), report.table()).map_err(Error::file(cfg.output_dir.join("ablation.txt")))?;
    Ok(report)
}
