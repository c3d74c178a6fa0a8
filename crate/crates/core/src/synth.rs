//! Deterministic generator for a synthetic drug-case corpus.
//!
//! Sentences are character-tokenised Chinese-like clauses built from a fixed
//! set of templates. Three template families exist: simple clauses with a
//! single relation, joint-crime clauses where two people share the object of
//! one relation type, and multi-crime clauses where one person is the subject
//! of two relations with different objects.

use std::collections::{HashMap, HashSet};
use std::ops::AddAssign;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::schema::{Document, EntityMention, LabelSchema, RelationMention, SpanRef};

pub const PERSON: &str = "PERSON";
pub const DRUG: &str = "DRUG";
pub const LOCATION: &str = "LOCATION";
pub const QUANTITY: &str = "QUANTITY";
pub const TIME: &str = "TIME";

pub const SELL_TO: &str = "sell_to";
pub const TRAFFIC: &str = "traffic";
pub const POSSESS: &str = "possess";
pub const PROVIDE_VENUE: &str = "provide_venue";

/// Widest entity the generator can emit is 7 characters.
pub const SYNTH_MAX_SPAN_WIDTH: usize = 8;

/// Drug names in lexicon order. Aliases: 冰毒/甲基苯丙胺, 海洛因/白粉,
/// 氯胺酮/K粉. 苯丙胺 is a suffix of 甲基苯丙胺, so those two overlap.
pub const DRUG_TERMS: &[&str] = &[
    "冰毒",
    "甲基苯丙胺",
    "海洛因",
    "白粉",
    "氯胺酮",
    "K粉",
    "苯丙胺",
    "大麻",
    "摇头丸",
    "麻古",
    "可卡因",
    "吗啡",
    "鸦片",
    "芬太尼",
    "曲马多",
    "美沙酮",
];

const SURNAMES: &[&str] =
    &["张", "王", "李", "赵", "刘", "陈", "杨", "黄", "周", "吴", "徐", "孙", "马", "朱", "胡", "郭", "何", "林", "高", "罗"];
const GIVEN: &[&str] =
    &["伟", "芳", "娜", "敏", "静", "磊", "军", "洋", "勇", "艳", "杰", "涛", "超", "秀", "霞", "平", "刚", "桂", "英", "华"];
const CITIES: &[&str] = &["大连", "沈阳", "昆明", "广州", "成都", "西安"];
const PLACES: &[&str] = &["某宾馆", "某酒店", "出租屋", "某网吧", "某KTV", "停车场"];
const UNITS: &[&str] = &["克", "包", "粒", "千克"];

pub fn synthetic_schema() -> LabelSchema {
    LabelSchema {
        entity_types: [PERSON, DRUG, LOCATION, QUANTITY, TIME].map(String::from).to_vec(),
        relation_types: [SELL_TO, TRAFFIC, POSSESS, PROVIDE_VENUE].map(String::from).to_vec(),
        max_span_width: SYNTH_MAX_SPAN_WIDTH,
    }
}

/// Allowed `(subject type, object type)` for each synthetic relation.
pub fn relation_signature(relation: &str) -> Option<(&'static str, &'static str)> {
    match relation {
        SELL_TO => Some((PERSON, PERSON)),
        TRAFFIC | POSSESS => Some((PERSON, DRUG)),
        PROVIDE_VENUE => Some((PERSON, LOCATION)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub num_docs: usize,
    pub seed: u64,
    pub max_sentence_len: usize,
    pub p_joint_crime: f64,
    pub p_multi_crime: f64,
    pub lexicon_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_docs: 1000,
            seed: 1,
            max_sentence_len: 40,
            p_joint_crime: 0.3,
            p_multi_crime: 0.3,
            lexicon_size: DRUG_TERMS.len(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_joint_crime", self.p_joint_crime), ("p_multi_crime", self.p_multi_crime)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.lexicon_size == 0 || self.lexicon_size > DRUG_TERMS.len() {
            return Err(Error::Config(format!("lexicon_size must lie in 1..={}", DRUG_TERMS.len())));
        }
        let needed = self.min_sentence_len();
        if self.max_sentence_len < needed {
            return Err(Error::Config(format!(
                "max_sentence_len {} is below the {needed} tokens the templates need",
                self.max_sentence_len
            )));
        }
        Ok(())
    }

    /// Shortest length guaranteed to fit any document this config can emit.
    pub fn min_sentence_len(&self) -> usize {
        let longest = |kind| TEMPLATES.iter().filter(|t| t.kind == kind).map(Template::min_len).max().unwrap_or(0);
        let single = [PatternKind::Simple, PatternKind::JointCrime, PatternKind::MultiCrime].map(longest);
        let one = single.into_iter().max().unwrap_or(0);
        if self.p_joint_crime + self.p_multi_crime > 1.0 {
            one.max(single[1] + single[2])
        } else {
            one
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Simple,
    JointCrime,
    MultiCrime,
}

/// Instance counts of each relational pattern.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCounts {
    pub simple: usize,
    pub joint_crime: usize,
    pub multi_crime: usize,
}

impl AddAssign for PatternCounts {
    fn add_assign(&mut self, o: Self) {
        self.simple += o.simple;
        self.joint_crime += o.joint_crime;
        self.multi_crime += o.multi_crime;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Slot {
    P1,
    P2,
    P3,
    D1,
    D2,
    L1,
    Q1,
    T1,
}

impl Slot {
    fn entity_type(self) -> &'static str {
        match self {
            Slot::P1 | Slot::P2 | Slot::P3 => PERSON,
            Slot::D1 | Slot::D2 => DRUG,
            Slot::L1 => LOCATION,
            Slot::Q1 => QUANTITY,
            Slot::T1 => TIME,
        }
    }

    /// Shortest surface form the filler can produce.
    fn min_len(self) -> usize {
        match self {
            Slot::P1 | Slot::P2 | Slot::P3 => 2,
            Slot::D1 | Slot::D2 => 2,
            Slot::L1 => 3,
            Slot::Q1 => 2,
            Slot::T1 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Lit(&'static str),
    Ent(Slot),
}

/// A clause pattern: literal text interleaved with entity slots, plus the
/// relations it asserts between slots.
#[derive(Debug)]
pub struct Template {
    pub kind: PatternKind,
    pieces: &'static [Piece],
    relations: &'static [(Slot, Slot, &'static str)],
    tally: PatternCounts,
}

impl Template {
    fn min_len(&self) -> usize {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Lit(s) => s.chars().count(),
                Piece::Ent(slot) => slot.min_len(),
            })
            .sum()
    }
}

use Piece::{Ent, Lit};
use Slot::*;

const ONE_SIMPLE: PatternCounts = PatternCounts { simple: 1, joint_crime: 0, multi_crime: 0 };
const ONE_JOINT: PatternCounts = PatternCounts { simple: 0, joint_crime: 1, multi_crime: 0 };
const ONE_MULTI: PatternCounts = PatternCounts { simple: 0, joint_crime: 0, multi_crime: 1 };

static TEMPLATES: &[Template] = &[
    Template {
        kind: PatternKind::Simple,
        pieces: &[Ent(T1), Lit("，"), Ent(P1), Lit("在"), Ent(L1), Lit("贩卖"), Ent(D1), Ent(Q1), Lit("。")],
        relations: &[(P1, D1, TRAFFIC)],
        tally: ONE_SIMPLE,
    },
    Template {
        kind: PatternKind::Simple,
        pieces: &[Lit("民警在"), Ent(L1), Lit("查获"), Ent(P1), Lit("持有"), Ent(D1), Ent(Q1), Lit("。")],
        relations: &[(P1, D1, POSSESS)],
        tally: ONE_SIMPLE,
    },
    Template {
        kind: PatternKind::Simple,
        pieces: &[Ent(P1), Lit("在"), Ent(L1), Lit("容留他人吸食"), Ent(D1), Lit("。")],
        relations: &[(P1, L1, PROVIDE_VENUE)],
        tally: ONE_SIMPLE,
    },
    Template {
        kind: PatternKind::Simple,
        pieces: &[Ent(P1), Lit("向"), Ent(P2), Lit("出售毒品"), Ent(Q1), Lit("。")],
        relations: &[(P1, P2, SELL_TO)],
        tally: ONE_SIMPLE,
    },
    Template {
        kind: PatternKind::Simple,
        pieces: &[Ent(T1), Lit("，"), Ent(P1), Lit("从"), Ent(P2), Lit("处购得"), Ent(D1), Lit("。")],
        relations: &[(P2, P1, SELL_TO)],
        tally: ONE_SIMPLE,
    },
    Template {
        kind: PatternKind::JointCrime,
        pieces: &[Ent(P1), Lit("伙同"), Ent(P2), Lit("在"), Ent(L1), Lit("贩卖"), Ent(D1), Ent(Q1), Lit("。")],
        relations: &[(P1, D1, TRAFFIC), (P2, D1, TRAFFIC)],
        tally: ONE_JOINT,
    },
    Template {
        kind: PatternKind::JointCrime,
        pieces: &[Ent(T1), Lit("，"), Ent(P1), Lit("与"), Ent(P2), Lit("共同持有"), Ent(D1), Ent(Q1), Lit("。")],
        relations: &[(P1, D1, POSSESS), (P2, D1, POSSESS)],
        tally: ONE_JOINT,
    },
    Template {
        kind: PatternKind::JointCrime,
        pieces: &[Ent(P1), Lit("和"), Ent(P2), Lit("一起向"), Ent(P3), Lit("出售毒品。")],
        relations: &[(P1, P3, SELL_TO), (P2, P3, SELL_TO)],
        tally: ONE_JOINT,
    },
    Template {
        kind: PatternKind::MultiCrime,
        pieces: &[Ent(P1), Lit("向"), Ent(P2), Lit("贩卖"), Ent(D1), Ent(Q1), Lit("。")],
        relations: &[(P1, P2, SELL_TO), (P1, D1, TRAFFIC)],
        tally: ONE_MULTI,
    },
    Template {
        kind: PatternKind::MultiCrime,
        pieces: &[Ent(P1), Lit("持有"), Ent(D1), Lit("并在"), Ent(L1), Lit("容留"), Ent(P2), Lit("吸毒。")],
        relations: &[(P1, D1, POSSESS), (P1, L1, PROVIDE_VENUE)],
        tally: ONE_MULTI,
    },
    Template {
        kind: PatternKind::MultiCrime,
        pieces: &[Ent(T1), Lit("，"), Ent(P1), Lit("贩卖"), Ent(D1), Lit("后又持有"), Ent(D2), Lit("。")],
        relations: &[(P1, D1, TRAFFIC), (P1, D2, POSSESS)],
        tally: ONE_MULTI,
    },
];

pub fn templates() -> &'static [Template] {
    TEMPLATES
}

/// Output of [`generate_corpus`].
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub lexicon_text: String,
    pub schema: LabelSchema,
    /// Pattern counts recorded while emitting templates.
    pub tallies: PatternCounts,
}

impl SyntheticCorpus {
    pub fn lexicon(&self) -> Lexicon {
        Lexicon::parse(&self.lexicon_text)
    }
}

struct Filler<'a> {
    rng: ChaCha8Rng,
    drugs: &'a [&'static str],
    short: bool,
}

impl Filler<'_> {
    fn pick<'s>(&mut self, items: &[&'s str]) -> &'s str {
        items.choose(&mut self.rng).expect("non-empty list")
    }

    fn person(&mut self, taken: &mut HashSet<String>) -> String {
        loop {
            let mut name = self.pick(SURNAMES).to_owned();
            name.push_str(self.pick(GIVEN));
            if !self.short && self.rng.gen_bool(0.3) {
                name.push_str(self.pick(GIVEN));
            }
            if taken.insert(name.clone()) {
                return name;
            }
        }
    }

    fn drug(&mut self, avoid: Option<&str>) -> String {
        loop {
            let pool: Vec<&str> =
                if self.short { self.drugs.iter().copied().filter(|d| d.chars().count() == 2).collect() } else { self.drugs.to_vec() };
            let pool = if pool.is_empty() { self.drugs.to_vec() } else { pool };
            let d = self.pick(&pool);
            if Some(d) != avoid || self.drugs.len() == 1 {
                return d.to_owned();
            }
        }
    }

    fn location(&mut self) -> String {
        let place = self.pick(PLACES);
        if self.short || self.rng.gen_bool(0.3) {
            place.to_owned()
        } else {
            format!("{}{}", self.pick(CITIES), place)
        }
    }

    fn quantity(&mut self) -> String {
        let unit = self.pick(UNITS);
        if self.short {
            return format!("{}克", self.rng.gen_range(1..10));
        }
        match self.rng.gen_range(0..3) {
            0 => format!("0.{}{unit}", self.rng.gen_range(1..10)),
            1 => format!("{}{unit}", self.rng.gen_range(1..10)),
            _ => format!("{}{unit}", self.rng.gen_range(10..60)),
        }
    }

    fn time(&mut self) -> String {
        let m = self.rng.gen_range(1..=12);
        if self.short {
            return format!("{}月{}日", self.rng.gen_range(1..10), self.rng.gen_range(1..10));
        }
        if self.rng.gen_bool(0.25) {
            format!("{}年{m}月", self.rng.gen_range(2015..=2020))
        } else {
            format!("{m}月{}日", self.rng.gen_range(1..=28))
        }
    }
}

#[derive(Default)]
struct Builder {
    tokens: Vec<String>,
    entities: Vec<EntityMention>,
    relations: Vec<RelationMention>,
}

impl Builder {
    fn emit(&mut self, template: &Template, fill: &mut Filler<'_>, people: &mut HashSet<String>) {
        let mut slots: HashMap<Slot, usize> = HashMap::new();
        for piece in template.pieces {
            match *piece {
                Lit(text) => self.tokens.extend(text.chars().map(String::from)),
                Ent(slot) => {
                    let surface = match slot {
                        P1 | P2 | P3 => fill.person(people),
                        D1 => fill.drug(None),
                        D2 => {
                            let first = slots.get(&D1).map(|&i| self.entity_surface(i));
                            fill.drug(first.as_deref())
                        }
                        L1 => fill.location(),
                        Q1 => fill.quantity(),
                        T1 => fill.time(),
                    };
                    let start = self.tokens.len();
                    self.tokens.extend(surface.chars().map(String::from));
                    let span = SpanRef::new(start, self.tokens.len() - 1);
                    slots.insert(slot, self.entities.len());
                    self.entities.push(EntityMention { span, label: slot.entity_type().to_owned() });
                }
            }
        }
        for &(s, o, label) in template.relations {
            self.relations.push(RelationMention { subject: slots[&s], object: slots[&o], label: label.to_owned() });
        }
    }

    fn entity_surface(&self, i: usize) -> String {
        let span = self.entities[i].span;
        self.tokens[span.start..=span.end].concat()
    }
}

fn doc_rng(seed: u64, index: usize, attempt: usize) -> ChaCha8Rng {
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(attempt as u64);
    ChaCha8Rng::seed_from_u64(mix)
}

fn count_for(p: f64, n: usize) -> usize {
    ((p * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let n = cfg.num_docs;
    let drugs = &DRUG_TERMS[..cfg.lexicon_size];
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut master);
    let n_joint = count_for(cfg.p_joint_crime, n).min(n);
    let n_multi = count_for(cfg.p_multi_crime, n).min(n);
    let mut joint = vec![false; n];
    let mut multi = vec![false; n];
    for &i in &order[..n_joint] {
        joint[i] = true;
    }
    // Multi-crime documents come from the other end of the shuffle so the two
    // sets only overlap when their sizes sum past n.
    for &i in order.iter().rev().take(n_multi) {
        multi[i] = true;
    }

    let by_kind = |k: PatternKind| TEMPLATES.iter().filter(move |t| t.kind == k).collect::<Vec<_>>();
    let (simple_t, joint_t, multi_t) = (by_kind(PatternKind::Simple), by_kind(PatternKind::JointCrime), by_kind(PatternKind::MultiCrime));

    let mut documents = Vec::with_capacity(n);
    let mut tallies = PatternCounts::default();
    for i in 0..n {
        let mut attempt = 0;
        let (builder, tally) = loop {
            let short = attempt >= 50;
            let mut fill = Filler { rng: doc_rng(cfg.seed, i, attempt), drugs, short };
            let mut chosen: Vec<&Template> = Vec::new();
            if joint[i] {
                chosen.push(joint_t.choose(&mut fill.rng).expect("joint templates"));
            }
            if multi[i] {
                chosen.push(multi_t.choose(&mut fill.rng).expect("multi templates"));
            }
            if chosen.is_empty() {
                chosen.push(simple_t.choose(&mut fill.rng).expect("simple templates"));
            }
            let mut b = Builder::default();
            let mut people = HashSet::new();
            let mut tally = PatternCounts::default();
            for t in &chosen {
                b.emit(t, &mut fill, &mut people);
                tally += t.tally;
            }
            if b.tokens.len() <= cfg.max_sentence_len {
                break (b, tally);
            }
            attempt += 1;
            if attempt > 60 {
                return Err(Error::Config(format!("could not fit document {i} into {} tokens", cfg.max_sentence_len)));
            }
        };
        tallies += tally;
        documents.push(Document {
            doc_id: format!("syn-{i:05}"),
            tokens: builder.tokens,
            entities: builder.entities,
            relations: builder.relations,
        });
    }

    let lexicon_text: String = drugs.iter().map(|d| format!("{d}\n")).collect();
    Ok(SyntheticCorpus { documents, lexicon_text, schema: synthetic_schema(), tallies })
}

/// Counts relation pairs sharing an object with different subjects (joint
/// crime), pairs sharing a subject with different objects (multi crime), and
/// relations that take part in neither (simple).
pub fn pattern_census(docs: &[Document]) -> PatternCounts {
    let mut counts = PatternCounts::default();
    for doc in docs {
        let rels = &doc.relations;
        let mut paired = vec![false; rels.len()];
        for i in 0..rels.len() {
            for j in i + 1..rels.len() {
                let (a, b) = (&rels[i], &rels[j]);
                let joint = a.object == b.object && a.subject != b.subject;
                let multi = a.subject == b.subject && a.object != b.object;
                if joint {
                    counts.joint_crime += 1;
                }
                if multi {
                    counts.multi_crime += 1;
                }
                if joint || multi {
                    paired[i] = true;
                    paired[j] = true;
                }
            }
        }
        counts.simple += paired.iter().filter(|&&p| !p).count();
    }
    counts
}
