//! Versioned checkpoint files: a one-line header followed by JSON holding
//! the configuration, schema, vocabulary and parameter values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::model::{JointConfig, JointModel};
use crate::nn::ParamStore;
use crate::schema::LabelSchema;
use crate::spangen::{SpanGenConfig, SpanGenerator};
use crate::vocab::Vocab;

pub const CHECKPOINT_HEADER: &str = "lexhyper-checkpoint v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanGenState {
    pub encoder: EncoderConfig,
    pub config: SpanGenConfig,
    pub schema: LabelSchema,
    pub vocab: Vec<String>,
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub encoder: EncoderConfig,
    pub config: JointConfig,
    pub schema: LabelSchema,
    pub vocab: Vec<String>,
    pub params: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum Checkpoint {
    Spangen(SpanGenState),
    Joint(JointState),
    /// Everything `predict` needs in one file.
    Bundle {
        spangen: SpanGenState,
        joint: JointState,
        lexicon: String,
    },
}

impl SpanGenState {
    pub fn capture(model: &SpanGenerator, store: &ParamStore, schema: &LabelSchema, vocab: &Vocab) -> Self {
        SpanGenState {
            encoder: model.encoder.config.clone(),
            config: model.config.clone(),
            schema: schema.clone(),
            vocab: vocab.tokens().to_vec(),
            params: store.to_json(),
        }
    }

    pub fn restore(&self) -> Result<(SpanGenerator, ParamStore, Vocab)> {
        let vocab = Vocab::from_tokens(self.vocab.clone())?;
        let mut store = ParamStore::new();
        let model = SpanGenerator::new(&mut store, self.encoder.clone(), self.config.clone(), 0)?;
        store.load_json(self.params.clone())?;
        Ok((model, store, vocab))
    }
}

impl JointState {
    pub fn capture(model: &JointModel, store: &ParamStore, schema: &LabelSchema, vocab: &Vocab) -> Self {
        JointState {
            encoder: model.encoder.config.clone(),
            config: model.config.clone(),
            schema: schema.clone(),
            vocab: vocab.tokens().to_vec(),
            params: store.to_json(),
        }
    }

    pub fn restore(&self) -> Result<(JointModel, ParamStore, Vocab)> {
        let vocab = Vocab::from_tokens(self.vocab.clone())?;
        let mut store = ParamStore::new();
        let model = JointModel::new(&mut store, self.encoder.clone(), self.config.clone(), &self.schema, 0)?;
        store.load_json(self.params.clone())?;
        Ok((model, store, vocab))
    }
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Spangen(_) => "spangen",
            Checkpoint::Joint(_) => "joint",
            Checkpoint::Bundle { .. } => "bundle",
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(Error::file(path))?;
        writeln!(f, "{CHECKPOINT_HEADER}").map_err(Error::file(path))?;
        serde_json::to_writer(&mut f, self)?;
        writeln!(f).map_err(Error::file(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::file(path))?;
        let (header, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        if header.trim_end() != CHECKPOINT_HEADER {
            return Err(Error::Checkpoint(format!("{} is not a {CHECKPOINT_HEADER} file", path.display())));
        }
        serde_json::from_str(body).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn spangen(&self) -> Result<&SpanGenState> {
        match self {
            Checkpoint::Spangen(s) | Checkpoint::Bundle { spangen: s, .. } => Ok(s),
            Checkpoint::Joint(_) => Err(Error::Checkpoint("expected a span generator checkpoint, found a joint one".into())),
        }
    }

    pub fn joint(&self) -> Result<&JointState> {
        match self {
            Checkpoint::Joint(j) | Checkpoint::Bundle { joint: j, .. } => Ok(j),
            Checkpoint::Spangen(_) => Err(Error::Checkpoint("expected a joint model checkpoint, found a span generator".into())),
        }
    }

    pub fn lexicon(&self) -> Option<Lexicon> {
        match self {
            Checkpoint::Bundle { lexicon, .. } => Some(Lexicon::parse(lexicon)),
            _ => None,
        }
    }
}

/// Fails unless the two schemas are identical.
pub fn ensure_same_schema(found: &LabelSchema, expected: &LabelSchema, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Schema(format!("{what} was trained with a different label schema than the corpus")));
    }
    Ok(())
}
