pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod hypergraph;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod schema;
pub mod spangen;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
pub use hypergraph::Topology;
pub use metrics::{MetricsReport, Prf};
pub use model::JointConfig;
pub use pipeline::RunConfig;
pub use schema::{Document, EntityMention, LabelSchema, RelationMention, SpanRef};
