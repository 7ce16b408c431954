//! Dataset schema, ingestion, encoding, and splitting.

mod dataset;
mod movielens;
mod schema;
mod synthetic;
mod vocab;

pub use dataset::{AdIdx, AdRecord, Dataset, DatasetCore, EncodedSampleRef, NewAdPartition, Row, Sample};
pub use movielens::{load_movielens, ml1m_schema, LoadReport};
pub use schema::{FieldArity, FieldDef, FieldRole, FieldSchema};
pub use synthetic::{gen_synthetic, synthetic_schema, SyntheticConfig};
pub use vocab::Vocabulary;
