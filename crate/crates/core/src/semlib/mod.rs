//! Semantic history library: position-aware token embeddings, cosine LSH,
//! a budgeted set of prototypes whose KV is replicated on every node, and
//! nearest-prototype matching for incoming history tokens.

mod embed;
mod library;
mod lsh;

pub use embed::{dot, embed_token, normalize, Embedder, EmbeddingConfig, EmbeddingSource};
pub use library::{
    build_library, load_library, match_rate, match_rate_reviews, match_token, prototype_cosine,
    read_library, save_library, write_library, Matcher, Prototype, PrototypeLibrary, DEFAULT_BUDGET,
};
pub use lsh::{Hyperplanes, LshConfig, LshIndex};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemlibError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token {0} has no external embedding")]
    UnknownToken(u32),
    #[error("prototype library is empty")]
    EmptyLibrary,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}
