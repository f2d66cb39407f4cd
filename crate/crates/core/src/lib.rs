//! Corpus analytics and retrieval evaluation for image-description datasets.
//!
//! The crate covers the whole analysis path from raw descriptions to report
//! numbers: corpus ingestion and audit ([`corpus`]), text normalization
//! ([`textproc`]), lemma dispersion and lexicon selection ([`lexistats`]),
//! embedding stores ([`embeddings`]), attribute discovery ([`attributes`]),
//! order-of-appearance analysis ([`structure`]), rank-based tests
//! ([`stattests`]), description similarity ([`simstats`]), retrieval metrics
//! ([`retrieval`]) and image texture statistics ([`imagestats`]).

pub mod attributes;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod imagestats;
pub mod lexistats;
pub mod retrieval;
pub mod simstats;
pub mod stattests;
pub mod structure;
pub mod textproc;
pub mod util;

pub use error::{Error, Result};
