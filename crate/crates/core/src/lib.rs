//! Mining cryptographic API misuse from source code with a language model,
//! organizing the findings into a taxonomy, and checking code against
//! hand-written detection rules.

pub mod classification;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod identification;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod rules;
pub mod store;
pub mod taxonomy;

pub use error::{Error, Result};
