//! Data and optimization machinery for aspect sentiment quad prediction.
//!
//! The crate covers the full path from annotated sentences to preference
//! training data and back to evaluation:
//!
//! - [`corpus`]: quads, sentences and dataset ingestion (JSONL, the
//!   `####` delimited format and the ACOS tab-separated format).
//! - [`syntax`]: bracketed constituency trees, tree distance and POS-pattern
//!   span search.
//! - [`semantics`]: phrase embedding tables and cosine top-k selection.
//! - [`template`]: the prefix-guided quad + rationale output format, the
//!   marker-style baseline format and the instruction prompt.
//! - [`confuse`]: element-wise confusable candidates and listwise sample
//!   composition.
//! - [`prefloss`]: CE, pairwise DPO, listwise and hybrid losses with analytic
//!   gradients and a finite-difference checker.
//! - [`eval`]: exact-match precision/recall/F1 and the error taxonomy.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below are what the pipeline uses.

pub mod confuse;
pub mod corpus;
pub mod eval;
pub mod prefloss;
pub mod scalar;
pub mod semantics;
pub mod syntax;
pub mod template;

pub use scalar::Scalar;

/// Loss batch in double precision, the regime used for gradient checks.
pub type LossBatchF64 = prefloss::LossBatch<f64>;
/// Loss result in double precision.
pub type LossResultF64 = prefloss::LossResult<f64>;
/// Embedding table in double precision.
pub type EmbeddingTableF64 = semantics::EmbeddingTable<f64>;
/// Single precision embedding table, handy for large exported tables.
pub type EmbeddingTableF32 = semantics::EmbeddingTable<f32>;
