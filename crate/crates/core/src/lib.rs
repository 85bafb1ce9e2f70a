//! Zero-shot fact verification with key-point decomposition.
//!
//! An LLM splits each claim into key points. Every key point, plus the claim
//! itself, queries a BM25 index over the claim's knowledge store. The merged
//! retrieval goes back to the LLM, which answers with question-answer evidence
//! and a verdict. Predictions are scored with METEOR aligned through an
//! optimal assignment.
//!
//! Numeric code is generic over [`num::Real`] (floating point) or
//! [`num::Weight`] (anything with exact ordering, including integers and
//! rationals). The aliases below fix the usual `f64` choice.

pub mod bm25;
pub mod corpus;
pub mod error;
pub mod keypoints;
pub mod llm_gateway;
pub mod num;
pub mod pipeline;
pub mod prompts;
pub mod scoring;

pub use error::{Error, Result};

pub type Bm25Index = bm25::Bm25Index<f64>;
pub type Bm25Index32 = bm25::Bm25Index<f32>;
pub type Bm25Params = bm25::Bm25Params<f64>;
pub type ScoredDoc = bm25::ScoredDoc<f64>;
pub type MeteorParams = scoring::meteor::MeteorParams<f64>;
pub type MeteorParams32 = scoring::meteor::MeteorParams<f32>;
