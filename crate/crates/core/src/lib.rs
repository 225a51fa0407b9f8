//! Question-guided multi-hop question answering over knowledge graphs.
//!
//! A question is answered by iterating: an LLM proposes the next
//! sub-question, the current frontier's 1-hop neighbors are scored by a
//! two-hop relevance model, the top entities become evidence for a
//! sub-answer, and the loop stops once the accumulated context suffices.
//!
//! Modules, bottom up:
//! - [`kg`]: triple store, neighbor retrieval, SPARQL template
//! - [`encoder`]: text to embeddings
//! - [`scorer`]: neighbor aggregation, relevance classifier, training
//! - [`reasoning`]: LLM roles behind a pluggable chat client
//! - [`pipeline`]: the iteration loop and its trace
//! - [`eval`]: datasets, Hit@1 and batch evaluation

pub mod encoder;
pub mod eval;
pub mod kg;
pub mod par;
pub mod pipeline;
pub mod reasoning;
pub mod scorer;
