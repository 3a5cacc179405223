//! Placeholder-based lexically constrained translation.
//!
//! A word-level transformer learns to emit `[NOUN]`/`[VERB]` placeholder
//! tokens for constrained source spans. The placeholders are then filled
//! either by fixed rules (reference form, lemma, most common form, morphology
//! tags) or by a character-level decoder that inflects the user's lemma
//! according to the generated target sentence.
//!
//! Module map:
//!
//! - [`data`]: corpus files, subword and character vocabularies
//! - [`align`]: IBM Model 1 alignment, phrase extraction, noun/verb dictionaries
//! - [`augment`]: constraint selection and the placeholder / code-switch /
//!   morph-tag renderings
//! - [`tensor`]: autodiff engine, transformer layers, optimizer, checkpoints
//! - [`model`]: word model, inflection add-on, decoding and fill strategies
//! - [`train`]: two-stage training with early stopping
//! - [`eval`]: BLEU, term use rate, evaluation grid, annotation sheets
//! - [`synth`]: synthetic bilingual grammar with context-dependent inflection
//! - [`pipeline`]: presets, run configuration and the end-to-end desk run

pub mod align;
pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
