//! Translation models: the word-level transformer, the character-level
//! inflection add-on, decoding, and the fill strategies.

mod addon;
mod bundle;
mod decode;
mod examples;
mod step;
mod translate;
mod word;

pub use addon::{is_placeholder_id, placeholder_index, AddonExample, CharMemory, InflectorAddon, ADDON_PREFIX, EXTRA_CHARS};
pub use bundle::ModelBundle;
pub use decode::{beam_search, default_max_len, greedy, DEFAULT_BEAM};
pub use examples::{addon_examples, char_vocab_for, encode_pairs};
pub use step::{addon_loss, train_step_addon, train_step_word, word_loss, OptimConfig, Optimizer};
pub use translate::{common_tag, inflect_phrase, Strategy, Translation, Translator};
pub use word::{Encoded, WordBatch, WordModel, WORD_PREFIX};

#[cfg(test)]
mod tests;
