//! Word alignment, phrase extraction and the noun/verb dictionaries.

mod dict;
mod ibm1;
mod links;
mod phrases;

pub use dict::{
    build_eval_dict, classify_entries, count_train_freq, split_seen_unseen, DictEntry, DictSplit,
    Dictionary, EvalSource, PosClass,
};
pub use ibm1::{align_ibm1, Ibm1Output, TranslationTable};
pub use links::{load_pharaoh, parse_pharaoh_line, save_pharaoh, AlignmentMatrix};
pub use phrases::{extract_phrases, PhraseCandidate};
