//! Corpus files and the vocabularies shared by every model.

mod chars;
mod corpus;
mod subword;

pub use chars::CharVocab;
pub use corpus::{load_corpus, save_corpus, CorpusFormat, ParallelExample};
pub use subword::{specials, SubwordConfig, SubwordVocab, WORD_START};
