use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::specials::{BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};

const NUM_SPECIAL: usize = 4;

/// Target-side character inventory; ids 0..4 are PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CharFile", into = "CharFile")]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct CharFile {
    chars: String,
}

impl From<CharFile> for CharVocab {
    fn from(f: CharFile) -> Self {
        Self::from_chars(f.chars.chars())
    }
}

impl From<CharVocab> for CharFile {
    fn from(v: CharVocab) -> Self {
        CharFile {
            chars: v.chars.iter().collect(),
        }
    }
}

impl CharVocab {
    fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + NUM_SPECIAL))
            .collect();
        Self { chars, index }
    }

    /// Collects every character of `words`, sorted.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(words.into_iter().flat_map(str::chars))
    }

    pub fn len(&self) -> usize {
        self.chars.len() + NUM_SPECIAL
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Character ids of `word` and the number of characters mapped to UNK.
    pub fn encode(&self, word: &str) -> (Vec<usize>, usize) {
        let mut unknown = 0;
        let ids = word
            .chars()
            .map(|c| {
                self.index.get(&c).copied().unwrap_or_else(|| {
                    unknown += 1;
                    UNK
                })
            })
            .collect();
        (ids, unknown)
    }

    /// Text up to the first EOS. UNK renders as U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                UNK => s.push(char::REPLACEMENT_CHARACTER),
                _ => s.push(
                    self.chars
                        .get(id - NUM_SPECIAL)
                        .copied()
                        .unwrap_or(char::REPLACEMENT_CHARACTER),
                ),
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
