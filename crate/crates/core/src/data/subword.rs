//! Byte-pair subword vocabulary shared by source and target.
//!
//! Words are split into characters with a [`WORD_START`] marker in front and
//! the most frequent adjacent pair is merged repeatedly. Reserved tokens never
//! take part in merging and are matched literally before segmentation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marks the first piece of a word.
pub const WORD_START: char = '\u{2581}';

/// Ids and strings of the reserved tokens.
pub mod specials {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const NOUN: usize = 4;
    pub const VERB: usize = 5;

    pub const PAD_STR: &str = "<pad>";
    pub const BOS_STR: &str = "<s>";
    pub const EOS_STR: &str = "</s>";
    pub const UNK_STR: &str = "<unk>";
    pub const NOUN_STR: &str = "[NOUN]";
    pub const VERB_STR: &str = "[VERB]";

    pub const FIXED: [&str; 6] = [PAD_STR, BOS_STR, EOS_STR, UNK_STR, NOUN_STR, VERB_STR];

    /// Morphological form tags appended after lemmas by the morph-tag rendering.
    pub const FORM_TAGS: [&str; 7] = ["<NN>", "<NNS>", "<VB>", "<VBD>", "<VBG>", "<VBN>", "<VBZ>"];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubwordConfig {
    pub target_size: usize,
    /// Extra atomic tokens reserved right after the fixed specials.
    pub tags: Vec<String>,
}

impl SubwordConfig {
    pub fn with_size(target_size: usize) -> Self {
        Self {
            target_size,
            tags: specials::FORM_TAGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Kind {
    Special,
    Tag,
    Char,
    Merge(usize, usize),
}

#[derive(Clone, Debug)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    kinds: Vec<Kind>,
    id_of: HashMap<String, usize>,
    num_reserved: usize,
    merge_rank: HashMap<(usize, usize), usize>,
    truncated: bool,
}

enum Segment<'s> {
    Text(&'s str),
    Reserved(usize),
}

impl SubwordVocab {
    fn with_reserved(tags: &[String]) -> Result<Self> {
        let mut v = Self {
            pieces: Vec::new(),
            kinds: Vec::new(),
            id_of: HashMap::new(),
            num_reserved: 0,
            merge_rank: HashMap::new(),
            truncated: false,
        };
        for s in specials::FIXED {
            v.push(s.to_string(), Kind::Special)?;
        }
        for t in tags {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad tag token {t:?}")));
            }
            v.push(t.clone(), Kind::Tag)?;
        }
        v.num_reserved = v.pieces.len();
        Ok(v)
    }

    fn push(&mut self, piece: String, kind: Kind) -> Result<usize> {
        if self.id_of.contains_key(&piece) {
            return Err(Error::invalid(format!("duplicate vocabulary piece {piece:?}")));
        }
        let id = self.pieces.len();
        if let Kind::Merge(l, r) = kind {
            self.merge_rank.insert((l, r), id);
        }
        self.id_of.insert(piece.clone(), id);
        self.pieces.push(piece);
        self.kinds.push(kind);
        Ok(id)
    }

    /// Learns merges from both sides of `sentences` until the vocabulary holds
    /// `config.target_size` pieces or no pair is left to merge.
    pub fn train<'a>(
        sentences: impl IntoIterator<Item = &'a [String]>,
        config: &SubwordConfig,
    ) -> Result<Self> {
        let mut vocab = Self::with_reserved(&config.tags)?;
        let mut word_counts: HashMap<String, u64> = HashMap::new();
        for tokens in sentences {
            for tok in tokens {
                for seg in vocab.segments(tok) {
                    if let Segment::Text(t) = seg {
                        *word_counts.entry(t.to_string()).or_default() += 1;
                    }
                }
            }
        }
        let mut alphabet: Vec<char> = word_counts
            .keys()
            .flat_map(|w| w.chars())
            .filter(|&c| c != WORD_START)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        alphabet.push(WORD_START);
        alphabet.sort_unstable();
        if config.target_size <= vocab.num_reserved + alphabet.len() {
            return Err(Error::invalid(format!(
                "target size {} does not exceed {} reserved tokens plus {} base characters",
                config.target_size,
                vocab.num_reserved,
                alphabet.len()
            )));
        }
        for c in &alphabet {
            vocab.push(c.to_string(), Kind::Char)?;
        }

        let mut words: Vec<(String, u64)> = word_counts.into_iter().collect();
        words.sort_unstable();
        let mut syms: Vec<Vec<usize>> = words
            .iter()
            .map(|(w, _)| vocab.char_ids(w))
            .collect();
        let counts: Vec<i64> = words.iter().map(|(_, c)| *c as i64).collect();

        let mut pair_counts: HashMap<(usize, usize), i64> = HashMap::new();
        let mut where_: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        for (wi, s) in syms.iter().enumerate() {
            for p in s.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += counts[wi];
                where_.entry((p[0], p[1])).or_default().insert(wi);
            }
        }
        let mut banned: HashSet<(usize, usize)> = HashSet::new();

        while vocab.pieces.len() < config.target_size {
            let mut best: Option<((usize, usize), i64)> = None;
            for (&pair, &count) in &pair_counts {
                if count <= 0 || banned.contains(&pair) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bp, bc)) => {
                        count > bc
                            || (count == bc
                                && (vocab.pieces[pair.0].as_str(), vocab.pieces[pair.1].as_str())
                                    < (vocab.pieces[bp.0].as_str(), vocab.pieces[bp.1].as_str()))
                    }
                };
                if better {
                    best = Some((pair, count));
                }
            }
            let Some((pair, _)) = best else {
                vocab.truncated = true;
                log::warn!(
                    "subword corpus exhausted at {} pieces (target {})",
                    vocab.pieces.len(),
                    config.target_size
                );
                break;
            };
            let merged = format!("{}{}", vocab.pieces[pair.0], vocab.pieces[pair.1]);
            if vocab.id_of.contains_key(&merged) {
                // a different split of an existing piece; keep one spelling per piece
                banned.insert(pair);
                continue;
            }
            let new_id = vocab.push(merged, Kind::Merge(pair.0, pair.1))?;
            let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
            affected.sort_unstable();
            for wi in affected {
                let c = counts[wi];
                for p in syms[wi].windows(2) {
                    *pair_counts.get_mut(&(p[0], p[1])).expect("pair counted") -= c;
                }
                syms[wi] = merge_pair(&syms[wi], pair, new_id);
                for p in syms[wi].windows(2) {
                    *pair_counts.entry((p[0], p[1])).or_default() += c;
                    where_.entry((p[0], p[1])).or_default().insert(wi);
                }
            }
            pair_counts.retain(|_, c| *c > 0);
        }
        Ok(vocab)
    }

    fn char_ids(&self, word: &str) -> Vec<usize> {
        let mut out = Vec::with_capacity(word.len() + 1);
        out.push(self.id_of[&WORD_START.to_string()]);
        let mut buf = [0u8; 4];
        for c in word.chars() {
            let id = if c == WORD_START {
                specials::UNK
            } else {
                self.id_of
                    .get(&*c.encode_utf8(&mut buf))
                    .copied()
                    .filter(|&id| self.kinds[id] == Kind::Char)
                    .unwrap_or(specials::UNK)
            };
            out.push(id);
        }
        out
    }

    /// Splits a whitespace token around literal occurrences of reserved tokens.
    fn segments<'s>(&self, token: &'s str) -> Vec<Segment<'s>> {
        let mut out = Vec::new();
        let mut rest = token;
        'outer: while !rest.is_empty() {
            if let Some(&id) = self.id_of.get(rest) {
                if id < self.num_reserved {
                    out.push(Segment::Reserved(id));
                    break;
                }
            }
            for (start, _) in rest.char_indices() {
                for id in 0..self.num_reserved {
                    let s = &self.pieces[id];
                    if rest[start..].starts_with(s.as_str()) {
                        if start > 0 {
                            out.push(Segment::Text(&rest[..start]));
                        }
                        out.push(Segment::Reserved(id));
                        rest = &rest[start + s.len()..];
                        continue 'outer;
                    }
                }
            }
            out.push(Segment::Text(rest));
            break;
        }
        out
    }

    /// Encodes whitespace tokens; reserved tokens become their single id.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut out = Vec::new();
        for tok in tokens {
            for seg in self.segments(tok.as_ref()) {
                match seg {
                    Segment::Reserved(id) => out.push(id),
                    Segment::Text(t) => out.extend(self.encode_word(t)),
                }
            }
        }
        out
    }

    pub fn encode_str(&self, line: &str) -> Vec<usize> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        self.encode(&toks)
    }

    fn encode_word(&self, word: &str) -> Vec<usize> {
        let mut syms = self.char_ids(word);
        loop {
            let mut best: Option<(usize, usize)> = None;
            for (i, p) in syms.windows(2).enumerate() {
                if let Some(&rank) = self.merge_rank.get(&(p[0], p[1])) {
                    if best.is_none_or(|(_, r)| rank < r) {
                        best = Some((i, rank));
                    }
                }
            }
            let Some((_, rank)) = best else { break };
            let Kind::Merge(l, r) = self.kinds[rank] else {
                unreachable!("merge rank points at a merge piece")
            };
            syms = merge_pair(&syms, (l, r), rank);
        }
        syms
    }

    /// Turns ids back into whitespace tokens. PAD, BOS and EOS are dropped.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        let mut cur: Option<String> = None;
        for &id in ids {
            let piece = self
                .pieces
                .get(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} outside vocabulary of {}", self.len())))?;
            match id {
                specials::PAD | specials::BOS | specials::EOS => continue,
                specials::UNK => cur.get_or_insert_with(String::new).push_str(piece),
                _ if id < self.num_reserved => {
                    out.extend(cur.take());
                    out.push(piece.clone());
                }
                _ => {
                    if let Some(rest) = piece.strip_prefix(WORD_START) {
                        out.extend(cur.take());
                        cur = Some(rest.to_string());
                    } else {
                        cur.get_or_insert_with(String::new).push_str(piece);
                    }
                }
            }
        }
        out.extend(cur.take());
        Ok(out.into_iter().filter(|t| !t.is_empty()).collect())
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// True when training ran out of pairs before reaching the target size.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.id_of.get(piece).copied()
    }

    /// Fixed specials plus tags: ids `0..num_reserved()`.
    pub fn num_reserved(&self) -> usize {
        self.num_reserved
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id < self.num_reserved
    }

    pub fn is_placeholder(&self, id: usize) -> bool {
        id == specials::NOUN || id == specials::VERB
    }

    pub fn is_tag(&self, id: usize) -> bool {
        self.kinds.get(id) == Some(&Kind::Tag)
    }

    pub fn tag_ids(&self) -> Vec<usize> {
        (0..self.num_reserved).filter(|&i| self.is_tag(i)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, (piece, kind)) in self.pieces.iter().zip(&self.kinds).enumerate() {
            let _ = match kind {
                Kind::Special => writeln!(s, "{id}\t{piece}\tspecial"),
                Kind::Tag => writeln!(s, "{id}\t{piece}\ttag"),
                Kind::Char => writeln!(s, "{id}\t{piece}\tchar"),
                Kind::Merge(l, r) => writeln!(s, "{id}\t{piece}\tmerge\t{l}\t{r}"),
            };
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut fixed = Vec::new();
        let mut tags = Vec::new();
        let mut rest = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::parse(origin, i + 1, m.to_string());
            if cols.len() < 3 {
                return Err(bad("expected id, piece and kind columns"));
            }
            let id: usize = cols[0].parse().map_err(|_| bad("bad id"))?;
            let expected = fixed.len() + tags.len() + rest.len();
            if id != expected {
                return Err(bad(&format!("expected id {expected}")));
            }
            match cols[2] {
                "special" => {
                    if !tags.is_empty() || !rest.is_empty() || specials::FIXED.get(id) != Some(&cols[1]) {
                        return Err(bad("unexpected special token"));
                    }
                    fixed.push(cols[1]);
                }
                "tag" => {
                    if !rest.is_empty() {
                        return Err(bad("tags must precede ordinary pieces"));
                    }
                    tags.push(cols[1].to_string());
                }
                "char" => rest.push((i + 1, cols[1], None)),
                "merge" => {
                    if cols.len() != 5 {
                        return Err(bad("merge lines need left and right ids"));
                    }
                    let l: usize = cols[3].parse().map_err(|_| bad("bad left id"))?;
                    let r: usize = cols[4].parse().map_err(|_| bad("bad right id"))?;
                    rest.push((i + 1, cols[1], Some((l, r))));
                }
                other => return Err(bad(&format!("unknown kind {other}"))),
            }
        }
        if fixed.len() != specials::FIXED.len() {
            return Err(Error::parse(origin, 1, "missing special tokens"));
        }
        let mut v = Self::with_reserved(&tags)?;
        for (line, piece, merge) in rest {
            let kind = match merge {
                None => {
                    if piece.chars().count() != 1 {
                        return Err(Error::parse(origin, line, "char piece must be one character"));
                    }
                    Kind::Char
                }
                Some((l, r)) => {
                    let ok = l < v.len()
                        && r < v.len()
                        && l >= v.num_reserved
                        && r >= v.num_reserved
                        && format!("{}{}", v.pieces[l], v.pieces[r]) == piece;
                    if !ok {
                        return Err(Error::parse(origin, line, "merge does not join its parts"));
                    }
                    Kind::Merge(l, r)
                }
            };
            v.push(piece.to_string(), kind)
                .map_err(|e| Error::parse(origin, line, e.to_string()))?;
        }
        if v.id(&WORD_START.to_string()).is_none() {
            return Err(Error::parse(origin, 1, "word-start marker missing"));
        }
        Ok(v)
    }
}

fn merge_pair(syms: &[usize], pair: (usize, usize), new_id: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn train(lines: &[&str], size: usize) -> SubwordVocab {
        let corpus: Vec<Vec<String>> = lines.iter().map(|l| toks(l)).collect();
        SubwordVocab::train(corpus.iter().map(Vec::as_slice), &SubwordConfig::with_size(size)).unwrap()
    }

    #[test]
    fn most_frequent_pair_merges_first() {
        let v = train(&["abab"], 17);
        // reserved 13, chars a b and the marker, then one merge
        assert_eq!(v.len(), 17);
        assert_eq!(v.piece(16), Some("ab"));
    }

    #[test]
    fn ties_break_lexicographically() {
        // every adjacent pair of "▁xy" and "▁yx" occurs once; ("x","y") < ("y","x") and
        // the marker sorts after ASCII letters.
        let v = train(&["xy yx"], 17);
        assert_eq!(v.piece(16), Some("xy"));
    }

    #[test]
    fn reserved_tokens_are_atomic() {
        let v = train(&["a b c [NOUN] ab", "ba [VERB]"], 40);
        let ids = v.encode_str("[VERB] x");
        assert_eq!(ids[0], specials::VERB);
        assert!(!ids[1..].contains(&specials::VERB));
        assert_eq!(v.encode_str("[NOUN]"), vec![specials::NOUN]);
        let inside = v.encode_str("ab[NOUN]ba");
        assert_eq!(inside.iter().filter(|&&i| i == specials::NOUN).count(), 1);
        for id in &inside {
            if *id != specials::NOUN {
                assert!(!"[NOUN]".contains(v.piece(*id).unwrap().trim_start_matches(WORD_START)));
            }
        }
        assert_eq!(v.encode_str("<VBD>"), vec![v.id("<VBD>").unwrap()]);
    }

    #[test]
    fn decode_strips_sentence_markers() {
        let v = train(&["ab"], 17);
        assert!(v.decode(&[specials::BOS, specials::EOS]).unwrap().is_empty());
        assert!(v.decode(&[v.len()]).is_err());
    }

    #[test]
    fn unknown_characters_only_break_their_position() {
        let v = train(&["abc cab"], 30);
        let out = v.decode(&v.encode_str("aZc ab")).unwrap();
        assert_eq!(out, ["a<unk>c", "ab"]);
    }

    #[test]
    fn small_corpus_sets_truncated_flag() {
        let v = train(&["ab"], 1000);
        assert!(v.truncated());
        assert!(v.len() < 1000);
    }

    #[test]
    fn too_small_target_is_rejected() {
        let corpus = [toks("abc")];
        let cfg = SubwordConfig::with_size(15);
        assert!(SubwordVocab::train(corpus.iter().map(Vec::as_slice), &cfg).is_err());
    }

    #[test]
    fn text_format_round_trips() {
        let v = train(&["the cat sat on the mat", "a cat ate the rat"], 40);
        let back = SubwordVocab::from_text(&v.to_text(), "mem").unwrap();
        assert_eq!(back.to_text(), v.to_text());
        let line = "the rat sat on a cat";
        assert_eq!(back.encode_str(line), v.encode_str(line));
    }

    #[test]
    fn corrupt_merge_line_is_rejected() {
        let v = train(&["abab"], 17);
        let text = v.to_text().replace("ab\tmerge", "ba\tmerge");
        assert!(SubwordVocab::from_text(&text, "mem").is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-e]{1,6}", 1..8)) {
            let v = train(&["abc abd bcde eda", "cab dab ebb"], 30);
            let ids = v.encode(&words);
            prop_assert_eq!(v.decode(&ids).unwrap(), words);
        }

        #[test]
        fn training_is_deterministic(lines in prop::collection::vec("[a-d]{1,5}( [a-d]{1,5}){0,3}", 1..6)) {
            let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
            let a = train(&refs, 40);
            let b = train(&refs, 40);
            prop_assert_eq!(a.to_text(), b.to_text());
        }
    }
}
