use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::align::PosClass;
use crate::error::{Error, Result};

/// Form tags without brackets; nouns first.
pub const FORM_TAGS: [&str; 7] = ["NN", "NNS", "VB", "VBD", "VBG", "VBN", "VBZ"];

pub fn tag_token(tag: &str) -> String {
    format!("<{tag}>")
}

/// The bare tag of a `<TAG>` token, if it is a known form tag.
pub fn parse_tag_token(tok: &str) -> Option<&str> {
    let inner = tok.strip_prefix('<')?.strip_suffix('>')?;
    FORM_TAGS.contains(&inner).then_some(inner)
}

/// Class a form tag belongs to.
pub fn tag_pos(tag: &str) -> Option<PosClass> {
    match tag {
        "NN" | "NNS" => Some(PosClass::Noun),
        "VB" | "VBD" | "VBG" | "VBN" | "VBZ" => Some(PosClass::Verb),
        _ => None,
    }
}

/// `(lemma, class, tag) -> surface` with its reverse `(class, surface) -> (lemma, tag)`.
///
/// When two keys share a surface (English VBD/VBN, say) the reverse keeps the
/// first one added, so `lookup(reverse(s)) == s` holds for every surface.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InflectionLexicon {
    forms: BTreeMap<(String, PosClass, String), String>,
    reverse: HashMap<(PosClass, String), (String, String)>,
}

impl InflectionLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lemma: &str, pos: PosClass, tag: &str, surface: &str) -> Result<()> {
        if tag_pos(tag) != Some(pos) {
            return Err(Error::invalid(format!("tag {tag} does not belong to class {pos}")));
        }
        if lemma.is_empty() || surface.is_empty() || lemma.contains(char::is_whitespace) || surface.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("lexicon entries are single tokens: {lemma:?} {surface:?}")));
        }
        let key = (lemma.to_string(), pos, tag.to_string());
        if let Some(old) = self.forms.get(&key) {
            if old != surface {
                return Err(Error::invalid(format!(
                    "conflicting forms for {lemma} {tag}: {old} and {surface}"
                )));
            }
            return Ok(());
        }
        self.forms.insert(key, surface.to_string());
        self.reverse
            .entry((pos, surface.to_string()))
            .or_insert_with(|| (lemma.to_string(), tag.to_string()));
        Ok(())
    }

    pub fn lookup(&self, lemma: &str, pos: PosClass, tag: &str) -> Option<&str> {
        self.forms
            .get(&(lemma.to_string(), pos, tag.to_string()))
            .map(String::as_str)
    }

    /// Lemma and tag of a surface form.
    pub fn reverse(&self, pos: PosClass, surface: &str) -> Option<(&str, &str)> {
        self.reverse
            .get(&(pos, surface.to_string()))
            .map(|(l, t)| (l.as_str(), t.as_str()))
    }

    /// Whether `surface` is an attested form of `lemma` (the lemma itself counts).
    pub fn is_form_of(&self, lemma: &str, pos: PosClass, surface: &str) -> bool {
        surface == lemma
            || self
                .forms
                .range((lemma.to_string(), pos, String::new())..)
                .take_while(|((l, p, _), _)| l == lemma && *p == pos)
                .any(|(_, s)| s == surface)
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Every surface form in the lexicon.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.forms.values().map(String::as_str)
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.forms.keys().map(|(l, _, _)| l.as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for ((lemma, pos, tag), surface) in &self.forms {
            s.push_str(&format!("{lemma}\t{pos}\t{tag}\t{surface}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::parse(origin, i + 1, m);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, found {}", cols.len())));
            }
            let pos: PosClass = cols[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let tag = parse_tag_token(cols[2]).unwrap_or(cols[2]);
            lex.insert(cols[0], pos, tag, cols[3])
                .map_err(|e| bad(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn english() -> InflectionLexicon {
        let mut lex = InflectionLexicon::new();
        for (tag, s) in [("VB", "control"), ("VBD", "controlled"), ("VBN", "controlled"), ("VBG", "controlling"), ("VBZ", "controls")] {
            lex.insert("control", PosClass::Verb, tag, s).unwrap();
        }
        lex.insert("make", PosClass::Verb, "VBD", "made").unwrap();
        lex.insert("system", PosClass::Noun, "NNS", "systems").unwrap();
        lex
    }

    #[test]
    fn reverse_then_lookup_is_identity() {
        let lex = english();
        for s in lex.surfaces().collect::<Vec<_>>() {
            for pos in PosClass::ALL {
                if let Some((l, t)) = lex.reverse(pos, s) {
                    assert_eq!(lex.lookup(l, pos, t), Some(s));
                }
            }
        }
        assert_eq!(lex.reverse(PosClass::Verb, "controlled"), Some(("control", "VBD")));
    }

    #[test]
    fn forms_of_a_lemma() {
        let lex = english();
        assert!(lex.is_form_of("control", PosClass::Verb, "controlling"));
        assert!(lex.is_form_of("control", PosClass::Verb, "control"));
        assert!(!lex.is_form_of("control", PosClass::Verb, "made"));
        assert!(!lex.is_form_of("control", PosClass::Noun, "controls"));
    }

    #[test]
    fn tsv_round_trip_and_validation() {
        let lex = english();
        let back = InflectionLexicon::from_tsv(&lex.to_tsv(), "mem").unwrap();
        assert_eq!(back, lex);
        assert!(InflectionLexicon::from_tsv("a\tNOUN\tVBD\tb\n", "mem").is_err());
        let bracketed = InflectionLexicon::from_tsv("make\tVERB\t<VBD>\tmade\n", "mem").unwrap();
        assert_eq!(bracketed.lookup("make", PosClass::Verb, "VBD"), Some("made"));
    }

    #[test]
    fn tag_tokens() {
        assert_eq!(parse_tag_token("<VBD>"), Some("VBD"));
        assert_eq!(parse_tag_token("<XX>"), None);
        assert_eq!(parse_tag_token("VBD"), None);
        assert_eq!(tag_token("NNS"), "<NNS>");
    }
}
