use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    render_codeswitch, render_morphtag, render_placeholder, CodeSwitchForm, ConstraintAnnotation,
    ConstraintSelector, InflectionLexicon, Thresholds,
};
use crate::align::Dictionary;
use crate::data::ParallelExample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    Placeholder,
    CodeswitchOracle,
    CodeswitchLemma,
    Morphtag,
}

impl AugmentMode {
    pub const ALL: [AugmentMode; 4] = [
        AugmentMode::Placeholder,
        AugmentMode::CodeswitchOracle,
        AugmentMode::CodeswitchLemma,
        AugmentMode::Morphtag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentMode::Placeholder => "placeholder",
            AugmentMode::CodeswitchOracle => "codeswitch-oracle",
            AugmentMode::CodeswitchLemma => "codeswitch-lemma",
            AugmentMode::Morphtag => "morphtag",
        }
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation mode {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSettings {
    pub mode: AugmentMode,
    pub thresholds: Thresholds,
    /// Augmented copies as a fraction of the original corpus; `None` keeps
    /// every qualifying pair.
    pub target_ratio: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct AugmentOutput {
    /// Rendered copies, in corpus order. Originals are not included.
    pub augmented: Vec<ParallelExample>,
    /// One annotation per augmented copy, same order.
    pub manifest: Vec<ConstraintAnnotation>,
    /// Pairs that had a usable constraint before subsampling.
    pub qualifying: usize,
    /// Pairs skipped because the lexicon could not analyse the reference form.
    pub lexicon_misses: usize,
}

impl AugmentOutput {
    /// Originals followed by the augmented copies.
    pub fn training_set(&self, originals: &[ParallelExample]) -> Vec<ParallelExample> {
        originals.iter().chain(&self.augmented).cloned().collect()
    }
}

/// One rendered copy of `ex`; `None` when the morph-tag rendering finds no form tag.
pub fn render_constraint(
    ex: &ParallelExample,
    c: &ConstraintAnnotation,
    mode: AugmentMode,
    lex: &InflectionLexicon,
) -> Result<Option<ParallelExample>> {
    Ok(match mode {
        AugmentMode::Placeholder => Some(render_placeholder(ex, c)?),
        AugmentMode::CodeswitchOracle => Some(render_codeswitch(ex, c, CodeSwitchForm::Oracle)?),
        AugmentMode::CodeswitchLemma => Some(render_codeswitch(ex, c, CodeSwitchForm::Lemma)?),
        AugmentMode::Morphtag => render_morphtag(ex, c, lex)?,
    })
}

/// Renders one augmented copy for each qualifying pair, then keeps a seeded
/// uniform subset of `round(target_ratio * corpus.len())` copies in corpus order.
pub fn augment_corpus(
    corpus: &[ParallelExample],
    dict: &Dictionary,
    lex: &InflectionLexicon,
    settings: &AugmentSettings,
) -> Result<AugmentOutput> {
    if let Some(r) = settings.target_ratio {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("target ratio {r} outside [0, 1]")));
        }
    }
    let selector = ConstraintSelector::new(dict, &settings.thresholds);
    let mut out = AugmentOutput::default();
    let mut rendered = Vec::new();
    for ex in corpus {
        let Some(mut c) = selector.select(ex, lex) else {
            continue;
        };
        c.mode = Some(settings.mode);
        match render_constraint(ex, &c, settings.mode, lex)? {
            Some(r) => rendered.push((r, c)),
            None => out.lexicon_misses += 1,
        }
    }
    out.qualifying = rendered.len();
    let keep = match settings.target_ratio {
        Some(r) => ((r * corpus.len() as f64).round() as usize).min(rendered.len()),
        None => rendered.len(),
    };
    let mut order: Vec<usize> = (0..rendered.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.seed));
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    let mut slots: Vec<Option<(ParallelExample, ConstraintAnnotation)>> =
        rendered.into_iter().map(Some).collect();
    for i in chosen {
        let (r, c) = slots[i].take().expect("index chosen once");
        out.augmented.push(r);
        out.manifest.push(c);
    }
    Ok(out)
}

pub fn save_manifest(path: &Path, manifest: &[ConstraintAnnotation]) -> Result<()> {
    let mut s = String::new();
    for c in manifest {
        s.push_str(&serde_json::to_string(c)?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Vec<ConstraintAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(path.display(), i + 1, e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::select::tests::{entry, lexicon};
    use super::*;
    use crate::align::PosClass;

    fn corpus(n: usize) -> Vec<ParallelExample> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    ParallelExample::new(i, "kore wo kanri", "we controlled this")
                } else {
                    ParallelExample::new(i, "kore da", "this is it")
                }
            })
            .collect()
    }

    fn settings(ratio: Option<f64>) -> AugmentSettings {
        AugmentSettings {
            mode: AugmentMode::Placeholder,
            thresholds: Thresholds::unlimited(),
            target_ratio: ratio,
            seed: 1,
        }
    }

    fn dict() -> Dictionary {
        Dictionary::new(vec![entry("kanri", "control", PosClass::Verb, 5)])
    }

    #[test]
    fn every_qualifying_pair_without_ratio() {
        let out = augment_corpus(&corpus(10), &dict(), &lexicon(), &settings(None)).unwrap();
        assert_eq!(out.qualifying, 5);
        assert_eq!(out.augmented.len(), out.manifest.len());
        assert_eq!(out.augmented.len(), 5);
        assert_eq!(out.training_set(&corpus(10)).len(), 15);
    }

    #[test]
    fn ratio_subsamples_deterministically_in_order() {
        let c = corpus(40);
        let a = augment_corpus(&c, &dict(), &lexicon(), &settings(Some(0.2))).unwrap();
        let b = augment_corpus(&c, &dict(), &lexicon(), &settings(Some(0.2))).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.augmented.len(), 8);
        assert!(a.manifest.windows(2).all(|w| w[0].pair_id < w[1].pair_id));
    }

    #[test]
    fn zero_thresholds_give_nothing() {
        let mut s = settings(None);
        s.thresholds = Thresholds { noun_max_freq: 0, verb_max_freq: 0 };
        let out = augment_corpus(&corpus(10), &dict(), &lexicon(), &s).unwrap();
        assert!(out.augmented.is_empty());
    }

    #[test]
    fn morphtag_counts_misses() {
        let mut s = settings(None);
        s.mode = AugmentMode::Morphtag;
        let out = augment_corpus(&corpus(4), &dict(), &InflectionLexicon::new(), &s).unwrap();
        // "controlled" cannot be matched without the lexicon, so nothing qualifies
        assert_eq!(out.lexicon_misses + out.qualifying, 0);
        let mut lemma_only = corpus(4);
        lemma_only[0] = ParallelExample::new(0, "kanri", "control");
        let out = augment_corpus(&lemma_only, &dict(), &InflectionLexicon::new(), &s).unwrap();
        assert_eq!(out.lexicon_misses, 1);
    }

    #[test]
    fn manifest_round_trip() {
        let out = augment_corpus(&corpus(6), &dict(), &lexicon(), &settings(None)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        save_manifest(&p, &out.manifest).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), out.manifest);
        assert_eq!(out.manifest[0].mode, Some(AugmentMode::Placeholder));
    }

    #[test]
    fn mode_names_parse() {
        for m in AugmentMode::ALL {
            assert_eq!(m.as_str().parse::<AugmentMode>().unwrap(), m);
        }
        assert!("cs".parse::<AugmentMode>().is_err());
    }
}
