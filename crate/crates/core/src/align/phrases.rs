//! Consistent phrase-pair extraction from word alignments.

use std::collections::{BTreeMap, HashMap};

use super::AlignmentMatrix;
use crate::data::ParallelExample;
use crate::error::{Error, Result};

/// A phrase pair with its co-occurrence count and the annotation seen most
/// often on its occurrences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhraseCandidate {
    pub src_phrase: Vec<String>,
    pub tgt_phrase: Vec<String>,
    pub pair_count: u64,
    pub src_tags: Option<Vec<String>>,
    pub tgt_tags: Option<Vec<String>>,
    pub tgt_lemma: Option<Vec<String>>,
}

type Annotation = (Option<Vec<String>>, Option<Vec<String>>, Option<Vec<String>>);
/// (source phrase, target phrase) -> (count, annotation variants seen)
type PhraseTable = BTreeMap<(Vec<String>, Vec<String>), (u64, HashMap<Annotation, u64>)>;

fn slice(col: &Option<Vec<String>>, a: usize, b: usize) -> Option<Vec<String>> {
    col.as_ref().map(|c| c[a..=b].to_vec())
}

/// Extracts every phrase pair up to `max_len` tokens per side whose target
/// span is exactly the projection of its source span and which no link
/// crosses. Pairs seen fewer than `min_pair_count` times are dropped.
pub fn extract_phrases(
    corpus: &[ParallelExample],
    alignments: &[AlignmentMatrix],
    max_len: usize,
    min_pair_count: u64,
) -> Result<Vec<PhraseCandidate>> {
    if max_len == 0 {
        return Err(Error::invalid("phrase max_len must be at least 1"));
    }
    if corpus.len() != alignments.len() {
        return Err(Error::invalid(format!(
            "{} alignments for {} sentence pairs",
            alignments.len(),
            corpus.len()
        )));
    }
    let mut table: PhraseTable = BTreeMap::new();
    for (ex, al) in corpus.iter().zip(alignments) {
        if ex.id != al.pair_id {
            return Err(Error::invalid(format!(
                "alignment for pair {} found where pair {} was expected",
                al.pair_id, ex.id
            )));
        }
        let n = ex.src_tokens.len();
        for s1 in 0..n {
            for s2 in s1..n.min(s1 + max_len) {
                let mut span: Option<(usize, usize)> = None;
                for &(a, b) in &al.links {
                    if (s1..=s2).contains(&a) {
                        span = Some(span.map_or((b, b), |(lo, hi)| (lo.min(b), hi.max(b))));
                    }
                }
                let Some((t1, t2)) = span else { continue };
                if t2 - t1 + 1 > max_len {
                    continue;
                }
                let consistent = al
                    .links
                    .iter()
                    .all(|&(a, b)| !(t1..=t2).contains(&b) || (s1..=s2).contains(&a));
                if !consistent {
                    continue;
                }
                let key = (ex.src_tokens[s1..=s2].to_vec(), ex.tgt_tokens[t1..=t2].to_vec());
                let ann = (
                    slice(&ex.src_pos, s1, s2),
                    slice(&ex.tgt_pos, t1, t2),
                    slice(&ex.tgt_lemmas, t1, t2),
                );
                let slot = table.entry(key).or_default();
                slot.0 += 1;
                *slot.1.entry(ann).or_default() += 1;
            }
        }
    }
    Ok(table
        .into_iter()
        .filter(|(_, (count, _))| *count >= min_pair_count)
        .map(|((src, tgt), (count, anns))| {
            let (src_tags, tgt_tags, tgt_lemma) = anns
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|(ann, _)| ann)
                .expect("every counted pair has an annotation");
            PhraseCandidate {
                src_phrase: src,
                tgt_phrase: tgt,
                pair_count: count,
                src_tags,
                tgt_tags,
                tgt_lemma,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(table: &[PhraseCandidate]) -> Vec<(String, String)> {
        table
            .iter()
            .map(|c| (c.src_phrase.join(" "), c.tgt_phrase.join(" ")))
            .collect()
    }

    #[test]
    fn monotone_two_token_pair_yields_three_phrases() {
        let corpus = vec![ParallelExample::new(0, "a b", "x y")];
        let al = vec![AlignmentMatrix::new(0, vec![(0, 0), (1, 1)])];
        let t = extract_phrases(&corpus, &al, 4, 1).unwrap();
        assert_eq!(
            pairs(&t),
            [("a", "x"), ("a b", "x y"), ("b", "y")]
                .map(|(a, b)| (a.to_string(), b.to_string()))
        );
    }

    #[test]
    fn crossing_links_block_inconsistent_spans() {
        let corpus = vec![ParallelExample::new(0, "a b c", "x y z")];
        // b links to z, c links to y: "a b" would need y..z which c also reaches
        let al = vec![AlignmentMatrix::new(0, vec![(0, 0), (1, 2), (2, 1)])];
        let t = extract_phrases(&corpus, &al, 4, 1).unwrap();
        let p = pairs(&t);
        assert!(p.contains(&("b c".into(), "y z".into())));
        assert!(!p.iter().any(|(s, _)| s == "a b"));
        for c in &t {
            assert!(c.pair_count >= 1);
        }
    }

    #[test]
    fn threshold_filters_rare_pairs() {
        let corpus = vec![
            ParallelExample::new(0, "a", "x"),
            ParallelExample::new(1, "a", "x"),
            ParallelExample::new(2, "b", "y"),
        ];
        let al: Vec<_> = (0..3).map(|i| AlignmentMatrix::new(i, vec![(0, 0)])).collect();
        let t = extract_phrases(&corpus, &al, 2, 2).unwrap();
        assert_eq!(pairs(&t), [("a".to_string(), "x".to_string())]);
        assert_eq!(t[0].pair_count, 2);
        assert!(extract_phrases(&corpus, &al, 2, 100).unwrap().is_empty());
    }

    #[test]
    fn majority_annotation_wins() {
        let mk = |id, tag: &str| {
            let mut ex = ParallelExample::new(id, "a", "x");
            ex.src_pos = Some(vec!["NN".into()]);
            ex.tgt_pos = Some(vec![tag.into()]);
            ex.tgt_lemmas = Some(vec!["x".into()]);
            ex
        };
        let corpus = vec![mk(0, "VB"), mk(1, "NN"), mk(2, "NN")];
        let al: Vec<_> = (0..3).map(|i| AlignmentMatrix::new(i, vec![(0, 0)])).collect();
        let t = extract_phrases(&corpus, &al, 1, 1).unwrap();
        assert_eq!(t[0].tgt_tags.as_deref(), Some(&["NN".to_string()][..]));
    }
}
