//! IBM Model 1 trained with EM, without a NULL source word.

use std::collections::HashMap;

use super::AlignmentMatrix;
use crate::data::ParallelExample;
use crate::error::{Error, Result};

/// Lexical translation probabilities `t(tgt | src)`.
#[derive(Clone, Debug)]
pub struct TranslationTable {
    src_ids: HashMap<String, u32>,
    tgt_ids: HashMap<String, u32>,
    probs: HashMap<(u32, u32), f64>,
}

impl TranslationTable {
    pub fn prob(&self, src: &str, tgt: &str) -> f64 {
        match (self.src_ids.get(src), self.tgt_ids.get(tgt)) {
            (Some(&s), Some(&t)) => self.probs.get(&(s, t)).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub struct Ibm1Output {
    pub table: TranslationTable,
    pub alignments: Vec<AlignmentMatrix>,
    /// Corpus log-likelihood under the table used by each E-step, with the
    /// `1 / |src|` alignment prior.
    pub log_likelihood: Vec<f64>,
}

fn intern(map: &mut HashMap<String, u32>, w: &str) -> u32 {
    let n = map.len() as u32;
    *map.entry(w.to_string()).or_insert(n)
}

/// Runs `iterations` EM steps from a uniform table and links every target
/// token to its most probable source token (lowest index on ties).
pub fn align_ibm1(corpus: &[ParallelExample], iterations: usize) -> Result<Ibm1Output> {
    if iterations == 0 {
        return Err(Error::invalid("IBM Model 1 needs at least one iteration"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot align an empty corpus"));
    }
    let mut src_ids = HashMap::new();
    let mut tgt_ids = HashMap::new();
    let sents: Vec<(Vec<u32>, Vec<u32>)> = corpus
        .iter()
        .map(|ex| {
            let s = ex.src_tokens.iter().map(|w| intern(&mut src_ids, w)).collect();
            let t = ex.tgt_tokens.iter().map(|w| intern(&mut tgt_ids, w)).collect();
            (s, t)
        })
        .collect();

    let uniform = 1.0 / tgt_ids.len() as f64;
    let mut probs: HashMap<(u32, u32), f64> = HashMap::new();
    for (s, t) in &sents {
        for &e in s {
            for &f in t {
                probs.insert((e, f), uniform);
            }
        }
    }

    let mut log_likelihood = Vec::with_capacity(iterations);
    let mut counts: HashMap<(u32, u32), f64> = HashMap::with_capacity(probs.len());
    let mut totals = vec![0.0f64; src_ids.len()];
    for _ in 0..iterations {
        counts.clear();
        totals.iter_mut().for_each(|v| *v = 0.0);
        let mut ll = 0.0;
        for (s, t) in &sents {
            let prior = (s.len() as f64).ln();
            for &f in t {
                let z: f64 = s.iter().map(|&e| probs[&(e, f)]).sum();
                ll += z.ln() - prior;
                for &e in s {
                    let c = probs[&(e, f)] / z;
                    *counts.entry((e, f)).or_default() += c;
                    totals[e as usize] += c;
                }
            }
        }
        log_likelihood.push(ll);
        for (&(e, f), p) in probs.iter_mut() {
            *p = counts.get(&(e, f)).copied().unwrap_or(0.0) / totals[e as usize];
        }
    }

    let alignments = sents
        .iter()
        .zip(corpus)
        .map(|((s, t), ex)| {
            let links = t
                .iter()
                .enumerate()
                .map(|(j, &f)| {
                    let mut best = 0;
                    for (i, &e) in s.iter().enumerate() {
                        if probs[&(e, f)] > probs[&(s[best], f)] {
                            best = i;
                        }
                    }
                    (best, j)
                })
                .collect();
            AlignmentMatrix::new(ex.id, links)
        })
        .collect();

    Ok(Ibm1Output {
        table: TranslationTable {
            src_ids,
            tgt_ids,
            probs,
        },
        alignments,
        log_likelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<ParallelExample> {
        vec![
            ParallelExample::new(0, "a", "x"),
            ParallelExample::new(1, "a b", "x y"),
            ParallelExample::new(2, "b", "y"),
        ]
    }

    #[test]
    fn toy_corpus_converges_to_hand_computed_values() {
        let out = align_ibm1(&toy(), 10).unwrap();
        // t(x|a) = 1 - 2^-(k+1) after k iterations on this corpus
        let expected = 1.0 - 2f64.powi(-11);
        assert!((out.table.prob("a", "x") - expected).abs() < 1e-12);
        assert!((out.table.prob("b", "y") - expected).abs() < 1e-12);
        let frozen = [
            -2.7726, -1.9617, -1.6534, -1.5154, -1.4498, -1.4178, -1.4020, -1.3941, -1.3902,
            -1.3882,
        ];
        for (got, want) in out.log_likelihood.iter().zip(frozen) {
            assert!((got - want).abs() < 5e-5, "{got} vs {want}");
        }
        assert_eq!(out.alignments[1].links, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn single_pair_links_its_only_tokens() {
        let out = align_ibm1(&[ParallelExample::new(0, "a", "x")], 1).unwrap();
        assert_eq!(out.alignments[0].links, vec![(0, 0)]);
    }

    #[test]
    fn zero_iterations_and_empty_corpus_fail() {
        assert!(align_ibm1(&toy(), 0).is_err());
        assert!(align_ibm1(&[], 3).is_err());
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let corpus: Vec<_> = [
            ("the cat", "le chat"),
            ("the dog", "le chien"),
            ("a cat sleeps", "un chat dort"),
            ("the dog sleeps", "le chien dort"),
        ]
        .iter()
        .enumerate()
        .map(|(i, (s, t))| ParallelExample::new(i, s, t))
        .collect();
        let out = align_ibm1(&corpus, 15).unwrap();
        for w in out.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }
}
