//! Corpus BLEU with 13a tokenization and exponential smoothing, and the
//! specified-term use rate.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::augment::ConstraintAnnotation;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

struct Rules([(Regex, &'static str); 4]);

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        let re = |p: &str| Regex::new(p).expect("static pattern");
        Rules([
            // symbols: { | } ~ [ \ ] ^ _ ` space ! " # $ % & ( ) * + : ; < = > ? @ /
            (re(r"([\x7B-\x7E\x5B-\x60\x20-\x26\x28-\x2B\x3A-\x40/])"), " ${1} "),
            (re(r"([^0-9])([\.,])"), "${1} ${2} "),
            (re(r"([\.,])([^0-9])"), " ${1} ${2}"),
            (re(r"([0-9])(-)"), "${1} ${2} "),
        ])
    })
}

/// Splits a detokenized line the way the 13a tokenizer does.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut s = format!(" {s} ");
    for (re, rep) in &rules().0 {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().map(str::to_string).collect()
}

/// Sufficient statistics of corpus BLEU.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
    pub sys_len: u64,
    pub ref_len: u64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn add_sentence(&mut self, hyp: &[String], reference: &[String]) {
        self.sys_len += hyp.len() as u64;
        self.ref_len += reference.len() as u64;
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.total[n - 1] += hyp.len().saturating_sub(n - 1) as u64;
            self.correct[n - 1] += h
                .iter()
                .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
                .sum::<u64>();
        }
    }

    pub fn score(&self) -> f64 {
        let mut precisions = [0.0f64; MAX_ORDER];
        let mut smooth = 1.0f64;
        for (p, (&correct, &total)) in precisions.iter_mut().zip(self.correct.iter().zip(&self.total)) {
            if total == 0 {
                break;
            }
            *p = if correct == 0 {
                smooth *= 2.0;
                100.0 / (smooth * total as f64)
            } else {
                100.0 * correct as f64 / total as f64
            };
        }
        let bp = if self.sys_len < self.ref_len {
            if self.sys_len == 0 {
                0.0
            } else {
                (1.0 - self.ref_len as f64 / self.sys_len as f64).exp()
            }
        } else {
            1.0
        };
        if bp == 1.0 && precisions.iter().all(|&p| p == 100.0) {
            // exp(ln 100) is not exactly 100 in floating point
            return 100.0;
        }
        let log = |p: f64| if p == 0.0 { -9_999_999_999.0 } else { p.ln() };
        bp * (precisions.iter().map(|&p| log(p)).sum::<f64>() / MAX_ORDER as f64).exp()
    }
}

/// Corpus BLEU-4 in `[0, 100]`, mixed case, one reference per hypothesis.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::invalid("bleu needs at least one hypothesis"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "bleu got {} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add_sentence(&tokenize_13a(h.as_ref()), &tokenize_13a(r.as_ref()));
    }
    Ok(stats.score())
}

/// Whether `surface` occurs as a contiguous, case-insensitive run of 13a
/// tokens in `hypothesis`.
pub fn contains_term(hypothesis: &str, surface: &[String]) -> bool {
    let lower = |toks: Vec<String>| -> Vec<String> { toks.into_iter().map(|t| t.to_lowercase()).collect() };
    let hyp = lower(tokenize_13a(hypothesis));
    let term = lower(tokenize_13a(&surface.join(" ")));
    !term.is_empty() && hyp.windows(term.len()).any(|w| w == term.as_slice())
}

/// Fraction of outputs that contain their constraint's reference surface;
/// 0 for an empty list.
pub fn term_use_rate<S: AsRef<str>>(outputs: &[(S, &ConstraintAnnotation)]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let hits = outputs
        .iter()
        .filter(|(h, c)| contains_term(h.as_ref(), &c.reference_surface))
        .count();
    hits as f64 / outputs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenizer_splits_punctuation_but_not_decimals() {
        assert_eq!(tokenize_13a("Hello, world."), toks("Hello , world ."));
        assert_eq!(tokenize_13a("pi is 3.14, e=2"), toks("pi is 3.14 , e = 2"));
        assert_eq!(tokenize_13a("1990-2000 (approx)"), toks("1990 - 2000 ( approx )"));
        assert_eq!(tokenize_13a("a &amp; b &quot;c&quot;"), toks("a & b \" c \""));
        assert_eq!(tokenize_13a("x<skipped>y"), toks("xy"));
    }

    #[test]
    fn clipped_unigrams() {
        let mut s = BleuStats::default();
        s.add_sentence(&toks("the the the the"), &toks("the cat"));
        assert_eq!(s.correct[0], 1);
        assert_eq!(s.total[0], 4);
    }

    #[test]
    fn identical_corpora_score_exactly_100() {
        let c = ["the cat sat on the mat", "a dog barked at night ."];
        assert_eq!(bleu(&c, &c).unwrap(), 100.0);
    }

    #[test]
    fn empty_and_mismatched_inputs_error() {
        let empty: [&str; 0] = [];
        assert!(bleu(&empty, &empty).is_err());
        assert!(bleu(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        assert_eq!(bleu(&[""], &["the cat sat on"]).unwrap(), 0.0);
    }

    #[test]
    fn term_matching_is_exact_surface_and_case_insensitive() {
        let s = |x: &str| toks(x);
        assert!(contains_term("It was controlled .", &s("controlled")));
        assert!(contains_term("Controlled by us", &s("controlled")));
        assert!(!contains_term("it is controlling", &s("controlled")));
        assert!(contains_term("the green tea leaves", &s("green tea")));
        assert!(!contains_term("green the tea", &s("green tea")));
    }
}
