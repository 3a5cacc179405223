//! Greedy and beam search over the word model.

use std::cmp::Ordering;

use super::word::{Encoded, WordModel};
use crate::data::specials::{BOS, EOS};
use crate::error::Result;
use crate::tensor::{ParamStore, Scalar};

pub const DEFAULT_BEAM: usize = 4;

/// Output length cap for a source of `src_len` pieces.
pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 10
}

impl<T: Scalar> Encoded<T> {
    /// Sub-batch made of sentences `rows`.
    pub fn select(&self, rows: &[usize]) -> Encoded<T> {
        let d = self.states.cols();
        let mut data = Vec::with_capacity(rows.len() * self.len * d);
        let mut valid = Vec::with_capacity(rows.len() * self.len);
        for &b in rows {
            data.extend_from_slice(&self.states.data()[b * self.len * d..(b + 1) * self.len * d]);
            valid.extend_from_slice(&self.valid[b * self.len..(b + 1) * self.len]);
        }
        Encoded {
            states: crate::tensor::Tensor::new(vec![rows.len() * self.len, d], data).expect("select shape"),
            batch: rows.len(),
            len: self.len,
            valid,
        }
    }
}

fn mask(lp: &mut [f64], banned: &[usize]) {
    for &b in banned {
        if let Some(v) = lp.get_mut(b) {
            *v = f64::NEG_INFINITY;
        }
    }
}

fn best(lp: &[f64]) -> usize {
    let mut b = 0;
    for (i, v) in lp.iter().enumerate() {
        if *v > lp[b] {
            b = i;
        }
    }
    b
}

/// Greedy decoding of a whole batch; returns pieces without BOS/EOS.
pub fn greedy<T: Scalar>(
    model: &WordModel,
    store: &ParamStore<T>,
    srcs: &[Vec<usize>],
    banned: &[usize],
) -> Result<Vec<Vec<usize>>> {
    if srcs.is_empty() {
        return Ok(Vec::new());
    }
    let enc = model.encode_detached(store, srcs)?;
    let limits: Vec<usize> = srcs.iter().map(|s| default_max_len(s.len())).collect();
    let mut outs: Vec<Vec<usize>> = vec![Vec::new(); srcs.len()];
    let mut alive: Vec<usize> = (0..srcs.len()).collect();
    let mut step = 0;
    while !alive.is_empty() {
        let sub = enc.select(&alive);
        let prefixes: Vec<Vec<usize>> = alive
            .iter()
            .map(|&b| std::iter::once(BOS).chain(outs[b].iter().copied()).collect())
            .collect();
        let lps = model.next_log_probs(store, &sub, &prefixes)?;
        let mut next = Vec::with_capacity(alive.len());
        for (k, &b) in alive.iter().enumerate() {
            let mut lp = lps[k].clone();
            mask(&mut lp, banned);
            let tok = best(&lp);
            if tok == EOS {
                continue;
            }
            outs[b].push(tok);
            if step + 1 < limits[b] {
                next.push(b);
            }
        }
        alive = next;
        step += 1;
    }
    Ok(outs)
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<usize>,
    score: f64,
}

fn normalized(h: &Hyp, ended: bool) -> f64 {
    h.score / (h.tokens.len() + usize::from(ended)) as f64
}

/// Length-normalized beam search for one source sentence.
pub fn beam_search<T: Scalar>(
    model: &WordModel,
    store: &ParamStore<T>,
    src: &[usize],
    beam: usize,
    banned: &[usize],
) -> Result<Vec<usize>> {
    let beam = beam.max(1);
    let enc = model.encode_detached(store, &[src.to_vec()])?;
    let max_len = default_max_len(src.len());
    let mut hyps = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_len {
        let mem = enc.repeat(0, hyps.len());
        let prefixes: Vec<Vec<usize>> = hyps
            .iter()
            .map(|h| std::iter::once(BOS).chain(h.tokens.iter().copied()).collect())
            .collect();
        let lps = model.next_log_probs(store, &mem, &prefixes)?;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, lp) in lps.into_iter().enumerate() {
            let mut lp = lp;
            mask(&mut lp, banned);
            for (v, l) in lp.into_iter().enumerate() {
                if l.is_finite() {
                    cands.push((hyps[i].score + l, i, v));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(beam);
        for (score, i, v) in cands.into_iter().take(beam) {
            let mut tokens = hyps[i].tokens.clone();
            if v == EOS {
                finished.push(Hyp { tokens, score });
            } else {
                tokens.push(v);
                next.push(Hyp { tokens, score });
            }
        }
        if finished.len() >= beam || next.is_empty() {
            break;
        }
        hyps = next;
    }
    let pool: Vec<(Hyp, bool)> = if finished.is_empty() {
        hyps.into_iter().map(|h| (h, false)).collect()
    } else {
        finished.into_iter().map(|h| (h, true)).collect()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (h, ended) in pool {
        let s = normalized(&h, ended);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, h.tokens));
        }
    }
    Ok(best.map(|(_, t)| t).unwrap_or_default())
}
