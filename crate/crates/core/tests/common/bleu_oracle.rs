//! Brute-force corpus BLEU over pre-split tokens: clipped n-gram matches by
//! direct enumeration, exponential smoothing of zero-match orders, and the
//! brevity penalty. Written against the metric's definition only.

fn ngrams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| &tokens[i..i + n]).collect()
}

fn occurrences(grams: &[&[String]], g: &[String]) -> usize {
    grams.iter().filter(|x| **x == g).count()
}

pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let hg = ngrams(hyp, n);
            let rg = ngrams(reference, n);
            totals[n - 1] += hg.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &hg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                matches[n - 1] += occurrences(&hg, g).min(occurrences(&rg, g));
            }
        }
    }
    if totals.contains(&0) {
        return 0.0;
    }
    let mut k = 0;
    let mut product = 1.0f64;
    for n in 0..4 {
        let p = if matches[n] == 0 {
            k += 1;
            1.0 / (2f64.powi(k) * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        product *= p;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * product.powf(0.25)
}
