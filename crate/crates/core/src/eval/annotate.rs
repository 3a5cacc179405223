//! Random samples of system output for manual correct/incorrect/null tagging.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
    pub constraint: String,
}

/// Uniform sample of `n` rows without replacement, kept in input order.
pub fn sample_for_annotation(rows: &[AnnotationRow], n: usize, seed: u64) -> Result<Vec<AnnotationRow>> {
    if n > rows.len() {
        return Err(Error::invalid(format!(
            "asked for {n} samples but only {} constrained outputs are available",
            rows.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, rows.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| rows[i].clone()).collect())
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

/// TSV with a header and an empty `tag` column to be filled with
/// `correct`, `incorrect` or `null`.
pub fn write_annotation_sheet(path: &Path, rows: &[AnnotationRow]) -> Result<()> {
    let mut out = String::from("source\treference\thypothesis\tconstraint\ttag\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t\n",
            clean(&r.source),
            clean(&r.reference),
            clean(&r.hypothesis),
            clean(&r.constraint)
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
