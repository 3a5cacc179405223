use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ParallelExample;
use crate::error::{Error, Result};

/// Word links of one sentence pair as sorted, unique `(src, tgt)` indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    pub pair_id: usize,
    pub links: Vec<(usize, usize)>,
}

impl AlignmentMatrix {
    pub fn new(pair_id: usize, mut links: Vec<(usize, usize)>) -> Self {
        links.sort_unstable();
        links.dedup();
        Self { pair_id, links }
    }

    pub fn to_pharaoh(&self) -> String {
        let mut s = String::new();
        for (i, (a, b)) in self.links.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{a}-{b}");
        }
        s
    }
}

/// Parses one `i-j i-j ...` line, checking indices against the sentence lengths.
pub fn parse_pharaoh_line(
    line: &str,
    pair_id: usize,
    src_len: usize,
    tgt_len: usize,
) -> std::result::Result<AlignmentMatrix, String> {
    let mut links = Vec::new();
    for tok in line.split_whitespace() {
        let (a, b) = tok
            .split_once('-')
            .ok_or_else(|| format!("pair {pair_id}: malformed link {tok:?}"))?;
        let a: usize = a
            .parse()
            .map_err(|_| format!("pair {pair_id}: malformed link {tok:?}"))?;
        let b: usize = b
            .parse()
            .map_err(|_| format!("pair {pair_id}: malformed link {tok:?}"))?;
        if a >= src_len || b >= tgt_len {
            return Err(format!(
                "pair {pair_id}: link {tok} outside a {src_len}x{tgt_len} sentence pair"
            ));
        }
        links.push((a, b));
    }
    Ok(AlignmentMatrix::new(pair_id, links))
}

/// Reads Pharaoh-format alignments for `corpus`, one line per pair.
pub fn load_pharaoh(path: &Path, corpus: &[ParallelExample]) -> Result<Vec<AlignmentMatrix>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != corpus.len() {
        return Err(Error::invalid(format!(
            "{} has {} alignment lines but the corpus has {} pairs",
            path.display(),
            lines.len(),
            corpus.len()
        )));
    }
    lines
        .iter()
        .zip(corpus)
        .enumerate()
        .map(|(i, (line, ex))| {
            parse_pharaoh_line(line, ex.id, ex.src_tokens.len(), ex.tgt_tokens.len())
                .map_err(|m| Error::parse(path.display(), i + 1, m))
        })
        .collect()
}

pub fn save_pharaoh(path: &Path, alignments: &[AlignmentMatrix]) -> Result<()> {
    let mut s = String::new();
    for a in alignments {
        s.push_str(&a.to_pharaoh());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_links() {
        let a = parse_pharaoh_line("0-0 1-2", 0, 2, 3).unwrap();
        assert_eq!(a.links, vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn out_of_bounds_names_pair() {
        let err = parse_pharaoh_line("3-1", 9, 2, 2).unwrap_err();
        assert!(err.contains("pair 9"));
    }

    #[test]
    fn line_count_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, "0-0\n").unwrap();
        let corpus = vec![
            ParallelExample::new(0, "a", "x"),
            ParallelExample::new(1, "b", "y"),
        ];
        assert!(load_pharaoh(&p, &corpus).is_err());
        fs::write(&p, "0-0\n\n").unwrap();
        assert_eq!(load_pharaoh(&p, &corpus).unwrap()[1].links, vec![]);
    }

    #[test]
    fn duplicate_links_collapse() {
        let a = parse_pharaoh_line("1-0 0-0 1-0", 0, 2, 1).unwrap();
        assert_eq!(a.links, vec![(0, 0), (1, 0)]);
        assert_eq!(a.to_pharaoh(), "0-0 1-0");
    }
}
