//! Per-cell scores for the (POS class x seen/unseen) evaluation grid.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::PosClass;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seen {
    Seen,
    Unseen,
}

impl Seen {
    pub const ALL: [Seen; 2] = [Seen::Seen, Seen::Unseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Seen::Seen => "seen",
            Seen::Unseen => "unseen",
        }
    }
}

/// One evaluation configuration; serialized as `NOUN-seen`, `VERB-unseen`, ...
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub pos: PosClass,
    pub seen: Seen,
}

impl Cell {
    pub fn all() -> impl Iterator<Item = Cell> {
        PosClass::ALL
            .into_iter()
            .flat_map(|pos| Seen::ALL.into_iter().map(move |seen| Cell { pos, seen }))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.pos, self.seen.as_str())
    }
}

impl FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (pos, seen) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("bad cell name {s:?}")))?;
        let seen = match seen {
            "seen" => Seen::Seen,
            "unseen" => Seen::Unseen,
            _ => return Err(Error::invalid(format!("bad cell name {s:?}"))),
        };
        Ok(Cell {
            pos: pos.parse()?,
            seen,
        })
    }
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    pub bleu: f64,
    pub term_use_rate: f64,
    pub n_constrained: usize,
    pub n_matched: usize,
    /// Outputs that contained at least one placeholder token before filling.
    pub n_placeholder_emitted: usize,
}

impl CellScores {
    pub fn placeholder_rate(&self) -> f64 {
        if self.n_constrained == 0 {
            0.0
        } else {
            self.n_placeholder_emitted as f64 / self.n_constrained as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub seeds: Vec<u64>,
    /// Cells without any constrained test sentence are left out.
    pub cells: BTreeMap<Cell, CellScores>,
}

impl EvalReport {
    pub fn cell(&self, pos: PosClass, seen: Seen) -> Option<&CellScores> {
        self.cells.get(&Cell { pos, seen })
    }

    /// Mean BLEU and use rate per cell over runs with different seeds;
    /// counts are summed. A cell is averaged over the runs that have it.
    pub fn average(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::invalid("nothing to average"))?;
        if let Some(r) = reports.iter().find(|r| r.strategy != first.strategy) {
            return Err(Error::invalid(format!(
                "cannot average strategies {} and {}",
                first.strategy, r.strategy
            )));
        }
        let mut cells = BTreeMap::new();
        for cell in Cell::all() {
            let present: Vec<&CellScores> = reports.iter().filter_map(|r| r.cells.get(&cell)).collect();
            if present.is_empty() {
                continue;
            }
            let k = present.len() as f64;
            cells.insert(
                cell,
                CellScores {
                    bleu: present.iter().map(|c| c.bleu).sum::<f64>() / k,
                    term_use_rate: present.iter().map(|c| c.term_use_rate).sum::<f64>() / k,
                    n_constrained: present.iter().map(|c| c.n_constrained).sum(),
                    n_matched: present.iter().map(|c| c.n_matched).sum(),
                    n_placeholder_emitted: present.iter().map(|c| c.n_placeholder_emitted).sum(),
                },
            );
        }
        Ok(EvalReport {
            strategy: first.strategy.clone(),
            seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
            cells,
        })
    }
}

/// Strategies as rows, cells as `BLEU / use%` columns; absent cells show `-`.
pub fn render_table(reports: &[EvalReport]) -> String {
    let cells: Vec<Cell> = Cell::all().collect();
    let name_w = reports
        .iter()
        .map(|r| r.strategy.len())
        .chain(["strategy".len()])
        .max()
        .unwrap_or(8);
    let mut out = format!("{:<name_w$}", "strategy");
    for c in &cells {
        out.push_str(&format!("  {:>15}", c.to_string()));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{:<name_w$}", r.strategy));
        for c in &cells {
            let v = match r.cells.get(c) {
                Some(s) => format!("{:.1} / {:.1}", s.bleu, 100.0 * s.term_use_rate),
                None => "-".to_string(),
            };
            out.push_str(&format!("  {v:>15}"));
        }
        out.push('\n');
    }
    out
}

/// Writes `<stem>.json` (all reports) and `<stem>.txt` (rendered table).
pub fn save_reports(dir: &Path, stem: &str, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(reports)?;
    std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    let txt = dir.join(format!("{stem}.txt"));
    std::fs::write(&txt, render_table(reports)).map_err(|e| Error::io(&txt, e))
}

pub fn load_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
