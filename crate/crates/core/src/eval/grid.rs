//! Runs strategies over the (POS class x seen/unseen) test configurations.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::bleu::{bleu, contains_term};
use super::report::{Cell, CellScores, EvalReport, Seen};
use super::AnnotationRow;
use crate::align::{DictSplit, Dictionary};
use crate::augment::{ConstraintAnnotation, ConstraintSelector, InflectionLexicon, Thresholds};
use crate::data::ParallelExample;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, Strategy, Translator};

/// Test pairs of one cell with the constraint chosen for each.
#[derive(Clone, Debug)]
pub struct CellSet {
    pub cell: Cell,
    pub items: Vec<(ParallelExample, ConstraintAnnotation)>,
}

/// Assigns test pairs to cells: a pair belongs to a cell when an entry of
/// that cell's dictionary matches it (no frequency threshold). A pair may
/// land in several cells; empty cells are omitted.
pub fn build_cells(test: &[ParallelExample], split: &DictSplit, lex: &InflectionLexicon) -> Vec<CellSet> {
    let mut out = Vec::new();
    for cell in Cell::all() {
        let source = match cell.seen {
            Seen::Seen => &split.seen,
            Seen::Unseen => &split.unseen,
        };
        let dict = Dictionary::new(source.of_class(cell.pos).cloned().collect());
        let selector = ConstraintSelector::new(&dict, &Thresholds::unlimited());
        let items: Vec<_> = test
            .iter()
            .filter_map(|ex| selector.select(ex, lex).map(|c| (ex.clone(), c)))
            .collect();
        if !items.is_empty() {
            out.push(CellSet { cell, items });
        }
    }
    out
}

/// One translated test sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOutput {
    pub strategy: Strategy,
    pub cell: Cell,
    pub pair_id: usize,
    pub hypothesis: String,
    pub placeholder_count: usize,
    pub matched: bool,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub reports: Vec<EvalReport>,
    pub outputs: Vec<GridOutput>,
}

impl GridResult {
    pub fn report(&self, strategy: Strategy) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.strategy == strategy.as_str())
    }

    /// Rows for an annotation sheet for one strategy.
    pub fn annotation_rows(&self, strategy: Strategy, cells: &[CellSet]) -> Vec<AnnotationRow> {
        let lookup: HashMap<(Cell, usize), &(ParallelExample, ConstraintAnnotation)> = cells
            .iter()
            .flat_map(|c| c.items.iter().map(move |it| ((c.cell, it.0.id), it)))
            .collect();
        self.outputs
            .iter()
            .filter(|o| o.strategy == strategy)
            .filter_map(|o| {
                let (ex, c) = lookup.get(&(o.cell, o.pair_id))?;
                Some(AnnotationRow {
                    source: ex.src_tokens.join(" "),
                    reference: ex.tgt_tokens.join(" "),
                    hypothesis: o.hypothesis.clone(),
                    constraint: format!("{} -> {} ({})", c.lemma().join(" "), c.reference_surface.join(" "), c.pos()),
                })
            })
            .collect()
    }
}

/// Ban-set class of a strategy; sources decoded under the same class and
/// model give the same word output.
fn decode_class(s: Strategy) -> u8 {
    match s {
        Strategy::None | Strategy::Cs => 0,
        Strategy::PhMorph => 1,
        _ => 2,
    }
}

/// Translates every cell with every `(strategy, model)` pair and scores it.
pub fn run_grid(
    models: &[(Strategy, &ModelBundle)],
    lexicon: &InflectionLexicon,
    cells: &[CellSet],
    beam: usize,
    seed: u64,
) -> Result<GridResult> {
    if models.is_empty() {
        return Err(Error::invalid("no strategies to evaluate"));
    }
    let mut reports = Vec::with_capacity(models.len());
    let mut outputs = Vec::new();
    // word outputs shared by strategies that decode the same prepared source
    let mut cache: HashMap<(usize, u8, Vec<String>), Vec<String>> = HashMap::new();
    for &(strategy, bundle) in models {
        let tr = Translator::new(bundle, Some(lexicon), beam);
        let model_key = bundle as *const ModelBundle as usize;
        let mut cell_scores = BTreeMap::new();
        for set in cells {
            let prepared: Vec<Vec<String>> = set
                .items
                .iter()
                .map(|(ex, c)| tr.prepare_source(&ex.src_tokens, Some(c), strategy))
                .collect::<Result<_>>()?;
            let key = |p: &Vec<String>| (model_key, decode_class(strategy), p.clone());
            let missing: Vec<Vec<String>> = {
                let mut seen = std::collections::HashSet::new();
                prepared
                    .iter()
                    .filter(|p| !cache.contains_key(&key(p)) && seen.insert((*p).clone()))
                    .cloned()
                    .collect()
            };
            for chunk in missing.chunks(128) {
                let words = tr.decode_words(chunk, strategy)?;
                for (p, w) in chunk.iter().zip(words) {
                    cache.insert(key(p), w);
                }
            }
            let mut hyps = Vec::with_capacity(set.items.len());
            let mut refs = Vec::with_capacity(set.items.len());
            let (mut matched, mut emitted) = (0, 0);
            for ((ex, c), p) in set.items.iter().zip(&prepared) {
                let words = &cache[&key(p)];
                let t = tr.finish(words, Some(c), strategy)?;
                let hit = contains_term(&t.hypothesis, &c.reference_surface);
                let placeholder = match c.pos() {
                    crate::align::PosClass::Noun => crate::data::specials::NOUN_STR,
                    crate::align::PosClass::Verb => crate::data::specials::VERB_STR,
                };
                if words.iter().any(|w| w == placeholder) {
                    emitted += 1;
                }
                matched += usize::from(hit);
                outputs.push(GridOutput {
                    strategy,
                    cell: set.cell,
                    pair_id: ex.id,
                    hypothesis: t.hypothesis.clone(),
                    placeholder_count: t.placeholder_count,
                    matched: hit,
                });
                hyps.push(t.hypothesis);
                refs.push(ex.tgt_tokens.join(" "));
            }
            let n = set.items.len();
            cell_scores.insert(
                set.cell,
                CellScores {
                    bleu: bleu(&hyps, &refs)?,
                    term_use_rate: matched as f64 / n as f64,
                    n_constrained: n,
                    n_matched: matched,
                    n_placeholder_emitted: emitted,
                },
            );
        }
        reports.push(EvalReport {
            strategy: strategy.as_str().to_string(),
            seeds: vec![seed],
            cells: cell_scores,
        });
    }
    Ok(GridResult { reports, outputs })
}
