//! Metrics and reporting.

mod annotate;
mod bleu;
mod grid;
mod report;

pub use annotate::{sample_for_annotation, write_annotation_sheet, AnnotationRow, DEFAULT_SAMPLE};
pub use bleu::{bleu, contains_term, term_use_rate, tokenize_13a, BleuStats, MAX_ORDER};
pub use grid::{build_cells, run_grid, CellSet, GridOutput, GridResult};
pub use report::{load_reports, render_table, save_reports, Cell, CellScores, EvalReport, Seen};
