//! Constrained training and evaluation examples in the placeholder,
//! code-switching and morph-tag renderings.

mod lexicon;
mod render;
mod run;
mod select;

pub use lexicon::{parse_tag_token, tag_pos, tag_token, InflectionLexicon, FORM_TAGS};
pub use render::{
    apply_morph_postprocess, fill_placeholders, render_codeswitch, render_morphtag,
    render_placeholder, CodeSwitchForm,
};
pub use run::{
    augment_corpus, load_manifest, render_constraint, save_manifest, AugmentMode, AugmentOutput, AugmentSettings,
};
pub use select::{select_constraint, ConstraintAnnotation, ConstraintSelector, Thresholds};

pub(crate) use select::head_index as head_of;
