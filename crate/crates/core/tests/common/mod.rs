#![allow(dead_code)]

pub mod bleu_oracle;
pub mod gradcheck;
pub mod gradsuite;
