// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod closed_form;
pub mod experiments;
pub mod oracle;
pub mod params;
pub mod selftest;
