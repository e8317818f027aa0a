// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod curve;
pub mod density;
pub mod deterioration;
pub mod error;
pub mod inequality;
pub mod synthetic;
