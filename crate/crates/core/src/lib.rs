// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod encoder;
pub mod evaluation;
pub mod numerics;
pub mod pipeline;
pub mod tokenizer;
pub mod toy;
pub mod training;
pub mod transtokenizer;
