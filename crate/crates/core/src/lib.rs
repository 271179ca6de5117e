//! Cellular traffic forecasting: CDR ingest and binning, k-means clustering
//! of cells by daily profile, recurrent network training (LSTM and GRU written
//! from scratch), and the statistics used to compare the resulting models.

// Negated comparisons are how NaN gets rejected; index loops read closer to the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cluster;
pub mod ingest;
pub mod numfmt;
pub mod pipeline;
pub mod prep;
pub mod rnn;
pub mod seeding;
pub mod stats;
pub mod synth;
pub mod train;
