//! Joint dialogue-act labeling and abstractive dialogue summarization.
//!
//! The pipeline reads speaker-annotated transcripts, cuts them into
//! whole-utterance windows, and trains a BLSTM encoder shared by a
//! dialogue-act labeler and an attentional summary decoder. A sentence gate
//! couples the two tasks through the decoder's averaged attention context.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
