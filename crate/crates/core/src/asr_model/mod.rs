//! Attention-based sequence-to-sequence recognizer whose feature front end
//! runs inside the differentiation graph.

mod model;
mod tokens;

pub use model::{sidecar, AsrInput, AsrModel, AsrModelConfig, Decoded, VARIANCE_FLOOR};
pub use tokens::{TokenSequence, Vocabulary, DIGIT_WORDS, EOS_TOKEN, UNK_TOKEN};
