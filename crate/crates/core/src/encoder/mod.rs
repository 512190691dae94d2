//! Sequence encoders, tokenization and classifier heads.
//!
//! Strategies only talk to encoders through [`SequenceEncoder`] and
//! [`TrainableEncoder`]: tokenize, encode to per-token representations, and
//! expose trainable parameters with a backward pass from the first-token
//! representation. [`TinyEncoder`] is the built-in implementation; an adapter
//! around an external pre-trained checkpoint implements the same traits.

mod head;
mod optim;
mod tiny;
mod tokenizer;

pub use head::{ClassifierHead, HeadTape, DEFAULT_DROPOUT};
pub use optim::{Adam, ParameterSet, TensorRef};
pub use tiny::{TinyEncoder, TinyParams, TinyTape};
pub use tokenizer::{bucket_of, tokenize_truncate, TokenSequence, START_TOKEN};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::CleanText;

pub const DEFAULT_MAX_LENGTH: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("token id {id} out of range for a vocabulary of {vocab} entries")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid encoder configuration: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    ExternalPretrained,
    TinyReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn default_kind() -> EncoderKind {
    EncoderKind::TinyReference
}
fn default_width() -> usize {
    32
}
fn default_buckets() -> usize {
    4096
}
fn default_max_length() -> usize {
    DEFAULT_MAX_LENGTH
}
fn default_heads() -> usize {
    2
}
fn default_ff_width() -> usize {
    64
}
fn default_true() -> bool {
    true
}

/// Hashed-bucket vocabulary: id 0 is the sequence-start token, whitespace
/// tokens hash into `1..buckets`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    #[serde(default = "default_buckets")]
    pub buckets: usize,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            buckets: default_buckets(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    #[serde(default = "default_kind")]
    pub kind: EncoderKind,
    /// Hidden width `d`.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub vocab: VocabSpec,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_ff_width")]
    pub ff_width: usize,
    #[serde(default)]
    pub seed: u64,
    /// Update encoder weights during training; `false` trains heads only.
    #[serde(default = "default_true")]
    pub fine_tune: bool,
    /// Checkpoint name for external encoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kind: default_kind(),
            width: default_width(),
            vocab: VocabSpec::default(),
            max_length: default_max_length(),
            heads: default_heads(),
            ff_width: default_ff_width(),
            seed: 0,
            fine_tune: true,
            checkpoint: None,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidSpec(m));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            ));
        }
        if self.vocab.buckets < 2 {
            return bad(format!("need at least 2 buckets, got {}", self.vocab.buckets));
        }
        if self.max_length == 0 {
            return bad("max_length must be at least 1".into());
        }
        if self.ff_width == 0 {
            return bad("ff_width must be positive".into());
        }
        Ok(())
    }
}

/// Per-token representations of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub token_reps: Array2<f64>,
}

impl EncoderOutput {
    /// Representation at the sequence-start position.
    pub fn first_token_rep(&self) -> ArrayView1<'_, f64> {
        self.token_reps.row(0)
    }

    pub fn len(&self) -> usize {
        self.token_reps.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.token_reps.nrows() == 0
    }
}

/// Read-only side of an encoder.
pub trait SequenceEncoder: Send + Sync {
    fn spec(&self) -> &EncoderSpec;

    fn width(&self) -> usize {
        self.spec().width
    }

    fn tokenize(&self, text: &CleanText) -> TokenSequence;

    /// Evaluation-mode forward pass. Identical inputs give identical outputs.
    fn encode(&self, tokens: &TokenSequence) -> Result<EncoderOutput, EncoderError>;
}

/// An encoder that can be fine-tuned through its first-token representation.
pub trait TrainableEncoder: SequenceEncoder + ParameterSet + Clone {
    type Tape;
    type Gradients: ParameterSet;

    fn forward_train(
        &self,
        tokens: &TokenSequence,
    ) -> Result<(EncoderOutput, Self::Tape), EncoderError>;

    /// Accumulates parameter gradients given d(loss)/d(first-token rep).
    fn backward(&self, tape: &Self::Tape, d_first: ArrayView1<'_, f64>, grads: &mut Self::Gradients);

    fn zero_gradients(&self) -> Self::Gradients;
}
