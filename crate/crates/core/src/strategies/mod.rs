//! The four training strategies, their losses, and prediction.
//!
//! * `MLC`: one encoder and one five-logit head trained on all labels at once.
//! * `MTL`: one shared encoder with a coarse head and four fine heads, trained
//!   with the gated multi-task objective.
//! * `BC`: five independent encoder+head units; the fine units only see
//!   hostile posts.
//! * `AUX`: like `BC`, but the trained coarse unit's raw logit is appended to
//!   every fine unit's first-token representation. The coarse unit is frozen
//!   while the fine units train.

mod loss;
mod persist;
mod predict;
mod train;

pub use loss::{
    aux_fuse, bce, bce_grad, mlc_batch_loss, mlc_grad, mlc_loss, mlc_targets, mtl_grad, mtl_loss,
    sigmoid, MLC_ORDER, MTL_FINE_ORDER,
};
pub use persist::{
    load_bundle, save_bundle, write_history, BundleMetadata, EncoderMetadata, HeadMetadata, TensorMetadata,
    UnitMetadata,
};
pub use predict::{predict, write_predictions, FineProbabilities, Prediction, PredictionSet};
pub use train::{
    train, train_with_encoder, train_with_observer, BatchInfo, NoopObserver, StageInfo, TrainObserver,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dimension};
use crate::encoder::{ClassifierHead, EncoderError, EncoderSpec, SequenceEncoder, DEFAULT_DROPOUT};
use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no hostile posts in the training split; the {0} stage cannot train")]
    EmptyHostileSubset(Role),
    #[error("empty training split")]
    EmptyTrainingSet,
    #[error("non-finite loss in {task} stage, epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss {
        task: String,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("non-hostile post `{id}` reached the {task} fine-grained stage")]
    NonHostileInFineStage { task: String, id: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("bundle format error: {0}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "MLC", alias = "mlc")]
    Mlc,
    #[serde(rename = "MTL", alias = "mtl")]
    Mtl,
    #[serde(rename = "BC", alias = "bc")]
    Bc,
    #[serde(rename = "AUX", alias = "aux")]
    Aux,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Mlc, Strategy::Mtl, Strategy::Bc, Strategy::Aux];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mlc => "MLC",
            Strategy::Mtl => "MTL",
            Strategy::Bc => "BC",
            Strategy::Aux => "AUX",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| StrategyError::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// What an encoder+head unit predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Joint,
    Coarse,
    Fake,
    Hate,
    Offensive,
    Defamation,
}

impl Role {
    pub const FINE: [Role; 4] = [Role::Fake, Role::Hate, Role::Offensive, Role::Defamation];

    pub fn name(self) -> &'static str {
        match self {
            Role::Joint => "joint",
            Role::Coarse => "coarse",
            Role::Fake => "fake",
            Role::Hate => "hate",
            Role::Offensive => "offensive",
            Role::Defamation => "defamation",
        }
    }

    /// The label dimension a single-output unit predicts.
    pub fn dimension(self) -> Option<Dimension> {
        match self {
            Role::Joint => None,
            Role::Coarse => Some(Dimension::Hostile),
            Role::Fake => Some(Dimension::Fake),
            Role::Hate => Some(Dimension::Hate),
            Role::Offensive => Some(Dimension::Offensive),
            Role::Defamation => Some(Dimension::Defamation),
        }
    }

    pub fn for_dimension(dim: Dimension) -> Role {
        match dim {
            Dimension::Hostile => Role::Coarse,
            Dimension::Fake => Role::Fake,
            Dimension::Hate => Role::Hate,
            Dimension::Offensive => Role::Offensive,
            Dimension::Defamation => Role::Defamation,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_learning_rate() -> f64 {
    1e-5
}
fn default_batch_size() -> usize {
    16
}
fn default_epochs() -> usize {
    10
}
fn default_lambda_fine() -> f64 {
    0.5
}
fn default_threshold() -> f64 {
    0.5
}
fn default_patience() -> usize {
    3
}
fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda_fine")]
    pub lambda_fine: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub encoder: EncoderSpec,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        StrategyConfig {
            strategy,
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            seed: 0,
            lambda_fine: default_lambda_fine(),
            threshold: default_threshold(),
            encoder: EncoderSpec::default(),
            patience: default_patience(),
            dropout: default_dropout(),
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |m: String| Err(StrategyError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lambda_fine >= 0.0 && self.lambda_fine.is_finite()) {
            return bad(format!("lambda_fine must be >= 0, got {}", self.lambda_fine));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        self.encoder.validate()?;
        Ok(())
    }
}

/// One classifier head attached to one of the bundle's encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub role: Role,
    /// Index into [`TrainedBundle::encoders`].
    pub encoder: usize,
    pub head: ClassifierHead,
    /// Unit whose raw logit is appended to this unit's representation.
    pub fused_from: Option<Role>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub loss: f64,
    pub weighted_f1: f64,
}

/// Everything a strategy produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedBundle<E> {
    pub strategy: Strategy,
    pub config: StrategyConfig,
    pub encoders: Vec<E>,
    pub units: Vec<Unit>,
    pub history: Vec<HistoryRecord>,
}

impl<E: SequenceEncoder> TrainedBundle<E> {
    pub fn unit(&self, role: Role) -> Option<&Unit> {
        self.units.iter().find(|u| u.role == role)
    }

    pub fn encoder_for(&self, role: Role) -> Option<&E> {
        self.unit(role).map(|u| &self.encoders[u.encoder])
    }

    /// Checks the unit layout each strategy must have.
    pub fn check_architecture(&self) -> Result<(), StrategyError> {
        let err = |m: String| Err(StrategyError::Shape(format!("{} bundle: {m}", self.strategy)));
        if self.encoders.is_empty() {
            return err("no encoders".into());
        }
        for u in &self.units {
            if u.encoder >= self.encoders.len() {
                return err(format!("unit {} points at missing encoder {}", u.role, u.encoder));
            }
        }
        let width = |u: &Unit| self.encoders[u.encoder].width();
        let expect_roles = |roles: &[Role]| -> Result<(), StrategyError> {
            let mut got: Vec<Role> = self.units.iter().map(|u| u.role).collect();
            let mut want = roles.to_vec();
            got.sort();
            want.sort();
            if got != want {
                return err(format!("units {got:?}, expected {want:?}"));
            }
            Ok(())
        };
        let all_five = [
            Role::Coarse,
            Role::Fake,
            Role::Hate,
            Role::Offensive,
            Role::Defamation,
        ];
        match self.strategy {
            Strategy::Mlc => {
                expect_roles(&[Role::Joint])?;
                let u = &self.units[0];
                if self.encoders.len() != 1 || u.head.outputs() != 5 || u.head.input_width() != width(u) {
                    return err("expected one encoder and one 5-output head".into());
                }
            }
            Strategy::Mtl => {
                expect_roles(&all_five)?;
                if self.encoders.len() != 1 {
                    return err(format!("expected one shared encoder, found {}", self.encoders.len()));
                }
                for u in &self.units {
                    if u.head.outputs() != 1 || u.head.input_width() != width(u) || u.fused_from.is_some() {
                        return err(format!("head {} must map width d to one logit", u.role));
                    }
                }
            }
            Strategy::Bc | Strategy::Aux => {
                expect_roles(&all_five)?;
                if self.encoders.len() != 5 {
                    return err(format!("expected 5 encoders, found {}", self.encoders.len()));
                }
                let mut used: Vec<usize> = self.units.iter().map(|u| u.encoder).collect();
                used.sort();
                used.dedup();
                if used.len() != 5 {
                    return err("units must not share encoders".into());
                }
                for u in &self.units {
                    let fused = self.strategy == Strategy::Aux && u.role != Role::Coarse;
                    let want_width = width(u) + fused as usize;
                    let want_fused = fused.then_some(Role::Coarse);
                    if u.head.outputs() != 1 || u.head.input_width() != want_width || u.fused_from != want_fused {
                        return err(format!(
                            "unit {} must have input width {want_width}, one output, fused_from {want_fused:?}",
                            u.role
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
