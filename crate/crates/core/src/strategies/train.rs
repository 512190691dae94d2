use log::{debug, info, warn};
use ndarray::{s, Array1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::predict::Prediction;
use super::{
    aux_fuse, bce, bce_grad, mlc_grad, mlc_loss, mlc_targets, mtl_grad, mtl_loss, sigmoid,
    FineProbabilities, HistoryRecord, Role, Strategy, StrategyConfig, StrategyError,
    TrainedBundle, Unit, MLC_ORDER, MTL_FINE_ORDER,
};
use crate::data::{hostile_subset, Corpus, Dimension, LabelSet, SplitBundle};
use crate::encoder::{
    Adam, ClassifierHead, EncoderError, EncoderSpec, Mode, ParameterSet, TinyEncoder,
    TokenSequence, TrainableEncoder,
};
use crate::metrics::{score_pairs, weighted_f1, EvalOptions, F1Mode, MetricsError, SupportSource};
use crate::textprep::clean_text;

/// One optimizer step's worth of training data.
#[derive(Debug)]
pub struct BatchInfo<'a> {
    pub task: &'a str,
    pub epoch: usize,
    pub batch: usize,
    pub ids: Vec<&'a str>,
    pub labels: Vec<LabelSet>,
    pub loss: f64,
}

/// Summary of a finished stage.
#[derive(Debug, Clone)]
pub struct StageInfo {
    pub task: String,
    pub roles: Vec<Role>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_examples: usize,
    /// Encoder then head parameters of the retained checkpoint, flattened in
    /// [`ParameterSet`] order.
    pub parameters: Vec<f64>,
}

/// Hooks into the training loop. Fine-grained stages of the binary
/// strategies run concurrently, so implementations must be `Sync`.
pub trait TrainObserver: Sync {
    fn on_batch(&self, _batch: &BatchInfo<'_>) {}
    fn on_stage_complete(&self, _stage: &StageInfo) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Trains the configured strategy with the built-in tiny encoder.
pub fn train(config: &StrategyConfig, splits: &SplitBundle) -> Result<TrainedBundle<TinyEncoder>, StrategyError> {
    train_with_observer(config, splits, &NoopObserver)
}

pub fn train_with_observer(
    config: &StrategyConfig,
    splits: &SplitBundle,
    observer: &dyn TrainObserver,
) -> Result<TrainedBundle<TinyEncoder>, StrategyError> {
    train_with_encoder(config, &splits.train, &splits.validation, TinyEncoder::new, observer)
}

/// Generic entry point: `init` builds one fresh encoder per unit from the
/// configured spec.
pub fn train_with_encoder<E, F>(
    config: &StrategyConfig,
    train: &Corpus,
    validation: &Corpus,
    init: F,
    observer: &dyn TrainObserver,
) -> Result<TrainedBundle<E>, StrategyError>
where
    E: TrainableEncoder,
    F: Fn(EncoderSpec) -> Result<E, EncoderError> + Sync,
{
    config.validate()?;
    if train.is_empty() {
        return Err(StrategyError::EmptyTrainingSet);
    }
    let new_encoder = || init(config.encoder.clone()).map_err(StrategyError::from);
    info!(
        "training {} on {} posts ({} validation)",
        config.strategy,
        train.len(),
        validation.len()
    );
    match config.strategy {
        Strategy::Mlc => {
            let encoder = new_encoder()?;
            let d = encoder.width();
            let stage = Stage::new("joint", Objective::Joint, encoder, vec![(d, 5)], Role::Joint);
            let out = stage.run(config, train, validation, None, observer)?;
            let head = out.heads.into_iter().next().expect("one head");
            Ok(TrainedBundle {
                strategy: config.strategy,
                config: config.clone(),
                encoders: vec![out.encoder],
                units: vec![Unit {
                    role: Role::Joint,
                    encoder: 0,
                    head,
                    fused_from: None,
                }],
                history: out.history,
            })
        }
        Strategy::Mtl => {
            let encoder = new_encoder()?;
            let d = encoder.width();
            let objective = Objective::MultiTask {
                lambda: config.lambda_fine,
            };
            let stage = Stage::new("multi-task", objective, encoder, vec![(d, 1); 5], Role::Joint);
            let out = stage.run(config, train, validation, None, observer)?;
            let roles = std::iter::once(Role::Coarse).chain(MTL_FINE_ORDER.map(Role::for_dimension));
            let units = roles
                .zip(out.heads)
                .map(|(role, head)| Unit {
                    role,
                    encoder: 0,
                    head,
                    fused_from: None,
                })
                .collect();
            Ok(TrainedBundle {
                strategy: config.strategy,
                config: config.clone(),
                encoders: vec![out.encoder],
                units,
                history: out.history,
            })
        }
        Strategy::Bc | Strategy::Aux => {
            let fused = config.strategy == Strategy::Aux;
            let encoder = new_encoder()?;
            let d = encoder.width();
            let coarse = Stage::new("coarse", Objective::Binary(Dimension::Hostile), encoder, vec![(d, 1)], Role::Coarse)
                .run(config, train, validation, None, observer)?;

            let train_h = hostile_subset(train);
            if train_h.is_empty() {
                return Err(StrategyError::EmptyHostileSubset(Role::Fake));
            }
            let val_h = hostile_subset(validation);
            let aux = if fused {
                let coarse_head = &coarse.heads[0];
                Some((
                    frozen_logits(&coarse.encoder, coarse_head, &train_h)?,
                    frozen_logits(&coarse.encoder, coarse_head, &val_h)?,
                ))
            } else {
                None
            };
            let fine: Vec<StageOutput<E>> = Role::FINE
                .par_iter()
                .map(|&role| {
                    let dim = role.dimension().expect("fine role");
                    let encoder = new_encoder()?;
                    let width = encoder.width() + fused as usize;
                    let mut stage = Stage::new(role.name(), Objective::Binary(dim), encoder, vec![(width, 1)], role);
                    stage.hostile_only = true;
                    stage.run(config, &train_h, &val_h, aux.as_ref(), observer)
                })
                .collect::<Result<_, _>>()?;

            let mut encoders = vec![coarse.encoder];
            let mut units = vec![Unit {
                role: Role::Coarse,
                encoder: 0,
                head: coarse.heads.into_iter().next().expect("one head"),
                fused_from: None,
            }];
            let mut history = coarse.history;
            for (i, (role, out)) in Role::FINE.into_iter().zip(fine).enumerate() {
                encoders.push(out.encoder);
                units.push(Unit {
                    role,
                    encoder: i + 1,
                    head: out.heads.into_iter().next().expect("one head"),
                    fused_from: fused.then_some(Role::Coarse),
                });
                history.extend(out.history);
            }
            Ok(TrainedBundle {
                strategy: config.strategy,
                config: config.clone(),
                encoders,
                units,
                history,
            })
        }
    }
}

/// Raw coarse logits in evaluation mode, one per post.
fn frozen_logits<E: TrainableEncoder>(
    encoder: &E,
    head: &ClassifierHead,
    posts: &Corpus,
) -> Result<Vec<f64>, StrategyError> {
    posts
        .posts()
        .par_iter()
        .map(|p| {
            let out = encoder.encode(&encoder.tokenize(&clean_text(&p.text)))?;
            Ok(head.forward_eval(out.first_token_rep())?[0])
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    /// One five-logit head, classes in [`MLC_ORDER`].
    Joint,
    /// Coarse head followed by fine heads in [`MTL_FINE_ORDER`].
    MultiTask { lambda: f64 },
    Binary(Dimension),
}

impl Objective {
    /// Loss of one example and d(loss)/d(logits) per head.
    fn loss_and_grad(self, logits: &[Array1<f64>], labels: &LabelSet) -> Result<(f64, Vec<Array1<f64>>), StrategyError> {
        Ok(match self {
            Objective::Joint => {
                let l = logits[0].as_slice().expect("contiguous");
                let y = mlc_targets(labels);
                (mlc_loss(l, &y)?, vec![Array1::from(mlc_grad(l, &y)?.to_vec())])
            }
            Objective::MultiTask { lambda } => {
                let coarse = logits[0][0];
                let fine: [f64; 4] = std::array::from_fn(|n| logits[n + 1][0]);
                let loss = mtl_loss(coarse, &fine, labels, lambda);
                let (gc, gf) = mtl_grad(coarse, &fine, labels, lambda);
                let grads = std::iter::once(gc).chain(gf).map(|g| Array1::from(vec![g])).collect();
                (loss, grads)
            }
            Objective::Binary(dim) => {
                let y = labels.get(dim);
                (bce(logits[0][0], y), vec![Array1::from(vec![bce_grad(logits[0][0], y)])])
            }
        })
    }

    /// Task score used for logging and checkpoint selection.
    fn score(self, logits: &[Vec<Array1<f64>>], examples: &[Example], threshold: f64) -> Result<f64, StrategyError> {
        match self {
            Objective::Binary(dim) => {
                let preds: Vec<bool> = logits.iter().map(|l| sigmoid(l[0][0]) >= threshold).collect();
                let golds: Vec<bool> = examples.iter().map(|e| e.labels.get(dim)).collect();
                Ok(weighted_f1(&preds, &golds)?)
            }
            Objective::Joint | Objective::MultiTask { .. } => {
                let preds: Vec<Prediction> = logits
                    .iter()
                    .zip(examples)
                    .map(|(l, e)| {
                        let (coarse, fine) = self.probabilities(l);
                        Prediction::gated(e.id.clone(), coarse, fine, threshold)
                    })
                    .collect();
                let paired: Vec<_> = preds.iter().zip(examples).map(|(p, e)| (p, e.labels)).collect();
                let options = EvalOptions {
                    threshold,
                    f1_mode: F1Mode::Weighted,
                    supports: SupportSource::EvaluationSubset,
                };
                match score_pairs(&paired, &options) {
                    Ok(r) => Ok((r.hostile_f1 + r.weighted_fine_grained) / 2.0),
                    // Without gold-hostile examples only the coarse task can be scored.
                    Err(MetricsError::NoHostilePosts | MetricsError::ZeroSupport) => {
                        let preds: Vec<bool> = preds.iter().map(|p| p.coarse >= threshold).collect();
                        let golds: Vec<bool> = examples.iter().map(|e| e.labels.hostile).collect();
                        Ok(weighted_f1(&preds, &golds)?)
                    }
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    fn probabilities(self, logits: &[Array1<f64>]) -> (f64, FineProbabilities) {
        let mut fine = FineProbabilities::default();
        let mut coarse = 0.0;
        let mut put = |dim: Dimension, logit: f64| match dim {
            Dimension::Hostile => coarse = sigmoid(logit),
            Dimension::Fake => fine.fake = sigmoid(logit),
            Dimension::Hate => fine.hate = sigmoid(logit),
            Dimension::Offensive => fine.offensive = sigmoid(logit),
            Dimension::Defamation => fine.defamation = sigmoid(logit),
        };
        match self {
            Objective::Joint => {
                for (j, d) in MLC_ORDER.into_iter().enumerate() {
                    put(d, logits[0][j]);
                }
            }
            Objective::MultiTask { .. } => {
                put(Dimension::Hostile, logits[0][0]);
                for (n, d) in MTL_FINE_ORDER.into_iter().enumerate() {
                    put(d, logits[n + 1][0]);
                }
            }
            Objective::Binary(d) => put(d, logits[0][0]),
        }
        (coarse, fine)
    }
}

struct Example {
    id: String,
    tokens: TokenSequence,
    labels: LabelSet,
    aux: Option<f64>,
}

struct Stage<E> {
    task: String,
    objective: Objective,
    encoder: E,
    head_shapes: Vec<(usize, usize)>,
    role: Role,
    hostile_only: bool,
}

struct StageOutput<E> {
    encoder: E,
    heads: Vec<ClassifierHead>,
    history: Vec<HistoryRecord>,
}

struct Checkpoint<E> {
    epoch: usize,
    score: f64,
    loss: f64,
    encoder: E,
    heads: Vec<ClassifierHead>,
}

impl<E: TrainableEncoder> Stage<E> {
    fn new(task: &str, objective: Objective, encoder: E, head_shapes: Vec<(usize, usize)>, role: Role) -> Self {
        Stage {
            task: task.to_string(),
            objective,
            encoder,
            head_shapes,
            role,
            hostile_only: false,
        }
    }

    fn examples(&self, corpus: &Corpus, aux: Option<&Vec<f64>>) -> Result<Vec<Example>, StrategyError> {
        let labels = corpus.labels()?;
        if let Some(a) = aux {
            if a.len() != corpus.len() {
                return Err(StrategyError::Shape(format!(
                    "{} auxiliary logits for {} posts",
                    a.len(),
                    corpus.len()
                )));
            }
        }
        Ok(corpus
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (post, labels))| Example {
                id: post.id.clone(),
                tokens: self.encoder.tokenize(&clean_text(&post.text)),
                labels,
                aux: aux.map(|a| a[i]),
            })
            .collect())
    }

    fn head_input(rep: ndarray::ArrayView1<'_, f64>, aux: Option<f64>) -> Result<Array1<f64>, StrategyError> {
        match aux {
            Some(a) => aux_fuse(rep, &[a]),
            None => Ok(rep.to_owned()),
        }
    }

    /// Evaluation-mode logits for every example.
    fn logits(encoder: &E, heads: &[ClassifierHead], examples: &[Example]) -> Result<Vec<Vec<Array1<f64>>>, StrategyError> {
        examples
            .par_iter()
            .map(|ex| {
                let out = encoder.encode(&ex.tokens)?;
                let input = Self::head_input(out.first_token_rep(), ex.aux)?;
                heads
                    .iter()
                    .map(|h| h.forward_eval(input.view()).map_err(StrategyError::from))
                    .collect()
            })
            .collect()
    }

    fn assess(
        &self,
        encoder: &E,
        heads: &[ClassifierHead],
        examples: &[Example],
        threshold: f64,
    ) -> Result<(f64, f64), StrategyError> {
        let logits = Self::logits(encoder, heads, examples)?;
        let mut loss = 0.0;
        for (l, ex) in logits.iter().zip(examples) {
            loss += self.objective.loss_and_grad(l, &ex.labels)?.0;
        }
        let score = self.objective.score(&logits, examples, threshold)?;
        Ok((loss / examples.len() as f64, score))
    }

    fn run(
        mut self,
        config: &StrategyConfig,
        train: &Corpus,
        validation: &Corpus,
        aux: Option<&(Vec<f64>, Vec<f64>)>,
        observer: &dyn TrainObserver,
    ) -> Result<StageOutput<E>, StrategyError> {
        let train_ex = self.examples(train, aux.map(|a| &a.0))?;
        let val_ex = self.examples(validation, aux.map(|a| &a.1))?;
        if train_ex.is_empty() {
            return Err(match self.hostile_only {
                true => StrategyError::EmptyHostileSubset(self.role),
                false => StrategyError::EmptyTrainingSet,
            });
        }
        if val_ex.is_empty() {
            warn!("{}: empty validation set; keeping the final epoch", self.task);
        }

        // Independent, reproducible stream per unit for head init, shuffling
        // and dropout.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(self.role as u64);
        let mut heads = self
            .head_shapes
            .iter()
            .map(|&(w, k)| ClassifierHead::new(w, k, config.dropout, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;

        let fine_tune = config.encoder.fine_tune;
        let d = self.encoder.width();
        let mut adam = Adam::new(config.learning_rate);
        let mut enc_grads = self.encoder.zero_gradients();
        let mut head_grads: Vec<ClassifierHead> = heads.iter().map(|h| h.zeros_like()).collect();
        let mut order: Vec<usize> = (0..train_ex.len()).collect();
        let mut history = Vec::new();
        let mut best: Option<Checkpoint<E>> = None;
        let mut stale = 0;
        let mut epochs_run = 0;

        for epoch in 1..=config.epochs {
            epochs_run = epoch;
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                if self.hostile_only {
                    if let Some(ex) = chunk.iter().map(|&i| &train_ex[i]).find(|ex| !ex.labels.hostile) {
                        return Err(StrategyError::NonHostileInFineStage {
                            task: self.task.clone(),
                            id: ex.id.clone(),
                        });
                    }
                }
                enc_grads.fill_zero();
                head_grads.iter_mut().for_each(|g| g.fill_zero());
                let scale = 1.0 / chunk.len() as f64;
                let mut batch_loss = 0.0;
                for &i in chunk {
                    let ex = &train_ex[i];
                    let (out, tape) = self.encoder.forward_train(&ex.tokens)?;
                    let input = Self::head_input(out.first_token_rep(), ex.aux)?;
                    let mut logits = Vec::with_capacity(heads.len());
                    let mut tapes = Vec::with_capacity(heads.len());
                    for h in &heads {
                        let (l, t) = h.forward_tape(input.view(), Mode::Train, &mut rng)?;
                        logits.push(l);
                        tapes.push(t);
                    }
                    let (loss, d_logits) = self.objective.loss_and_grad(&logits, &ex.labels)?;
                    batch_loss += loss;
                    let mut d_input = Array1::<f64>::zeros(input.len());
                    for ((h, t), (dl, g)) in heads.iter().zip(&tapes).zip(d_logits.iter().zip(head_grads.iter_mut())) {
                        d_input += &h.backward(t, (dl * scale).view(), g);
                    }
                    if fine_tune {
                        // The fused coarse logit is frozen; only the
                        // representation part flows back.
                        self.encoder.backward(&tape, d_input.slice(s![..d]), &mut enc_grads);
                    }
                }
                batch_loss *= scale;
                if !batch_loss.is_finite() {
                    return Err(StrategyError::NonFiniteLoss {
                        task: self.task.clone(),
                        epoch,
                        batch: b,
                        loss: batch_loss,
                    });
                }
                observer.on_batch(&BatchInfo {
                    task: &self.task,
                    epoch,
                    batch: b,
                    ids: chunk.iter().map(|&i| train_ex[i].id.as_str()).collect(),
                    labels: chunk.iter().map(|&i| train_ex[i].labels).collect(),
                    loss: batch_loss,
                });
                epoch_loss += batch_loss * chunk.len() as f64;

                let mut params: Vec<&mut [f64]> = Vec::new();
                let mut grads: Vec<&[f64]> = Vec::new();
                let enc_refs = enc_grads.tensors();
                if fine_tune {
                    params.extend(self.encoder.tensors_mut());
                    grads.extend(enc_refs.iter().map(|t| t.data));
                }
                let head_refs: Vec<_> = head_grads.iter().map(|g| g.tensors()).collect();
                for (h, refs) in heads.iter_mut().zip(&head_refs) {
                    params.extend(h.tensors_mut());
                    grads.extend(refs.iter().map(|t| t.data));
                }
                adam.step(&mut params, &grads);
            }

            let train_loss = epoch_loss / train_ex.len() as f64;
            let (_, train_score) = self.assess(&self.encoder, &heads, &train_ex, config.threshold)?;
            history.push(self.record(epoch, "train", train_loss, train_score));
            debug!("{} epoch {epoch}: train loss {train_loss:.5}, F1 {train_score:.4}", self.task);

            if val_ex.is_empty() {
                continue;
            }
            let (val_loss, val_score) = self.assess(&self.encoder, &heads, &val_ex, config.threshold)?;
            history.push(self.record(epoch, "validation", val_loss, val_score));
            debug!("{} epoch {epoch}: validation loss {val_loss:.5}, F1 {val_score:.4}", self.task);

            let improved = match &best {
                None => true,
                Some(b) => val_score > b.score || (val_score == b.score && val_loss < b.loss),
            };
            if improved {
                best = Some(Checkpoint {
                    epoch,
                    score: val_score,
                    loss: val_loss,
                    encoder: self.encoder.clone(),
                    heads: heads.clone(),
                });
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    info!("{}: early stop after epoch {epoch}", self.task);
                    break;
                }
            }
        }

        let roles = self.roles();
        let (encoder, heads, best_epoch) = match best {
            Some(b) => (b.encoder, b.heads, b.epoch),
            None => (self.encoder, heads, epochs_run),
        };
        let mut parameters: Vec<f64> = encoder.tensors().iter().flat_map(|t| t.data.iter().copied()).collect();
        for h in &heads {
            parameters.extend(h.tensors().iter().flat_map(|t| t.data.iter().copied()));
        }
        observer.on_stage_complete(&StageInfo {
            task: self.task.clone(),
            roles,
            epochs_run,
            best_epoch,
            train_examples: train_ex.len(),
            parameters,
        });
        info!("{}: kept epoch {best_epoch} of {epochs_run}", self.task);
        Ok(StageOutput {
            encoder,
            heads,
            history,
        })
    }

    fn roles(&self) -> Vec<Role> {
        match self.objective {
            Objective::Joint => vec![Role::Joint],
            Objective::MultiTask { .. } => std::iter::once(Role::Coarse)
                .chain(MTL_FINE_ORDER.map(Role::for_dimension))
                .collect(),
            Objective::Binary(d) => vec![Role::for_dimension(d)],
        }
    }

    fn record(&self, epoch: usize, split: &str, loss: f64, weighted_f1: f64) -> HistoryRecord {
        HistoryRecord {
            epoch,
            split: split.to_string(),
            task: self.task.clone(),
            loss,
            weighted_f1,
        }
    }
}
