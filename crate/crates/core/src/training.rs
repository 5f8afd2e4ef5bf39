//! Adam, the minibatch epoch loop with early stopping on validation
//! Recall@1, and the training-set-size sweep.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::encoders::{Architecture, EncoderConfig, Nonlinearity};
use crate::error::{Error, Result};
use crate::numerics::{HasParameters, Matrix, Parameter};
use crate::ranking::{rank_all_encoded, recall_at_k, EncodedInstance};
use crate::scorer::{DualEncoderModel, EncodedPair};
use crate::text::{encode, tokenize, EmbeddingMatrix, Keep, Vocabulary, DEFAULT_MAX_LEN};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    /// First and second moments, one pair per parameter, created on the
    /// first step.
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(alpha: f64) -> Self {
        AdamState {
            alpha,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(DEFAULT_LEARNING_RATE)
    }
}

/// One Adam update of `params` from their accumulated gradients.
///
/// All gradients are checked for finiteness before anything is modified.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState) -> Result<()> {
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    if state.m.is_empty() {
        state.m = params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} moment tensors", state.m.len()),
            format!("{} parameters", params.len()),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].shape() != p.value.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{:?}", state.m[i].shape()),
                format!("{} {:?}", p.name, p.value.shape()),
            ));
        }
    }

    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        let g = p.grad.as_slice().to_vec();
        let theta = p.value.as_mut_slice();
        for j in 0..theta.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            theta[j] -= state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Candidates per validation instance.
    pub eval_candidates: usize,
    pub shared_encoders: bool,
    pub freeze_embeddings: bool,
    pub learning_rate: f64,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 10,
            patience: 1,
            seed: 0,
            eval_candidates: 10,
            shared_encoders: true,
            freeze_embeddings: false,
            learning_rate: DEFAULT_LEARNING_RATE,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.eval_candidates < 2 {
            return Err(Error::Config("eval_candidates must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.max_len < 1 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub recall_at_1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_recall(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?).map(|r| r.recall_at_1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,recall@1,seconds\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.3}", r.epoch, r.loss, r.recall_at_1, r.seconds);
        }
        out
    }
}

/// Tracks the best validation score and decides when to stop.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: None,
            stale: 0,
        }
    }

    /// Records one epoch's score; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, best)) if score <= best => {
                self.stale += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

pub fn encode_examples(examples: &[Example], vocab: &Vocabulary, max_len: usize) -> Vec<EncodedPair> {
    examples
        .iter()
        .map(|ex| EncodedPair {
            context: encode(&tokenize(&ex.context), vocab, max_len, Keep::Tail),
            response: encode(&tokenize(&ex.response), vocab, max_len, Keep::Head),
            flag: ex.flag,
        })
        .collect()
}

pub fn encode_instances(
    instances: &[crate::corpus::RankingInstance],
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<EncodedInstance> {
    instances
        .iter()
        .map(|i| EncodedInstance::encode(i, vocab, max_len))
        .collect()
}

/// 1-in-n Recall@1 of `model` on encoded instances.
pub fn validation_recall(model: &DualEncoderModel, instances: &[EncodedInstance]) -> Result<f64> {
    recall_at_k(&rank_all_encoded(instances, model)?, 1)
}

/// Trains until validation Recall@1 stops improving for `patience` epochs
/// or `max_epochs` is reached, returning the best-epoch parameters.
pub fn train(
    mut model: DualEncoderModel,
    train_set: &[EncodedPair],
    valid: &[EncodedInstance],
    config: &TrainConfig,
) -> Result<(DualEncoderModel, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    if valid.is_empty() {
        return Err(Error::validation("empty validation set"));
    }
    if let Some(bad) = valid.iter().find(|i| i.n() != config.eval_candidates) {
        return Err(Error::validation(format!(
            "validation instance has {} candidates, expected {}",
            bad.n(),
            config.eval_candidates
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut history = TrainHistory::default();
    let mut batch: Vec<EncodedPair> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let loss = model.loss_and_gradients(&batch)?;
            loss_sum += loss * chunk.len() as f64;
            let mut params = model.parameters_mut();
            if config.freeze_embeddings {
                params.remove(0);
            }
            adam_step(&mut params, &mut adam)?;
        }
        let recall = validation_recall(&model, valid)?;
        history.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            recall_at_1: recall,
            seconds: start.elapsed().as_secs_f64(),
        });
        if stopper.observe(epoch, recall) {
            best = model.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch().unwrap_or(1);
    Ok((best, history))
}

/// Everything needed to build a fresh model apart from its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub embedding_dim: usize,
    pub hidden: usize,
    /// (width, count) pairs for the CNN.
    pub filters: Vec<(usize, usize)>,
    pub nonlinearity: Nonlinearity,
    pub shared: bool,
    /// Starting embeddings; random when absent.
    pub embeddings: Option<EmbeddingMatrix>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            embedding_dim: 300,
            hidden: 200,
            filters: vec![(2, 400), (3, 100), (4, 100)],
            nonlinearity: Nonlinearity::Relu,
            shared: true,
            embeddings: None,
        }
    }
}

impl ModelSpec {
    pub fn encoder_config(&self, architecture: Architecture) -> EncoderConfig {
        match architecture {
            Architecture::Cnn => EncoderConfig::Cnn {
                filters: self.filters.clone(),
                nonlinearity: self.nonlinearity,
            },
            Architecture::Lstm => EncoderConfig::Lstm { hidden: self.hidden },
            Architecture::BiLstm => EncoderConfig::BiLstm { hidden: self.hidden },
        }
    }

    pub fn build(&self, architecture: Architecture, vocab_size: usize, seed: u64) -> Result<DualEncoderModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = match &self.embeddings {
            Some(e) if e.vocab_size() != vocab_size => {
                return Err(Error::validation(format!(
                    "embedding table has {} rows, vocabulary has {vocab_size}",
                    e.vocab_size()
                )))
            }
            Some(e) => e.clone(),
            None => EmbeddingMatrix::random(vocab_size, self.embedding_dim, &mut rng),
        };
        DualEncoderModel::new(embeddings, &self.encoder_config(architecture), self.shared, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub architecture: Architecture,
    pub size: usize,
    pub recall_at_1: f64,
    pub best_epoch: usize,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("architecture,size,recall@1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6}", r.architecture, r.size, r.recall_at_1);
    }
    out
}

/// Trains a fresh model for every (architecture, size) pair on the first
/// `size` examples of one seeded shuffle and scores 1-in-n Recall@1 on
/// `test`. Smaller training sets are prefixes of larger ones.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    sizes: &[usize],
    examples: &[EncodedPair],
    valid: &[EncodedInstance],
    test: &[EncodedInstance],
    vocab_size: usize,
    spec: &ModelSpec,
    architectures: &[Architecture],
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(Error::validation("no sweep sizes given"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("sweep sizes must be strictly ascending"));
    }
    if sizes[0] == 0 {
        return Err(Error::validation("sweep sizes must be positive"));
    }
    let largest = sizes[sizes.len() - 1];
    if largest > examples.len() {
        return Err(Error::validation(format!(
            "sweep size {largest} exceeds the {} available examples",
            examples.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::validation("empty sweep test set"));
    }

    let mut shuffled = examples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut rows = Vec::new();
    for &arch in architectures {
        for &size in sizes {
            let model = spec.build(arch, vocab_size, config.seed)?;
            let (model, history) = train(model, &shuffled[..size], valid, config)?;
            rows.push(SweepRow {
                architecture: arch,
                size,
                recall_at_1: validation_recall(&model, test)?,
                best_epoch: history.best_epoch,
            });
        }
    }
    Ok(rows)
}
