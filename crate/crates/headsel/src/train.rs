//! Training: hyperparameter configuration, seeded initialization, the
//! head-selection loop with dev-set model selection, and the
//! frozen-encoder labeler loop.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Treebank, Vocabulary};
use crate::decoder::DecodeMode;
use crate::encoder::{load_pretrained_embeddings, encode_sentence, EncoderError};
use crate::eval::{attachment_scores, EvalError, EvalOptions};
use crate::labeler::{generate_label_training_data, LabelerError};
use crate::model::{ModelBundle, ModelError, ParseOptions};
use crate::numeric::{
    clip_global_norm, AdamHyper, AdamState, Mode, NumericError, ParamGrads, Real, Tape, Tensor,
};
use crate::scorer::{head_nll, score_arcs, ScorerError, SelectorVariant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected key<TAB>value")]
    Malformed { line: usize },
    #[error("config key {key}: cannot parse value {value:?}")]
    BadValue { key: String, value: String },
    #[error("config key {key} is unknown")]
    UnknownKey { key: String },
    #[error("config is missing key {key}")]
    MissingKey { key: String },
    #[error("config rejected: {msg}")]
    Invalid { msg: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss is not finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("training treebank is empty")]
    EmptyTreebank,
    #[error("sentence {sentence} has no gold heads")]
    MissingGold { sentence: usize },
    #[error("model has no labeler: enable `labeled` before training one")]
    NoLabeler,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Labeler(#[from] LabelerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Every knob of the pipeline. `hidden_dim` is the per-direction LSTM
/// state width, `word_dim`/`tag_dim` the embedding widths. The two
/// ablation switches keep the published formulation reachable:
/// `self_arcs` scores each word as its own head candidate instead of
/// excluding it, and `log_arc_weights = false` hands the repair decoders
/// raw probabilities instead of log probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub word_dim: usize,
    pub tag_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: Option<usize>,
    pub seed: u64,
    pub pretrained: Option<PathBuf>,
    pub min_count: u64,
    pub lowercase: bool,
    pub decode_mode: DecodeMode,
    pub selector: SelectorVariant,
    pub log_arc_weights: bool,
    pub forget_bias_one: bool,
    pub labeled: bool,
    pub label_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            word_dim: 300,
            tag_dim: 30,
            hidden_dim: 300,
            layers: 2,
            dropout: 0.5,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip: 5.0,
            batch_size: 16,
            max_epochs: 30,
            patience: Some(5),
            seed: 1,
            pretrained: None,
            min_count: 1,
            lowercase: true,
            decode_mode: DecodeMode::Projective,
            selector: SelectorVariant::ExcludeSelf,
            log_arc_weights: true,
            forget_bias_one: true,
            labeled: false,
            label_hidden: 100,
        }
    }
}

impl TrainConfig {
    /// Small dimensions and a long, patience-free epoch budget for
    /// memorization tests on toy data.
    pub fn toy() -> Self {
        TrainConfig {
            word_dim: 32,
            tag_dim: 16,
            hidden_dim: 32,
            layers: 2,
            dropout: 0.0,
            max_epochs: 100,
            patience: None,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let reject = |msg: &str| Err(ConfigError::Invalid { msg: msg.to_string() });
        if self.word_dim == 0 || self.tag_dim == 0 || self.hidden_dim == 0 {
            return reject("dimensions must be positive");
        }
        if self.layers == 0 {
            return reject("at least one layer");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return reject("dropout must lie in [0, 1)");
        }
        if self.lr <= 0.0 || self.clip <= 0.0 || self.epsilon <= 0.0 {
            return reject("lr, clip, and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return reject("momentum coefficients must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return reject("batch size and epoch budget must be positive");
        }
        if self.labeled && self.label_hidden == 0 {
            return reject("label hidden width must be positive");
        }
        Ok(())
    }

    /// Serialize as `key<TAB>value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('\t');
            out.push_str(&v);
            out.push('\n');
        };
        put("word_dim", self.word_dim.to_string());
        put("tag_dim", self.tag_dim.to_string());
        put("hidden_dim", self.hidden_dim.to_string());
        put("layers", self.layers.to_string());
        put("dropout", self.dropout.to_string());
        put("lr", self.lr.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("epsilon", self.epsilon.to_string());
        put("clip", self.clip.to_string());
        put("batch_size", self.batch_size.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put(
            "patience",
            self.patience.map_or("none".to_string(), |p| p.to_string()),
        );
        put("seed", self.seed.to_string());
        put(
            "pretrained",
            self.pretrained
                .as_ref()
                .map_or("none".to_string(), |p| p.display().to_string()),
        );
        put("min_count", self.min_count.to_string());
        put("lowercase", self.lowercase.to_string());
        put(
            "decode_mode",
            match self.decode_mode {
                DecodeMode::Projective => "projective".to_string(),
                DecodeMode::NonProjective => "nonprojective".to_string(),
            },
        );
        put(
            "selector",
            match self.selector {
                SelectorVariant::ExcludeSelf => "exclude_self".to_string(),
                SelectorVariant::IncludeSelf => "include_self".to_string(),
            },
        );
        put("log_arc_weights", self.log_arc_weights.to_string());
        put("forget_bias_one", self.forget_bias_one.to_string());
        put("labeled", self.labeled.to_string());
        put("label_hidden", self.label_hidden.to_string());
        out
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut map: HashMap<&str, &str> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or(ConfigError::Malformed { line: i + 1 })?;
            map.insert(k, v);
        }
        fn take<'a>(
            map: &mut HashMap<&str, &'a str>,
            key: &str,
        ) -> Result<&'a str, ConfigError> {
            map.remove(key)
                .ok_or_else(|| ConfigError::MissingKey { key: key.to_string() })
        }
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        macro_rules! field {
            ($key:literal, $ty:ty) => {{
                let v = take(&mut map, $key)?;
                parse::<$ty>($key, v)?
            }};
        }
        let config = TrainConfig {
            word_dim: field!("word_dim", usize),
            tag_dim: field!("tag_dim", usize),
            hidden_dim: field!("hidden_dim", usize),
            layers: field!("layers", usize),
            dropout: field!("dropout", f64),
            lr: field!("lr", f64),
            beta1: field!("beta1", f64),
            beta2: field!("beta2", f64),
            epsilon: field!("epsilon", f64),
            clip: field!("clip", f64),
            batch_size: field!("batch_size", usize),
            max_epochs: field!("max_epochs", usize),
            patience: match take(&mut map, "patience")? {
                "none" => None,
                v => Some(parse::<usize>("patience", v)?),
            },
            seed: field!("seed", u64),
            pretrained: match take(&mut map, "pretrained")? {
                "none" => None,
                v => Some(PathBuf::from(v)),
            },
            min_count: field!("min_count", u64),
            lowercase: field!("lowercase", bool),
            decode_mode: match take(&mut map, "decode_mode")? {
                "projective" => DecodeMode::Projective,
                "nonprojective" => DecodeMode::NonProjective,
                v => {
                    return Err(ConfigError::BadValue {
                        key: "decode_mode".to_string(),
                        value: v.to_string(),
                    })
                }
            },
            selector: match take(&mut map, "selector")? {
                "exclude_self" => SelectorVariant::ExcludeSelf,
                "include_self" => SelectorVariant::IncludeSelf,
                v => {
                    return Err(ConfigError::BadValue {
                        key: "selector".to_string(),
                        value: v.to_string(),
                    })
                }
            },
            log_arc_weights: field!("log_arc_weights", bool),
            forget_bias_one: field!("forget_bias_one", bool),
            labeled: field!("labeled", bool),
            label_hidden: field!("label_hidden", usize),
        };
        if let Some(key) = map.keys().next() {
            return Err(ConfigError::UnknownKey { key: key.to_string() });
        }
        config.validate()?;
        Ok(config)
    }
}

/// Register all parameter groups and fill them uniformly on [-0.1, 0.1]
/// from the seeded generator, in registration order. Forget-gate biases
/// are then pinned to 1 when configured, and pretrained word vectors
/// overlaid last.
pub fn initialize(config: &TrainConfig, vocab: Vocabulary) -> Result<ModelBundle, TrainError> {
    config.validate().map_err(ModelError::from)?;
    let mut bundle = ModelBundle::build(config.clone(), vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ids: Vec<_> = bundle.store.ids().collect();
    for id in ids {
        let shape = bundle.store.get(id).shape().to_vec();
        *bundle.store.get_mut(id) = Tensor::<f32>::uniform(&shape, -0.1, 0.1, &mut rng);
    }
    if config.forget_bias_one {
        bundle.stack.set_forget_biases(&mut bundle.store, 1.0);
    }
    if let Some(path) = &config.pretrained {
        let file = File::open(path)?;
        load_pretrained_embeddings(
            BufReader::new(file),
            &bundle.vocab,
            &bundle.tables,
            &mut bundle.store,
        )?;
    }
    Ok(bundle)
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence loss (heads) or per-arc loss (labeler).
    pub loss: f64,
    /// Greedy dev UAS for the head loop, dev LAS for the labeler loop.
    pub dev_score: f64,
}

/// `epoch<TAB>loss<TAB>dev_uas` lines.
pub fn format_log(records: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{}\t{:.4}\t{:.2}\n", r.epoch, r.loss, r.dev_score));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
}

fn greedy_parse(bundle: &ModelBundle, tb: &Treebank, with_labels: bool) -> Result<Treebank, TrainError> {
    let opts = ParseOptions {
        repair: false,
        with_labels,
        keep_distributions: false,
        ..ParseOptions::new(bundle.config.decode_mode)
    };
    Ok(bundle.parse_treebank(tb, &opts)?.0)
}

fn greedy_dev_uas(bundle: &ModelBundle, dev: &Treebank) -> Result<f64, TrainError> {
    let pred = greedy_parse(bundle, dev, false)?;
    Ok(attachment_scores(dev, &pred, &EvalOptions::default())?.uas)
}

fn greedy_dev_las(bundle: &ModelBundle, dev: &Treebank) -> Result<f64, TrainError> {
    let pred = greedy_parse(bundle, dev, true)?;
    Ok(attachment_scores(dev, &pred, &EvalOptions::default())?.las)
}

fn warn_long_sentences(tb: &Treebank) {
    if let Some(longest) = tb.sentences.iter().map(|s| s.len()).max() {
        if longest > 200 {
            eprintln!(
                "warning: longest training sentence has {longest} tokens; \
                 repair is cubic in sentence length"
            );
        }
    }
}

/// Optimize the embedding, encoder, and scorer parameters on `train`,
/// selecting the epoch with the best greedy dev UAS. The bundle ends up
/// holding that best snapshot.
pub fn train_heads(
    bundle: &mut ModelBundle,
    train: &Treebank,
    dev: &Treebank,
) -> Result<TrainOutcome, TrainError> {
    train_heads_observed(bundle, train, dev, &mut |_| {})
}

/// [`train_heads`] with a per-epoch callback for progress reporting.
pub fn train_heads_observed(
    bundle: &mut ModelBundle,
    train: &Treebank,
    dev: &Treebank,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTreebank);
    }
    warn_long_sentences(train);
    let config = bundle.config.clone();
    let gold: Vec<Vec<usize>> = train
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| s.heads().ok_or(TrainError::MissingGold { sentence: i + 1 }))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let hyper = AdamHyper {
        learning_rate: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
    };
    let mut adam = AdamState::new(&bundle.store, hyper);
    let mut grads = ParamGrads::zeros_like(&bundle.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut best_store = None;
    let mut streak = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.reset();
            let mut batch_loss = 0.0;
            for &si in chunk {
                let mut tape = Tape::new(&bundle.store);
                let enc = encode_sentence(
                    &mut tape,
                    &train.sentences[si],
                    &bundle.vocab,
                    &bundle.tables,
                    &bundle.stack,
                    config.dropout,
                    Mode::Train,
                    &mut rng,
                )?;
                let scores = score_arcs(&mut tape, &enc, &bundle.scorer)?;
                let loss = head_nll(&mut tape, &scores, &gold[si], config.selector)?;
                batch_loss += tape.value(loss).at(0).as_f64();
                tape.backward(loss, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NanLoss { epoch, batch: batch_idx + 1 });
            }
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            clip_global_norm(&mut grads, config.clip);
            adam.step(&mut bundle.store, &grads);
            epoch_loss += batch_loss;
        }
        let dev_score = greedy_dev_uas(bundle, dev)?;
        log.push(EpochRecord {
            epoch,
            loss: epoch_loss / train.len() as f64,
            dev_score,
        });
        on_epoch(log.last().unwrap());
        if best.is_none_or(|(s, _)| dev_score > s) {
            best = Some((dev_score, epoch));
            best_store = Some(bundle.store.clone());
            streak = 0;
        } else {
            streak += 1;
            if config.patience.is_some_and(|p| streak > p) {
                break;
            }
        }
    }
    bundle.store = best_store.expect("at least one epoch ran");
    let (best_score, best_epoch) = best.unwrap();
    Ok(TrainOutcome { log, best_epoch, best_score })
}

fn scale_grads<T: Real>(grads: &mut ParamGrads<T>, factor: f64) {
    let f = T::from_f64(factor);
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v = *v * f;
        }
    }
}

/// Optimize the labeler on gold-arc features extracted once from the
/// frozen encoder, selecting the epoch with the best greedy dev LAS.
/// Every non-labeler parameter is left bit-identical.
pub fn train_labeler(
    bundle: &mut ModelBundle,
    train: &Treebank,
    dev: &Treebank,
) -> Result<TrainOutcome, TrainError> {
    train_labeler_observed(bundle, train, dev, &mut |_| {})
}

/// [`train_labeler`] with a per-epoch callback for progress reporting.
pub fn train_labeler_observed(
    bundle: &mut ModelBundle,
    train: &Treebank,
    dev: &Treebank,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    let config = bundle.config.clone();
    let labeler = bundle.labeler.clone().ok_or(TrainError::NoLabeler)?;
    let examples = generate_label_training_data(
        &bundle.store,
        &bundle.vocab,
        &bundle.tables,
        &bundle.stack,
        train,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let hyper = AdamHyper {
        learning_rate: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.epsilon,
    };
    // Adam leaves a parameter untouched while its gradient stays exactly
    // zero, so stepping the whole store cannot move the frozen encoder.
    let mut adam = AdamState::new(&bundle.store, hyper);
    let mut grads = ParamGrads::zeros_like(&bundle.store);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut best_store = None;
    let mut streak = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.reset();
            let mut batch_loss = 0.0;
            for &ei in chunk {
                let mut tape = Tape::new(&bundle.store);
                let feature = tape.constant(examples[ei].feature.clone());
                let loss = labeler.nll(&mut tape, feature, examples[ei].label)?;
                batch_loss += tape.value(loss).at(0).as_f64();
                tape.backward(loss, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NanLoss { epoch, batch: batch_idx + 1 });
            }
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            clip_global_norm(&mut grads, config.clip);
            adam.step(&mut bundle.store, &grads);
            epoch_loss += batch_loss;
        }
        let dev_score = greedy_dev_las(bundle, dev)?;
        log.push(EpochRecord {
            epoch,
            loss: epoch_loss / examples.len() as f64,
            dev_score,
        });
        on_epoch(log.last().unwrap());
        if best.is_none_or(|(s, _)| dev_score > s) {
            best = Some((dev_score, epoch));
            best_store = Some(bundle.store.clone());
            streak = 0;
        } else {
            streak += 1;
            if config.patience.is_some_and(|p| streak > p) {
                break;
            }
        }
    }
    bundle.store = best_store.expect("at least one epoch ran");
    let (best_score, best_epoch) = best.unwrap();
    Ok(TrainOutcome { log, best_epoch, best_score })
}
