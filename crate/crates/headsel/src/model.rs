//! The trained artifact: every parameter group plus the vocabulary and
//! configuration, with binary save/load and the inference path from a
//! sentence to a repaired, optionally labeled parse.
//!
//! File layout: an 8-byte magic string, a little-endian u32 format
//! version, the configuration as a length-prefixed key-value text block,
//! the vocabulary tables, then each parameter tensor as (name, shape,
//! little-endian f32 payload) in registration order. Loading rebuilds the
//! network from the configuration and fills tensors by name, so a file
//! round-trips bitwise.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Sentence, Treebank, Vocabulary};
use crate::decoder::{repair, DecodeMode};
use crate::encoder::{encode_sentence, EmbeddingTables, EncoderError, LstmStack};
use crate::eval::{tree_rates, TreeRates};
use crate::labeler::{predict_labels, Labeler, LabelerError};
use crate::numeric::{Mode, NumericError, ParamStore, Tape};
use crate::scorer::{
    greedy_heads, head_distributions, score_arcs, to_arc_weights, HeadDistribution, Scorer,
    ScorerError,
};
use crate::train::{ConfigError, TrainConfig};

pub const MODEL_MAGIC: [u8; 8] = *b"HSELMODL";
pub const MODEL_VERSION: u32 = 1;

/// Hard ceiling on any length field read from a model file, so a corrupt
/// header cannot request an absurd allocation.
const MAX_FIELD_LEN: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("not a model file: bad magic bytes")]
    BadMagic,
    #[error("unsupported model format version {found}")]
    UnsupportedVersion { found: u32 },
    #[error("model file is corrupt: {msg}")]
    Corrupt { msg: String },
    #[error("model file tensor {name} has shape {got:?}, expected {expected:?}")]
    TensorShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("model file is missing tensor {name}")]
    MissingTensor { name: String },
    #[error("model file contains unknown tensor {name}")]
    UnknownTensor { name: String },
    #[error("labeled model requires a vocabulary with labels")]
    NoLabels,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Labeler(#[from] LabelerError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// All state needed to parse: configuration, vocabulary, and the
/// parameter store with handles for each network component.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<f32>,
    pub tables: EmbeddingTables,
    pub stack: LstmStack,
    pub scorer: Scorer,
    pub labeler: Option<Labeler>,
}

impl ModelBundle {
    /// Register every parameter group (zero-filled) in a deterministic
    /// order fixed by the configuration and vocabulary sizes.
    pub fn build(config: TrainConfig, vocab: Vocabulary) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let tables = EmbeddingTables::register(
            &mut store,
            vocab.n_words(),
            vocab.n_tags(),
            config.word_dim,
            config.tag_dim,
        );
        let stack = LstmStack::register(&mut store, tables.input_dim(), config.hidden_dim, config.layers);
        let scorer = Scorer::register(&mut store, stack.output_dim());
        let labeler = if config.labeled {
            if vocab.n_labels() == 0 {
                return Err(ModelError::NoLabels);
            }
            let feature_dim = 2 * stack.output_dim() + 2 * tables.input_dim();
            Some(Labeler::register(
                &mut store,
                feature_dim,
                config.label_hidden,
                vocab.n_labels(),
            ))
        } else {
            None
        };
        Ok(ModelBundle { config, vocab, store, tables, stack, scorer, labeler })
    }

    pub fn save(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        write_bytes(w, self.config.to_kv().as_bytes())?;
        w.write_all(&[u8::from(self.vocab.lowercase())])?;
        write_u64(w, self.vocab.n_words() as u64)?;
        for (id, word) in self.vocab.words().iter().enumerate() {
            write_bytes(w, word.as_bytes())?;
            write_u64(w, self.vocab.word_freq(id))?;
        }
        write_u64(w, self.vocab.n_tags() as u64)?;
        for tag in self.vocab.tags() {
            write_bytes(w, tag.as_bytes())?;
        }
        write_u64(w, self.vocab.n_labels() as u64)?;
        for label in self.vocab.labels() {
            write_bytes(w, label.as_bytes())?;
        }
        write_u64(w, self.store.len() as u64)?;
        for (_, name, tensor) in self.store.iter() {
            write_bytes(w, name.as_bytes())?;
            write_u64(w, tensor.rank() as u64)?;
            for &d in tensor.shape() {
                write_u64(w, d as u64)?;
            }
            let mut payload = Vec::with_capacity(4 * tensor.len());
            for &v in tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&payload)?;
        }
        Ok(())
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save(&mut w)?;
        w.flush()
    }

    pub fn load(r: &mut impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MODEL_MAGIC {
            return Err(ModelError::BadMagic);
        }
        let mut version = [0u8; 4];
        r.read_exact(&mut version)?;
        let version = u32::from_le_bytes(version);
        if version != MODEL_VERSION {
            return Err(ModelError::UnsupportedVersion { found: version });
        }
        let config = TrainConfig::from_kv(&read_string(r)?)?;
        let mut lowercase = [0u8; 1];
        r.read_exact(&mut lowercase)?;
        let lowercase = match lowercase[0] {
            0 => false,
            1 => true,
            b => return Err(corrupt(format!("lowercase flag byte {b}"))),
        };
        let n_words = read_len(r, "word count")?;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let form = read_string(r)?;
            let freq = read_u64(r)?;
            words.push((form, freq));
        }
        let n_tags = read_len(r, "tag count")?;
        let tags = (0..n_tags).map(|_| read_string(r)).collect::<Result<_, _>>()?;
        let n_labels = read_len(r, "label count")?;
        let labels = (0..n_labels).map(|_| read_string(r)).collect::<Result<_, _>>()?;
        let vocab = Vocabulary::from_tables(words, tags, labels, lowercase);

        let mut bundle = ModelBundle::build(config, vocab)?;
        let n_tensors = read_len(r, "tensor count")?;
        let mut filled = vec![false; bundle.store.len()];
        for _ in 0..n_tensors {
            let name = read_string(r)?;
            let id = bundle
                .store
                .id_by_name(&name)
                .ok_or(ModelError::UnknownTensor { name: name.clone() })?;
            let rank = read_len(r, "tensor rank")?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_len(r, "tensor dimension")?);
            }
            let expected = bundle.store.get(id).shape().to_vec();
            if shape != expected {
                return Err(ModelError::TensorShape { name, expected, got: shape });
            }
            let tensor = bundle.store.get_mut(id);
            let mut payload = vec![0u8; 4 * tensor.len()];
            r.read_exact(&mut payload)?;
            for (v, bytes) in tensor.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
                *v = f32::from_le_bytes(bytes.try_into().unwrap());
            }
            filled[id.index()] = true;
        }
        if let Some(missing) = bundle
            .store
            .ids()
            .find(|id| !filled[id.index()])
        {
            return Err(ModelError::MissingTensor {
                name: bundle.store.name(missing).to_string(),
            });
        }
        Ok(bundle)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        ModelBundle::load(&mut BufReader::new(File::open(path)?))
    }

    /// Encode, score, pick each word's most probable head, and repair the
    /// result into a tree unless repair is disabled.
    pub fn parse_sentence(
        &self,
        sentence: &Sentence,
        opts: &ParseOptions,
    ) -> Result<ParseOutcome, ModelError> {
        let mut tape = Tape::new(&self.store);
        // inference ignores the stream, any seed works
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = encode_sentence(
            &mut tape,
            sentence,
            &self.vocab,
            &self.tables,
            &self.stack,
            0.0,
            Mode::Infer,
            &mut rng,
        )?;
        let scores = score_arcs(&mut tape, &enc, &self.scorer)?;
        let dists = head_distributions(&mut tape, &scores, self.config.selector)?;
        let greedy = greedy_heads(&dists);
        let (heads, repaired) = if opts.repair {
            let weights = to_arc_weights(&dists, self.config.log_arc_weights);
            let outcome = repair(&greedy, &weights, opts.mode);
            (outcome.tree.into_heads(), outcome.repaired)
        } else {
            (greedy.clone(), false)
        };
        let labels = match (&self.labeler, opts.with_labels) {
            (Some(labeler), true) => {
                let ids = predict_labels(&mut tape, &enc, &heads, labeler)?;
                Some(ids.into_iter().map(|id| self.vocab.label(id).to_string()).collect())
            }
            _ => None,
        };
        Ok(ParseOutcome {
            greedy,
            heads,
            repaired,
            labels,
            distributions: opts.keep_distributions.then_some(dists),
        })
    }

    /// Parse every sentence, producing a copy of the treebank with heads
    /// and labels replaced by predictions, plus tree/projectivity rates
    /// before and after repair.
    pub fn parse_treebank(
        &self,
        treebank: &Treebank,
        opts: &ParseOptions,
    ) -> Result<(Treebank, ParseSummary), ModelError> {
        let outcomes = treebank
            .sentences
            .iter()
            .map(|s| self.parse_sentence(s, opts))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(assemble(treebank, outcomes))
    }
}

/// Merge per-sentence outcomes back into a predicted treebank and summary
/// rates, preserving input order.
pub fn assemble(treebank: &Treebank, outcomes: Vec<ParseOutcome>) -> (Treebank, ParseSummary) {
    let mut predicted = treebank.clone();
    let mut greedy_arrays = Vec::with_capacity(outcomes.len());
    let mut final_arrays = Vec::with_capacity(outcomes.len());
    let mut repaired_sentences = 0;
    for (sentence, outcome) in predicted.sentences.iter_mut().zip(outcomes) {
        for (i, token) in sentence.tokens.iter_mut().enumerate() {
            token.head = Some(outcome.heads[i]);
            token.label = outcome.labels.as_ref().map(|ls| ls[i].clone());
        }
        repaired_sentences += usize::from(outcome.repaired);
        greedy_arrays.push(outcome.greedy);
        final_arrays.push(outcome.heads);
    }
    let summary = ParseSummary {
        before: tree_rates(&greedy_arrays),
        after: tree_rates(&final_arrays),
        repaired_sentences,
        sentences: predicted.len(),
    };
    (predicted, summary)
}

#[derive(Clone, Copy, Debug)]
pub struct ParseOptions {
    pub mode: DecodeMode,
    pub repair: bool,
    pub with_labels: bool,
    pub keep_distributions: bool,
}

impl ParseOptions {
    pub fn new(mode: DecodeMode) -> Self {
        ParseOptions { mode, repair: true, with_labels: true, keep_distributions: false }
    }
}

#[derive(Clone, Debug)]
pub struct ParseOutcome {
    /// Each word's independently most probable head.
    pub greedy: Vec<usize>,
    /// Final output: equal to `greedy` when that already forms a tree.
    pub heads: Vec<usize>,
    pub repaired: bool,
    pub labels: Option<Vec<String>>,
    pub distributions: Option<Vec<HeadDistribution>>,
}

#[derive(Clone, Copy, Debug)]
pub struct ParseSummary {
    pub before: TreeRates,
    pub after: TreeRates,
    pub repaired_sentences: usize,
    pub sentences: usize,
}

impl ParseSummary {
    pub fn format_line(&self) -> String {
        format!(
            "sentences {}  repaired {}  trees {:.2}% -> {:.2}%  projective {:.2}% -> {:.2}%",
            self.sentences,
            self.repaired_sentences,
            self.before.tree_pct,
            self.after.tree_pct,
            self.before.projective_pct,
            self.after.projective_pct,
        )
    }
}

fn corrupt(msg: String) -> ModelError {
    ModelError::Corrupt { msg }
}

fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    write_u64(w, bytes.len() as u64)?;
    w.write_all(bytes)
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize, ModelError> {
    let v = read_u64(r)?;
    if v > MAX_FIELD_LEN {
        return Err(corrupt(format!("{what} {v} exceeds the format ceiling")));
    }
    Ok(v as usize)
}

fn read_string(r: &mut impl Read) -> Result<String, ModelError> {
    let len = read_len(r, "string length")?;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| corrupt("string is not UTF-8".to_string()))
}
