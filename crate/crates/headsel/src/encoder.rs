//! Sentence encoding: embedding lookup followed by a stacked bidirectional
//! LSTM.
//!
//! Each position i in 0..=N (0 is the artificial root, which has its own
//! trainable word and tag columns) gets an input vector x_i by concatenating
//! a word-embedding column and a tag-embedding column. A forward LSTM reads
//! x left to right, a backward LSTM right to left, layer k consuming layer
//! k-1's output of the same direction; the top layer's two hidden states
//! concatenate into the token representation a_i. Dropout is applied to
//! every layer's input (including x) in training mode and never to the
//! recurrent state.

use std::collections::HashSet;
use std::io::BufRead;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{Sentence, Vocabulary, ROOT_TAG, ROOT_WORD};
use crate::numeric::{Mode, NodeId, NumericError, ParamId, ParamStore, Real, Tape, Tensor};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("tag {tag:?} of token {form:?} is not in the tag inventory")]
    UnknownTag { form: String, tag: String },
    #[error("pretrained vector for {word:?} has {got} values, expected {expected}")]
    BadVectorLength { word: String, expected: usize, got: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word and tag embedding matrices, one embedding per column.
#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub words: ParamId,
    pub tags: ParamId,
    pub word_dim: usize,
    pub tag_dim: usize,
}

impl EmbeddingTables {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        n_words: usize,
        n_tags: usize,
        word_dim: usize,
        tag_dim: usize,
    ) -> Self {
        assert!(word_dim > 0 && tag_dim > 0 && n_words > 0 && n_tags > 0);
        EmbeddingTables {
            words: store.add("embed.words", Tensor::zeros(&[word_dim, n_words])),
            tags: store.add("embed.tags", Tensor::zeros(&[tag_dim, n_tags])),
            word_dim,
            tag_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.tag_dim
    }
}

/// One LSTM cell: the four gates packed row-wise as [input; forget;
/// candidate; output] into a single weight matrix applied to [x; h_prev].
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        LstmCell {
            weight: store.add(
                &format!("{name}.weight"),
                Tensor::zeros(&[4 * hidden_dim, input_dim + hidden_dim]),
            ),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[4 * hidden_dim])),
            input_dim,
            hidden_dim,
        }
    }

    /// One recurrence step: gate activations from an affine map of
    /// [x; h_prev], then c_t = f*c_prev + i*cand and h_t = o*tanh(c_t).
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId), NumericError> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xh = tape.concat(&[x, h_prev])?;
        let z = tape.affine(w, xh, b)?;
        let d = self.hidden_dim;
        let i = tape.slice(z, 0, d)?;
        let i = tape.sigmoid(i);
        let f = tape.slice(z, d, d)?;
        let f = tape.sigmoid(f);
        let cand = tape.slice(z, 2 * d, d)?;
        let cand = tape.tanh(cand);
        let o = tape.slice(z, 3 * d, d)?;
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c_prev)?;
        let ic = tape.mul(i, cand)?;
        let c_t = tape.add(fc, ic)?;
        let tanh_c = tape.tanh(c_t);
        let h_t = tape.mul(o, tanh_c)?;
        Ok((h_t, c_t))
    }
}

/// Stacked bidirectional LSTM: `layers` cells per direction, all sharing
/// the hidden size.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub forward: Vec<LstmCell>,
    pub backward: Vec<LstmCell>,
    pub hidden_dim: usize,
}

impl LstmStack {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
    ) -> Self {
        assert!(layers >= 1 && hidden_dim > 0);
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        for layer in 0..layers {
            let d_in = if layer == 0 { input_dim } else { hidden_dim };
            forward.push(LstmCell::register(store, &format!("lstm.l{layer}.f"), d_in, hidden_dim));
            backward.push(LstmCell::register(store, &format!("lstm.l{layer}.b"), d_in, hidden_dim));
        }
        LstmStack { forward, backward, hidden_dim }
    }

    pub fn layers(&self) -> usize {
        self.forward.len()
    }

    /// Token representation width: forward and backward states concatenated.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Overwrite every cell's forget-gate bias entries (the packed rows
    /// d..2d) after random initialization.
    pub fn set_forget_biases<T: Real>(&self, store: &mut ParamStore<T>, value: T) {
        for cell in self.forward.iter().chain(&self.backward) {
            let bias = store.get_mut(cell.bias);
            for k in cell.hidden_dim..2 * cell.hidden_dim {
                bias.data_mut()[k] = value;
            }
        }
    }
}

/// Per-position node handles for an encoded sentence: the embedding inputs
/// x and the BiLSTM outputs a, both of length N+1 with the root at index 0.
#[derive(Clone, Debug)]
pub struct EncodedSentence {
    pub x: Vec<NodeId>,
    pub a: Vec<NodeId>,
}

impl EncodedSentence {
    /// Number of real words, excluding the root.
    pub fn n(&self) -> usize {
        self.a.len() - 1
    }
}

/// Look up x_i = [word column; tag column] for the root and every token.
/// Out-of-vocabulary words fall back to the unknown-word column; an
/// out-of-inventory tag is an error.
pub fn embed<T: Real>(
    tape: &mut Tape<T>,
    sentence: &Sentence,
    vocab: &Vocabulary,
    tables: &EmbeddingTables,
) -> Result<Vec<NodeId>, EncoderError> {
    let words = tape.param(tables.words);
    let tags = tape.param(tables.tags);
    let mut xs = Vec::with_capacity(sentence.len() + 1);
    let push = |tape: &mut Tape<T>, word_id: usize, tag_id: usize| -> Result<NodeId, NumericError> {
        let w = tape.column(words, word_id)?;
        let t = tape.column(tags, tag_id)?;
        tape.concat(&[w, t])
    };
    xs.push(push(tape, ROOT_WORD, ROOT_TAG)?);
    for token in &sentence.tokens {
        let tag_id = vocab.tag_id(token.pos()).ok_or_else(|| EncoderError::UnknownTag {
            form: token.form.clone(),
            tag: token.pos().to_string(),
        })?;
        xs.push(push(tape, vocab.word_id(&token.form), tag_id)?);
    }
    Ok(xs)
}

/// Run one cell over an input sequence from zero initial state. `reverse`
/// consumes the sequence right to left; outputs are always returned in
/// position order.
pub fn run_layer<T: Real>(
    tape: &mut Tape<T>,
    cell: &LstmCell,
    inputs: &[NodeId],
    reverse: bool,
) -> Result<Vec<NodeId>, NumericError> {
    let mut h = tape.zeros(&[cell.hidden_dim]);
    let mut c = tape.zeros(&[cell.hidden_dim]);
    let mut out = Vec::with_capacity(inputs.len());
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for &t in &order {
        let (h_t, c_t) = cell.step(tape, inputs[t], h, c)?;
        h = h_t;
        c = c_t;
        out.push(h_t);
    }
    if reverse {
        out.reverse();
    }
    Ok(out)
}

/// Full bidirectional encoding of an embedded sequence. In training mode
/// each layer's inputs pass through dropout first; x itself is dropped once
/// and the same dropped nodes feed both direction's first layers.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    xs: &[NodeId],
    stack: &LstmStack,
    dropout: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Vec<NodeId>, NumericError> {
    assert!(!xs.is_empty(), "sequence always contains the root");
    let mut fwd = drop_all(tape, xs, dropout, mode, rng)?;
    let mut bwd = fwd.clone();
    for layer in 0..stack.layers() {
        if layer > 0 {
            fwd = drop_all(tape, &fwd, dropout, mode, rng)?;
            bwd = drop_all(tape, &bwd, dropout, mode, rng)?;
        }
        fwd = run_layer(tape, &stack.forward[layer], &fwd, false)?;
        bwd = run_layer(tape, &stack.backward[layer], &bwd, true)?;
    }
    fwd.iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect()
}

fn drop_all<T: Real>(
    tape: &mut Tape<T>,
    seq: &[NodeId],
    rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Vec<NodeId>, NumericError> {
    seq.iter().map(|&n| tape.dropout(n, rate, mode, rng)).collect()
}

/// Embed and encode a sentence in one call.
pub fn encode_sentence<T: Real>(
    tape: &mut Tape<T>,
    sentence: &Sentence,
    vocab: &Vocabulary,
    tables: &EmbeddingTables,
    stack: &LstmStack,
    dropout: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<EncodedSentence, EncoderError> {
    let x = embed(tape, sentence, vocab, tables)?;
    let a = encode(tape, &x, stack, dropout, mode, rng)?;
    Ok(EncodedSentence { x, a })
}

/// Overwrite word-embedding columns from a text stream of
/// `word v1 ... vs` lines. A word matches its exact vocabulary entry
/// first, then its lowercased form; unmatched lines are skipped. Returns
/// the number of distinct vocabulary words covered.
pub fn load_pretrained_embeddings<T: Real>(
    reader: impl BufRead,
    vocab: &Vocabulary,
    tables: &EmbeddingTables,
    store: &mut ParamStore<T>,
) -> Result<usize, EncoderError> {
    let mut covered = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let values: Vec<f64> = fields
            .map(|v| {
                v.parse::<f64>().map_err(|_| EncoderError::BadVectorLength {
                    word: word.to_string(),
                    expected: tables.word_dim,
                    got: usize::MAX,
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != tables.word_dim {
            return Err(EncoderError::BadVectorLength {
                word: word.to_string(),
                expected: tables.word_dim,
                got: values.len(),
            });
        }
        let id = vocab
            .lookup_word(word)
            .or_else(|| vocab.lookup_word(&word.to_lowercase()));
        if let Some(id) = id {
            let table = store.get_mut(tables.words);
            for (row, &v) in values.iter().enumerate() {
                table.set2(row, id, T::from_f64(v));
            }
            covered.insert(id);
        }
    }
    Ok(covered.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Token, Treebank, UNK_WORD};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_vocab() -> Vocabulary {
        let sentences = vec![Sentence::new(vec![
            Token::with_arc("the", "DT", 2, "det"),
            Token::with_arc("cat", "NN", 0, "root"),
        ])];
        Vocabulary::build(&Treebank { sentences }, 1, false).unwrap()
    }

    fn init_uniform(store: &mut ParamStore<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in store.ids() {
            let t = store.get_mut(id);
            let fresh = Tensor::uniform(t.shape(), -0.1, 0.1, &mut rng);
            *t = fresh;
        }
    }

    #[test]
    fn zero_parameter_step_outputs_zero_state() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let cell = LstmCell::register(&mut store, "cell", 3, 2);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let h = tape.zeros(&[2]);
        let c = tape.zeros(&[2]);
        let (h_t, c_t) = cell.step(&mut tape, x, h, c).unwrap();
        assert_eq!(tape.value(h_t).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(c_t).data(), &[0.0, 0.0]);
    }

    #[test]
    fn step_is_deterministic() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let cell = LstmCell::register(&mut store, "cell", 2, 3);
        init_uniform(&mut store, 5);
        let run = || {
            let mut tape = Tape::new(&store);
            let x = tape.constant(Tensor::vector(vec![0.3, -0.4]));
            let h = tape.constant(Tensor::vector(vec![0.1, 0.2, -0.3]));
            let c = tape.constant(Tensor::vector(vec![-0.2, 0.0, 0.4]));
            let (h_t, _) = cell.step(&mut tape, x, h, c).unwrap();
            tape.value(h_t).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn embedding_lookup_concatenates_the_right_columns() {
        let vocab = toy_vocab();
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        init_uniform(&mut store, 6);
        let sentence = Sentence::new(vec![Token::new("cat", "NN")]);
        let mut tape = Tape::new(&store);
        let xs = embed(&mut tape, &sentence, &vocab, &tables).unwrap();
        assert_eq!(xs.len(), 2);
        let cat = vocab.word_id("cat");
        let nn = vocab.tag_id("NN").unwrap();
        let words = store.get(tables.words);
        let tags = store.get(tables.tags);
        let expected: Vec<f64> = (0..3)
            .map(|r| words.at2(r, cat))
            .chain((0..2).map(|r| tags.at2(r, nn)))
            .collect();
        assert_eq!(tape.value(xs[1]).data(), &expected[..]);
        // root position uses the dedicated root columns
        let root: Vec<f64> = (0..3)
            .map(|r| words.at2(r, ROOT_WORD))
            .chain((0..2).map(|r| tags.at2(r, ROOT_TAG)))
            .collect();
        assert_eq!(tape.value(xs[0]).data(), &root[..]);
    }

    #[test]
    fn unknown_word_uses_unk_column_and_unknown_tag_errors() {
        let vocab = toy_vocab();
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        init_uniform(&mut store, 7);
        let mut tape = Tape::new(&store);
        let oov = Sentence::new(vec![Token::new("zebra", "NN")]);
        let xs = embed(&mut tape, &oov, &vocab, &tables).unwrap();
        let words = store.get(tables.words);
        let expected: Vec<f64> = (0..3).map(|r| words.at2(r, UNK_WORD)).collect();
        assert_eq!(&tape.value(xs[1]).data()[..3], &expected[..]);

        let bad_tag = Sentence::new(vec![Token::new("cat", "XX")]);
        let err = embed(&mut tape, &bad_tag, &vocab, &tables).unwrap_err();
        assert!(matches!(err, EncoderError::UnknownTag { .. }), "{err}");
        assert!(err.to_string().contains("XX"));
    }

    #[test]
    fn root_only_sequence_encodes_to_one_vector() {
        let vocab = toy_vocab();
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        let stack = LstmStack::register(&mut store, tables.input_dim(), 4, 2);
        init_uniform(&mut store, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&store);
        let empty = Sentence::new(vec![]);
        let enc = encode_sentence(
            &mut tape, &empty, &vocab, &tables, &stack, 0.0, Mode::Infer, &mut rng,
        )
        .unwrap();
        assert_eq!(enc.n(), 0);
        assert_eq!(enc.a.len(), 1);
        assert_eq!(tape.value(enc.a[0]).shape(), &[stack.output_dim()]);
    }

    #[test]
    fn empty_pretrained_stream_changes_nothing() {
        let vocab = toy_vocab();
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        init_uniform(&mut store, 9);
        let before = store.get(tables.words).clone();
        let n = load_pretrained_embeddings("".as_bytes(), &vocab, &tables, &mut store).unwrap();
        assert_eq!(n, 0);
        assert_eq!(store.get(tables.words), &before);
    }

    #[test]
    fn pretrained_vector_overwrites_only_its_word() {
        let vocab = toy_vocab();
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        init_uniform(&mut store, 10);
        let before = store.get(tables.words).clone();
        let n =
            load_pretrained_embeddings("the 1 2 3\n".as_bytes(), &vocab, &tables, &mut store).unwrap();
        assert_eq!(n, 1);
        let after = store.get(tables.words);
        let the = vocab.word_id("the");
        for col in 0..vocab.n_words() {
            for row in 0..3 {
                if col == the {
                    assert_eq!(after.at2(row, col), (row + 1) as f64);
                } else {
                    assert_eq!(after.at2(row, col), before.at2(row, col));
                }
            }
        }
    }

    #[test]
    fn cased_file_entry_matches_lowercased_vocab_entry() {
        let vocab = toy_vocab(); // case-sensitive, contains "the"
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        let n = load_pretrained_embeddings("The 9 9 9\nof 1 1 1\n".as_bytes(), &vocab, &tables, &mut store)
            .unwrap();
        assert_eq!(n, 1);
        let the = vocab.word_id("the");
        assert_eq!(store.get(tables.words).at2(0, the), 9.0);
    }

    #[test]
    fn wrong_length_vector_is_an_error_naming_the_word() {
        let vocab = toy_vocab();
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        let err = load_pretrained_embeddings("cat 1 2\n".as_bytes(), &vocab, &tables, &mut store)
            .unwrap_err();
        assert!(err.to_string().contains("cat"), "{err}");
    }
}
