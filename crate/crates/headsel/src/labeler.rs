//! Dependency label classification over identified arcs.
//!
//! Each arc (head j, dependent i) is represented by the concatenation
//! [a_i; a_j; x_i; x_j] of the two tokens' encoder outputs and embedding
//! inputs. A two-hidden-layer rectifier network maps the feature to a
//! softmax over the label inventory. The labeler trains after the head
//! model, on gold arcs, with the encoder frozen; labeling never changes
//! head choices.

use rand_chacha::rand_core::SeedableRng;
use thiserror::Error;

use crate::corpus::{Treebank, Vocabulary};
use crate::encoder::{encode_sentence, EmbeddingTables, EncodedSentence, EncoderError, LstmStack};
use crate::numeric::{Mode, NodeId, NumericError, ParamId, ParamStore, Real, Tape, Tensor};

#[derive(Debug, Error)]
pub enum LabelerError {
    #[error("sentence {sentence}: token {token} has no gold label")]
    MissingLabel { sentence: usize, token: usize },
    #[error("sentence {sentence}: token {token} has no gold head")]
    MissingHead { sentence: usize, token: usize },
    #[error("label {label:?} is not in the label inventory")]
    UnknownLabel { label: String },
    #[error("treebank has no sentences")]
    EmptyTreebank,
    #[error("dependent {dep}: head {head} out of range for {n} words")]
    BadArc { dep: usize, head: usize, n: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Two rectifier hidden layers and a softmax output layer.
#[derive(Clone, Debug)]
pub struct Labeler {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_labels: usize,
}

impl Labeler {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        feature_dim: usize,
        hidden_dim: usize,
        n_labels: usize,
    ) -> Self {
        assert!(feature_dim > 0 && hidden_dim > 0 && n_labels > 0);
        Labeler {
            w1: store.add("labeler.w1", Tensor::zeros(&[hidden_dim, feature_dim])),
            b1: store.add("labeler.b1", Tensor::zeros(&[hidden_dim])),
            w2: store.add("labeler.w2", Tensor::zeros(&[hidden_dim, hidden_dim])),
            b2: store.add("labeler.b2", Tensor::zeros(&[hidden_dim])),
            w3: store.add("labeler.w3", Tensor::zeros(&[n_labels, hidden_dim])),
            b3: store.add("labeler.b3", Tensor::zeros(&[n_labels])),
            feature_dim,
            hidden_dim,
            n_labels,
        }
    }

    /// Softmax over labels for one arc feature.
    pub fn distribution<T: Real>(
        &self,
        tape: &mut Tape<T>,
        feature: NodeId,
    ) -> Result<NodeId, NumericError> {
        let (w1, b1) = (tape.param(self.w1), tape.param(self.b1));
        let (w2, b2) = (tape.param(self.w2), tape.param(self.b2));
        let (w3, b3) = (tape.param(self.w3), tape.param(self.b3));
        let h1 = tape.affine(w1, feature, b1)?;
        let h1 = tape.relu(h1);
        let h2 = tape.affine(w2, h1, b2)?;
        let h2 = tape.relu(h2);
        let logits = tape.affine(w3, h2, b3)?;
        tape.softmax(logits)
    }

    /// Negative log probability of the gold label for one arc.
    pub fn nll<T: Real>(
        &self,
        tape: &mut Tape<T>,
        feature: NodeId,
        gold_label: usize,
    ) -> Result<NodeId, NumericError> {
        let p = self.distribution(tape, feature)?;
        let lp = tape.log_pick(p, gold_label)?;
        Ok(tape.scale(lp, -1.0))
    }

    /// Most probable label id, ties broken toward the smaller id.
    pub fn predict<T: Real>(
        &self,
        tape: &mut Tape<T>,
        feature: NodeId,
    ) -> Result<usize, NumericError> {
        let p = self.distribution(tape, feature)?;
        let values = tape.value(p);
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for k in 0..values.len() {
            let v = values.at(k).as_f64();
            if v > best_p {
                best_p = v;
                best = k;
            }
        }
        Ok(best)
    }
}

/// Feature node for the arc (head, dep): [a_dep; a_head; x_dep; x_head].
pub fn arc_feature<T: Real>(
    tape: &mut Tape<T>,
    enc: &EncodedSentence,
    head: usize,
    dep: usize,
) -> Result<NodeId, LabelerError> {
    let n = enc.n();
    if dep < 1 || dep > n || head > n || head == dep {
        return Err(LabelerError::BadArc { dep, head, n });
    }
    Ok(tape.concat(&[enc.a[dep], enc.a[head], enc.x[dep], enc.x[head]])?)
}

/// One feature per dependent, taking its head from `heads`.
pub fn extract_arc_features<T: Real>(
    tape: &mut Tape<T>,
    enc: &EncodedSentence,
    heads: &[usize],
) -> Result<Vec<NodeId>, LabelerError> {
    assert_eq!(heads.len(), enc.n(), "one head per word");
    heads
        .iter()
        .enumerate()
        .map(|(i, &h)| arc_feature(tape, enc, h, i + 1))
        .collect()
}

/// One classifier training example: a frozen-encoder arc feature and its
/// gold label id.
#[derive(Clone, Debug)]
pub struct LabelExample<T> {
    pub feature: Tensor<T>,
    pub label: usize,
}

/// Run the trained encoder over every sentence's gold arcs and pair each
/// arc feature with its gold label. Features are materialized as plain
/// tensors: the encoder is frozen during label training, so they never
/// need recomputing.
pub fn generate_label_training_data<T: Real>(
    store: &ParamStore<T>,
    vocab: &Vocabulary,
    tables: &EmbeddingTables,
    stack: &LstmStack,
    treebank: &Treebank,
) -> Result<Vec<LabelExample<T>>, LabelerError> {
    if treebank.is_empty() {
        return Err(LabelerError::EmptyTreebank);
    }
    let mut examples = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for (s_idx, sentence) in treebank.sentences.iter().enumerate() {
        let mut heads = Vec::with_capacity(sentence.len());
        let mut labels = Vec::with_capacity(sentence.len());
        for (t_idx, token) in sentence.tokens.iter().enumerate() {
            let head = token.head.ok_or(LabelerError::MissingHead {
                sentence: s_idx + 1,
                token: t_idx + 1,
            })?;
            let label = token.label.as_ref().ok_or(LabelerError::MissingLabel {
                sentence: s_idx + 1,
                token: t_idx + 1,
            })?;
            let label_id = vocab
                .label_id(label)
                .ok_or_else(|| LabelerError::UnknownLabel { label: label.clone() })?;
            heads.push(head);
            labels.push(label_id);
        }
        let mut tape = Tape::new(store);
        let enc = encode_sentence(
            &mut tape, sentence, vocab, tables, stack, 0.0, Mode::Infer, &mut rng,
        )?;
        let features = extract_arc_features(&mut tape, &enc, &heads)?;
        for (feature, label) in features.iter().zip(labels) {
            examples.push(LabelExample {
                feature: tape.value(*feature).clone(),
                label,
            });
        }
    }
    Ok(examples)
}

/// Predict a label id for every arc in `heads` using the already-encoded
/// sentence.
pub fn predict_labels<T: Real>(
    tape: &mut Tape<T>,
    enc: &EncodedSentence,
    heads: &[usize],
    labeler: &Labeler,
) -> Result<Vec<usize>, LabelerError> {
    let features = extract_arc_features(tape, enc, heads)?;
    features
        .into_iter()
        .map(|f| Ok(labeler.predict(tape, f)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, Token};
    use rand_chacha::ChaCha8Rng;

    fn labeled_treebank() -> Treebank {
        let sentences = vec![
            Sentence::new(vec![
                Token::with_arc("the", "DT", 2, "det"),
                Token::with_arc("cat", "NN", 3, "sbj"),
                Token::with_arc("slept", "VB", 0, "root"),
            ]),
            Sentence::new(vec![
                Token::with_arc("dogs", "NN", 2, "sbj"),
                Token::with_arc("saw", "VB", 0, "root"),
                Token::with_arc("the", "DT", 4, "det"),
                Token::with_arc("bird", "NN", 2, "obj"),
            ]),
        ];
        Treebank { sentences }
    }

    struct Setup {
        vocab: Vocabulary,
        store: ParamStore<f64>,
        tables: EmbeddingTables,
        stack: LstmStack,
    }

    fn setup(seed: u64) -> Setup {
        let vocab = Vocabulary::build(&labeled_treebank(), 1, false).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, vocab.n_words(), vocab.n_tags(), 3, 2);
        let stack = LstmStack::register(&mut store, tables.input_dim(), 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in store.ids() {
            let t = store.get_mut(id);
            *t = Tensor::uniform(t.shape(), -0.3, 0.3, &mut rng);
        }
        Setup { vocab, store, tables, stack }
    }

    #[test]
    fn feature_concatenates_encodings_then_inputs() {
        let s = setup(71);
        let mut tape = Tape::new(&s.store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sentence = &labeled_treebank().sentences[0];
        let enc = encode_sentence(
            &mut tape, sentence, &s.vocab, &s.tables, &s.stack, 0.0, Mode::Infer, &mut rng,
        )
        .unwrap();
        let f = arc_feature(&mut tape, &enc, 2, 1).unwrap();
        // independent straight-line concatenation
        let expected: Vec<f64> = [enc.a[1], enc.a[2], enc.x[1], enc.x[2]]
            .iter()
            .flat_map(|&n| tape.value(n).data().to_vec())
            .collect();
        assert_eq!(tape.value(f).data(), &expected[..]);
        let out_dim = s.stack.output_dim();
        let in_dim = s.tables.input_dim();
        assert_eq!(tape.value(f).len(), 2 * out_dim + 2 * in_dim);
    }

    #[test]
    fn bad_arcs_are_rejected() {
        let s = setup(72);
        let mut tape = Tape::new(&s.store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sentence = &labeled_treebank().sentences[0];
        let enc = encode_sentence(
            &mut tape, sentence, &s.vocab, &s.tables, &s.stack, 0.0, Mode::Infer, &mut rng,
        )
        .unwrap();
        assert!(matches!(
            arc_feature(&mut tape, &enc, 9, 1),
            Err(LabelerError::BadArc { head: 9, dep: 1, .. })
        ));
        assert!(arc_feature(&mut tape, &enc, 2, 2).is_err());
        assert!(arc_feature(&mut tape, &enc, 0, 0).is_err());
    }

    #[test]
    fn training_data_has_one_example_per_word_with_matching_label_counts() {
        let s = setup(73);
        let tb = labeled_treebank();
        let data =
            generate_label_training_data(&s.store, &s.vocab, &s.tables, &s.stack, &tb).unwrap();
        assert_eq!(data.len(), 7);
        // label distribution matches the treebank's
        let mut from_data = vec![0usize; s.vocab.n_labels()];
        for ex in &data {
            from_data[ex.label] += 1;
        }
        let mut from_treebank = vec![0usize; s.vocab.n_labels()];
        for sent in &tb.sentences {
            for tok in &sent.tokens {
                from_treebank[s.vocab.label_id(tok.label.as_ref().unwrap()).unwrap()] += 1;
            }
        }
        assert_eq!(from_data, from_treebank);
    }

    #[test]
    fn unlabeled_and_empty_treebanks_are_errors() {
        let s = setup(74);
        let empty = Treebank::default();
        assert!(matches!(
            generate_label_training_data(&s.store, &s.vocab, &s.tables, &s.stack, &empty),
            Err(LabelerError::EmptyTreebank)
        ));
        let mut unlabeled = labeled_treebank();
        unlabeled.sentences[1].tokens[2].label = None;
        let err =
            generate_label_training_data(&s.store, &s.vocab, &s.tables, &s.stack, &unlabeled)
                .unwrap_err();
        assert!(
            matches!(err, LabelerError::MissingLabel { sentence: 2, token: 3 }),
            "{err}"
        );
    }

    #[test]
    fn zero_weights_tie_break_to_label_zero() {
        let s = setup(75);
        let mut store = s.store;
        let labeler = Labeler::register(&mut store, 4, 3, 5);
        let mut tape = Tape::new(&store);
        let f = tape.constant(Tensor::vector(vec![0.4, -0.2, 0.9, 0.1]));
        assert_eq!(labeler.predict(&mut tape, f).unwrap(), 0);
    }

    #[test]
    fn single_label_inventory_always_wins() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let labeler = Labeler::register(&mut store, 4, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        for id in store.ids() {
            let t = store.get_mut(id);
            *t = Tensor::uniform(t.shape(), -0.5, 0.5, &mut rng);
        }
        let mut tape = Tape::new(&store);
        let f = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(labeler.predict(&mut tape, f).unwrap(), 0);
        let p = labeler.distribution(&mut tape, f).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0]);
    }

    #[test]
    fn prediction_is_invariant_to_logit_shift() {
        // shifting the output bias by a constant shifts every logit equally
        let mut store: ParamStore<f64> = ParamStore::new();
        let labeler = Labeler::register(&mut store, 3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for id in store.ids() {
            let t = store.get_mut(id);
            *t = Tensor::uniform(t.shape(), -0.5, 0.5, &mut rng);
        }
        let feature = Tensor::vector(vec![0.3, -1.0, 0.7]);
        let mut tape = Tape::new(&store);
        let f = tape.constant(feature.clone());
        let before = labeler.predict(&mut tape, f).unwrap();
        {
            let b3 = store.get_mut(labeler.b3);
            for v in b3.data_mut() {
                *v += 11.0;
            }
        }
        let mut tape = Tape::new(&store);
        let f = tape.constant(feature);
        assert_eq!(labeler.predict(&mut tape, f).unwrap(), before);
    }
}
