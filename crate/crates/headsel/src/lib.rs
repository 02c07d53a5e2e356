//! Dependency parsing as head selection.
//!
//! A sentence is parsed by letting every word pick its most likely head
//! independently: a bidirectional LSTM encodes the words, a pairwise scorer
//! turns each (head, dependent) pair into a score, and a per-dependent
//! softmax yields head distributions. Greedy selection is usually already a
//! tree; when it is not, a maximum-spanning-tree decoder (Eisner for
//! projective output, Chu-Liu-Edmonds otherwise) repairs it using the same
//! arc probabilities. An optional classifier assigns relation labels to the
//! resolved arcs.
//!
//! The crate is organized bottom-up: [`numeric`] is a minimal reverse-mode
//! autodiff engine, [`corpus`] reads and writes CoNLL treebanks, [`encoder`],
//! [`scorer`] and [`labeler`] build the network on a tape, [`decoder`] holds
//! the tree algorithms, [`train`] fits models, [`eval`] scores them, and
//! [`model`] bundles everything behind save/load and a parse pipeline.
//! [`synth`] generates a small deterministic treebank for tests and demos.

pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod labeler;
pub mod model;
pub mod numeric;
pub mod scorer;
pub mod synth;
pub mod train;
