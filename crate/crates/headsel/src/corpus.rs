//! CoNLL treebank reading and writing, vocabulary extraction, and
//! projectivity.
//!
//! The on-disk format is the tab-separated ten-column dependency format:
//! `ID FORM LEMMA CPOSTAG POSTAG FEATS HEAD DEPREL PHEAD PDEPREL`, one token
//! per line, sentences separated by blank lines. Comment lines (`#`) and the
//! newer multiword/empty-node lines (IDs like `3-4` or `5.1`) are skipped on
//! input, which keeps plain-token IDs contiguous. Head indices are 1-based
//! with 0 denoting the artificial root.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::decoder;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sentence {sentence}: {msg}")]
    Validation { sentence: usize, msg: String },
    #[error("treebank is empty")]
    EmptyTreebank,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One word of a sentence. `head`/`label` hold gold annotations in training
/// data and predictions in parser output; either may be absent. The lemma,
/// coarse tag, and feature columns are kept verbatim so files round-trip.
#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub form: String,
    pub lemma: String,
    pub cpostag: String,
    pub postag: String,
    pub feats: String,
    pub head: Option<usize>,
    pub label: Option<String>,
}

impl Token {
    pub fn new(form: &str, pos: &str) -> Self {
        Token {
            form: form.to_string(),
            lemma: "_".to_string(),
            cpostag: "_".to_string(),
            postag: pos.to_string(),
            feats: "_".to_string(),
            head: None,
            label: None,
        }
    }

    pub fn with_arc(form: &str, pos: &str, head: usize, label: &str) -> Self {
        let mut t = Token::new(form, pos);
        t.head = Some(head);
        t.label = Some(label.to_string());
        t
    }

    /// Effective part-of-speech tag: the fine tag when present, otherwise
    /// the coarse one.
    pub fn pos(&self) -> &str {
        if self.postag != "_" {
            &self.postag
        } else {
            &self.cpostag
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence { tokens }
    }

    /// Number of real words, excluding the implicit root.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Head array over dependents 1..=N, or None when any head is missing.
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn labels(&self) -> Option<Vec<String>> {
        self.tokens.iter().map(|t| t.label.clone()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Parse a treebank from CoNLL-formatted text.
///
/// Head values are validated against sentence length, a label without a head
/// is rejected, and a sentence whose heads are all present must form a tree
/// rooted at 0.
pub fn read_conll(reader: impl BufRead) -> Result<Treebank, CorpusError> {
    fn flush(sentences: &mut Vec<Sentence>, tokens: &mut Vec<Token>) -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let sentence = Sentence::new(std::mem::take(tokens));
        validate_sentence(&sentence, sentences.len() + 1)?;
        sentences.push(sentence);
        Ok(())
    }

    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut line_no = 0;

    for line in reader.lines() {
        line_no += 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            flush(&mut sentences, &mut tokens)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::Parse {
                line: line_no,
                msg: format!("expected 10 tab-separated columns, got {}", cols.len()),
            });
        }
        // multiword ranges (3-4) and empty nodes (5.1) carry no head of
        // their own; plain token IDs stay contiguous without them
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| CorpusError::Parse {
            line: line_no,
            msg: format!("bad token ID {:?}", cols[0]),
        })?;
        if id != tokens.len() + 1 {
            return Err(CorpusError::Parse {
                line: line_no,
                msg: format!("token ID {} out of order, expected {}", id, tokens.len() + 1),
            });
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse().map_err(|_| CorpusError::Parse {
                line: line_no,
                msg: format!("bad HEAD value {h:?}"),
            })?),
        };
        let label = match cols[7] {
            "_" => None,
            l => Some(l.to_string()),
        };
        tokens.push(Token {
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            cpostag: cols[3].to_string(),
            postag: cols[4].to_string(),
            feats: cols[5].to_string(),
            head,
            label,
        });
    }
    flush(&mut sentences, &mut tokens)?;
    Ok(Treebank { sentences })
}

pub fn read_conll_file(path: impl AsRef<Path>) -> Result<Treebank, CorpusError> {
    read_conll(BufReader::new(File::open(path)?))
}

fn validate_sentence(sentence: &Sentence, index: usize) -> Result<(), CorpusError> {
    let n = sentence.len();
    for (i, token) in sentence.tokens.iter().enumerate() {
        if let Some(h) = token.head {
            if h > n {
                return Err(CorpusError::Validation {
                    sentence: index,
                    msg: format!("token {} has head {} but the sentence has {} words", i + 1, h, n),
                });
            }
            if h == i + 1 {
                return Err(CorpusError::Validation {
                    sentence: index,
                    msg: format!("token {} is its own head", i + 1),
                });
            }
        } else if token.label.is_some() {
            return Err(CorpusError::Validation {
                sentence: index,
                msg: format!("token {} has a relation label but no head", i + 1),
            });
        }
    }
    if let Some(heads) = sentence.heads() {
        if !decoder::is_tree(&heads) {
            return Err(CorpusError::Validation {
                sentence: index,
                msg: format!("annotated heads {heads:?} do not form a tree"),
            });
        }
    }
    Ok(())
}

/// Write a treebank in the same ten-column format `read_conll` accepts.
/// Annotation fields that are absent are written as `_`; the projected-head
/// columns are always `_`.
pub fn write_conll(treebank: &Treebank, mut writer: impl Write) -> io::Result<()> {
    for sentence in &treebank.sentences {
        for (i, t) in sentence.tokens.iter().enumerate() {
            let head = t.head.map_or("_".to_string(), |h| h.to_string());
            let label = t.label.as_deref().unwrap_or("_");
            writeln!(
                writer,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t_\t_",
                i + 1,
                t.form,
                t.lemma,
                t.cpostag,
                t.postag,
                t.feats,
                head,
                label
            )?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

pub fn write_conll_file(treebank: &Treebank, path: impl AsRef<Path>) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    write_conll(treebank, &mut f)?;
    f.flush()
}

pub const UNK_WORD: usize = 0;
pub const ROOT_WORD: usize = 1;
pub const ROOT_TAG: usize = 0;
pub const UNK_FORM: &str = "<unk>";
pub const ROOT_FORM: &str = "<root>";

/// Lookup tables mapping word forms, part-of-speech tags, and relation
/// labels to dense ids.
///
/// Word id 0 is the unknown-word sentinel, id 1 the artificial root; words
/// seen fewer than `min_count` times fold into the unknown id. Tag id 0 is
/// the root's tag. Entries keep their first-occurrence corpus order, so
/// building twice from the same treebank gives identical tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_ids: HashMap<String, usize>,
    word_freq: Vec<u64>,
    tags: Vec<String>,
    tag_ids: HashMap<String, usize>,
    labels: Vec<String>,
    label_ids: HashMap<String, usize>,
    lowercase: bool,
}

impl Vocabulary {
    pub fn build(treebank: &Treebank, min_count: u64, lowercase: bool) -> Result<Self, CorpusError> {
        if treebank.is_empty() {
            return Err(CorpusError::EmptyTreebank);
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut word_order: Vec<String> = Vec::new();
        let mut tags = vec![ROOT_FORM.to_string()];
        let mut tag_ids = HashMap::from([(ROOT_FORM.to_string(), ROOT_TAG)]);
        let mut labels = Vec::new();
        let mut label_ids = HashMap::new();
        for sentence in &treebank.sentences {
            for token in &sentence.tokens {
                let form = normalize(&token.form, lowercase);
                let count = counts.entry(form.clone()).or_insert(0);
                if *count == 0 {
                    word_order.push(form);
                }
                *count += 1;
                let pos = token.pos();
                if !tag_ids.contains_key(pos) {
                    tag_ids.insert(pos.to_string(), tags.len());
                    tags.push(pos.to_string());
                }
                if let Some(label) = &token.label {
                    if !label_ids.contains_key(label) {
                        label_ids.insert(label.clone(), labels.len());
                        labels.push(label.clone());
                    }
                }
            }
        }
        let mut words = vec![UNK_FORM.to_string(), ROOT_FORM.to_string()];
        let mut word_freq = vec![0, treebank.len() as u64];
        for form in word_order {
            let c = counts[&form];
            if c >= min_count.max(1) {
                words.push(form);
                word_freq.push(c);
            } else {
                word_freq[UNK_WORD] += c;
            }
        }
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Vocabulary {
            words,
            word_ids,
            word_freq,
            tags,
            tag_ids,
            labels,
            label_ids,
            lowercase,
        })
    }

    /// Reassemble a vocabulary from serialized tables.
    pub fn from_tables(
        words: Vec<(String, u64)>,
        tags: Vec<String>,
        labels: Vec<String>,
        lowercase: bool,
    ) -> Self {
        let (words, word_freq): (Vec<String>, Vec<u64>) = words.into_iter().unzip();
        let word_ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let tag_ids = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let label_ids = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Vocabulary {
            words,
            word_ids,
            word_freq,
            tags,
            tag_ids,
            labels,
            label_ids,
            lowercase,
        }
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Word id with unknown-word fallback.
    pub fn word_id(&self, form: &str) -> usize {
        let form = normalize(form, self.lowercase);
        self.word_ids.get(form.as_str()).copied().unwrap_or(UNK_WORD)
    }

    /// Word id without fallback, for pretrained-embedding matching.
    pub fn lookup_word(&self, form: &str) -> Option<usize> {
        let form = normalize(form, self.lowercase);
        self.word_ids.get(form.as_str()).copied()
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tag_ids.get(tag).copied()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn word_freq(&self, id: usize) -> u64 {
        self.word_freq[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

fn normalize(form: &str, lowercase: bool) -> String {
    if lowercase {
        form.to_lowercase()
    } else {
        form.to_string()
    }
}

/// True when no two dependency arcs cross, checked pairwise: arcs with
/// spans (l1,r1) and (l2,r2) cross iff one strictly interleaves the other,
/// l1 < l2 < r1 < r2. Arcs sharing an endpoint never cross.
///
/// Panics when `heads` is not a tree; run `is_tree` first on untrusted
/// arrays.
pub fn is_projective(heads: &[usize]) -> bool {
    assert!(decoder::is_tree(heads), "is_projective requires a tree");
    let arcs: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let d = i + 1;
            (h.min(d), h.max(d))
        })
        .collect();
    for (i, &(l1, r1)) in arcs.iter().enumerate() {
        for &(l2, r2) in &arcs[i + 1..] {
            if (l1 < l2 && l2 < r1 && r1 < r2) || (l2 < l1 && l1 < r2 && r2 < r1) {
                return false;
            }
        }
    }
    true
}

/// Sentence count and percentage (0-100) of projective sentences. Every
/// sentence must be fully head-annotated with a well-formed tree.
pub fn projective_stats(treebank: &Treebank) -> Result<(usize, f64), CorpusError> {
    if treebank.is_empty() {
        return Err(CorpusError::EmptyTreebank);
    }
    let mut projective = 0usize;
    for (i, sentence) in treebank.sentences.iter().enumerate() {
        let heads = sentence.heads().ok_or_else(|| CorpusError::Validation {
            sentence: i + 1,
            msg: "missing head annotation".to_string(),
        })?;
        if !decoder::is_tree(&heads) {
            return Err(CorpusError::Validation {
                sentence: i + 1,
                msg: format!("annotated heads {heads:?} do not form a tree"),
            });
        }
        if is_projective(&heads) {
            projective += 1;
        }
    }
    let pct = 100.0 * projective as f64 / treebank.len() as f64;
    Ok((treebank.len(), pct))
}
