//! Attachment scoring (UAS, LAS, UEM), punctuation exclusion, tree and
//! projectivity rates, and UAS broken down by sentence-length bins.
//!
//! A token is punctuation iff its *gold* tag belongs to a configurable set
//! defaulting to the Penn Treebank convention. Excluded tokens count toward
//! no metric; a sentence whose evaluated tokens all carry correct heads is
//! an exact match even if an excluded token is wrong.

use thiserror::Error;

use crate::corpus::{is_projective, Treebank};
use crate::decoder::is_tree;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {predicted}")]
    SentenceCountMismatch { gold: usize, predicted: usize },
    #[error("sentence {sentence}: gold has {gold} tokens but prediction has {predicted}")]
    LengthMismatch { sentence: usize, gold: usize, predicted: usize },
    #[error("sentence {sentence}, token {token}: {side} head is missing")]
    MissingHead { side: &'static str, sentence: usize, token: usize },
    #[error("cannot split {have} sentences into {bins} length bins")]
    TooFewSentences { have: usize, bins: usize },
}

/// Penn Treebank punctuation tags.
pub const DEFAULT_PUNCT_TAGS: [&str; 5] = ["``", "''", ":", ",", "."];

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub exclude_punct: bool,
    pub punct_tags: Vec<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude_punct: true,
            punct_tags: DEFAULT_PUNCT_TAGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl EvalOptions {
    pub fn keep_punct() -> Self {
        EvalOptions { exclude_punct: false, ..EvalOptions::default() }
    }

    fn is_punct(&self, tag: &str) -> bool {
        self.exclude_punct && self.punct_tags.iter().any(|t| t == tag)
    }
}

/// Scores as percentages plus the exact counts they were computed from.
/// A labeled token scores toward LAS only when its head is correct and
/// both sides carry an equal label, so evaluating unlabeled predictions
/// yields LAS 0 by definition. With zero evaluated tokens every
/// percentage is vacuously 100.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub uem: f64,
    pub evaluated: usize,
    pub excluded: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
    pub sentences: usize,
    pub exact_matches: usize,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl EvalReport {
    /// Aligned human-readable block, two decimals.
    pub fn format_text(&self) -> String {
        format!(
            "UAS        {:6.2}\nLAS        {:6.2}\nUEM        {:6.2}\nevaluated  {:6}\nexcluded   {:6}\n",
            self.uas, self.las, self.uem, self.evaluated, self.excluded
        )
    }

    /// Machine-readable lines, one `key<TAB>value` per metric.
    pub fn format_kv(&self) -> String {
        format!(
            "uas\t{:.2}\nlas\t{:.2}\nuem\t{:.2}\nevaluated\t{}\nexcluded\t{}\n",
            self.uas, self.las, self.uem, self.evaluated, self.excluded
        )
    }
}

/// Compare parallel treebanks token by token.
pub fn attachment_scores(
    gold: &Treebank,
    predicted: &Treebank,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let mut evaluated = 0;
    let mut excluded = 0;
    let mut correct_heads = 0;
    let mut correct_labeled = 0;
    let mut exact_matches = 0;
    for (s_idx, (g, p)) in gold.sentences.iter().zip(&predicted.sentences).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch {
                sentence: s_idx + 1,
                gold: g.len(),
                predicted: p.len(),
            });
        }
        let mut all_heads_correct = true;
        for (t_idx, (gt, pt)) in g.tokens.iter().zip(&p.tokens).enumerate() {
            if options.is_punct(gt.pos()) {
                excluded += 1;
                continue;
            }
            let gh = gt.head.ok_or(EvalError::MissingHead {
                side: "gold",
                sentence: s_idx + 1,
                token: t_idx + 1,
            })?;
            let ph = pt.head.ok_or(EvalError::MissingHead {
                side: "predicted",
                sentence: s_idx + 1,
                token: t_idx + 1,
            })?;
            evaluated += 1;
            if gh == ph {
                correct_heads += 1;
                if let (Some(gl), Some(pl)) = (&gt.label, &pt.label) {
                    if gl == pl {
                        correct_labeled += 1;
                    }
                }
            } else {
                all_heads_correct = false;
            }
        }
        if all_heads_correct {
            exact_matches += 1;
        }
    }
    Ok(EvalReport {
        uas: pct(correct_heads, evaluated),
        las: pct(correct_labeled, evaluated),
        uem: pct(exact_matches, gold.len()),
        evaluated,
        excluded,
        correct_heads,
        correct_labeled,
        sentences: gold.len(),
        exact_matches,
    })
}

/// Share of head arrays that are trees, and that are projective trees.
/// Non-trees count as non-projective without consulting the projectivity
/// predicate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeRates {
    pub tree_pct: f64,
    pub projective_pct: f64,
}

pub fn tree_rates(head_arrays: &[Vec<usize>]) -> TreeRates {
    let trees = head_arrays.iter().filter(|h| is_tree(h)).count();
    let projective = head_arrays
        .iter()
        .filter(|h| is_tree(h) && is_projective(h))
        .count();
    TreeRates {
        tree_pct: pct(trees, head_arrays.len()),
        projective_pct: pct(projective, head_arrays.len()),
    }
}

/// One row of the length breakdown: every sentence in the bin is at most
/// `max_len` words long.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthBin {
    pub max_len: usize,
    pub sentences: usize,
    pub uas: f64,
}

/// UAS per length bin: sentences sorted by length ascending and split into
/// `bins` groups of equal size, any remainder going to the earliest bins.
pub fn uas_by_length(
    gold: &Treebank,
    predicted: &Treebank,
    bins: usize,
    options: &EvalOptions,
) -> Result<Vec<LengthBin>, EvalError> {
    assert!(bins >= 1);
    if gold.len() != predicted.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    if gold.len() < bins {
        return Err(EvalError::TooFewSentences { have: gold.len(), bins });
    }
    let mut order: Vec<usize> = (0..gold.len()).collect();
    order.sort_by_key(|&i| gold.sentences[i].len());

    let base = order.len() / bins;
    let remainder = order.len() % bins;
    let mut rows = Vec::with_capacity(bins);
    let mut cursor = 0;
    for b in 0..bins {
        let size = base + usize::from(b < remainder);
        let members = &order[cursor..cursor + size];
        cursor += size;
        let mut slice_gold = Treebank::default();
        let mut slice_pred = Treebank::default();
        for &i in members {
            slice_gold.sentences.push(gold.sentences[i].clone());
            slice_pred.sentences.push(predicted.sentences[i].clone());
        }
        let report = attachment_scores(&slice_gold, &slice_pred, options)?;
        let max_len = members.iter().map(|&i| gold.sentences[i].len()).max().unwrap();
        rows.push(LengthBin { max_len, sentences: size, uas: report.uas });
    }
    Ok(rows)
}

/// Tab-separated rows `max_len<TAB>sentences<TAB>uas` for plotting.
pub fn format_length_bins(rows: &[LengthBin]) -> String {
    let mut out = String::from("max_len\tsentences\tuas\n");
    for row in rows {
        out.push_str(&format!("{}\t{}\t{:.2}\n", row.max_len, row.sentences, row.uas));
    }
    out
}
