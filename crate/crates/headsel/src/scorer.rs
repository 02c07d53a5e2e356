//! Head scoring and selection: for every dependent, score each candidate
//! head with a single-hidden-layer map over the two tokens' encodings,
//! normalize per dependent, and pick heads greedily.
//!
//! The score of head j for dependent i is v . tanh(U a_j + W a_i), computed
//! for all pairs at once by stacking the encodings column-wise. Candidate
//! sets exclude the dependent itself by default; the ablation variant keeps
//! the self score in the softmax denominator while everything downstream
//! still refuses self arcs.

use thiserror::Error;

use crate::decoder::ArcWeights;
use crate::encoder::EncodedSentence;
use crate::numeric::{NodeId, NumericError, ParamId, ParamStore, Real, Tape, Tensor};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("cannot score a sentence with no words")]
    EmptySentence,
    #[error("dependent {dep} has gold head {head}, outside 0..={n}")]
    BadGoldHead { dep: usize, head: usize, n: usize },
    #[error("dependent {dep} cannot be its own gold head")]
    GoldSelfLoop { dep: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Whether the per-dependent softmax normalizes over candidates j != i only
/// (the default, matching the edge set) or over every j including the
/// dependent itself (the literal formulation, kept for ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SelectorVariant {
    #[default]
    ExcludeSelf,
    IncludeSelf,
}

/// Pairwise scoring parameters: v (2d), U and W (2d x 2d).
#[derive(Clone, Debug)]
pub struct Scorer {
    pub v: ParamId,
    pub u: ParamId,
    pub w: ParamId,
    pub dim: usize,
}

impl Scorer {
    pub fn register<T: Real>(store: &mut ParamStore<T>, dim: usize) -> Self {
        assert!(dim > 0);
        Scorer {
            v: store.add("scorer.v", Tensor::zeros(&[dim])),
            u: store.add("scorer.u", Tensor::zeros(&[dim, dim])),
            w: store.add("scorer.w", Tensor::zeros(&[dim, dim])),
            dim,
        }
    }
}

/// Tape nodes of raw arc scores: `per_dep[i-1]` is the length-(N+1) score
/// vector for dependent i over candidate heads 0..=N (the self entry is
/// computed but masked by every consumer).
#[derive(Clone, Debug)]
pub struct ArcScores {
    pub per_dep: Vec<NodeId>,
    pub n: usize,
}

/// Score every (head, dependent) pair of an encoded sentence.
pub fn score_arcs<T: Real>(
    tape: &mut Tape<T>,
    enc: &EncodedSentence,
    scorer: &Scorer,
) -> Result<ArcScores, ScorerError> {
    let n = enc.n();
    if n == 0 {
        return Err(ScorerError::EmptySentence);
    }
    let v = tape.param(scorer.v);
    let u = tape.param(scorer.u);
    let w = tape.param(scorer.w);
    let stacked = tape.hstack(&enc.a)?;
    let head_terms = tape.matmul(u, stacked)?; // column j holds U a_j
    let dep_terms = tape.matmul(w, stacked)?; // column i holds W a_i
    let mut per_dep = Vec::with_capacity(n);
    for i in 1..=n {
        let dep_term = tape.column(dep_terms, i)?;
        let summed = tape.add_col(head_terms, dep_term)?;
        let hidden = tape.tanh(summed);
        per_dep.push(tape.vecmat(v, hidden)?);
    }
    Ok(ArcScores { per_dep, n })
}

/// Raw score values, rows indexed by candidate head 0..=N and columns by
/// dependent 1..=N. The self cells are masked and must not be read.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, head: usize, dep: usize) -> f64 {
        assert!(dep >= 1 && dep <= self.n && head <= self.n);
        assert!(head != dep, "score of a self arc is masked");
        self.data[head * self.n + (dep - 1)]
    }
}

pub fn score_matrix<T: Real>(tape: &Tape<T>, scores: &ArcScores) -> ScoreMatrix {
    let n = scores.n;
    let mut data = vec![f64::NAN; (n + 1) * n];
    for (col, &node) in scores.per_dep.iter().enumerate() {
        let values = tape.value(node);
        for head in 0..=n {
            if head != col + 1 {
                data[head * n + col] = values.at(head).as_f64();
            }
        }
    }
    ScoreMatrix { n, data }
}

/// One dependent's probability over candidate heads, indexed by head
/// position. Under [`SelectorVariant::ExcludeSelf`] the self entry is
/// exactly zero; the ablation variant leaves its softmax mass in place but
/// [`HeadDistribution::argmax`] never selects it.
#[derive(Clone, Debug)]
pub struct HeadDistribution {
    dep: usize,
    probs: Vec<f64>,
}

impl HeadDistribution {
    pub fn dependent(&self) -> usize {
        self.dep
    }

    pub fn prob(&self, head: usize) -> f64 {
        self.probs[head]
    }

    pub fn candidates(&self) -> usize {
        self.probs.len()
    }

    /// Most probable non-self head, ties broken toward the smaller index.
    pub fn argmax(&self) -> usize {
        let mut best = usize::MAX;
        let mut best_p = f64::NEG_INFINITY;
        for (j, &p) in self.probs.iter().enumerate() {
            if j != self.dep && p > best_p {
                best_p = p;
                best = j;
            }
        }
        best
    }
}

/// Per-dependent softmax nodes over the candidate scores. Under
/// `ExcludeSelf` the vector for dependent i has N entries (self gathered
/// out); under `IncludeSelf` it has N+1.
fn softmax_nodes<T: Real>(
    tape: &mut Tape<T>,
    scores: &ArcScores,
    variant: SelectorVariant,
) -> Result<Vec<NodeId>, NumericError> {
    let n = scores.n;
    scores
        .per_dep
        .iter()
        .enumerate()
        .map(|(idx, &node)| {
            let dep = idx + 1;
            let kept = match variant {
                SelectorVariant::ExcludeSelf => {
                    let indices: Vec<usize> = (0..=n).filter(|&j| j != dep).collect();
                    tape.gather(node, &indices)?
                }
                SelectorVariant::IncludeSelf => node,
            };
            tape.softmax(kept)
        })
        .collect()
}

/// Softmax the scores and extract per-dependent distributions as values.
pub fn head_distributions<T: Real>(
    tape: &mut Tape<T>,
    scores: &ArcScores,
    variant: SelectorVariant,
) -> Result<Vec<HeadDistribution>, ScorerError> {
    let n = scores.n;
    let nodes = softmax_nodes(tape, scores, variant)?;
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(idx, &node)| {
            let dep = idx + 1;
            let values = tape.value(node);
            let mut probs = vec![0.0; n + 1];
            match variant {
                SelectorVariant::ExcludeSelf => {
                    let mut k = 0;
                    for j in 0..=n {
                        if j != dep {
                            probs[j] = values.at(k).as_f64();
                            k += 1;
                        }
                    }
                }
                SelectorVariant::IncludeSelf => {
                    for j in 0..=n {
                        probs[j] = values.at(j).as_f64();
                    }
                }
            }
            HeadDistribution { dep, probs }
        })
        .collect())
}

/// Sentence loss: the summed negative log probability of every gold arc.
/// Batch averaging over sentences is the caller's concern.
pub fn head_nll<T: Real>(
    tape: &mut Tape<T>,
    scores: &ArcScores,
    gold_heads: &[usize],
    variant: SelectorVariant,
) -> Result<NodeId, ScorerError> {
    let n = scores.n;
    assert_eq!(gold_heads.len(), n, "one gold head per word");
    for (idx, &head) in gold_heads.iter().enumerate() {
        let dep = idx + 1;
        if head == dep {
            return Err(ScorerError::GoldSelfLoop { dep });
        }
        if head > n {
            return Err(ScorerError::BadGoldHead { dep, head, n });
        }
    }
    let probs = softmax_nodes(tape, scores, variant)?;
    let mut log_terms = Vec::with_capacity(n);
    for (idx, &p) in probs.iter().enumerate() {
        let dep = idx + 1;
        let gold = gold_heads[idx];
        let position = match variant {
            SelectorVariant::ExcludeSelf => {
                if gold > dep {
                    gold - 1
                } else {
                    gold
                }
            }
            SelectorVariant::IncludeSelf => gold,
        };
        log_terms.push(tape.log_pick(p, position)?);
    }
    let stacked = tape.concat(&log_terms)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, -1.0))
}

/// Greedy parse: each dependent independently takes its most probable head.
pub fn greedy_heads(distributions: &[HeadDistribution]) -> Vec<usize> {
    distributions.iter().map(HeadDistribution::argmax).collect()
}

/// Decoder weights from the distributions: log probabilities by default
/// (summing to tree log-likelihood), raw probabilities for the ablation.
/// Probabilities are floored at the smallest positive float before the
/// logarithm so weights stay finite.
pub fn to_arc_weights(distributions: &[HeadDistribution], log_weights: bool) -> ArcWeights {
    let n = distributions.len();
    let mut w = ArcWeights::new(n);
    for dist in distributions {
        let dep = dist.dependent();
        for head in 0..=n {
            if head != dep {
                let p = dist.prob(head);
                let value = if log_weights {
                    p.max(f64::MIN_POSITIVE).ln()
                } else {
                    p
                };
                w.set(head, dep, value);
            }
        }
    }
    w
}
