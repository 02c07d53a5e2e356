//! Well-formedness checks and maximum-spanning-tree decoding over arc
//! weights.
//!
//! Greedy head selection usually yields a tree on its own; [`repair`] leaves
//! such output untouched and only invokes a decoder when the head array is
//! malformed (or non-projective while projective output was requested).
//! [`cle_decode`] finds the maximum spanning arborescence with the
//! Chu-Liu-Edmonds contract-and-expand algorithm; [`eisner_decode`] finds
//! the best projective tree with the O(N^3) span dynamic program.
//!
//! All decoding happens at f64 regardless of model precision. Ties are
//! broken deterministically toward smaller indices (strict `>` during
//! ascending scans).

use thiserror::Error;

use crate::corpus::is_projective;

/// Head array failed validation.
#[derive(Debug, Error)]
#[error("head array {0:?} does not form a tree rooted at 0")]
pub struct NotATree(pub Vec<usize>);

/// A validated dependency tree: a head array over dependents 1..=N that
/// passes [`is_tree`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyTree(Vec<usize>);

impl DependencyTree {
    pub fn new(heads: Vec<usize>) -> Result<Self, NotATree> {
        if is_tree(&heads) {
            Ok(DependencyTree(heads))
        } else {
            Err(NotATree(heads))
        }
    }

    pub fn heads(&self) -> &[usize] {
        &self.0
    }

    pub fn into_heads(self) -> Vec<usize> {
        self.0
    }
}

/// True when the head array forms a tree rooted at the artificial node 0:
/// every value is in range and every word is reachable from the root. Each
/// word has exactly one head by construction, so reachability alone rules
/// out cycles.
pub fn is_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if heads.iter().any(|&h| h > n) {
        return false;
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (i, &h) in heads.iter().enumerate() {
        children[h].push(i + 1);
    }
    let mut seen = vec![false; n + 1];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut reached = 0;
    while let Some(v) = stack.pop() {
        for &c in &children[v] {
            if !seen[c] {
                seen[c] = true;
                reached += 1;
                stack.push(c);
            }
        }
    }
    reached == n
}

/// Dense arc weights for a sentence of N words: `get(head, dep)` with heads
/// in 0..=N and dependents in 1..=N. Cells that can never be arcs (into the
/// root, self-loops) hold negative infinity.
#[derive(Clone, Debug)]
pub struct ArcWeights {
    n: usize,
    data: Vec<f64>,
}

impl ArcWeights {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a sentence has at least one word");
        ArcWeights {
            n,
            data: vec![f64::NEG_INFINITY; (n + 1) * (n + 1)],
        }
    }

    /// Build from a function over valid (head, dependent) pairs.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut w = ArcWeights::new(n);
        for d in 1..=n {
            for h in 0..=n {
                if h != d {
                    w.set(h, d, f(h, d));
                }
            }
        }
        w
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, head: usize, dep: usize, weight: f64) {
        assert!(dep >= 1 && dep <= self.n && head <= self.n && head != dep);
        self.data[head * (self.n + 1) + dep] = weight;
    }

    pub fn get(&self, head: usize, dep: usize) -> f64 {
        debug_assert!(dep >= 1 && dep <= self.n && head <= self.n && head != dep);
        self.data[head * (self.n + 1) + dep]
    }
}

/// Total weight of a head array under `w`.
pub fn tree_score(w: &ArcWeights, heads: &[usize]) -> f64 {
    heads
        .iter()
        .enumerate()
        .map(|(i, &h)| w.get(h, i + 1))
        .sum()
}

/// Maximum spanning arborescence rooted at 0 (Chu-Liu-Edmonds). When the
/// greedy per-word best heads already form a tree, that tree is returned
/// unchanged; otherwise cycles are contracted and the choice is re-made
/// recursively.
pub fn cle_decode(w: &ArcWeights) -> DependencyTree {
    let m = w.n + 1;
    let weights: Vec<Vec<f64>> = (0..m)
        .map(|h| {
            (0..m)
                .map(|d| {
                    if d >= 1 && h != d {
                        w.get(h, d)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect();
    let orig: Vec<Vec<(usize, usize)>> = (0..m)
        .map(|h| (0..m).map(|d| (h, d)).collect())
        .collect();
    let rep: Vec<Vec<usize>> = (0..m).map(|v| vec![v]).collect();

    let arcs = cle_recurse(&weights, &orig, &rep);
    let mut heads = vec![usize::MAX; w.n];
    for (h, d) in arcs {
        heads[d - 1] = h;
    }
    DependencyTree::new(heads).expect("spanning arborescence is a tree")
}

/// One recursion level. `weights[h][d]` is the current contracted graph,
/// `orig[h][d]` the original arc each current edge stands for, and `rep[v]`
/// the original vertices vertex `v` represents. Returns one original arc per
/// non-root current vertex.
fn cle_recurse(
    weights: &[Vec<f64>],
    orig: &[Vec<(usize, usize)>],
    rep: &[Vec<usize>],
) -> Vec<(usize, usize)> {
    let m = weights.len();
    let mut best = vec![0usize; m];
    for d in 1..m {
        let mut best_h = usize::MAX;
        let mut best_w = f64::NEG_INFINITY;
        for h in 0..m {
            if h != d && weights[h][d] > best_w {
                best_w = weights[h][d];
                best_h = h;
            }
        }
        best[d] = best_h;
    }

    let Some(mut cycle) = find_cycle(&best) else {
        return (1..m).map(|d| orig[best[d]][d]).collect();
    };
    cycle.sort_unstable();
    let in_cycle = {
        let mut mask = vec![false; m];
        for &v in &cycle {
            mask[v] = true;
        }
        mask
    };

    // contracted graph: kept vertices keep their relative order, the cycle
    // becomes the last vertex c
    let kept: Vec<usize> = (0..m).filter(|&v| !in_cycle[v]).collect();
    let c = kept.len();
    let m2 = kept.len() + 1;
    let mut w2 = vec![vec![f64::NEG_INFINITY; m2]; m2];
    let mut orig2 = vec![vec![(usize::MAX, usize::MAX); m2]; m2];
    let mut rep2: Vec<Vec<usize>> = kept.iter().map(|&v| rep[v].clone()).collect();
    rep2.push(cycle.iter().flat_map(|&v| rep[v].iter().copied()).collect());

    for (i2, &a) in kept.iter().enumerate() {
        for (j2, &b) in kept.iter().enumerate() {
            if i2 != j2 {
                w2[i2][j2] = weights[a][b];
                orig2[i2][j2] = orig[a][b];
            }
        }
    }
    for (i2, &h) in kept.iter().enumerate() {
        // entering the cycle at d replaces d's cycle arc, so the gain is
        // w(h,d) minus the weight of the arc it breaks
        let mut bw = f64::NEG_INFINITY;
        for &d in &cycle {
            let cand = weights[h][d] - weights[best[d]][d];
            if cand > bw {
                bw = cand;
                orig2[i2][c] = orig[h][d];
            }
        }
        w2[i2][c] = bw;
    }
    for (j2, &d) in kept.iter().enumerate() {
        if d == 0 {
            continue;
        }
        let mut bw = f64::NEG_INFINITY;
        for &h in &cycle {
            if weights[h][d] > bw {
                bw = weights[h][d];
                orig2[c][j2] = orig[h][d];
            }
        }
        w2[c][j2] = bw;
    }

    let mut arcs = cle_recurse(&w2, &orig2, &rep2);

    // the arc that entered the contracted vertex breaks exactly one cycle
    // arc; all other cycle arcs survive
    let entering = arcs
        .iter()
        .find(|&&(_, od)| rep2[c].contains(&od))
        .copied()
        .expect("contracted vertex has a head");
    let broken = *cycle
        .iter()
        .find(|&&v| rep[v].contains(&entering.1))
        .expect("entering arc lands in the cycle");
    for &d in &cycle {
        if d != broken {
            arcs.push(orig[best[d]][d]);
        }
    }
    arcs
}

/// First cycle among the greedy head choices, if any.
fn find_cycle(best: &[usize]) -> Option<Vec<usize>> {
    let m = best.len();
    // 0 = unvisited, 1 = on the current path, 2 = settled
    let mut color = vec![0u8; m];
    color[0] = 2;
    for start in 1..m {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while color[v] == 0 {
            color[v] = 1;
            path.push(v);
            v = best[v];
        }
        if color[v] == 1 {
            let pos = path.iter().position(|&x| x == v).unwrap();
            return Some(path[pos..].to_vec());
        }
        for p in path {
            color[p] = 2;
        }
    }
    None
}

/// Best projective tree by Eisner's span dynamic program. Spans are either
/// complete (the head dominates everything on one side) or incomplete (an
/// arc spans the endpoints, material in between still attaches); each table
/// entry stores its best split for backpointer recovery.
pub fn eisner_decode(w: &ArcWeights) -> DependencyTree {
    let n = w.n;
    let m = n + 1;
    let idx = |i: usize, j: usize| i * m + j;
    let neg = f64::NEG_INFINITY;
    // [left-headed/right-headed] x complete/incomplete
    let mut comp_r = vec![neg; m * m]; // head at i, covers i..=j
    let mut comp_l = vec![neg; m * m]; // head at j
    let mut inc_r = vec![neg; m * m]; // arc i -> j
    let mut inc_l = vec![neg; m * m]; // arc j -> i
    let mut bp_comp_r = vec![0usize; m * m];
    let mut bp_comp_l = vec![0usize; m * m];
    let mut bp_inc_r = vec![0usize; m * m];
    let mut bp_inc_l = vec![0usize; m * m];
    for i in 0..m {
        comp_r[idx(i, i)] = 0.0;
        comp_l[idx(i, i)] = 0.0;
    }

    for len in 1..=n {
        for i in 0..m - len {
            let j = i + len;
            let mut best = neg;
            let mut best_k = i;
            for k in i..j {
                let s = comp_r[idx(i, k)] + comp_l[idx(k + 1, j)];
                if s > best {
                    best = s;
                    best_k = k;
                }
            }
            inc_r[idx(i, j)] = best + w.get(i, j);
            bp_inc_r[idx(i, j)] = best_k;
            if i > 0 {
                // an arc into position 0 is impossible
                inc_l[idx(i, j)] = best + w.get(j, i);
                bp_inc_l[idx(i, j)] = best_k;
            }

            let mut best = neg;
            let mut best_k = i + 1;
            for k in i + 1..=j {
                let s = inc_r[idx(i, k)] + comp_r[idx(k, j)];
                if s > best {
                    best = s;
                    best_k = k;
                }
            }
            comp_r[idx(i, j)] = best;
            bp_comp_r[idx(i, j)] = best_k;

            let mut best = neg;
            let mut best_k = i;
            for k in i..j {
                let s = comp_l[idx(i, k)] + inc_l[idx(k, j)];
                if s > best {
                    best = s;
                    best_k = k;
                }
            }
            comp_l[idx(i, j)] = best;
            bp_comp_l[idx(i, j)] = best_k;
        }
    }

    let mut heads = vec![usize::MAX; n];
    // explicit work stack; items are (i, j, table)
    enum Span {
        CompR,
        CompL,
        IncR,
        IncL,
    }
    let mut todo = vec![(0usize, n, Span::CompR)];
    while let Some((i, j, span)) = todo.pop() {
        if i == j {
            continue;
        }
        match span {
            Span::CompR => {
                let k = bp_comp_r[idx(i, j)];
                todo.push((i, k, Span::IncR));
                todo.push((k, j, Span::CompR));
            }
            Span::CompL => {
                let k = bp_comp_l[idx(i, j)];
                todo.push((i, k, Span::CompL));
                todo.push((k, j, Span::IncL));
            }
            Span::IncR => {
                heads[j - 1] = i;
                let k = bp_inc_r[idx(i, j)];
                todo.push((i, k, Span::CompR));
                todo.push((k + 1, j, Span::CompL));
            }
            Span::IncL => {
                heads[i - 1] = j;
                let k = bp_inc_l[idx(i, j)];
                todo.push((i, k, Span::CompR));
                todo.push((k + 1, j, Span::CompL));
            }
        }
    }
    let tree = DependencyTree::new(heads).expect("span derivation covers every word");
    debug_assert!(is_projective(tree.heads()));
    tree
}

/// Which well-formedness a parse must satisfy, and therefore which decoder
/// repairs it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Projective,
    NonProjective,
}

/// Result of [`repair`]: the final tree, and whether a decoder ran.
#[derive(Clone, Debug)]
pub struct RepairOutcome {
    pub tree: DependencyTree,
    pub repaired: bool,
}

/// Post-hoc repair of greedy head choices. Output that is already a
/// well-formed tree (and projective, in projective mode) is returned
/// bit-identically without running a decoder; anything else is replaced by
/// the maximum-spanning-tree solution under `weights`.
pub fn repair(greedy: &[usize], weights: &ArcWeights, mode: DecodeMode) -> RepairOutcome {
    let ok = match mode {
        DecodeMode::Projective => is_tree(greedy) && is_projective(greedy),
        DecodeMode::NonProjective => is_tree(greedy),
    };
    if ok {
        return RepairOutcome {
            tree: DependencyTree::new(greedy.to_vec()).expect("checked above"),
            repaired: false,
        };
    }
    let tree = match mode {
        DecodeMode::Projective => eisner_decode(weights),
        DecodeMode::NonProjective => cle_decode(weights),
    };
    RepairOutcome {
        tree,
        repaired: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_and_stars_are_trees() {
        assert!(is_tree(&[0]));
        assert!(is_tree(&[0, 1, 2]));
        assert!(is_tree(&[2, 0, 2]));
    }

    #[test]
    fn cycles_and_out_of_range_heads_are_not_trees() {
        assert!(!is_tree(&[2, 1]));
        assert!(!is_tree(&[1]));
        assert!(!is_tree(&[0, 3, 2]));
        assert!(!is_tree(&[0, 9]));
    }

    #[test]
    fn single_word_decodes_to_root_attachment() {
        let w = ArcWeights::from_fn(1, |_, _| -1.25);
        assert_eq!(cle_decode(&w).heads(), &[0]);
        assert_eq!(eisner_decode(&w).heads(), &[0]);
    }

    #[test]
    fn cle_breaks_a_two_cycle() {
        // mutual attraction between 1 and 2, weak root arcs: the decoder
        // must break the 1<->2 cycle by the cheapest root entry
        let mut w = ArcWeights::new(2);
        w.set(0, 1, -1.0);
        w.set(0, 2, -3.0);
        w.set(1, 2, 10.0);
        w.set(2, 1, 10.0);
        let t = cle_decode(&w);
        assert_eq!(t.heads(), &[0, 1]);
        assert!((tree_score(&w, t.heads()) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn eisner_tie_breaks_deterministically() {
        // [0, 1] and [2, 0] both score 6 (double root attachment only 2);
        // smallest-split preference picks [0, 1]
        let mut w = ArcWeights::new(2);
        w.set(0, 1, 1.0);
        w.set(0, 2, 1.0);
        w.set(1, 2, 5.0);
        w.set(2, 1, 5.0);
        let t = eisner_decode(&w);
        assert_eq!(t.heads(), &[0, 1]);
        assert!((tree_score(&w, t.heads()) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn repair_keeps_well_formed_greedy_output() {
        let w = ArcWeights::from_fn(3, |h, d| -((h + d) as f64));
        let greedy = vec![0, 1, 2];
        let out = repair(&greedy, &w, DecodeMode::NonProjective);
        assert!(!out.repaired);
        assert_eq!(out.tree.heads(), &greedy[..]);
    }

    #[test]
    fn repair_fixes_a_cycle() {
        let mut w = ArcWeights::new(2);
        w.set(0, 1, 1.0);
        w.set(0, 2, 0.5);
        w.set(1, 2, 2.0);
        w.set(2, 1, 2.0);
        let out = repair(&[2, 1], &w, DecodeMode::NonProjective);
        assert!(out.repaired);
        assert!(is_tree(out.tree.heads()));
    }

    #[test]
    fn projective_repair_replaces_crossing_trees() {
        // a valid but non-projective tree must be replaced in projective mode
        let crossing = vec![3, 4, 0, 3];
        assert!(is_tree(&crossing));
        let w = ArcWeights::from_fn(4, |h, d| if crossing[d - 1] == h { 1.0 } else { 0.0 });
        let out = repair(&crossing, &w, DecodeMode::Projective);
        assert!(out.repaired);
        assert!(crate::corpus::is_projective(out.tree.heads()));
        let keep = repair(&crossing, &w, DecodeMode::NonProjective);
        assert!(!keep.repaired);
    }
}
