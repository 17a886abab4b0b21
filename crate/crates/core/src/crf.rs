//! Linear-chain CRF: emission projection, forward–backward in log space,
//! negative log-likelihood with analytic gradients, and Viterbi decoding.
//!
//! A sequence `y` of length `n` scores
//! `Σ_i E[i, y_i] + Σ_{i<n-1} T[y_i, y_{i+1}]`. There are no start or stop
//! transitions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bio::LabelScheme;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `n × C` per-token label scores.
pub type EmissionMatrix = Matrix;

/// Parameters of one tagging head: a `d → C` linear layer and a `C × C`
/// transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub transitions: Matrix,
    /// Forbid `O → I-c` and `B-c/I-c → I-c'` (c ≠ c') transitions.
    pub constrained: Option<LabelScheme>,
}

impl CrfHead {
    pub fn zeros(dim: usize, num_tags: usize) -> Self {
        Self {
            weights: Matrix::zeros(dim, num_tags),
            bias: vec![0.0; num_tags],
            transitions: Matrix::zeros(num_tags, num_tags),
            constrained: None,
        }
    }

    /// Linear layer drawn uniformly from `[-0.1, 0.1]`; transitions start at zero.
    pub fn random<R: Rng + ?Sized>(dim: usize, num_tags: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(dim, num_tags);
        for v in head.weights.as_mut_slice().iter_mut().chain(head.bias.iter_mut()) {
            *v = rng.gen_range(-0.1..=0.1);
        }
        head
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_tags(&self) -> usize {
        self.weights.cols()
    }

    /// Transition scores with the optional BIO mask applied.
    pub fn effective_transitions(&self) -> Matrix {
        match &self.constrained {
            None => self.transitions.clone(),
            Some(scheme) => {
                let mut t = self.transitions.clone();
                for (from, to) in forbidden_transitions(scheme) {
                    t.set(from, to, f64::NEG_INFINITY);
                }
                t
            }
        }
    }

    pub fn emissions(&self, embeddings: &Matrix) -> Result<EmissionMatrix> {
        emissions(embeddings, self)
    }

    pub fn decode(&self, embeddings: &Matrix) -> Result<Vec<usize>> {
        let e = self.emissions(embeddings)?;
        Ok(viterbi_decode(&e, &self.effective_transitions()))
    }

    /// Chain rule from emission gradients to the linear layer: returns
    /// `(Hᵀ·dE, Σ_i dE_i)`.
    pub fn linear_gradients(&self, embeddings: &Matrix, d_emissions: &Matrix) -> (Matrix, Vec<f64>) {
        let (n, d, c) = (embeddings.rows(), self.dim(), self.num_tags());
        let mut dw = Matrix::zeros(d, c);
        let mut db = vec![0.0; c];
        for i in 0..n {
            let h = embeddings.row(i);
            let g = d_emissions.row(i);
            for (k, &hk) in h.iter().enumerate() {
                if hk == 0.0 {
                    continue;
                }
                let row = dw.row_mut(k);
                for (w, &gj) in row.iter_mut().zip(g) {
                    *w += hk * gj;
                }
            }
            for (b, &gj) in db.iter_mut().zip(g) {
                *b += gj;
            }
        }
        (dw, db)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.transitions.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Pairs `(from, to)` that cannot occur in a valid BIO sequence.
pub fn forbidden_transitions(scheme: &LabelScheme) -> Vec<(usize, usize)> {
    let c = scheme.num_tags();
    let mut out = Vec::new();
    for from in 0..c {
        for to in 0..c {
            if scheme.is_inside(to) && scheme.category(from) != scheme.category(to) {
                out.push((from, to));
            }
        }
    }
    out
}

/// Gradients of one head's loss with respect to its parameters and emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub transitions: Matrix,
    pub emissions: Matrix,
}

/// Loss of one sequence together with its gradients w.r.t. `E` and `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceGradients {
    pub loss: f64,
    pub emissions: Matrix,
    pub transitions: Matrix,
}

/// `E[i] = h_i · W + b`.
pub fn emissions(embeddings: &Matrix, head: &CrfHead) -> Result<EmissionMatrix> {
    if embeddings.cols() != head.dim() {
        return Err(Error::Dimension(format!(
            "embeddings have dimension {}, head expects {}",
            embeddings.cols(),
            head.dim()
        )));
    }
    let c = head.num_tags();
    let mut out = Matrix::zeros(embeddings.rows(), c);
    for i in 0..embeddings.rows() {
        let row = out.row_mut(i);
        row.copy_from_slice(&head.bias);
        for (k, &hk) in embeddings.row(i).iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(head.weights.row(k)) {
                *o += hk * w;
            }
        }
    }
    Ok(out)
}

fn check_shapes(e: &Matrix, t: &Matrix) -> Result<()> {
    if t.rows() != e.cols() || t.cols() != e.cols() {
        return Err(Error::Dimension(format!(
            "transition matrix is {}×{} for {} labels",
            t.rows(),
            t.cols(),
            e.cols()
        )));
    }
    Ok(())
}

fn check_labels(e: &Matrix, y: &[usize]) -> Result<()> {
    if y.len() != e.rows() {
        return Err(Error::Dimension(format!("{} labels for {} tokens", y.len(), e.rows())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= e.cols()) {
        return Err(Error::invalid(format!("label index {bad} ≥ {}", e.cols())));
    }
    Ok(())
}

pub fn score_sequence(e: &EmissionMatrix, t: &Matrix, y: &[usize]) -> Result<f64> {
    check_shapes(e, t)?;
    check_labels(e, y)?;
    let emit: f64 = y.iter().enumerate().map(|(i, &l)| e.get(i, l)).sum();
    let trans: f64 = y.windows(2).map(|w| t.get(w[0], w[1])).sum();
    Ok(emit + trans)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn forward(e: &Matrix, t: &Matrix) -> Matrix {
    let (n, c) = (e.rows(), e.cols());
    let mut alpha = Matrix::zeros(n, c);
    if n == 0 {
        return alpha;
    }
    alpha.row_mut(0).copy_from_slice(e.row(0));
    for i in 1..n {
        for to in 0..c {
            let prev = alpha.row(i - 1);
            let v = log_sum_exp((0..c).map(|from| prev[from] + t.get(from, to)));
            alpha.set(i, to, v + e.get(i, to));
        }
    }
    alpha
}

fn backward(e: &Matrix, t: &Matrix) -> Matrix {
    let (n, c) = (e.rows(), e.cols());
    let mut beta = Matrix::zeros(n, c);
    for i in (0..n.saturating_sub(1)).rev() {
        for from in 0..c {
            let v = log_sum_exp((0..c).map(|to| t.get(from, to) + e.get(i + 1, to) + beta.get(i + 1, to)));
            beta.set(i, from, v);
        }
    }
    beta
}

/// `log Z(E)` by the forward recursion. An empty sequence has `log Z = 0`.
pub fn log_partition(e: &EmissionMatrix, t: &Matrix) -> f64 {
    let n = e.rows();
    if n == 0 {
        return 0.0;
    }
    let alpha = forward(e, t);
    log_sum_exp(alpha.row(n - 1).iter().copied())
}

pub fn nll(e: &EmissionMatrix, t: &Matrix, gold: &[usize]) -> Result<f64> {
    let score = score_sequence(e, t, gold)?;
    Ok(log_partition(e, t) - score)
}

/// Per-token marginals `P(y_i = c)` (`n × C`) and summed pairwise marginals
/// `Σ_i P(y_i = c, y_{i+1} = c')` (`C × C`), plus `log Z`.
pub fn marginals(e: &EmissionMatrix, t: &Matrix) -> Result<(Matrix, Matrix, f64)> {
    check_shapes(e, t)?;
    let (n, c) = (e.rows(), e.cols());
    let mut node = Matrix::zeros(n, c);
    let mut pair = Matrix::zeros(c, c);
    if n == 0 {
        return Ok((node, pair, 0.0));
    }
    let alpha = forward(e, t);
    let beta = backward(e, t);
    let log_z = log_sum_exp(alpha.row(n - 1).iter().copied());
    for i in 0..n {
        for k in 0..c {
            node.set(i, k, (alpha.get(i, k) + beta.get(i, k) - log_z).exp());
        }
    }
    for i in 0..n - 1 {
        for from in 0..c {
            let a = alpha.get(i, from);
            if a == f64::NEG_INFINITY {
                continue;
            }
            for to in 0..c {
                let lp = a + t.get(from, to) + e.get(i + 1, to) + beta.get(i + 1, to) - log_z;
                pair.add_to(from, to, lp.exp());
            }
        }
    }
    Ok((node, pair, log_z))
}

/// NLL and its gradients:
/// `∂/∂E[i,c] = P(y_i=c) − 1{y_i=c}`,
/// `∂/∂T[c,c'] = Σ_i P(y_i=c, y_{i+1}=c') − #(c→c' in gold)`.
pub fn nll_gradients(e: &EmissionMatrix, t: &Matrix, gold: &[usize]) -> Result<SequenceGradients> {
    let score = score_sequence(e, t, gold)?;
    let (mut d_e, mut d_t, log_z) = marginals(e, t)?;
    for (i, &l) in gold.iter().enumerate() {
        d_e.add_to(i, l, -1.0);
    }
    for w in gold.windows(2) {
        d_t.add_to(w[0], w[1], -1.0);
    }
    Ok(SequenceGradients {
        loss: log_z - score,
        emissions: d_e,
        transitions: d_t,
    })
}

/// Label-weighted NLL. Each token's emission gradient row is scaled by the
/// weight of its gold tag; the loss value and the transition gradient are
/// scaled by the mean token weight. All-ones weights reproduce
/// [`nll_gradients`].
pub fn weighted_nll_gradients(
    e: &EmissionMatrix,
    t: &Matrix,
    gold: &[usize],
    tag_weights: &[f64],
) -> Result<SequenceGradients> {
    if tag_weights.len() != e.cols() {
        return Err(Error::Dimension(format!("{} tag weights for {} labels", tag_weights.len(), e.cols())));
    }
    let mut g = nll_gradients(e, t, gold)?;
    if gold.is_empty() {
        return Ok(g);
    }
    let mut total = 0.0;
    for (i, &l) in gold.iter().enumerate() {
        let w = tag_weights[l];
        total += w;
        g.emissions.row_mut(i).iter_mut().for_each(|v| *v *= w);
    }
    let mean = total / gold.len() as f64;
    g.loss *= mean;
    g.transitions.scale(mean);
    Ok(g)
}

/// Highest-scoring label sequence. Ties go to the lowest label index.
pub fn viterbi_decode(e: &EmissionMatrix, t: &Matrix) -> Vec<usize> {
    let (n, c) = (e.rows(), e.cols());
    if n == 0 || c == 0 {
        return Vec::new();
    }
    let mut delta: Vec<f64> = e.row(0).to_vec();
    let mut back = vec![0usize; n * c];
    for i in 1..n {
        let mut next = vec![0.0; c];
        for to in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (from, &d) in delta.iter().enumerate() {
                let v = d + t.get(from, to);
                if v > best {
                    best = v;
                    arg = from;
                }
            }
            next[to] = best + e.get(i, to);
            back[i * c + to] = arg;
        }
        delta = next;
    }
    let mut last = 0;
    for k in 1..c {
        if delta[k] > delta[last] {
            last = k;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i * c + path[i]];
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every label sequence of length `n` over `c` labels.
    fn all_paths(n: usize, c: usize) -> Vec<Vec<usize>> {
        let mut paths = vec![vec![]];
        for _ in 0..n {
            paths = paths
                .into_iter()
                .flat_map(|p| {
                    (0..c).map(move |l| {
                        let mut q = p.clone();
                        q.push(l);
                        q
                    })
                })
                .collect();
        }
        paths
    }

    fn brute_score(e: &Matrix, t: &Matrix, y: &[usize]) -> f64 {
        let mut s = 0.0;
        for i in 0..y.len() {
            s += e.get(i, y[i]);
            if i + 1 < y.len() {
                s += t.get(y[i], y[i + 1]);
            }
        }
        s
    }

    fn brute_log_z(e: &Matrix, t: &Matrix) -> f64 {
        all_paths(e.rows(), e.cols())
            .iter()
            .map(|y| brute_score(e, t, y).exp())
            .sum::<f64>()
            .ln()
    }

    fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_c: usize) -> (Matrix, Matrix) {
        let n = rng.gen_range(1..=max_n);
        let c = rng.gen_range(1..=max_c);
        let e = Matrix::from_vec(n, c, (0..n * c).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let t = Matrix::from_vec(c, c, (0..c * c).map(|_| rng.gen_range(-2.0..2.0)).collect());
        (e, t)
    }

    #[test]
    fn emission_examples() {
        let head = CrfHead::zeros(3, 4);
        let h = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        assert_eq!(head.emissions(&h).unwrap(), Matrix::zeros(1, 4));

        let mut head = CrfHead::zeros(1, 2);
        head.weights = Matrix::from_rows(&[vec![1.0, -1.0]]);
        let e = head.emissions(&Matrix::from_rows(&[vec![2.0]])).unwrap();
        assert_eq!(e.row(0), &[2.0, -2.0]);
        assert!(head.emissions(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn emissions_match_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, d, c) = (6, 5, 4);
        let head = CrfHead::random(d, c, &mut rng);
        let h = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let e = head.emissions(&h).unwrap();
        for i in 0..n {
            for j in 0..c {
                let mut s = head.bias[j];
                for k in 0..d {
                    s += h.get(i, k) * head.weights.get(k, j);
                }
                assert!((e.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_examples() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = Matrix::zeros(2, 2);
        assert_eq!(score_sequence(&e, &t, &[0, 1]).unwrap(), 2.0);
        let e1 = Matrix::from_rows(&[vec![0.3, 0.7]]);
        assert_eq!(score_sequence(&e1, &t, &[1]).unwrap(), 0.7);
        assert!(score_sequence(&e, &t, &[0, 2]).is_err());
        assert!(score_sequence(&e, &t, &[0]).is_err());
    }

    #[test]
    fn partition_examples() {
        let t = Matrix::zeros(2, 2);
        let e = Matrix::from_rows(&[vec![0.0, 0.0]]);
        assert!((log_partition(&e, &t) - 2f64.ln()).abs() < 1e-12);
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((log_partition(&e, &t) - 2.626_523_375_036_445_6).abs() < 1e-9);
    }

    #[test]
    fn partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (e, t) = random_instance(&mut rng, 5, 5);
            assert!((log_partition(&e, &t) - brute_log_z(&e, &t)).abs() <= 1e-9);
        }
    }

    #[test]
    fn uniform_nll() {
        let e = Matrix::zeros(3, 2);
        let t = Matrix::zeros(2, 2);
        for y in all_paths(3, 2) {
            assert!((nll(&e, &t, &y).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        }
        let g = nll_gradients(&e, &t, &[0, 1, 1]).unwrap();
        assert!((g.emissions.get(0, 0) + 0.5).abs() < 1e-12);
        assert!((g.emissions.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((g.emissions.get(1, 1) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for _ in 0..30 {
            let (e, t) = random_instance(&mut rng, 5, 4);
            let y: Vec<usize> = (0..e.rows()).map(|_| rng.gen_range(0..e.cols())).collect();
            let g = nll_gradients(&e, &t, &y).unwrap();
            for i in 0..e.rows() {
                let row_sum: f64 = g.emissions.row(i).iter().sum();
                assert!(row_sum.abs() < 1e-12);
                for c in 0..e.cols() {
                    let (mut ep, mut em) = (e.clone(), e.clone());
                    ep.add_to(i, c, h);
                    em.add_to(i, c, -h);
                    let fd = (nll(&ep, &t, &y).unwrap() - nll(&em, &t, &y).unwrap()) / (2.0 * h);
                    assert!((fd - g.emissions.get(i, c)).abs() < 1e-6);
                }
            }
            for a in 0..t.rows() {
                for b in 0..t.cols() {
                    let (mut tp, mut tm) = (t.clone(), t.clone());
                    tp.add_to(a, b, h);
                    tm.add_to(a, b, -h);
                    let fd = (nll(&e, &tp, &y).unwrap() - nll(&e, &tm, &y).unwrap()) / (2.0 * h);
                    assert!((fd - g.transitions.get(a, b)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn weighted_with_unit_weights_is_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (e, t) = random_instance(&mut rng, 5, 4);
            let y: Vec<usize> = (0..e.rows()).map(|_| rng.gen_range(0..e.cols())).collect();
            let a = nll_gradients(&e, &t, &y).unwrap();
            let b = weighted_nll_gradients(&e, &t, &y, &vec![1.0; e.cols()]).unwrap();
            assert!((a.loss - b.loss).abs() <= 1e-12);
            assert_eq!(a.emissions, b.emissions);
            assert_eq!(a.transitions, b.transitions);
        }
    }

    #[test]
    fn weighted_scales_rows() {
        let e = Matrix::zeros(2, 2);
        let t = Matrix::zeros(2, 2);
        let g = weighted_nll_gradients(&e, &t, &[0, 1], &[1.0, 3.0]).unwrap();
        assert!((g.emissions.get(1, 1) + 1.5).abs() < 1e-12);
        assert!((g.emissions.get(0, 0) + 0.5).abs() < 1e-12);
        assert!((g.loss - 2.0 * 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn viterbi_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..300 {
            let (e, t) = random_instance(&mut rng, 5, 5);
            let best = all_paths(e.rows(), e.cols())
                .iter()
                .map(|y| brute_score(&e, &t, y))
                .fold(f64::NEG_INFINITY, f64::max);
            let y = viterbi_decode(&e, &t);
            assert!((brute_score(&e, &t, &y) - best).abs() < 1e-12);
        }
    }

    #[test]
    fn viterbi_examples() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = Matrix::zeros(2, 2);
        assert_eq!(viterbi_decode(&e, &t), vec![0, 1]);
        let e = Matrix::from_rows(&[vec![0.1, 0.9, 0.3], vec![2.0, -1.0, 0.0], vec![0.0, 0.0, 0.5]]);
        assert_eq!(viterbi_decode(&e, &Matrix::zeros(3, 3)), vec![1, 0, 2]);
        // exact ties resolve to the lowest index
        assert_eq!(viterbi_decode(&Matrix::zeros(3, 3), &Matrix::zeros(3, 3)), vec![0, 0, 0]);
    }

    #[test]
    fn constrained_transitions_yield_valid_bio() {
        let scheme = LabelScheme::trigger();
        let mut head = CrfHead::zeros(1, scheme.num_tags());
        head.constrained = Some(scheme.clone());
        let t = head.effective_transitions();
        let mut e = Matrix::zeros(3, scheme.num_tags());
        // strongly prefer O, I-Drug, I-Alcohol
        e.set(0, 0, 5.0);
        e.set(1, scheme.tag_index("I-Drug").unwrap(), 5.0);
        e.set(2, scheme.tag_index("I-Alcohol").unwrap(), 5.0);
        let y = viterbi_decode(&e, &t);
        assert_eq!(crate::bio::repair_bio(&y, &scheme), y);
        assert!(log_partition(&e, &t).is_finite());
        let (node, _, _) = marginals(&e, &t).unwrap();
        let s: f64 = node.row(1).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
