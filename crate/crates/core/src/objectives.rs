//! Self-supervised objectives: cross-view contrastive loss, Student-t soft
//! cluster assignment `Q`, its sharpened target `P`, and `KL(P‖Q)`.
//!
//! Each loss has a differentiable builder (`*_var`) that records onto a
//! [`Tape`] and a plain function that evaluates the same graph.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkern::{dot, DenseMatrix, RowMask, Tape, Var};

/// How the negative set of each node is formed.
#[derive(Clone, Debug, PartialEq)]
pub enum Negatives {
    /// Every node that is not a positive.
    Complement,
    /// Explicit per-node sets, disjoint from the positives.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveSpec {
    pub temperature: f64,
    /// Per node, ascending and non-empty.
    pub positives: Vec<Vec<usize>>,
    pub negatives: Negatives,
}

impl ContrastiveSpec {
    /// `pos_i = {i}` across views, all other nodes negative.
    pub fn self_positives(n: usize, temperature: f64) -> Self {
        Self {
            temperature,
            positives: (0..n).map(|i| vec![i]).collect(),
            negatives: Negatives::Complement,
        }
    }

    /// `pos_i = {i}` plus up to `k` extra positives per node, taken from
    /// `ranked[i]` in order (callers rank meta-path neighbors by path count).
    pub fn with_extra_positives(ranked: &[Vec<usize>], k: usize, temperature: f64) -> Self {
        let positives = ranked
            .iter()
            .enumerate()
            .map(|(i, cands)| {
                let mut pos = vec![i];
                pos.extend(cands.iter().copied().filter(|&j| j != i).take(k));
                pos.sort_unstable();
                pos.dedup();
                pos
            })
            .collect();
        Self {
            temperature,
            positives,
            negatives: Negatives::Complement,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(
                "temperature",
                format!("{} must be positive", self.temperature),
            ));
        }
        if self.positives.len() != n {
            return Err(Error::Contract(format!(
                "{} positive sets for {n} nodes",
                self.positives.len()
            )));
        }
        for (i, pos) in self.positives.iter().enumerate() {
            if pos.is_empty() {
                return Err(Error::Contract(format!("node {i} has no positives")));
            }
            if pos.iter().any(|&j| j >= n) {
                return Err(Error::Contract(format!("node {i} has an out-of-range positive")));
            }
        }
        if let Negatives::Explicit(neg) = &self.negatives {
            if neg.len() != n {
                return Err(Error::Contract(format!("{} negative sets for {n} nodes", neg.len())));
            }
            for (i, (pos, neg)) in self.positives.iter().zip(neg).enumerate() {
                if neg.iter().any(|j| pos.contains(j) || *j >= n) {
                    return Err(Error::Contract(format!(
                        "node {i} has a negative that is a positive or out of range"
                    )));
                }
            }
        }
        Ok(())
    }

    fn masks(&self) -> (Arc<RowMask>, Arc<RowMask>) {
        let pos = Arc::new(RowMask::Sets(self.positives.clone()));
        let all = match &self.negatives {
            Negatives::Complement => RowMask::Full,
            Negatives::Explicit(neg) => RowMask::Sets(
                self.positives
                    .iter()
                    .zip(neg)
                    .map(|(p, n)| {
                        let mut u: Vec<usize> = p.iter().chain(n).copied().collect();
                        u.sort_unstable();
                        u.dedup();
                        u
                    })
                    .collect(),
            ),
        };
        (pos, Arc::new(all))
    }
}

/// Cosine similarity; errors on a zero vector.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateEmbedding("cosine of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Mean over nodes of
/// `−log Σ_{pos} exp(δ/τ) / Σ_{pos ∪ neg} exp(δ/τ)`, averaged over both
/// view directions.
pub fn contrastive_loss_var(tape: &mut Tape, z_nep: Var, z_mpp: Var, spec: &ContrastiveSpec) -> Result<Var> {
    let n = tape.value(z_nep).rows();
    if tape.value(z_mpp).shape() != tape.value(z_nep).shape() {
        return Err(tape.value(z_nep).mismatch("contrastive_loss", tape.value(z_mpp)));
    }
    spec.validate(n)?;
    let (pos, all) = spec.masks();
    let a = tape.row_l2_normalize(z_nep)?;
    let b = tape.row_l2_normalize(z_mpp)?;
    let mut directions = Vec::with_capacity(2);
    for (anchor, other) in [(a, b), (b, a)] {
        let sim = tape.matmul_transpose(anchor, other)?;
        let logits = tape.scale(sim, 1.0 / spec.temperature);
        let denom = tape.log_sum_exp_rows(logits, all.clone())?;
        let numer = tape.log_sum_exp_rows(logits, pos.clone())?;
        let per_node = tape.sub(denom, numer)?;
        directions.push(tape.mean_all(per_node));
    }
    let both = tape.add(directions[0], directions[1])?;
    Ok(tape.scale(both, 0.5))
}

pub fn contrastive_loss(z_nep: &DenseMatrix, z_mpp: &DenseMatrix, spec: &ContrastiveSpec) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(z_nep.clone());
    let b = tape.leaf(z_mpp.clone());
    let loss = contrastive_loss_var(&mut tape, a, b, spec)?;
    Ok(tape.scalar(loss))
}

/// `Q_ij ∝ (1 + ‖z_i − μ_j‖²)^{-1}`, rows normalized.
pub fn soft_assignment_var(tape: &mut Tape, z: Var, centroids: Var) -> Result<Var> {
    if tape.value(centroids).rows() == 0 {
        return Err(Error::EmptyInput("no cluster centroids".into()));
    }
    let d = tape.sq_dist(z, centroids)?;
    let kernel = tape.student_t(d);
    tape.row_sum_normalize(kernel)
}

pub fn soft_assignment(z: &DenseMatrix, centroids: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let cv = tape.leaf(centroids.clone());
    let q = soft_assignment_var(&mut tape, zv, cv)?;
    Ok(tape.value(q).clone())
}

/// `P_ij ∝ Q_ij² / f_j` with cluster frequency `f_j = Σ_i Q_ij`.
pub fn target_distribution(q: &DenseMatrix) -> Result<DenseMatrix> {
    if q.values().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Contract("target distribution needs a strictly positive Q".into()));
    }
    let mut freq = vec![0.0; q.cols()];
    for r in 0..q.rows() {
        for (f, v) in freq.iter_mut().zip(q.row(r)) {
            *f += v;
        }
    }
    let mut p = DenseMatrix::zeros(q.rows(), q.cols());
    for r in 0..q.rows() {
        let row = p.row_mut(r);
        for (c, (o, &v)) in row.iter_mut().zip(q.row(r)).enumerate() {
            *o = v * (v / freq[c]);
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|o| *o /= total);
    }
    Ok(p)
}

fn check_same_shape(op: &'static str, p: &DenseMatrix, q: &DenseMatrix) -> Result<()> {
    if p.shape() != q.shape() {
        return Err(p.mismatch(op, q));
    }
    Ok(())
}

/// `Σ_ij P_ij log P_ij`, with `0 log 0 = 0`.
fn neg_entropy_sum(p: &DenseMatrix) -> f64 {
    p.values()
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
        .sum()
}

/// `KL(P‖Q) / n` with `P` a constant target.
pub fn kl_loss_var(tape: &mut Tape, target: &DenseMatrix, q: Var) -> Result<Var> {
    check_same_shape("kl_loss", target, tape.value(q))?;
    let n = target.rows().max(1) as f64;
    let log_q = tape.log(q)?;
    let weighted = tape.mul_const(log_q, Arc::new(target.clone()))?;
    let cross = tape.sum_all(weighted);
    let neg = tape.scale(cross, -1.0 / n);
    Ok(tape.add_const(neg, neg_entropy_sum(target) / n))
}

pub fn kl_loss(p: &DenseMatrix, q: &DenseMatrix) -> Result<f64> {
    let mut tape = Tape::new();
    let qv = tape.leaf(q.clone());
    let kl = kl_loss_var(&mut tape, p, qv)?;
    Ok(tape.scalar(kl))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub contrastive: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contrastive: 1.0,
            kl: 0.1,
        }
    }
}

/// Per-epoch loss breakdown.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub l_co: f64,
    pub l_kl: f64,
    pub total: f64,
    pub val_metric: Option<f64>,
}

impl LossReport {
    /// `epoch <TAB> l_co <TAB> l_kl <TAB> total <TAB> val_metric`
    pub fn to_tsv_line(&self) -> String {
        let val = self.val_metric.map_or_else(|| "NA".to_string(), |v| v.to_string());
        format!("{}\t{}\t{}\t{}\t{val}", self.epoch, self.l_co, self.l_kl, self.total)
    }

    pub fn is_finite(&self) -> bool {
        self.l_co.is_finite() && self.l_kl.is_finite() && self.total.is_finite()
    }
}

/// Recorded total loss and its terms.
pub struct TotalLoss {
    pub total: Var,
    pub contrastive: Var,
    pub kl: Var,
    pub q: Var,
}

/// `λ_co · L_co + λ_kl · KL(P‖Q)` on the fused embedding `z_nep + z_mpp`.
///
/// `target` is the frozen `P`; when `None` it is computed from the current
/// `Q` and still treated as a constant.
pub fn total_loss_var(
    tape: &mut Tape,
    z_nep: Var,
    z_mpp: Var,
    centroids: Var,
    spec: &ContrastiveSpec,
    target: Option<&DenseMatrix>,
    weights: LossWeights,
) -> Result<TotalLoss> {
    if weights.contrastive < 0.0 || weights.kl < 0.0 {
        return Err(Error::config("loss weights", "must be non-negative"));
    }
    let contrastive = contrastive_loss_var(tape, z_nep, z_mpp, spec)?;
    let fused = tape.add(z_nep, z_mpp)?;
    let q = soft_assignment_var(tape, fused, centroids)?;
    let computed;
    let target = match target {
        Some(p) => p,
        None => {
            computed = target_distribution(tape.value(q))?;
            &computed
        }
    };
    let kl = kl_loss_var(tape, target, q)?;
    let a = tape.scale(contrastive, weights.contrastive);
    let b = tape.scale(kl, weights.kl);
    let total = tape.add(a, b)?;
    Ok(TotalLoss {
        total,
        contrastive,
        kl,
        q,
    })
}

pub fn total_loss(
    z_nep: &DenseMatrix,
    z_mpp: &DenseMatrix,
    spec: &ContrastiveSpec,
    centroids: &DenseMatrix,
    weights: LossWeights,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let a = tape.leaf(z_nep.clone());
    let b = tape.leaf(z_mpp.clone());
    let c = tape.leaf(centroids.clone());
    let t = total_loss_var(&mut tape, a, b, c, spec, None, weights)?;
    Ok(LossReport {
        epoch: 0,
        l_co: tape.scalar(t.contrastive),
        l_kl: tape.scalar(t.kl),
        total: tape.scalar(t.total),
        val_metric: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{numeric_gradient, random_matrix, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err().kind(), "degenerate-embedding");
    }

    #[test]
    fn empty_negatives_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 5, 3, 1.0);
        let b = random_matrix(&mut rng, 5, 3, 1.0);
        let spec = ContrastiveSpec {
            temperature: 0.3,
            positives: (0..5).map(|i| vec![i]).collect(),
            negatives: Negatives::Explicit(vec![vec![]; 5]),
        };
        assert_eq!(contrastive_loss(&a, &b, &spec).unwrap(), 0.0);
    }

    #[test]
    fn two_node_case() {
        let z = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let spec = ContrastiveSpec::self_positives(2, 1.0);
        let loss = contrastive_loss(&z, &z, &spec).unwrap();
        assert!((loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn spec_validation() {
        let mut spec = ContrastiveSpec::self_positives(2, 0.0);
        assert_eq!(spec.validate(2).unwrap_err().kind(), "config");
        spec.temperature = 0.5;
        spec.positives[1].clear();
        assert!(spec.validate(2).is_err());
        let overlap = ContrastiveSpec {
            temperature: 0.5,
            positives: vec![vec![0], vec![1]],
            negatives: Negatives::Explicit(vec![vec![0], vec![0]]),
        };
        assert!(overlap.validate(2).is_err());
    }

    #[test]
    fn extra_positives_take_ranked_neighbors() {
        let ranked = vec![vec![2, 1, 0], vec![1], vec![0, 1]];
        let spec = ContrastiveSpec::with_extra_positives(&ranked, 1, 0.5);
        assert_eq!(spec.positives, vec![vec![0, 2], vec![1], vec![0, 2]]);
    }

    #[test]
    fn single_centroid_and_symmetric_assignments() {
        let z = m(&[vec![0.3, -1.0], vec![5.0, 2.0]]);
        let q = soft_assignment(&z, &m(&[vec![1.0, 1.0]])).unwrap();
        assert_eq!(q.values(), &[1.0, 1.0]);
        let q = soft_assignment(&m(&[vec![0.0, 0.0]]), &m(&[vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap();
        assert_eq!(q.values(), &[0.5, 0.5]);
    }

    #[test]
    fn target_distribution_cases() {
        let q = m(&[vec![0.25, 0.5, 0.25]]);
        assert_eq!(target_distribution(&q).unwrap(), q);
        let q = m(&[vec![0.2, 0.5, 0.3]]);
        assert!(target_distribution(&q).unwrap().max_abs_diff(&q) < 1e-15);

        let q = m(&[vec![0.9, 0.1], vec![0.5, 0.5]]);
        let p = target_distribution(&q).unwrap();
        let (a, b) = (0.81 / 1.4, 0.01 / 0.6);
        assert!((p[(0, 0)] - a / (a + b)).abs() < 1e-15);
        assert!((p[(0, 0)] - 0.9720).abs() < 1e-4);
        assert!((p[(0, 1)] - 0.0280).abs() < 1e-4);
    }

    #[test]
    fn kl_cases() {
        let q = m(&[vec![0.5, 0.5]]);
        assert_eq!(kl_loss(&q, &q).unwrap(), 0.0);
        let kl = kl_loss(&m(&[vec![1.0, 0.0]]), &q).unwrap();
        assert!((kl - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn total_loss_weight_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 6, 3, 1.0);
        let b = random_matrix(&mut rng, 6, 3, 1.0);
        let c = random_matrix(&mut rng, 2, 3, 1.0);
        let spec = ContrastiveSpec::self_positives(6, 0.5);
        let only_co = total_loss(&a, &b, &spec, &c, LossWeights { contrastive: 1.0, kl: 0.0 }).unwrap();
        assert_eq!(only_co.total, contrastive_loss(&a, &b, &spec).unwrap());
        let none = total_loss(&a, &b, &spec, &c, LossWeights { contrastive: 0.0, kl: 0.0 }).unwrap();
        assert_eq!(none.total, 0.0);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs = [
            random_matrix(&mut rng, 6, 3, 1.0),
            random_matrix(&mut rng, 6, 3, 1.0),
            random_matrix(&mut rng, 3, 3, 1.0),
        ];
        let spec = ContrastiveSpec::self_positives(6, 0.5);
        let weights = LossWeights { contrastive: 1.0, kl: 0.7 };
        // P is frozen at the starting point for both routes.
        let mut tape = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let fused = tape.add(v[0], v[1]).unwrap();
        let q0 = soft_assignment_var(&mut tape, fused, v[2]).unwrap();
        let p = target_distribution(tape.value(q0)).unwrap();

        let eval = |xs: &[DenseMatrix]| {
            let mut t = Tape::new();
            let v: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
            let loss = total_loss_var(&mut t, v[0], v[1], v[2], &spec, Some(&p), weights).unwrap();
            t.scalar(loss.total)
        };
        let mut tape = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = total_loss_var(&mut tape, v[0], v[1], v[2], &spec, Some(&p), weights).unwrap();
        let grads = tape.backward(loss.total).unwrap();
        for k in 0..3 {
            let numeric = numeric_gradient(&inputs[k], 1e-6, |probe| {
                let mut xs = inputs.clone();
                xs[k] = probe.clone();
                eval(&xs)
            });
            let err = relative_error(grads.try_get(v[k]).unwrap(), &numeric);
            assert!(err < 1e-5, "input {k}: {err}");
        }
    }
}
