//! Circle loss over class proxies, plus plain softmax cross-entropy.
//!
//! For one sample with within-class scores `s_p^i` (`i < K`) and
//! between-class scores `s_n^j` (`j < L`):
//!
//! ```text
//! loss = log(1 + sum_i sum_j exp(gamma * (alpha_n^j * (s_n^j - d_n) - alpha_p^i * (s_p^i - d_p))))
//! ```
//!
//! Self-paced weighting uses `alpha_p = max(0, 1 + m - s_p)`,
//! `alpha_n = max(0, s_n + m)` and the margins `d_p = 1 - m`, `d_n = m`.
//! Without the margins every pair with `alpha_p s_p > alpha_n s_n` is
//! already near zero loss, including `s_p = s_n`, and training collapses all
//! embeddings onto one direction. Pinned weighting sets both weights to 1 and
//! both margins to 0.
//!
//! With class-level labels `K = 1`: `s_p` is the cosine similarity between
//! the embedding and its class proxy, and the `L = classes - 1` other
//! proxies give the `s_n`. The batch loss is the mean over samples.
//! Gradients flow through the self-paced weights as well as the scores.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// How the weighting factors `alpha_p`, `alpha_n` are set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `alpha_p = [1 + m - s_p]+`, `alpha_n = [s_n + m]+`, margins `1 - m` and `m`.
    SelfPaced,
    /// `alpha_p = alpha_n = 1`, no margins.
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleLossConfig {
    pub gamma: f64,
    pub margin: f64,
    pub weighting: Weighting,
}

impl Default for CircleLossConfig {
    fn default() -> Self {
        CircleLossConfig {
            gamma: 32.0,
            margin: 0.25,
            weighting: Weighting::SelfPaced,
        }
    }
}

impl CircleLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("circle loss gamma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Config("circle loss margin must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// `(d_p, d_n)`: offsets subtracted from the within- and between-class scores.
    pub fn margins(&self) -> (f64, f64) {
        match self.weighting {
            Weighting::SelfPaced => (1.0 - self.margin, self.margin),
            Weighting::Pinned => (0.0, 0.0),
        }
    }

    /// `(alpha, d alpha / d s)` for a within-class score.
    fn alpha_p<T: Real>(&self, sp: T) -> (T, T) {
        match self.weighting {
            Weighting::Pinned => (T::one(), T::zero()),
            Weighting::SelfPaced => {
                let a = T::one() + T::from_f64(self.margin) - sp;
                if a > T::zero() {
                    (a, -T::one())
                } else {
                    (T::zero(), T::zero())
                }
            }
        }
    }

    /// `(alpha, d alpha / d s)` for a between-class score.
    fn alpha_n<T: Real>(&self, sn: T) -> (T, T) {
        match self.weighting {
            Weighting::Pinned => (T::one(), T::zero()),
            Weighting::SelfPaced => {
                let a = sn + T::from_f64(self.margin);
                if a > T::zero() {
                    (a, T::one())
                } else {
                    (T::zero(), T::zero())
                }
            }
        }
    }
}

/// `log(1 + sum exp(z))` and the derivative with respect to each `z`,
/// evaluated without overflow.
fn log1p_sum_exp<T: Real>(z: &[T]) -> (T, Vec<T>) {
    let m = z.iter().copied().fold(T::zero(), T::max);
    let base = (-m).exp();
    let exps: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let total = base + exps.iter().copied().sum::<T>();
    let value = m + total.ln();
    let grads = exps.into_iter().map(|e| e / total).collect();
    (value, grads)
}

/// Loss of one sample from raw similarity scores, in the general
/// `K x L` form. Returns the loss and its gradients with respect to the
/// positive and negative scores.
pub fn circle_loss_scores<T: Real>(
    positives: &[T],
    negatives: &[T],
    config: &CircleLossConfig,
) -> (T, Vec<T>, Vec<T>) {
    let gamma = T::from_f64(config.gamma);
    let (dp, dn) = config.margins();
    let (dp, dn) = (T::from_f64(dp), T::from_f64(dn));
    let mut z = Vec::with_capacity(positives.len() * negatives.len());
    for &sp in positives {
        let (ap, _) = config.alpha_p(sp);
        for &sn in negatives {
            let (an, _) = config.alpha_n(sn);
            z.push(gamma * (an * (sn - dn) - ap * (sp - dp)));
        }
    }
    let (value, q) = log1p_sum_exp(&z);
    let mut gp = vec![T::zero(); positives.len()];
    let mut gn = vec![T::zero(); negatives.len()];
    for (i, &sp) in positives.iter().enumerate() {
        let (ap, dap) = config.alpha_p(sp);
        for (j, &sn) in negatives.iter().enumerate() {
            let (an, dan) = config.alpha_n(sn);
            let qij = q[i * negatives.len() + j];
            gp[i] -= qij * gamma * (ap + (sp - dp) * dap);
            gn[j] += qij * gamma * (an + (sn - dn) * dan);
        }
    }
    (value, gp, gn)
}

const NORM_DELTA: f64 = 1e-12;

fn smooth_norm<T: Real>(v: &[T]) -> T {
    (v.iter().map(|&x| x * x).sum::<T>() + T::from_f64(NORM_DELTA)).sqrt()
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Contract(alloc::format!(
            "{} labels for {rows} samples",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Data(alloc::format!(
            "sample {i} has label {l}, but there are only {classes} classes"
        )));
    }
    Ok(())
}

/// Cosine similarity of every embedding row with every proxy row:
/// `(n, classes)`.
pub fn cosine_scores<T: Real>(embeddings: &Tensor<T>, proxies: &Tensor<T>) -> Result<Tensor<T>> {
    let es = embeddings.shape();
    let ps = proxies.shape();
    let d = es.sample_len();
    if ps.sample_len() != d {
        return Err(Error::Dimension { op: "cosine_scores", lhs: es, rhs: ps });
    }
    let pn: Vec<T> = proxies.data().chunks(d).map(smooth_norm).collect();
    let mut out = Vec::with_capacity(es.n * ps.n);
    for e in embeddings.data().chunks(d) {
        let en = smooth_norm(e);
        for (p, &pnorm) in proxies.data().chunks(d).zip(&pn) {
            let dot: T = e.iter().zip(p).map(|(&a, &b)| a * b).sum();
            out.push(dot / (en * pnorm));
        }
    }
    Tensor::from_vec(Shape::matrix(es.n, ps.n), out)
}

/// Mean circle loss of a batch against class proxies. `embeddings` is
/// `(n, d)`, `proxies` is `(classes, d)`.
pub fn circle_loss<T: Real>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    proxies: &Tensor<T>,
    config: &CircleLossConfig,
) -> Result<T> {
    circle_loss_with_grad(embeddings, labels, proxies, config).map(|(l, _, _)| l)
}

/// [`circle_loss`] together with its gradients for embeddings and proxies.
pub fn circle_loss_with_grad<T: Real>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    proxies: &Tensor<T>,
    config: &CircleLossConfig,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let es = embeddings.shape();
    let ps = proxies.shape();
    let d = es.sample_len();
    if es.n == 0 {
        return Err(Error::Contract("circle loss needs at least one sample".into()));
    }
    if ps.sample_len() != d {
        return Err(Error::Dimension { op: "circle_loss", lhs: es, rhs: ps });
    }
    check_labels(labels, es.n, ps.n)?;
    let classes = ps.n;
    let e_all = embeddings.data();
    let p_all = proxies.data();
    let pn: Vec<T> = p_all.chunks(d).map(smooth_norm).collect();
    let inv_n = T::one() / T::from_usize(es.n);

    let mut total = T::zero();
    let mut ge = vec![T::zero(); es.numel()];
    let mut gp = vec![T::zero(); ps.numel()];
    let mut scores = vec![T::zero(); classes];
    let mut negatives = Vec::with_capacity(classes);
    for (i, &label) in labels.iter().enumerate() {
        let e = &e_all[i * d..][..d];
        let en = smooth_norm(e);
        for (k, s) in scores.iter_mut().enumerate() {
            let p = &p_all[k * d..][..d];
            let dot: T = e.iter().zip(p).map(|(&a, &b)| a * b).sum();
            *s = dot / (en * pn[k]);
        }
        negatives.clear();
        negatives.extend(scores.iter().enumerate().filter(|(k, _)| *k != label).map(|(_, &s)| s));
        let (value, g_pos, g_neg) = circle_loss_scores(&[scores[label]], &negatives, config);
        total += value;

        let mut neg = g_neg.iter();
        for k in 0..classes {
            let gs = if k == label { g_pos[0] } else { *neg.next().expect("negatives") } * inv_n;
            if gs == T::zero() {
                continue;
            }
            let p = &p_all[k * d..][..d];
            let s = scores[k];
            let inv_prod = T::one() / (en * pn[k]);
            let e_sq = en * en;
            let p_sq = pn[k] * pn[k];
            let ge_row = &mut ge[i * d..][..d];
            for t in 0..d {
                ge_row[t] += gs * (p[t] * inv_prod - s * e[t] / e_sq);
            }
            let gp_row = &mut gp[k * d..][..d];
            for t in 0..d {
                gp_row[t] += gs * (e[t] * inv_prod - s * p[t] / p_sq);
            }
        }
    }
    Ok((
        total * inv_n,
        Tensor::from_vec(es, ge)?,
        Tensor::from_vec(ps, gp)?,
    ))
}

/// Mean softmax cross-entropy of `(n, classes)` logits, with its gradient.
pub fn cross_entropy_with_grad<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    let classes = s.sample_len();
    if s.n == 0 {
        return Err(Error::Contract("cross entropy needs at least one sample".into()));
    }
    check_labels(labels, s.n, classes)?;
    let inv_n = T::one() / T::from_usize(s.n);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(s.numel());
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total += lse - row[label];
        for (k, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let y = if k == label { T::one() } else { T::zero() };
            grad.push((p - y) * inv_n);
        }
    }
    Ok((total * inv_n, Tensor::from_vec(s, grad)?))
}
