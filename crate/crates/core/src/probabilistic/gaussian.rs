use crate::fields::{log_sum_exp, Field2D, Field3D};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Gaussian with diagonal covariance, parameterized by per-dimension std.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian<S = f64> {
    mean: Vec<S>,
    std: Vec<S>,
}

impl<S: Scalar> DiagonalGaussian<S> {
    pub fn new(mean: Vec<S>, std: Vec<S>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape(format!(
                "mean has {} entries, std has {}",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DiagonalGaussian"));
        }
        if std.iter().any(|s| *s <= S::zero()) {
            return Err(Error::InvalidParameter("std must be strictly positive".into()));
        }
        Ok(Self { mean, std })
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![S::zero(); dim],
            std: vec![S::one(); dim],
        }
    }

    /// Same std in every dimension.
    pub fn isotropic(mean: Vec<S>, std: S) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, vec![std; n])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn std(&self) -> &[S] {
        &self.std
    }

    pub fn log_density(&self, x: &[S]) -> Result<S> {
        check_dims(x.len(), self.dim(), "log_density")?;
        let half = S::of(0.5);
        let ln_2pi = (S::PI() + S::PI()).ln();
        Ok(x
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| {
                let z = (*x - *m) / *s;
                -half * z * z - s.ln() - half * ln_2pi
            })
            .sum())
    }
}

fn check_dims(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: dimension {a} vs {b}")));
    }
    Ok(())
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_diag<S: Scalar>(q: &DiagonalGaussian<S>, p: &DiagonalGaussian<S>) -> Result<S> {
    check_dims(q.dim(), p.dim(), "kl_diag")?;
    let half = S::of(0.5);
    let total: S = q
        .mean
        .iter()
        .zip(&q.std)
        .zip(p.mean.iter().zip(&p.std))
        .map(|((qm, qs), (pm, ps))| {
            let d = *qm - *pm;
            (*ps / *qs).ln() + (*qs * *qs + d * d) / (S::of(2.0) * *ps * *ps) - half
        })
        .sum();
    // Rounding can push an exact zero slightly negative.
    Ok(total.max(S::zero()))
}

/// Gradient of [`kl_diag`] with respect to `q`'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KlGradient<S = f64> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

pub fn kl_diag_grad<S: Scalar>(
    q: &DiagonalGaussian<S>,
    p: &DiagonalGaussian<S>,
) -> Result<KlGradient<S>> {
    check_dims(q.dim(), p.dim(), "kl_diag_grad")?;
    let mut mean = Vec::with_capacity(q.dim());
    let mut std = Vec::with_capacity(q.dim());
    for ((qm, qs), (pm, ps)) in q.mean.iter().zip(&q.std).zip(p.mean.iter().zip(&p.std)) {
        let var_p = *ps * *ps;
        mean.push((*qm - *pm) / var_p);
        std.push(-S::one() / *qs + *qs / var_p);
    }
    Ok(KlGradient { mean, std })
}

/// `mean + std ⊙ noise`.
pub fn sample_reparam<S: Scalar>(d: &DiagonalGaussian<S>, noise: &[S]) -> Result<Vec<S>> {
    check_dims(noise.len(), d.dim(), "sample_reparam")?;
    Ok(d.mean
        .iter()
        .zip(&d.std)
        .zip(noise)
        .map(|((m, s), z)| *m + *s * *z)
        .collect())
}

/// Differential entropy `Σ ½ ln(2πe) + ln σ_i`.
pub fn entropy_diag<S: Scalar>(d: &DiagonalGaussian<S>) -> S {
    let c = S::of(0.5) * (S::of(2.0) * S::PI() * S::E()).ln();
    d.std.iter().map(|s| c + s.ln()).sum()
}

/// Cross-entropy `−E_q[log p]`, closed form.
pub fn cross_entropy_diag<S: Scalar>(q: &DiagonalGaussian<S>, p: &DiagonalGaussian<S>) -> Result<S> {
    check_dims(q.dim(), p.dim(), "cross_entropy_diag")?;
    let half = S::of(0.5);
    let two_pi = S::PI() + S::PI();
    Ok(q.mean
        .iter()
        .zip(&q.std)
        .zip(p.mean.iter().zip(&p.std))
        .map(|((qm, qs), (pm, ps))| {
            let d = *qm - *pm;
            half * (two_pi * *ps * *ps).ln() + (*qs * *qs + d * d) / (S::of(2.0) * *ps * *ps)
        })
        .sum())
}

/// Negative log-likelihood under a unit-variance Gaussian emission.
pub fn gaussian_nll<S: Scalar>(x: &[S], mean: &[S]) -> Result<S> {
    check_dims(x.len(), mean.len(), "gaussian_nll")?;
    let half = S::of(0.5);
    let sq: S = x.iter().zip(mean).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    Ok(half * sq + half * S::of_usize(x.len()) * (S::PI() + S::PI()).ln())
}

/// Per-cell `−log softmax(logits)[label]`, row-major.
pub(crate) fn per_cell_ce<S: Scalar>(logits: &Field3D<S>, labels: &Field2D<S>) -> Result<Vec<S>> {
    let (k, h, w) = logits.shape();
    if (h, w) != labels.shape() {
        return Err(Error::Shape(format!(
            "logits {h}x{w} vs labels {:?}",
            labels.shape()
        )));
    }
    if k == 0 {
        return Err(Error::Empty("class logits"));
    }
    let plane = h * w;
    let data = logits.as_slice();
    let mut column = vec![S::zero(); k];
    let mut out = Vec::with_capacity(plane);
    for (cell, label) in labels.as_slice().iter().enumerate() {
        let class = label
            .to_usize()
            .filter(|c| *c < k && S::of_usize(*c) == *label)
            .ok_or_else(|| {
                Error::InvalidParameter(format!("label {label} at cell {cell} outside 0..{k}"))
            })?;
        for (c, v) in column.iter_mut().enumerate() {
            *v = data[c * plane + cell];
        }
        out.push(log_sum_exp(&column) - column[class]);
    }
    Ok(out)
}

/// Mean cross-entropy over cells.
pub fn categorical_ce<S: Scalar>(logits: &Field3D<S>, labels: &Field2D<S>) -> Result<S> {
    let per_cell = per_cell_ce(logits, labels)?;
    if per_cell.is_empty() {
        return Err(Error::Empty("cross-entropy grid"));
    }
    Ok(per_cell.iter().copied().sum::<S>() / S::of_usize(per_cell.len()))
}

/// Sum of reconstruction log-likelihoods minus a single KL term.
pub fn single_latent_elbo<S: Scalar>(recon_log_liks: &[S], kl: S) -> Result<S> {
    if !(kl >= S::zero()) {
        return Err(Error::InvalidParameter(format!("kl must be >= 0, got {kl}")));
    }
    Ok(recon_log_liks.iter().copied().sum::<S>() - kl)
}
