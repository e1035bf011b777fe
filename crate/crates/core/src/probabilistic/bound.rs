//! Sequential evidence lower bound for the linear-Gaussian world model.
//!
//! For a filtering family `q(s_{1:T}) = Π_t q(s_t)` the bound is
//!
//! ```text
//! Σ_t E_q[log p(o_t|s_t) + log p(a_t|s_t)]
//!   − β Σ_t E_{s_{t-1}~q}[KL(q(s_t) ‖ p(s_t | s_{t-1}, a_{t-1}))]
//! ```
//!
//! with `p(s_1) = N(0, I)`. It lower-bounds `log p(o_{1:T}, a_{1:T})` for
//! `β = 1`; the free energy is its negation.

use nalgebra::DVector;
use serde::Serialize;

use super::gaussian::{kl_diag, DiagonalGaussian};
use super::lgssm::{LinearGaussianWorldModel, Trajectory};
use crate::rng::NoiseSource;
use crate::{Error, Result};

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n).sqrt(),
            samples: values.len(),
        }
    }
}

fn check_inputs(
    model: &LinearGaussianWorldModel,
    traj: &Trajectory,
    q: &[DiagonalGaussian<f64>],
    beta: f64,
) -> Result<()> {
    model.check_trajectory(traj)?;
    if q.len() != traj.len() {
        return Err(Error::Shape(format!(
            "{} variational factors for {} timesteps",
            q.len(),
            traj.len()
        )));
    }
    if let Some(bad) = q.iter().find(|d| d.dim() != model.state_dim()) {
        return Err(Error::Shape(format!(
            "variational factor of dim {} for state dim {}",
            bad.dim(),
            model.state_dim()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    Ok(())
}

fn diag_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, std: &DVector<f64>) -> f64 {
    let c = 0.5 * (2.0 * std::f64::consts::PI).ln();
    x.iter()
        .zip(mean.iter())
        .zip(std.iter())
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - c
        })
        .sum()
}

fn transition_prior(
    model: &LinearGaussianWorldModel,
    prev_state: &DVector<f64>,
    prev_action: &DVector<f64>,
) -> DiagonalGaussian<f64> {
    let mean = model.transition_mean(prev_state, prev_action);
    DiagonalGaussian::new(
        mean.iter().copied().collect(),
        model.transition_std().iter().copied().collect(),
    )
    .expect("model stds validated")
}

/// Reconstruction and KL sums for one ancestral sample of `q`.
fn sample_terms(
    model: &LinearGaussianWorldModel,
    traj: &Trajectory,
    q: &[DiagonalGaussian<f64>],
    noise: &mut NoiseSource,
) -> Result<(f64, f64)> {
    let n = model.state_dim();
    let h = model.emission();
    let emission_std = model.emission_std();
    let mut recon = 0.0;
    let mut kl = 0.0;
    let mut prev: Option<DVector<f64>> = None;
    for (t, qt) in q.iter().enumerate() {
        let eps = noise.standard_normal_vec(n);
        let s = DVector::from_iterator(
            n,
            qt.mean().iter().zip(qt.std()).zip(&eps).map(|((m, sd), z)| m + sd * z),
        );
        recon += diag_log_pdf(&traj.emission(t), &(&h * &s), &emission_std);
        let prior = match &prev {
            None => DiagonalGaussian::standard(n),
            Some(p) => transition_prior(model, p, traj.action(t - 1)),
        };
        kl += kl_diag(qt, &prior)?;
        prev = Some(s);
    }
    Ok((recon, kl))
}

/// Single-sample reparameterized estimate of the β-weighted bound.
pub fn sequential_free_energy(
    model: &LinearGaussianWorldModel,
    traj: &Trajectory,
    q: &[DiagonalGaussian<f64>],
    beta: f64,
    noise_seed: u64,
) -> Result<f64> {
    check_inputs(model, traj, q, beta)?;
    let (recon, kl) = sample_terms(model, traj, q, &mut NoiseSource::new(noise_seed))?;
    Ok(recon - beta * kl)
}

/// Mean of `samples` independent single-sample estimates drawn from one seeded stream.
pub fn sequential_free_energy_mc(
    model: &LinearGaussianWorldModel,
    traj: &Trajectory,
    q: &[DiagonalGaussian<f64>],
    beta: f64,
    noise_seed: u64,
    samples: usize,
) -> Result<McEstimate> {
    check_inputs(model, traj, q, beta)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let mut noise = NoiseSource::new(noise_seed);
    let values = (0..samples)
        .map(|_| sample_terms(model, traj, q, &mut noise).map(|(r, k)| r - beta * k))
        .collect::<Result<Vec<_>>>()?;
    Ok(McEstimate::from_samples(&values))
}

/// The exact expectation of the bound (no sampling). Gaussian expectations
/// of the quadratic terms are taken in closed form.
pub fn expected_sequential_free_energy(
    model: &LinearGaussianWorldModel,
    traj: &Trajectory,
    q: &[DiagonalGaussian<f64>],
    beta: f64,
) -> Result<f64> {
    check_inputs(model, traj, q, beta)?;
    let n = model.state_dim();
    let h = model.emission();
    let emission_std = model.emission_std();
    let a = model.transition();
    let mut recon = 0.0;
    let mut kl = 0.0;
    for (t, qt) in q.iter().enumerate() {
        let mean = DVector::from_column_slice(qt.mean());
        let var: Vec<f64> = qt.std().iter().map(|s| s * s).collect();
        // E[log N(y; H s, R)] = log N(y; H μ, R) − ½ Σ_j (H V Hᵀ)_jj / R_jj
        recon += diag_log_pdf(&traj.emission(t), &(&h * &mean), &emission_std);
        for (j, r) in emission_std.iter().enumerate() {
            let spread: f64 = (0..n).map(|i| h[(j, i)].powi(2) * var[i]).sum();
            recon -= 0.5 * spread / (r * r);
        }
        if t == 0 {
            kl += kl_diag(qt, &DiagonalGaussian::standard(n))?;
        } else {
            let prev = &q[t - 1];
            let prev_mean = DVector::from_column_slice(prev.mean());
            kl += kl_diag(qt, &transition_prior(model, &prev_mean, traj.action(t - 1)))?;
            // E over s_{t-1} of the mean-difference term
            for (i, sd) in model.transition_std().iter().enumerate() {
                let spread: f64 = (0..n)
                    .map(|k| a[(i, k)].powi(2) * prev.std()[k].powi(2))
                    .sum();
                kl += 0.5 * spread / (sd * sd);
            }
        }
    }
    Ok(recon - beta * kl)
}
