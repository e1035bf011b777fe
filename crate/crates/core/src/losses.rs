//! Forward loss evaluations for the future-prediction and BeV models.

use serde::{Deserialize, Serialize};

use crate::fields::{Field2D, Field3D};
use crate::probabilistic::per_cell_ce;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Loss weights and discounts. Defaults are the published settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Future discount of the video model.
    pub gamma_f: f64,
    pub lambda_d: f64,
    pub lambda_l: f64,
    pub lambda_f: f64,
    pub lambda_p: f64,
    pub lambda_fp: f64,
    /// Control discount.
    pub gamma_c: f64,
    pub lambda_c: f64,
    /// Future discount of the BeV model.
    pub gamma_bev: f64,
    /// Fraction of hardest cells kept by the top-k cross-entropy.
    pub k_frac: f64,
    pub lambda_probabilistic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_f: 0.6,
            lambda_d: 1.0,
            lambda_l: 1.0,
            lambda_f: 0.5,
            lambda_p: 0.005,
            lambda_fp: 1.0,
            gamma_c: 0.7,
            lambda_c: 1.0,
            gamma_bev: 0.95,
            k_frac: 0.25,
            lambda_probabilistic: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("gamma_f", self.gamma_f),
            ("gamma_c", self.gamma_c),
            ("gamma_bev", self.gamma_bev),
        ] {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {g}")));
            }
        }
        for (name, w) in [
            ("lambda_d", self.lambda_d),
            ("lambda_l", self.lambda_l),
            ("lambda_f", self.lambda_f),
            ("lambda_p", self.lambda_p),
            ("lambda_fp", self.lambda_fp),
            ("lambda_c", self.lambda_c),
            ("lambda_probabilistic", self.lambda_probabilistic),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {w}")));
            }
        }
        if !(self.k_frac > 0.0 && self.k_frac <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "k_frac must lie in (0, 1], got {}",
                self.k_frac
            )));
        }
        Ok(())
    }
}

/// Mean cross-entropy over the `⌈k_frac · N⌉` hardest cells of one field.
///
/// Ties at the cut keep the earlier (row-major) cells.
pub fn topk_ce<S: Scalar>(logits: &Field3D<S>, labels: &Field2D<S>, k_frac: S) -> Result<S> {
    if !(k_frac > S::zero() && k_frac <= S::one()) {
        return Err(Error::InvalidParameter(format!("k_frac must lie in (0, 1], got {k_frac}")));
    }
    let mut per_cell = per_cell_ce(logits, labels)?;
    if per_cell.is_empty() {
        return Err(Error::Empty("cross-entropy grid"));
    }
    let n = per_cell.len();
    let k = (k_frac * S::of_usize(n))
        .ceil()
        .to_usize()
        .unwrap_or(n)
        .clamp(1, n);
    if k == n {
        return Ok(per_cell.iter().copied().sum::<S>() / S::of_usize(n));
    }
    // stable sort keeps row-major order among equal values
    per_cell.sort_by(|a, b| b.partial_cmp(a).expect("finite cross-entropy"));
    Ok(per_cell[..k].iter().copied().sum::<S>() / S::of_usize(k))
}

/// Scale-invariant log depth error `(1/N)Σd² − (1/N²)(Σd)²` with `d = ln pred − ln gt`.
pub fn silog_depth<S: Scalar>(pred: &Field2D<S>, gt: &Field2D<S>) -> Result<S> {
    pred.check_same_shape(gt, "silog_depth")?;
    if pred.is_empty() {
        return Err(Error::Empty("depth map"));
    }
    if pred.as_slice().iter().chain(gt.as_slice()).any(|v| *v <= S::zero()) {
        return Err(Error::InvalidParameter("depths must be strictly positive".into()));
    }
    let n = S::of_usize(pred.len());
    let (mut sum, mut sum_sq) = (S::zero(), S::zero());
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        let d = p.ln() - g.ln();
        sum += d;
        sum_sq += d * d;
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(S::zero()))
}

/// Mean Huber penalty of `pred − gt`.
pub fn huber<S: Scalar>(pred: &[S], gt: &[S], delta: S) -> Result<S> {
    if !(delta > S::zero()) {
        return Err(Error::InvalidParameter(format!("huber delta must be > 0, got {delta}")));
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("huber: {} vs {} values", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("huber input"));
    }
    let half = S::of(0.5);
    let total: S = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let e = (*p - *g).abs();
            if e <= delta {
                half * e * e
            } else {
                delta * (e - half * delta)
            }
        })
        .sum();
    Ok(total / S::of_usize(pred.len()))
}

/// `Σ_t γ^{t−1} · per_step[t]`.
pub fn discounted_sum<S: Scalar>(per_step: &[S], gamma: S) -> Result<S> {
    if per_step.is_empty() {
        return Err(Error::Empty("per-step losses"));
    }
    if !(gamma > S::zero() && gamma <= S::one()) {
        return Err(Error::InvalidParameter(format!("discount must lie in (0, 1], got {gamma}")));
    }
    let mut weight = S::one();
    let mut total = S::zero();
    for v in per_step {
        total += weight * *v;
        weight *= gamma;
    }
    Ok(total)
}

/// Predicted speed and steering with their rates of change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlPrediction<S = f64> {
    pub speed: S,
    pub speed_rate: S,
    pub steering: S,
    pub steering_rate: S,
}

/// Discounted squared error of expert `(speed, steering)` against the linear
/// extrapolation of the prediction at each offset.
pub fn control_loss<S: Scalar>(
    pred: &ControlPrediction<S>,
    expert: &[(S, S)],
    gamma_c: S,
    offsets: &[S],
) -> Result<S> {
    if expert.len() != offsets.len() {
        return Err(Error::Shape(format!(
            "{} expert steps vs {} offsets",
            expert.len(),
            offsets.len()
        )));
    }
    let mut weight = S::one();
    let mut total = S::zero();
    for ((v, w), dt) in expert.iter().zip(offsets) {
        let ev = *v - (pred.speed + *dt * pred.speed_rate);
        let ew = *w - (pred.steering + *dt * pred.steering_rate);
        total += weight * (ev * ev + ew * ew);
        weight *= gamma_c;
    }
    Ok(total)
}

/// Homoscedastic task weighting `Σ exp(−s_i)·L_i + s_i` with learned log-variances `s_i`.
pub fn uncertainty_weighted<S: Scalar>(losses: &[S], log_vars: &[S]) -> Result<S> {
    if losses.len() != log_vars.len() {
        return Err(Error::Shape(format!(
            "{} losses vs {} log-variances",
            losses.len(),
            log_vars.len()
        )));
    }
    Ok(losses
        .iter()
        .zip(log_vars)
        .map(|(l, s)| (-*s).exp() * *l + *s)
        .sum())
}

/// Components of the video world-model objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VideoLossTerms<S = f64> {
    pub probabilistic: S,
    pub depth: S,
    pub segmentation: S,
    pub flow: S,
    pub control: S,
}

/// `λ_p L_prob + λ_fp (λ_d L_d + λ_l L_l + λ_f L_f) + λ_c L_c`.
pub fn video_total<S: Scalar>(terms: &VideoLossTerms<S>, w: &LossWeights) -> S {
    let future_pred = S::of(w.lambda_d) * terms.depth
        + S::of(w.lambda_l) * terms.segmentation
        + S::of(w.lambda_f) * terms.flow;
    S::of(w.lambda_p) * terms.probabilistic
        + S::of(w.lambda_fp) * future_pred
        + S::of(w.lambda_c) * terms.control
}

/// BeV objective: uncertainty-weighted head losses plus the weighted
/// probabilistic (KL) term.
pub fn bev_total<S: Scalar>(
    head_losses: &[S],
    log_vars: &[S],
    probabilistic: S,
    w: &LossWeights,
) -> Result<S> {
    Ok(uncertainty_weighted(head_losses, log_vars)? + S::of(w.lambda_probabilistic) * probabilistic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        w.validate().unwrap();
        assert_eq!((w.gamma_f, w.lambda_f, w.lambda_p), (0.6, 0.5, 0.005));
        assert_eq!((w.gamma_bev, w.k_frac, w.lambda_probabilistic), (0.95, 0.25, 100.0));
        let partial: LossWeights = serde_json::from_str(r#"{"gamma_f": 0.5}"#).unwrap();
        assert_eq!(partial.gamma_f, 0.5);
        assert_eq!(partial.lambda_c, 1.0);
        assert!(serde_json::from_str::<LossWeights>(r#"{"gamma": 0.5}"#).is_err());
        assert!(LossWeights { k_frac: 0.0, ..w }.validate().is_err());
        assert!(LossWeights { gamma_c: 1.0, ..w }.validate().is_err());
    }

    /// Logits over 2 classes giving per-cell CE values `ce` for label 0.
    fn logits_with_ce(ce: &[f64]) -> (Field3D<f64>, Field2D<f64>) {
        // CE = ln(1 + e^{x}) for logits [0, x]  ⇒  x = ln(e^{ce} − 1)
        let n = ce.len();
        let mut data = vec![0.0; 2 * n];
        for (i, c) in ce.iter().enumerate() {
            data[n + i] = if *c == 0.0 { -800.0 } else { (c.exp() - 1.0).ln() };
        }
        (
            Field3D::from_vec(2, 1, n, data).unwrap(),
            Field2D::zeros(1, n),
        )
    }

    #[test]
    fn topk_examples() {
        let (logits, labels) = logits_with_ce(&[0.0, 0.0, 0.0, 4.0]);
        assert_abs_diff_eq!(topk_ce(&logits, &labels, 0.25).unwrap(), 4.0, epsilon = 1e-12);
        let full = topk_ce(&logits, &labels, 1.0).unwrap();
        assert_eq!(full, crate::probabilistic::categorical_ce(&logits, &labels).unwrap());
        let (logits, labels) = logits_with_ce(&[0.7; 6]);
        for k in [0.1, 0.25, 0.5, 1.0] {
            assert_abs_diff_eq!(topk_ce(&logits, &labels, k).unwrap(), 0.7, epsilon = 1e-12);
        }
        assert!(topk_ce(&logits, &labels, 0.0).is_err());
        assert!(topk_ce(&logits, &labels, 1.5).is_err());
    }

    #[test]
    fn silog_examples() {
        let gt = Field2D::from_vec(1, 3, vec![1.0, 2.5, 7.0]).unwrap();
        assert_eq!(silog_depth(&gt, &gt).unwrap(), 0.0);
        assert!(silog_depth(&gt.map(|v| 3.7 * v), &gt).unwrap() < 1e-9);
        let pred = Field2D::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let ones = Field2D::filled(1, 2, 1.0);
        assert_abs_diff_eq!(silog_depth(&pred, &ones).unwrap(), 2f64.ln().powi(2) / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(silog_depth(&pred, &ones).unwrap(), 0.12011, epsilon = 1e-5);
        assert!(silog_depth(&Field2D::filled(1, 2, 0.0), &ones).is_err());
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber(&[1.0], &[1.0], 1.0).unwrap(), 0.0);
        assert_eq!(huber(&[0.5], &[0.0], 1.0).unwrap(), 0.125);
        assert_eq!(huber(&[0.0], &[3.0], 1.0).unwrap(), 2.5);
        assert!(huber(&[0.0], &[3.0], 0.0).is_err());
    }

    #[test]
    fn huber_c1_at_delta() {
        let f = |e: f64| huber(&[e], &[0.0], 1.0).unwrap();
        let h = 1e-7;
        let left = (f(1.0) - f(1.0 - h)) / h;
        let right = (f(1.0 + h) - f(1.0)) / h;
        assert!((f(1.0 - h) - f(1.0 + h)).abs() < 1e-6);
        assert!((left - right).abs() < 1e-6);
        assert_abs_diff_eq!(left, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn discounted_sum_examples() {
        assert_eq!(discounted_sum(&[1.0, 2.0, 3.0], 1.0).unwrap(), 6.0);
        assert_eq!(discounted_sum(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.75);
        assert_abs_diff_eq!(discounted_sum(&[2.0, 0.0, 4.0], 0.6).unwrap(), 3.44, epsilon = 1e-12);
        assert!(discounted_sum::<f64>(&[], 0.5).is_err());
        assert!(discounted_sum(&[1.0], 0.0).is_err());
    }

    #[test]
    fn control_loss_examples() {
        let pred = ControlPrediction {
            speed: 1.0,
            speed_rate: 5.0,
            steering: 0.1,
            steering_rate: -0.5,
        };
        let offsets = [0.0, 0.2, 0.4];
        let on_line: Vec<(f64, f64)> = offsets.iter().map(|d| (1.0 + 5.0 * d, 0.1 - 0.5 * d)).collect();
        assert_eq!(control_loss(&pred, &on_line, 0.7, &offsets).unwrap(), 0.0);

        let flat = ControlPrediction { speed: 0.0, speed_rate: 0.0, steering: 0.0, steering_rate: 0.0 };
        assert_eq!(control_loss(&flat, &[(1.0, 1.0)], 0.3, &[0.0]).unwrap(), 2.0);

        let pred = ControlPrediction { speed: 1.0, speed_rate: 5.0, steering: 0.0, steering_rate: 0.0 };
        let v = control_loss(&pred, &[(1.0, 0.0), (3.0, 0.0)], 0.7, &[0.0, 0.2]).unwrap();
        assert_abs_diff_eq!(v, 0.7, epsilon = 1e-12);
        assert!(control_loss(&pred, &[(1.0, 0.0)], 0.7, &[0.0, 0.2]).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(uncertainty_weighted(&[1.0, 2.5], &[0.0, 0.0]).unwrap(), 3.5);
        assert_abs_diff_eq!(
            uncertainty_weighted(&[2.0], &[2f64.ln()]).unwrap(),
            1.0 + 2f64.ln(),
            epsilon = 1e-15
        );
        // grid search over s recovers s* = ln L
        let loss = 3.0f64;
        let best = (0..20_001)
            .map(|i| -5.0 + i as f64 * 5e-4)
            .min_by(|a, b| {
                let fa = uncertainty_weighted(&[loss], &[*a]).unwrap();
                let fb = uncertainty_weighted(&[loss], &[*b]).unwrap();
                fa.partial_cmp(&fb).unwrap()
            })
            .unwrap();
        assert!((best - loss.ln()).abs() < 1e-3);
        assert!(uncertainty_weighted(&[1.0], &[]).is_err());
    }

    #[test]
    fn video_total_examples() {
        let w = LossWeights::default();
        assert_eq!(video_total(&VideoLossTerms::<f64>::default(), &w), 0.0);
        let depth_only = VideoLossTerms { depth: 1.0, ..Default::default() };
        assert_eq!(video_total(&depth_only, &w), 1.0);
        let prob_only = VideoLossTerms { probabilistic: 1.0, ..Default::default() };
        assert_eq!(video_total(&prob_only, &w), 0.005);
        let flow_only = VideoLossTerms { flow: 2.0, control: 1.0, ..Default::default() };
        assert_eq!(video_total(&flow_only, &w), 2.0);
        assert_eq!(bev_total(&[1.0, 1.0], &[0.0, 0.0], 0.5, &w).unwrap(), 52.0);
    }

    proptest! {
        #[test]
        fn topk_monotone_in_k(ce in proptest::collection::vec(0.0f64..5.0, 1..40),
                              k1 in 0.01f64..1.0, k2 in 0.01f64..1.0) {
            let (logits, labels) = logits_with_ce(&ce);
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let a = topk_ce(&logits, &labels, lo).unwrap();
            let b = topk_ce(&logits, &labels, hi).unwrap();
            prop_assert!(a >= b - 1e-12);
        }

        #[test]
        fn silog_scale_invariant(depths in proptest::collection::vec(0.5f64..80.0, 2..30),
                                 noise in proptest::collection::vec(0.8f64..1.25, 30),
                                 scale in 0.1f64..10.0) {
            let n = depths.len();
            let gt = Field2D::from_vec(1, n, depths.clone()).unwrap();
            let pred = Field2D::from_vec(1, n, depths.iter().zip(&noise).map(|(d, e)| d * e).collect()).unwrap();
            let base = silog_depth(&pred, &gt).unwrap();
            let scaled = silog_depth(&pred.map(|v| v * scale), &gt).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn control_zero_iff_on_lines(v in -5.0f64..5.0, dv in -2.0f64..2.0,
                                     w in -1.0f64..1.0, dw in -1.0f64..1.0,
                                     bump in -1.0f64..1.0, which in 0usize..3) {
            let pred = ControlPrediction { speed: v, speed_rate: dv, steering: w, steering_rate: dw };
            let offsets = [0.0, 0.25, 0.5];
            let mut expert: Vec<(f64, f64)> = offsets.iter().map(|d| (v + d * dv, w + d * dw)).collect();
            prop_assert!(control_loss(&pred, &expert, 0.7, &offsets).unwrap() == 0.0);
            let before = expert[which].0;
            expert[which].0 += bump;
            let l = control_loss(&pred, &expert, 0.7, &offsets).unwrap();
            prop_assert_eq!(l == 0.0, expert[which].0 == before);
        }
    }
}
