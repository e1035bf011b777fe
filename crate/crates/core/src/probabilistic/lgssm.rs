//! Linear-Gaussian world model and its exact Kalman evidence.
//!
//! ```text
//! s_1         ~ N(0, I)
//! s_{t+1}     ~ N(A s_t + B a_t, diag(transition_std²))
//! o_t | s_t   ~ N(G s_t, diag(obs_std²))
//! a_t | s_t   ~ N(Π s_t, diag(action_std²))
//! ```
//!
//! Observations and actions are treated as one stacked emission `[o_t; a_t]`
//! of the state.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gaussian::DiagonalGaussian;
use crate::{Error, Result};
use crate::rng::NoiseSource;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianWorldModel {
    transition: DMatrix<f64>,
    action: DMatrix<f64>,
    observation: DMatrix<f64>,
    policy: DMatrix<f64>,
    transition_std: DVector<f64>,
    obs_std: DVector<f64>,
    action_std: DVector<f64>,
}

fn positive(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidParameter(format!("{what} must be strictly positive")));
    }
    Ok(())
}

impl LinearGaussianWorldModel {
    pub fn new(
        transition: DMatrix<f64>,
        action: DMatrix<f64>,
        observation: DMatrix<f64>,
        policy: DMatrix<f64>,
        transition_std: DVector<f64>,
        obs_std: DVector<f64>,
        action_std: DVector<f64>,
    ) -> Result<Self> {
        let n = transition.nrows();
        let m = action.ncols();
        let p = observation.nrows();
        let dims_ok = transition.ncols() == n
            && action.nrows() == n
            && observation.ncols() == n
            && policy.shape() == (m, n)
            && transition_std.len() == n
            && obs_std.len() == p
            && action_std.len() == m;
        if !dims_ok {
            return Err(Error::Shape(format!(
                "inconsistent model: A {:?}, B {:?}, G {:?}, Π {:?}, stds ({}, {}, {})",
                transition.shape(),
                action.shape(),
                observation.shape(),
                policy.shape(),
                transition_std.len(),
                obs_std.len(),
                action_std.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension must be >= 1".into()));
        }
        let all = transition
            .iter()
            .chain(action.iter())
            .chain(observation.iter())
            .chain(policy.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model matrices"));
        }
        positive(&transition_std, "transition_std")?;
        positive(&obs_std, "obs_std")?;
        positive(&action_std, "action_std")?;
        Ok(Self {
            transition,
            action,
            observation,
            policy,
            transition_std,
            obs_std,
            action_std,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.action.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn action_matrix(&self) -> &DMatrix<f64> {
        &self.action
    }

    pub fn observation(&self) -> &DMatrix<f64> {
        &self.observation
    }

    pub fn policy(&self) -> &DMatrix<f64> {
        &self.policy
    }

    pub fn transition_std(&self) -> &DVector<f64> {
        &self.transition_std
    }

    pub fn obs_std(&self) -> &DVector<f64> {
        &self.obs_std
    }

    pub fn action_std(&self) -> &DVector<f64> {
        &self.action_std
    }

    /// `[G; Π]`, the stacked emission matrix.
    pub fn emission(&self) -> DMatrix<f64> {
        let (n, p, m) = (self.state_dim(), self.obs_dim(), self.action_dim());
        let mut h = DMatrix::zeros(p + m, n);
        h.rows_mut(0, p).copy_from(&self.observation);
        h.rows_mut(p, m).copy_from(&self.policy);
        h
    }

    /// Stacked emission noise stds `[obs_std; action_std]`.
    pub fn emission_std(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.obs_dim() + self.action_dim());
        v.rows_mut(0, self.obs_dim()).copy_from(&self.obs_std);
        v.rows_mut(self.obs_dim(), self.action_dim())
            .copy_from(&self.action_std);
        v
    }

    /// Mean of `p(s_{t+1} | s_t, a_t)`.
    pub fn transition_mean(&self, state: &DVector<f64>, action: &DVector<f64>) -> DVector<f64> {
        &self.transition * state + &self.action * action
    }

    pub(crate) fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if let Some(o) = traj.observations.iter().find(|o| o.len() != self.obs_dim()) {
            return Err(Error::Shape(format!(
                "observation of length {} for obs dim {}",
                o.len(),
                self.obs_dim()
            )));
        }
        if let Some(a) = traj.actions.iter().find(|a| a.len() != self.action_dim()) {
            return Err(Error::Shape(format!(
                "action of length {} for action dim {}",
                a.len(),
                self.action_dim()
            )));
        }
        Ok(())
    }
}

/// Observed sequence `o_{1:T}`, `a_{1:T}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    observations: Vec<DVector<f64>>,
    actions: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(observations: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if observations.len() != actions.len() {
            return Err(Error::Shape(format!(
                "{} observations vs {} actions",
                observations.len(),
                actions.len()
            )));
        }
        if observations.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        if observations.iter().chain(&actions).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(Self {
            observations: observations.into_iter().map(DVector::from_vec).collect(),
            actions: actions.into_iter().map(DVector::from_vec).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observation(&self, t: usize) -> &DVector<f64> {
        &self.observations[t]
    }

    pub fn action(&self, t: usize) -> &DVector<f64> {
        &self.actions[t]
    }

    /// `[o_t; a_t]`.
    pub fn emission(&self, t: usize) -> DVector<f64> {
        let (o, a) = (&self.observations[t], &self.actions[t]);
        let mut y = DVector::zeros(o.len() + a.len());
        y.rows_mut(0, o.len()).copy_from(o);
        y.rows_mut(o.len(), a.len()).copy_from(a);
        y
    }
}

/// Full-covariance filtering posteriors and the log evidence.
#[derive(Clone, Debug)]
pub struct KalmanOutput {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub log_evidence: f64,
}

/// `log N(r; 0, S)` from a Cholesky factor of `S`.
fn gaussian_log_pdf_chol(residual: &DVector<f64>, chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let k = residual.len() as f64;
    let l = chol.l();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let solved = chol.solve(residual);
    -0.5 * (residual.dot(&solved) + log_det + k * (2.0 * std::f64::consts::PI).ln())
}

/// Exact Kalman filter over the stacked emission with prediction-error
/// decomposition of the evidence.
pub fn kalman_filter(model: &LinearGaussianWorldModel, traj: &Trajectory) -> Result<KalmanOutput> {
    model.check_trajectory(traj)?;
    let n = model.state_dim();
    let h = model.emission();
    let r = DMatrix::from_diagonal(&model.emission_std().map(|s| s * s));
    let q = DMatrix::from_diagonal(&model.transition_std().map(|s| s * s));
    let eye = DMatrix::<f64>::identity(n, n);

    let mut mean = DVector::zeros(n);
    let mut cov = eye.clone();
    let mut out = KalmanOutput {
        means: Vec::with_capacity(traj.len()),
        covariances: Vec::with_capacity(traj.len()),
        log_evidence: 0.0,
    };
    for t in 0..traj.len() {
        if t > 0 {
            mean = model.transition_mean(&mean, traj.action(t - 1));
            cov = model.transition() * &cov * model.transition().transpose() + &q;
        }
        let y = traj.emission(t);
        if !y.is_empty() {
            let innovation = &y - &h * &mean;
            let s = &h * &cov * h.transpose() + &r;
            let s = (&s + s.transpose()) * 0.5;
            let chol = Cholesky::new(s).ok_or_else(|| {
                Error::Numerical(format!("innovation covariance not positive definite at t={}", t + 1))
            })?;
            out.log_evidence += gaussian_log_pdf_chol(&innovation, &chol);
            let gain = chol.solve(&(&h * &cov)).transpose();
            mean += &gain * innovation;
            // Joseph form keeps the covariance symmetric positive semidefinite.
            let i_kh = &eye - &gain * &h;
            cov = &i_kh * &cov * i_kh.transpose() + &gain * &r * gain.transpose();
            cov = (&cov + cov.transpose()) * 0.5;
        }
        if cov.diagonal().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numerical(format!(
                "posterior covariance lost positivity at t={}",
                t + 1
            )));
        }
        out.means.push(mean.clone());
        out.covariances.push(cov.clone());
    }
    Ok(out)
}

/// Filtering posteriors projected onto the diagonal family.
pub fn lgssm_filter(
    model: &LinearGaussianWorldModel,
    traj: &Trajectory,
) -> Result<Vec<DiagonalGaussian<f64>>> {
    let out = kalman_filter(model, traj)?;
    out.means
        .iter()
        .zip(&out.covariances)
        .map(|(m, c)| {
            DiagonalGaussian::new(
                m.iter().copied().collect(),
                c.diagonal().iter().map(|v| v.sqrt()).collect(),
            )
        })
        .collect()
}

/// Exact `log p(o_{1:T}, a_{1:T})`.
pub fn kalman_log_evidence(model: &LinearGaussianWorldModel, traj: &Trajectory) -> Result<f64> {
    Ok(kalman_filter(model, traj)?.log_evidence)
}

/// Random model with entries of `A` scaled so its spectral radius stays below one.
pub fn random_model(
    noise: &mut NoiseSource,
    state_dim: usize,
    action_dim: usize,
    obs_dim: usize,
) -> Result<LinearGaussianWorldModel> {
    let mut mat = |r: usize, c: usize, scale: f64| {
        DMatrix::from_fn(r, c, |_, _| noise.uniform(-scale, scale))
    };
    let a = mat(state_dim, state_dim, 0.9 / state_dim.max(1) as f64);
    let b = mat(state_dim, action_dim, 1.0);
    let g = mat(obs_dim, state_dim, 1.0);
    let pi = mat(action_dim, state_dim, 0.5);
    let mut stds = |n: usize| DVector::from_fn(n, |_, _| noise.uniform(0.3, 1.5));
    let (q, r, s) = (stds(state_dim), stds(obs_dim), stds(action_dim));
    LinearGaussianWorldModel::new(a, b, g, pi, q, r, s)
}

/// Ancestral sample of `len` steps, starting from `s_1 ~ N(0, I)`.
pub fn sample_trajectory(
    model: &LinearGaussianWorldModel,
    len: usize,
    noise: &mut NoiseSource,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(Error::Empty("trajectory"));
    }
    let n = model.state_dim();
    let mut state = DVector::from_vec(noise.standard_normal_vec(n));
    let (mut obs, mut acts) = (Vec::with_capacity(len), Vec::with_capacity(len));
    for t in 0..len {
        let o = &model.observation * &state
            + DVector::from_fn(model.obs_dim(), |i, _| model.obs_std[i] * noise.standard_normal());
        let a = &model.policy * &state
            + DVector::from_fn(model.action_dim(), |i, _| model.action_std[i] * noise.standard_normal());
        if t + 1 < len {
            state = model.transition_mean(&state, &a)
                + DVector::from_fn(n, |i, _| model.transition_std[i] * noise.standard_normal());
        }
        obs.push(o.iter().copied().collect());
        acts.push(a.iter().copied().collect());
    }
    Trajectory::new(obs, acts)
}

// ---- file records ---------------------------------------------------------

/// JSON model file. Matrices are row-major and flattened; dimensions are explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub state_dim: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub transition: Vec<f64>,
    pub action: Vec<f64>,
    pub observation: Vec<f64>,
    pub policy: Vec<f64>,
    pub transition_std: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub action_std: Vec<f64>,
}

fn matrix(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{what} needs {rows}x{cols} = {} values, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

impl ModelRecord {
    pub fn build(&self) -> Result<LinearGaussianWorldModel> {
        let (n, m, p) = (self.state_dim, self.action_dim, self.obs_dim);
        LinearGaussianWorldModel::new(
            matrix(n, n, &self.transition, "transition")?,
            matrix(n, m, &self.action, "action")?,
            matrix(p, n, &self.observation, "observation")?,
            matrix(m, n, &self.policy, "policy")?,
            DVector::from_vec(self.transition_std.clone()),
            DVector::from_vec(self.obs_std.clone()),
            DVector::from_vec(self.action_std.clone()),
        )
    }
}

impl From<&LinearGaussianWorldModel> for ModelRecord {
    fn from(model: &LinearGaussianWorldModel) -> Self {
        Self {
            state_dim: model.state_dim(),
            action_dim: model.action_dim(),
            obs_dim: model.obs_dim(),
            transition: row_major(&model.transition),
            action: row_major(&model.action),
            observation: row_major(&model.observation),
            policy: row_major(&model.policy),
            transition_std: model.transition_std.iter().copied().collect(),
            obs_std: model.obs_std.iter().copied().collect(),
            action_std: model.action_std.iter().copied().collect(),
        }
    }
}

/// One line of a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStep {
    pub o: Vec<f64>,
    #[serde(default)]
    pub a: Vec<f64>,
}

impl Trajectory {
    pub fn from_steps(steps: &[TrajectoryStep]) -> Result<Self> {
        Trajectory::new(
            steps.iter().map(|s| s.o.clone()).collect(),
            steps.iter().map(|s| s.a.clone()).collect(),
        )
    }

    pub fn to_steps(&self) -> Vec<TrajectoryStep> {
        (0..self.len())
            .map(|t| TrajectoryStep {
                o: self.observations[t].iter().copied().collect(),
                a: self.actions[t].iter().copied().collect(),
            })
            .collect()
    }
}
