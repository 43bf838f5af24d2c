//! Full-batch first-order trainers for linear models and the diagnostics used
//! to watch their iterates line up with max-margin solutions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linear::LinearModel;
use crate::losses::{subgroup_vs_losses, GroupVsParams, LossGrad};
use crate::model_data::Dataset;
use crate::numerics::{cosine, dot, norm};

/// Weight norm above which training stops; the logistic tail has underflowed by then.
pub const W_NORM_CAP: f64 = 1e8;
/// Minimum number of records for the flow-residual trend test.
pub const MIN_FLOW_RECORDS: usize = 100;
/// Largest tolerated slope of residual against log-time.
pub const FLOW_SLOPE_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant(f64),
    /// η_t = 1 / (√(t+1) ‖∇L(w_t)‖).
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub schedule: Schedule,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub record_every: usize,
    #[serde(default)]
    pub fit_intercept: bool,
}

impl GdConfig {
    pub fn constant(eta: f64, max_iters: usize) -> Self {
        Self { schedule: Schedule::Constant(eta), max_iters, grad_tol: 0.0, record_every: 1, fit_intercept: false }
    }

    pub fn normalized(max_iters: usize) -> Self {
        Self { schedule: Schedule::Normalized, max_iters, grad_tol: 0.0, record_every: 1, fit_intercept: false }
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn with_intercept(mut self, on: bool) -> Self {
        self.fit_intercept = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Schedule::Constant(eta) = self.schedule {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(invalid("step size must be positive"));
            }
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(invalid("grad_tol must be non-negative"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub iter: usize,
    /// Sum of step sizes taken so far (continuous time of the flow proxy).
    pub time: f64,
    pub model: LinearModel,
    pub loss: f64,
    pub grad_norm: f64,
    pub w_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    MaxIters,
    NormCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory always holds the initial point")
    }
}

/// Gradient descent on a loss given as a closure returning value and gradient.
///
/// Records iteration 0, every `record_every`-th iterate and the final one.
pub fn gd_train<F>(mut loss_fn: F, init: LinearModel, config: &GdConfig) -> Result<(LinearModel, Trajectory)>
where
    F: FnMut(&LinearModel) -> Result<LossGrad>,
{
    config.validate()?;
    let mut model = init;
    if !config.fit_intercept {
        model.b = 0.0;
    }
    let mut points = Vec::new();
    let mut time = 0.0;
    let mut iter = 0usize;
    let stop = loop {
        let lg = loss_fn(&model)?;
        let gnorm = lg.grad_norm(config.fit_intercept);
        let w_norm = model.w_norm();
        if !lg.loss.is_finite() || !gnorm.is_finite() {
            return Err(Error::NonFinite { iter, loss: lg.loss, grad_norm: gnorm, w_norm });
        }
        let reason = if gnorm <= config.grad_tol {
            Some(StopReason::GradTol)
        } else if iter >= config.max_iters {
            Some(StopReason::MaxIters)
        } else if w_norm > W_NORM_CAP {
            Some(StopReason::NormCap)
        } else {
            None
        };
        if reason.is_some() || iter % config.record_every == 0 {
            points.push(TrajectoryPoint { iter, time, model: model.clone(), loss: lg.loss, grad_norm: gnorm, w_norm });
        }
        if let Some(r) = reason {
            break r;
        }
        let eta = match config.schedule {
            Schedule::Constant(eta) => eta,
            Schedule::Normalized => 1.0 / ((iter as f64 + 1.0).sqrt() * gnorm),
        };
        // Divide before scaling so tiny gradients in the normalized schedule stay finite.
        let scale = 1.0 / gnorm;
        let step = eta * gnorm;
        for (w, g) in model.w.iter_mut().zip(&lg.grad_w) {
            *w -= step * (g * scale);
        }
        if config.fit_intercept {
            model.b -= step * (lg.grad_b * scale);
        }
        time += eta;
        iter += 1;
    };
    Ok((model, Trajectory { points, stop }))
}

fn check_nonzero(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: b.len(), got: a.len() });
    }
    if norm(a) == 0.0 || norm(b) == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(())
}

/// 1 − cos∠(w, ŵ), in [0, 2].
pub fn angle_gap(model: &LinearModel, reference: &LinearModel) -> Result<f64> {
    check_nonzero(&model.w, &reference.w)?;
    Ok((1.0 - cosine(&model.w, &reference.w)).clamp(0.0, 2.0))
}

/// ‖w/‖w‖ − ŵ/‖ŵ‖‖.
pub fn norm_gap(model: &LinearModel, reference: &LinearModel) -> Result<f64> {
    check_nonzero(&model.w, &reference.w)?;
    let (a, b) = (model.w_norm(), reference.w_norm());
    Ok(model.w.iter().zip(&reference.w).map(|(x, y)| (x / a - y / b).powi(2)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResidual {
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Least-squares slope of residual against ln(time) over the last half.
    pub slope: f64,
    pub bounded: bool,
}

/// ‖(w_t, b_t) − ln(t)(ŵ, b̂)‖ along a trajectory, with a trend test on its tail.
pub fn gradient_flow_residual(traj: &Trajectory, reference: &LinearModel) -> Result<FlowResidual> {
    let pts: Vec<&TrajectoryPoint> = traj.points.iter().filter(|p| p.time > 0.0).collect();
    if pts.len() < MIN_FLOW_RECORDS {
        return Err(Error::TrajectoryTooShort(pts.len()));
    }
    let d = reference.dim();
    let mut times = Vec::with_capacity(pts.len());
    let mut residuals = Vec::with_capacity(pts.len());
    for p in &pts {
        if p.model.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.model.dim() });
        }
        let lt = p.time.ln();
        let mut r2: f64 = p.model.w.iter().zip(&reference.w).map(|(w, h)| (w - lt * h).powi(2)).sum();
        r2 += (p.model.b - lt * reference.b).powi(2);
        times.push(p.time);
        residuals.push(r2.sqrt());
    }
    let half = times.len() / 2;
    let xs: Vec<f64> = times[half..].iter().map(|t| t.ln()).collect();
    let slope = ls_slope(&xs, &residuals[half..]);
    Ok(FlowResidual { times, residuals, slope, bounded: slope <= FLOW_SLOPE_TOL })
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroConfig {
    pub steps: usize,
    pub model_lr: f64,
    /// Multiplicative-weights rate on the subgroup simplex.
    pub weight_lr: f64,
    #[serde(default)]
    pub fit_intercept: bool,
}

impl DroConfig {
    pub fn new(steps: usize, model_lr: f64) -> Self {
        Self { steps, model_lr, weight_lr: 0.01, fit_intercept: false }
    }
}

/// Subgroup weights indexed like [`GroupVsParams::triples`]; empty cells carry weight 0.
pub type SubgroupWeights = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct DroOutcome {
    pub model: LinearModel,
    /// Weights used at each step.
    pub weights: Vec<SubgroupWeights>,
}

/// One exponentiated-gradient step q_s ← q_s e^{rate·L_s}, renormalized.
pub fn dro_weight_update(q: &SubgroupWeights, losses: &SubgroupWeights, rate: f64) -> SubgroupWeights {
    let top = losses.iter().flatten().zip(q.iter().flatten()).filter(|(_, &w)| w > 0.0).map(|(l, _)| *l);
    let shift = top.fold(f64::NEG_INFINITY, f64::max);
    let mut out = [[0.0; 2]; 2];
    let mut total = 0.0;
    for k in 0..2 {
        for g in 0..2 {
            if q[k][g] > 0.0 {
                out[k][g] = q[k][g] * (rate * (losses[k][g] - shift)).exp();
                total += out[k][g];
            }
        }
    }
    for v in out.iter_mut().flatten() {
        *v /= total;
    }
    out
}

/// Deterministic group-DRO: per step, reweight the nonempty subgroups by their
/// mean Group-VS loss, then take a gradient step on the reweighted mean losses.
pub fn group_dro_train(
    params: &GroupVsParams,
    data: &Dataset,
    init: LinearModel,
    config: &DroConfig,
) -> Result<DroOutcome> {
    if !(config.model_lr > 0.0 && config.weight_lr >= 0.0) {
        return Err(invalid("DRO step sizes must be positive"));
    }
    let mut model = init;
    if !config.fit_intercept {
        model.b = 0.0;
    }
    let first = subgroup_vs_losses(params, &model, data)?;
    let mut q = [[0.0; 2]; 2];
    let live = first.iter().flatten().filter(|(n, _)| *n > 0).count();
    for k in 0..2 {
        for g in 0..2 {
            if first[k][g].0 > 0 {
                q[k][g] = 1.0 / live as f64;
            }
        }
    }
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let cells = subgroup_vs_losses(params, &model, data)?;
        let mut means = [[0.0; 2]; 2];
        for k in 0..2 {
            for g in 0..2 {
                let (n, lg) = &cells[k][g];
                if *n > 0 {
                    means[k][g] = lg.loss / *n as f64;
                }
            }
        }
        q = dro_weight_update(&q, &means, config.weight_lr);
        let mut grad_w = vec![0.0; data.d()];
        let mut grad_b = 0.0;
        let mut objective = 0.0;
        for k in 0..2 {
            for g in 0..2 {
                let (n, lg) = &cells[k][g];
                if *n > 0 {
                    let c = q[k][g] / *n as f64;
                    crate::numerics::axpy(c, &lg.grad_w, &mut grad_w);
                    grad_b += c * lg.grad_b;
                    objective += q[k][g] * means[k][g];
                }
            }
        }
        if !objective.is_finite() || grad_w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iter: step,
                loss: objective,
                grad_norm: dot(&grad_w, &grad_w).sqrt(),
                w_norm: model.w_norm(),
            });
        }
        crate::numerics::axpy(-config.model_lr, &grad_w, &mut model.w);
        if config.fit_intercept {
            model.b -= config.model_lr * grad_b;
        }
        history.push(q);
    }
    Ok(DroOutcome { model, weights: history })
}
