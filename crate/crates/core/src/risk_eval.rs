//! Class- and subgroup-conditional error probabilities of a linear classifier
//! under the Gaussian mixtures, in closed form and by stratified Monte Carlo.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linear::LinearModel;
use crate::model_data::{rng_from_seed, Covariance, GroupGmmSpec, LabelGmmSpec};
use crate::numerics::{dot, q_function};

/// Conditional risks plus the priors needed to aggregate them.
///
/// `subgroup[k][g]` is the error on class k (0: y = +1, 1: y = -1) within
/// group g + 1; present only for group models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub pi: f64,
    pub r_plus: f64,
    pub r_minus: f64,
    pub subgroup: Option<[[f64; 2]; 2]>,
}

impl RiskReport {
    pub fn label(pi: f64, r_plus: f64, r_minus: f64) -> Self {
        Self { pi, r_plus, r_minus, subgroup: None }
    }

    /// Aggregates subgroup risks with group prior p (same for both classes).
    pub fn group(pi: f64, p: f64, subgroup: [[f64; 2]; 2]) -> Self {
        let mix = |k: usize| p * subgroup[k][0] + (1.0 - p) * subgroup[k][1];
        Self { pi, r_plus: mix(0), r_minus: mix(1), subgroup: Some(subgroup) }
    }

    pub fn r_bal(&self) -> f64 {
        0.5 * (self.r_plus + self.r_minus)
    }

    /// Standard misclassification error.
    pub fn r_std(&self) -> f64 {
        self.pi * self.r_plus + (1.0 - self.pi) * self.r_minus
    }

    /// R_{+,1} - R_{+,2}.
    pub fn deo(&self) -> Option<f64> {
        self.subgroup.map(|s| s[0][0] - s[0][1])
    }

    pub fn symm_deo(&self) -> Option<f64> {
        self.subgroup.map(|s| 0.5 * ((s[0][0] - s[0][1]).abs() + (s[1][0] - s[1][1]).abs()))
    }

    /// Largest conditional error over subgroups (or over classes without groups).
    pub fn worst_group(&self) -> f64 {
        match self.subgroup {
            Some(s) => s.iter().flatten().copied().fold(0.0, f64::max),
            None => self.r_plus.max(self.r_minus),
        }
    }
}

fn projected_scale(model: &LinearModel, cov: &Covariance) -> Result<f64> {
    let scale = match cov {
        Covariance::Identity => model.w_norm(),
        Covariance::Full(s) => {
            let w = DVector::from_column_slice(&model.w);
            (w.transpose() * s * &w)[(0, 0)].sqrt()
        }
    };
    if !(scale > 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(scale)
}

/// R_+ = Q((mu_+'w + b)/||Σ^{1/2}w||), R_- = Q((-mu_-'w - b)/||Σ^{1/2}w||).
pub fn closed_form_risks(model: &LinearModel, spec: &LabelGmmSpec) -> Result<RiskReport> {
    check_dim(model, spec.dim())?;
    let scale = projected_scale(model, &spec.covariance)?;
    let r_plus = q_function((dot(spec.mu_plus(), &model.w) + model.b) / scale);
    let r_minus = q_function((-dot(spec.mu_minus(), &model.w) - model.b) / scale);
    Ok(RiskReport::label(spec.pi, r_plus, r_minus))
}

/// Group model x | (y, g) ~ N(y mu_g, σ_g² I):
/// R_{+,g} = Q((mu_g'w + b)/(σ_g||w||)), R_{-,g} = Q((mu_g'w - b)/(σ_g||w||)).
pub fn closed_form_group_risks(model: &LinearModel, spec: &GroupGmmSpec) -> Result<RiskReport> {
    check_dim(model, spec.dim())?;
    let wn = model.w_norm();
    if !(wn > 0.0) {
        return Err(Error::ZeroVector);
    }
    let mut s = [[0.0; 2]; 2];
    for g in 0..2 {
        let proj = dot(spec.means.mean(g), &model.w);
        let sc = spec.sigma(g as u8 + 1) * wn;
        s[0][g] = q_function((proj + model.b) / sc);
        s[1][g] = q_function((proj - model.b) / sc);
    }
    Ok(RiskReport::group(spec.pi, spec.p, s))
}

fn check_dim(model: &LinearModel, d: usize) -> Result<()> {
    if model.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: model.dim() });
    }
    Ok(())
}

/// Monte-Carlo estimate with binomial standard errors for each conditional risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRiskReport {
    pub report: RiskReport,
    pub se_plus: f64,
    pub se_minus: f64,
    pub se_subgroup: Option<[[f64; 2]; 2]>,
}

impl McRiskReport {
    pub fn se_bal(&self) -> f64 {
        0.5 * self.se_plus.hypot(self.se_minus)
    }
}

fn binomial_se(p: f64, m: usize) -> f64 {
    (p * (1.0 - p) / m as f64).sqrt()
}

/// Stratified Monte Carlo: n_test/2 draws per class (label model) or n_test/4
/// per (class, group) cell (group model).
pub enum TestSpec<'a> {
    Label(&'a LabelGmmSpec),
    Group(&'a GroupGmmSpec),
}

pub fn mc_risks(model: &LinearModel, spec: TestSpec<'_>, n_test: usize, seed: u64) -> Result<McRiskReport> {
    if n_test < 1000 {
        return Err(invalid("n_test must be at least 1000"));
    }
    let mut rng = rng_from_seed(seed);
    match spec {
        TestSpec::Label(spec) => {
            check_dim(model, spec.dim())?;
            let chol = match &spec.covariance {
                Covariance::Identity => None,
                Covariance::Full(s) => Some(s.clone().cholesky().ok_or(Error::SingularCovariance)?.unpack()),
            };
            let m = n_test / 2;
            let mut err = [0usize; 2];
            let mut x = vec![0.0; spec.dim()];
            for (k, (mu, y)) in [(spec.mu_plus(), 1), (spec.mu_minus(), -1)].into_iter().enumerate() {
                for _ in 0..m {
                    for xj in x.iter_mut() {
                        *xj = rng.sample(StandardNormal);
                    }
                    if let Some(l) = &chol {
                        let v = l * DVector::from_column_slice(&x);
                        x.copy_from_slice(v.as_slice());
                    }
                    for (xj, mj) in x.iter_mut().zip(mu) {
                        *xj += mj;
                    }
                    if model.predict(&x) != y {
                        err[k] += 1;
                    }
                }
            }
            let (rp, rm) = (err[0] as f64 / m as f64, err[1] as f64 / m as f64);
            Ok(McRiskReport {
                report: RiskReport::label(spec.pi, rp, rm),
                se_plus: binomial_se(rp, m),
                se_minus: binomial_se(rm, m),
                se_subgroup: None,
            })
        }
        TestSpec::Group(spec) => {
            check_dim(model, spec.dim())?;
            let m = n_test / 4;
            let mut s = [[0.0; 2]; 2];
            let mut se = [[0.0; 2]; 2];
            let mut x = vec![0.0; spec.dim()];
            for (k, y) in [1i32, -1].into_iter().enumerate() {
                for g in 0..2 {
                    let mu = spec.means.mean(g);
                    let sigma = spec.sigma(g as u8 + 1);
                    let mut err = 0usize;
                    for _ in 0..m {
                        for (xj, mj) in x.iter_mut().zip(mu) {
                            let e: f64 = rng.sample(StandardNormal);
                            *xj = y as f64 * mj + sigma * e;
                        }
                        if model.predict(&x) != y {
                            err += 1;
                        }
                    }
                    s[k][g] = err as f64 / m as f64;
                    se[k][g] = binomial_se(s[k][g], m);
                }
            }
            let report = RiskReport::group(spec.pi, spec.p, s);
            let mix = |k: usize| (spec.p * se[k][0]).hypot((1.0 - spec.p) * se[k][1]);
            Ok(McRiskReport { report, se_plus: mix(0), se_minus: mix(1), se_subgroup: Some(se) })
        }
    }
}

/// Empirical error of `model` on labeled rows; used for training-set diagnostics.
pub fn empirical_error(model: &LinearModel, data: &crate::model_data::Dataset) -> f64 {
    let wrong = (0..data.n()).filter(|&i| model.predict(data.row(i)) != data.label(i)).count();
    wrong as f64 / data.n() as f64
}
