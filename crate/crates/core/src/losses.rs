//! The VS-loss family: binary, multiclass (two Δ parameterizations) and
//! group-sensitive, with analytic gradients and the named presets.
//!
//! Two conventions for the additive term ι coexist:
//! * binary and group losses use `ω log(1 + e^ι e^{-Δ y f})`, so a larger ι_y
//!   penalizes class y more;
//! * multiclass losses (and [`preset`]) add ι_c to logit c.
//!
//! For two classes the two agree after [`VsParams::to_binary_form`], which maps
//! logit offsets to ι_y^bin = ι_{-y} - ι_y.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linear::{LinearModel, MultiModel};
use crate::model_data::Dataset;
use crate::numerics::{axpy, dot, sigmoid, softplus};

/// Per-class weights ω, additive offsets ι and multiplicative factors Δ.
///
/// Binary parameters have length 2 with index 0 for y = +1 and index 1 for
/// y = -1. Multiclass parameters are indexed by the label 0..C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsParams {
    pub omega: Vec<f64>,
    pub iota: Vec<f64>,
    pub delta: Vec<f64>,
}

impl VsParams {
    pub fn new(omega: Vec<f64>, iota: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        let p = Self { omega, iota, delta };
        p.validate()?;
        Ok(p)
    }

    /// Plain cross-entropy for `classes` classes.
    pub fn uniform(classes: usize) -> Self {
        Self {
            omega: vec![1.0; classes],
            iota: vec![0.0; classes],
            delta: vec![1.0; classes],
        }
    }

    /// Binary CDT-style loss whose implicit bias is CS-SVM with margin ratio
    /// `ratio`: Δ_+ = 1/ratio, Δ_- = 1.
    pub fn margin_ratio(ratio: f64) -> Result<Self> {
        Self::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0 / ratio, 1.0])
    }

    pub fn classes(&self) -> usize {
        self.omega.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.omega.len();
        if c == 0 || self.iota.len() != c || self.delta.len() != c {
            return Err(invalid("omega, iota and delta must have the same nonzero length"));
        }
        if self.omega.iter().chain(&self.delta).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("omega and delta must be positive and finite"));
        }
        if self.iota.iter().any(|v| !v.is_finite()) {
            return Err(invalid("iota must be finite"));
        }
        Ok(())
    }

    /// Convert two-class logit offsets into the binary-loss convention.
    pub fn to_binary_form(&self) -> Result<Self> {
        if self.classes() != 2 {
            return Err(invalid("binary form needs exactly two classes"));
        }
        let mut out = self.clone();
        out.iota = vec![self.iota[1] - self.iota[0], self.iota[0] - self.iota[1]];
        Ok(out)
    }

    fn binary_triple(&self, y: i32) -> (f64, f64, f64) {
        let k = class_index(y);
        (self.omega[k], self.iota[k], self.delta[k])
    }
}

/// Index of a binary label in length-2 parameter vectors.
pub fn class_index(y: i32) -> usize {
    if y == 1 {
        0
    } else {
        1
    }
}

/// One (ω, ι, Δ) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsTriple {
    pub omega: f64,
    pub iota: f64,
    pub delta: f64,
}

impl VsTriple {
    pub const PLAIN: VsTriple = VsTriple { omega: 1.0, iota: 0.0, delta: 1.0 };
}

/// Subgroup triples indexed `[class_index(y)][g - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVsParams {
    pub triples: [[VsTriple; 2]; 2],
}

impl GroupVsParams {
    pub fn new(triples: [[VsTriple; 2]; 2]) -> Result<Self> {
        for t in triples.iter().flatten() {
            if !(t.omega > 0.0 && t.delta > 0.0) || !t.iota.is_finite() {
                return Err(invalid("group triples need positive omega, delta and finite iota"));
            }
        }
        Ok(Self { triples })
    }

    pub fn uniform() -> Self {
        Self { triples: [[VsTriple::PLAIN; 2]; 2] }
    }

    /// Δ_{y,g} = Δ_g with Δ_1 = 1/ratio, Δ_2 = 1: targets GS-SVM with margin
    /// `ratio` on group 1.
    pub fn group_margin_ratio(ratio: f64) -> Result<Self> {
        let g1 = VsTriple { delta: 1.0 / ratio, ..VsTriple::PLAIN };
        Self::new([[g1, VsTriple::PLAIN], [g1, VsTriple::PLAIN]])
    }

    pub fn triple(&self, y: i32, g: u8) -> VsTriple {
        self.triples[class_index(y)][g as usize - 1]
    }
}

/// Loss value with its gradient in (w, b).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
}

impl LossGrad {
    pub fn zeros(d: usize) -> Self {
        Self { loss: 0.0, grad_w: vec![0.0; d], grad_b: 0.0 }
    }

    pub fn grad_norm(&self, with_intercept: bool) -> f64 {
        let b2 = if with_intercept { self.grad_b * self.grad_b } else { 0.0 };
        (dot(&self.grad_w, &self.grad_w) + b2).sqrt()
    }

    fn add_scaled(&mut self, alpha: f64, other: &LossGrad) {
        self.loss += alpha * other.loss;
        axpy(alpha, &other.grad_w, &mut self.grad_w);
        self.grad_b += alpha * other.grad_b;
    }
}

fn check_binary(model: &LinearModel, data: &Dataset) -> Result<()> {
    if model.dim() != data.d() {
        return Err(Error::DimensionMismatch { expected: data.d(), got: model.dim() });
    }
    if !data.is_binary() {
        return Err(invalid("binary loss needs labels in {+1, -1}"));
    }
    Ok(())
}

/// Σ_i ω_i log(1 + e^{ι_i} e^{-Δ_i y_i f(x_i)}) over the selected examples.
fn logistic_family<I, F>(model: &LinearModel, data: &Dataset, idx: I, triple: F) -> LossGrad
where
    I: Iterator<Item = usize>,
    F: Fn(usize) -> (f64, f64, f64),
{
    let mut out = LossGrad::zeros(data.d());
    for i in idx {
        let x = data.row(i);
        let y = data.label(i) as f64;
        let (omega, iota, delta) = triple(i);
        let t = iota - delta * y * model.decision(x);
        out.loss += omega * softplus(t);
        let coef = -omega * delta * y * sigmoid(t);
        axpy(coef, x, &mut out.grad_w);
        out.grad_b += coef;
    }
    out
}

pub fn vs_loss_grad_binary(params: &VsParams, model: &LinearModel, data: &Dataset) -> Result<LossGrad> {
    check_binary(model, data)?;
    if params.classes() != 2 {
        return Err(invalid("binary loss needs two-class parameters"));
    }
    Ok(logistic_family(model, data, 0..data.n(), |i| params.binary_triple(data.label(i))))
}

pub fn vs_loss_binary(params: &VsParams, model: &LinearModel, data: &Dataset) -> Result<f64> {
    Ok(vs_loss_grad_binary(params, model, data)?.loss)
}

/// Gradient with respect to (w, b).
pub fn vs_grad_binary(params: &VsParams, model: &LinearModel, data: &Dataset) -> Result<(Vec<f64>, f64)> {
    let lg = vs_loss_grad_binary(params, model, data)?;
    Ok((lg.grad_w, lg.grad_b))
}

/// Exponential VS-loss Σ ω_y exp(ι_y - Δ_y y f(x)), the smooth surrogate used
/// to track the gradient flow.
pub fn exp_vs_loss_grad_binary(params: &VsParams, model: &LinearModel, data: &Dataset) -> Result<LossGrad> {
    check_binary(model, data)?;
    let mut out = LossGrad::zeros(data.d());
    for i in 0..data.n() {
        let x = data.row(i);
        let y = data.label(i) as f64;
        let (omega, iota, delta) = params.binary_triple(data.label(i));
        let e = omega * (iota - delta * y * model.decision(x)).exp();
        out.loss += e;
        axpy(-delta * y * e, x, &mut out.grad_w);
        out.grad_b -= delta * y * e;
    }
    Ok(out)
}

// ============================================================================
// Group-sensitive loss
// ============================================================================

/// Per-subgroup example counts and summed loss/gradient, indexed like
/// [`GroupVsParams::triples`].
pub fn subgroup_vs_losses(
    params: &GroupVsParams,
    model: &LinearModel,
    data: &Dataset,
) -> Result<[[(usize, LossGrad); 2]; 2]> {
    check_binary(model, data)?;
    let groups = data.groups().ok_or(Error::MissingGroups)?;
    let cell = |y: i32, g: u8| {
        let idx: Vec<usize> = (0..data.n()).filter(|&i| data.label(i) == y && groups[i] == g).collect();
        let t = params.triple(y, g);
        let lg = logistic_family(model, data, idx.iter().copied(), |_| (t.omega, t.iota, t.delta));
        (idx.len(), lg)
    };
    Ok([[cell(1, 1), cell(1, 2)], [cell(-1, 1), cell(-1, 2)]])
}

/// Group-VS loss Σ_i ω_{y_i,g_i} log(1 + e^{ι_{y_i,g_i}} e^{-Δ_{y_i,g_i} y_i f(x_i)}).
pub fn group_vs_loss(params: &GroupVsParams, model: &LinearModel, data: &Dataset) -> Result<LossGrad> {
    let cells = subgroup_vs_losses(params, model, data)?;
    let mut out = LossGrad::zeros(data.d());
    for (_, lg) in cells.iter().flatten() {
        out.add_scaled(1.0, lg);
    }
    Ok(out)
}

// ============================================================================
// Multiclass loss
// ============================================================================

/// Which class's Δ scales logit c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MulticlassVariant {
    /// Logit c is Δ_{y_i} w_c'x + ι_c: every logit scaled by the true class's Δ.
    SharedDelta,
    /// Logit c is Δ_c w_c'x + ι_c.
    PerLogitDelta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLossGrad {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Multiclass VS-loss Σ_i ω_{y_i} (logsumexp(z_i) - z_{i,y_i}) with logits z
/// chosen by `variant`; labels in 0..C.
pub fn vs_loss_multi(
    params: &VsParams,
    model: &MultiModel,
    data: &Dataset,
    variant: MulticlassVariant,
) -> Result<MultiLossGrad> {
    let c = params.classes();
    if model.classes() != c {
        return Err(invalid(format!("model has {} classes, params have {c}", model.classes())));
    }
    if c < 2 {
        return Err(invalid("multiclass loss needs at least two classes"));
    }
    if let Some(wc) = model.w.iter().find(|wc| wc.len() != data.d()) {
        return Err(Error::DimensionMismatch { expected: data.d(), got: wc.len() });
    }
    if data.labels().iter().any(|&y| y < 0 || y as usize >= c) {
        return Err(invalid("multiclass labels must lie in 0..C"));
    }
    let d = data.d();
    let mut grad = vec![vec![0.0; d]; c];
    let mut loss = 0.0;
    let mut z = vec![0.0; c];
    let mut scale = vec![0.0; c];
    for i in 0..data.n() {
        let x = data.row(i);
        let y = data.label(i) as usize;
        for k in 0..c {
            scale[k] = match variant {
                MulticlassVariant::SharedDelta => params.delta[y],
                MulticlassVariant::PerLogitDelta => params.delta[k],
            };
            z[k] = scale[k] * dot(&model.w[k], x) + params.iota[k];
        }
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum.ln();
        let omega = params.omega[y];
        loss += omega * (lse - z[y]);
        for k in 0..c {
            let p = (z[k] - lse).exp();
            let dz = omega * (p - if k == y { 1.0 } else { 0.0 });
            axpy(dz * scale[k], x, &mut grad[k]);
        }
    }
    Ok(MultiLossGrad { loss, grad })
}

// ============================================================================
// Presets
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Ce,
    Wce,
    La,
    Ldam,
    Cdt,
    Vs,
}

impl FromStr for PresetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(Self::Ce),
            "wce" => Ok(Self::Wce),
            "la" => Ok(Self::La),
            "ldam" => Ok(Self::Ldam),
            "cdt" => Ok(Self::Cdt),
            "vs" => Ok(Self::Vs),
            other => Err(invalid(format!("unknown loss preset '{other}'"))),
        }
    }
}

/// Named parameter choices from per-class counts N_y. Offsets are returned in
/// the logit convention (see the module docs).
pub fn preset(kind: PresetKind, class_counts: &[usize], tau: f64, gamma_exp: f64) -> Result<VsParams> {
    if class_counts.is_empty() || class_counts.contains(&0) {
        return Err(invalid("class counts must be positive"));
    }
    if !(tau >= 0.0 && gamma_exp >= 0.0) {
        return Err(invalid("tau and gamma_exp must be non-negative"));
    }
    let c = class_counts.len();
    let total: usize = class_counts.iter().sum();
    let n_max = *class_counts.iter().max().unwrap() as f64;
    let n_min = *class_counts.iter().min().unwrap() as f64;
    let prior: Vec<f64> = class_counts.iter().map(|&n| n as f64 / total as f64).collect();
    let la_iota = || prior.iter().map(|p| tau * p.ln()).collect::<Vec<_>>();
    let cdt_delta = || class_counts.iter().map(|&n| (n as f64 / n_max).powf(gamma_exp)).collect::<Vec<_>>();
    let mut out = VsParams::uniform(c);
    match kind {
        PresetKind::Ce => {}
        PresetKind::Wce => out.omega = prior.iter().map(|p| 1.0 / p).collect(),
        PresetKind::La => out.iota = la_iota(),
        PresetKind::Ldam => {
            out.iota = class_counts.iter().map(|&n| -0.5 * (n_min / n as f64).powf(0.25)).collect()
        }
        PresetKind::Cdt => out.delta = cdt_delta(),
        PresetKind::Vs => {
            out.iota = la_iota();
            out.delta = cdt_delta();
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_data::{rng_from_seed, sample_group_gmm, GroupGmmSpec, MeanModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n: usize, d: usize, seed: u64, groups: bool) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut y: Vec<i32> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        y[0] = 1;
        y[1] = -1;
        let g = groups.then(|| (0..n).map(|_| if rng.random_bool(0.4) { 1 } else { 2 }).collect());
        Dataset::new(x, d, y, g, seed).unwrap()
    }

    fn multiclass_toy(n: usize, d: usize, c: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<i32> = (0..n).map(|i| (i % c) as i32).collect();
        Dataset::new(x, d, y, None, seed).unwrap()
    }

    fn random_params(rng: &mut impl Rng, c: usize) -> VsParams {
        VsParams::new(
            (0..c).map(|_| rng.random_range(0.2..3.0)).collect(),
            (0..c).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..c).map(|_| rng.random_range(0.2..3.0)).collect(),
        )
        .unwrap()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn zero_model_gives_n_log2() {
        let data = toy(9, 3, 1, false);
        let l = vs_loss_binary(&VsParams::uniform(2), &LinearModel::zeros(3), &data).unwrap();
        assert_relative_eq!(l, 9.0 * std::f64::consts::LN_2, max_relative = 1e-15);
    }

    #[test]
    fn la_offsets_match_softmax_expression() {
        // Two-logit softmax with logits (f/2 + log π, -f/2 + log(1-π)), so that
        // f(x) = w'x + b is the gap between the class logits.
        let rows = vec![
            vec![0.5, -1.0],
            vec![1.5, 0.2],
            vec![-0.3, 0.8],
            vec![-1.2, -0.4],
            vec![0.1, 0.1],
        ];
        let data = Dataset::from_rows(&rows, vec![1, 1, -1, -1, 1], None).unwrap();
        let pi: f64 = 0.2;
        let model = LinearModel::new(vec![0.7, -0.4], 0.3);
        let logit_params = VsParams::new(vec![1.0; 2], vec![pi.ln(), (1.0 - pi).ln()], vec![1.0; 2]).unwrap();
        let bin = logit_params.to_binary_form().unwrap();
        assert_relative_eq!(bin.iota[0], ((1.0 - pi) / pi).ln(), max_relative = 1e-15);
        let symmetric: f64 = (0..5)
            .map(|i| {
                let f = model.decision(data.row(i));
                let zp = 0.5 * f + pi.ln();
                let zm = -0.5 * f + (1.0 - pi).ln();
                let lse = (zp.exp() + zm.exp()).ln();
                if data.label(i) == 1 {
                    lse - zp
                } else {
                    lse - zm
                }
            })
            .sum();
        let l = vs_loss_binary(&bin, &model, &data).unwrap();
        assert_relative_eq!(l, symmetric, max_relative = 1e-12);
    }

    #[test]
    fn loss_decreases_to_zero_with_margin() {
        let rows = vec![vec![1.0], vec![2.0], vec![-1.5]];
        let data = Dataset::from_rows(&rows, vec![1, 1, -1], None).unwrap();
        let p = VsParams::new(vec![1.0, 2.0], vec![0.3, -0.2], vec![0.5, 1.0]).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let l = vs_loss_binary(&p, &LinearModel::new(vec![k as f64], 0.0), &data).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn single_sample_gradient_at_zero() {
        let data = Dataset::from_rows(&[vec![0.4, -1.3]], vec![-1], None).unwrap();
        let p = VsParams::new(vec![1.0, 2.5], vec![0.0, 0.0], vec![1.0, 0.8]).unwrap();
        let (gw, gb) = vs_grad_binary(&p, &LinearModel::zeros(2), &data).unwrap();
        let k = -(2.5 * 0.8 / 2.0) * -1.0;
        assert_relative_eq!(gw[0], k * 0.4, max_relative = 1e-15);
        assert_relative_eq!(gw[1], k * -1.3, max_relative = 1e-15);
        assert_relative_eq!(gb, k, max_relative = 1e-15);
    }

    #[test]
    fn cdt_gradient_at_zero_equals_wce() {
        let data = toy(12, 4, 3, false);
        let cdt = VsParams::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.3, 1.7]).unwrap();
        let wce = VsParams::new(vec![0.3, 1.7], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let zero = LinearModel::zeros(4);
        assert_eq!(
            vs_grad_binary(&cdt, &zero, &data).unwrap(),
            vs_grad_binary(&wce, &zero, &data).unwrap()
        );
    }

    fn fd_check_binary(eval: impl Fn(&LinearModel) -> LossGrad, model: &LinearModel) -> bool {
        let h = 1e-6;
        let lg = eval(model);
        let mut ok = true;
        for j in 0..=model.dim() {
            let (mut up, mut dn) = (model.clone(), model.clone());
            if j < model.dim() {
                up.w[j] += h;
                dn.w[j] -= h;
            } else {
                up.b += h;
                dn.b -= h;
            }
            let fd = (eval(&up).loss - eval(&dn).loss) / (2.0 * h);
            let an = if j < model.dim() { lg.grad_w[j] } else { lg.grad_b };
            ok &= rel_close(an, fd, 1e-5);
        }
        ok
    }

    #[test]
    fn binary_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(99);
        for t in 0..100 {
            let data = toy(8, 3, 1000 + t, false);
            let p = random_params(&mut rng, 2);
            let m = LinearModel::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(-1.0..1.0));
            assert!(fd_check_binary(|m| vs_loss_grad_binary(&p, m, &data).unwrap(), &m), "instance {t}");
            assert!(fd_check_binary(|m| exp_vs_loss_grad_binary(&p, m, &data).unwrap(), &m), "exp instance {t}");
        }
    }

    #[test]
    fn group_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(7);
        for t in 0..100 {
            let data = toy(10, 3, 2000 + t, true);
            let mut tr = [[VsTriple::PLAIN; 2]; 2];
            for cell in tr.iter_mut().flatten() {
                *cell = VsTriple {
                    omega: rng.random_range(0.2..3.0),
                    iota: rng.random_range(-2.0..2.0),
                    delta: rng.random_range(0.2..3.0),
                };
            }
            let p = GroupVsParams::new(tr).unwrap();
            let m = LinearModel::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(-1.0..1.0));
            assert!(fd_check_binary(|m| group_vs_loss(&p, m, &data).unwrap(), &m), "instance {t}");
        }
    }

    #[test]
    fn multiclass_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(5);
        let h = 1e-6;
        for variant in [MulticlassVariant::SharedDelta, MulticlassVariant::PerLogitDelta] {
            for t in 0..100 {
                let c = 2 + (t % 3) as usize;
                let data = multiclass_toy(9, 3, c, 3000 + t);
                let p = random_params(&mut rng, c);
                let m = MultiModel { w: (0..c).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
                let g = vs_loss_multi(&p, &m, &data, variant).unwrap().grad;
                for k in 0..c {
                    for j in 0..3 {
                        let (mut up, mut dn) = (m.clone(), m.clone());
                        up.w[k][j] += h;
                        dn.w[k][j] -= h;
                        let fd = (vs_loss_multi(&p, &up, &data, variant).unwrap().loss
                            - vs_loss_multi(&p, &dn, &data, variant).unwrap().loss)
                            / (2.0 * h);
                        assert!(rel_close(g[k][j], fd, 1e-5), "{variant:?} instance {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn group_loss_with_plain_triples_is_logistic() {
        let data = toy(15, 2, 8, true);
        let m = LinearModel::new(vec![0.3, -0.6], 0.1);
        let a = group_vs_loss(&GroupVsParams::uniform(), &m, &data).unwrap();
        let b = vs_loss_grad_binary(&VsParams::uniform(2), &m, &data).unwrap();
        assert_relative_eq!(a.loss, b.loss, max_relative = 1e-14);
    }

    #[test]
    fn group_loss_needs_groups() {
        let data = toy(5, 2, 8, false);
        assert!(matches!(
            group_vs_loss(&GroupVsParams::uniform(), &LinearModel::zeros(2), &data),
            Err(Error::MissingGroups)
        ));
    }

    #[test]
    fn group_delta_constant_in_y() {
        let p = GroupVsParams::group_margin_ratio(4.0).unwrap();
        assert_eq!(p.triple(1, 1).delta, 0.25);
        assert_eq!(p.triple(-1, 1).delta, 0.25);
        assert_eq!(p.triple(1, 2).delta, 1.0);
        let spec = GroupGmmSpec::new(MeanModel::orthogonal(3, 1.0, 1.0).unwrap(), 0.5, 0.5, 1.0, 1.0).unwrap();
        let data = sample_group_gmm(&spec, 30, 1).unwrap();
        assert!(group_vs_loss(&p, &LinearModel::zeros(3), &data).is_ok());
    }

    #[test]
    fn multiclass_unit_params_agree_with_cross_entropy() {
        let data = multiclass_toy(12, 3, 3, 4);
        let m = MultiModel { w: vec![vec![0.2, -0.1, 0.5], vec![-0.3, 0.4, 0.0], vec![0.1, 0.1, -0.7]] };
        let p = VsParams::uniform(3);
        let a = vs_loss_multi(&p, &m, &data, MulticlassVariant::SharedDelta).unwrap().loss;
        let b = vs_loss_multi(&p, &m, &data, MulticlassVariant::PerLogitDelta).unwrap().loss;
        let ce: f64 = (0..data.n())
            .map(|i| {
                let z: Vec<f64> = m.w.iter().map(|w| dot(w, data.row(i))).collect();
                let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
                lse - z[data.label(i) as usize]
            })
            .sum();
        assert_relative_eq!(a, ce, max_relative = 1e-12);
        assert_relative_eq!(b, ce, max_relative = 1e-12);
    }

    #[test]
    fn two_class_shared_delta_equals_binary_loss() {
        let data = multiclass_toy(10, 3, 2, 6);
        let m = MultiModel { w: vec![vec![0.2, -0.1, 0.5], vec![-0.3, 0.4, 0.0]] };
        let p = VsParams::new(vec![1.5, 0.7], vec![0.2, -0.9], vec![0.4, 1.3]).unwrap();
        let multi = vs_loss_multi(&p, &m, &data, MulticlassVariant::SharedDelta).unwrap().loss;
        // Class 0 plays +1, class 1 plays -1, and f = (w_0 - w_1)'x.
        let y: Vec<i32> = data.labels().iter().map(|&c| if c == 0 { 1 } else { -1 }).collect();
        let bin_data = Dataset::new(data.features().to_vec(), 3, y, None, 0).unwrap();
        let w: Vec<f64> = m.w[0].iter().zip(&m.w[1]).map(|(a, b)| a - b).collect();
        let bin = vs_loss_binary(&p.to_binary_form().unwrap(), &LinearModel::new(w, 0.0), &bin_data).unwrap();
        assert_relative_eq!(multi, bin, max_relative = 1e-12);
    }

    #[test]
    fn multiclass_iota_shift_invariance() {
        let data = multiclass_toy(12, 3, 3, 10);
        let m = MultiModel { w: vec![vec![0.2, -0.1, 0.5], vec![-0.3, 0.4, 0.0], vec![0.1, 0.1, -0.7]] };
        let p = VsParams::new(vec![1.0, 2.0, 0.5], vec![0.3, -1.0, 0.25], vec![0.5, 1.0, 2.0]).unwrap();
        let mut q = p.clone();
        for v in q.iota.iter_mut() {
            *v += 0.75;
        }
        for variant in [MulticlassVariant::SharedDelta, MulticlassVariant::PerLogitDelta] {
            let a = vs_loss_multi(&p, &m, &data, variant).unwrap().loss;
            let b = vs_loss_multi(&q, &m, &data, variant).unwrap().loss;
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn shared_delta_scaling() {
        let data = multiclass_toy(12, 3, 3, 11);
        let m = MultiModel { w: vec![vec![0.2, -0.1, 0.5], vec![-0.3, 0.4, 0.0], vec![0.1, 0.1, -0.7]] };
        let c = 2.0;
        let scaled = VsParams::new(vec![1.0; 3], vec![0.1, 0.0, -0.2], vec![c; 3]).unwrap();
        let unit = VsParams::new(vec![1.0; 3], vec![0.1, 0.0, -0.2], vec![1.0; 3]).unwrap();
        let cm = MultiModel { w: m.w.iter().map(|w| w.iter().map(|v| c * v).collect()).collect() };
        let a = vs_loss_multi(&scaled, &m, &data, MulticlassVariant::SharedDelta).unwrap().loss;
        let b = vs_loss_multi(&unit, &cm, &data, MulticlassVariant::SharedDelta).unwrap().loss;
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn binary_loss_is_convex(
            seed in 0u64..1000,
            lam in 0.0f64..1.0,
            w1 in prop::collection::vec(-3.0f64..3.0, 4),
            w2 in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let data = toy(10, 3, seed, true);
            let mut rng = rng_from_seed(seed);
            let p = random_params(&mut rng, 2);
            let gp = GroupVsParams::group_margin_ratio(2.5).unwrap();
            let m1 = LinearModel::new(w1[..3].to_vec(), w1[3]);
            let m2 = LinearModel::new(w2[..3].to_vec(), w2[3]);
            let mix = LinearModel::new(
                m1.w.iter().zip(&m2.w).map(|(a, b)| lam * a + (1.0 - lam) * b).collect(),
                lam * m1.b + (1.0 - lam) * m2.b,
            );
            let f = |m: &LinearModel| vs_loss_binary(&p, m, &data).unwrap();
            prop_assert!(f(&mix) <= lam * f(&m1) + (1.0 - lam) * f(&m2) + 1e-10);
            let g = |m: &LinearModel| group_vs_loss(&gp, m, &data).unwrap().loss;
            prop_assert!(g(&mix) <= lam * g(&m1) + (1.0 - lam) * g(&m2) + 1e-10);
        }
    }

    #[test]
    fn preset_definitions() {
        let counts = [50, 5000];
        let la = preset(PresetKind::La, &counts, 1.0, 0.0).unwrap();
        assert_relative_eq!(la.iota[0], (50.0f64 / 5050.0).ln(), max_relative = 1e-15);
        let wce = preset(PresetKind::Wce, &counts, 0.0, 0.0).unwrap();
        assert_relative_eq!(wce.omega[0], 5050.0 / 50.0, max_relative = 1e-15);
        let cdt = preset(PresetKind::Cdt, &counts, 0.0, 0.5).unwrap();
        assert_relative_eq!(cdt.delta[0], 0.1, max_relative = 1e-15);
        assert_eq!(cdt.delta[1], 1.0);
        let ldam = preset(PresetKind::Ldam, &counts, 0.0, 0.0).unwrap();
        assert_eq!(ldam.iota[0], -0.5);
        assert_relative_eq!(ldam.iota[1], -0.5 * 0.01f64.powf(0.25), max_relative = 1e-15);
        assert_eq!(preset(PresetKind::Ce, &counts, 3.0, 3.0).unwrap(), VsParams::uniform(2));
    }

    #[test]
    fn vs_preset_special_cases() {
        let counts = [13, 200, 77];
        assert_eq!(
            preset(PresetKind::Vs, &counts, 0.0, 0.4).unwrap(),
            preset(PresetKind::Cdt, &counts, 0.0, 0.4).unwrap()
        );
        assert_eq!(
            preset(PresetKind::Vs, &counts, 1.3, 0.0).unwrap(),
            preset(PresetKind::La, &counts, 1.3, 0.0).unwrap()
        );
    }

    #[test]
    fn vs_preset_long_tailed_profile() {
        // Long-tailed CIFAR-10 profile with imbalance ratio 100.
        let counts: Vec<usize> = (0..10).map(|i| (5000.0 * 100f64.powf(-(i as f64) / 9.0)) as usize).collect();
        assert_eq!(counts[0], 5000);
        assert_eq!(counts[9], 50);
        let p = preset(PresetKind::Vs, &counts, 1.25, 0.15).unwrap();
        let total: usize = counts.iter().sum();
        for (k, &n) in counts.iter().enumerate() {
            assert_relative_eq!(p.iota[k], 1.25 * (n as f64 / total as f64).ln(), max_relative = 1e-14);
            assert_relative_eq!(p.delta[k], (n as f64 / 5000.0).powf(0.15), max_relative = 1e-14);
        }
        assert_relative_eq!(p.delta[9], 0.01f64.powf(0.15), max_relative = 1e-14);
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("VS".parse::<PresetKind>().unwrap(), PresetKind::Vs);
        assert!("focal".parse::<PresetKind>().is_err());
    }
}
