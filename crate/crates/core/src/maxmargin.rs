//! Hard-margin solvers: SVM, cost-sensitive SVM (margin δ on class +1),
//! group-sensitive SVM (margin δ_g per group), multiclass CS-SVM, an LP
//! separability test, and the post-hoc boundary shift relating SVM to CS-SVM.
//!
//! Every binary problem is min ½‖w‖² s.t. y_i(w'x_i + b) ≥ m_i, solved in
//! the dual. With an intercept the dual carries the equality Σ α_i y_i = 0 and
//! is solved by pairwise (SMO) steps with second-order working-set selection;
//! without one, by coordinate ascent over random permutations. A final
//! active-set polish solves the KKT system on the support set exactly.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linear::{LinearModel, MultiModel};
use crate::losses::MulticlassVariant;
use crate::model_data::{rng_from_seed, Dataset};
use crate::numerics::{axpy, dot, norm};

/// Maximal KKT violation at which the dual solvers stop.
pub const KKT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MarginSolution {
    pub model: LinearModel,
    /// Dual multipliers, one per example.
    pub dual: Vec<f64>,
    /// min_i y_i(w'x_i + b) / m_i; equals 1 at an exact optimum.
    pub margin_value: f64,
    /// |primal - dual| objective gap.
    pub duality_gap: f64,
    /// Margin ratio reported in the solution file.
    pub delta: f64,
}

/// Serialized form of a binary solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub w: Vec<f64>,
    pub b: f64,
    pub delta: f64,
    pub margin: f64,
    pub duality_gap: f64,
}

impl From<&MarginSolution> for SolutionFile {
    fn from(s: &MarginSolution) -> Self {
        Self {
            w: s.model.w.clone(),
            b: s.model.b,
            delta: s.delta,
            margin: s.margin_value,
            duality_gap: s.duality_gap,
        }
    }
}

// ============================================================================
// Generic min-norm problem: min ½‖v‖² s.t. a_j'v + s_j b ≥ m_j
// ============================================================================

/// Constraint rows a_j (flat, row-major), optional intercept signs s_j, and
/// required margins m_j.
struct MinNormProblem {
    p: usize,
    rows: Vec<f64>,
    signs: Option<Vec<f64>>,
    margins: Vec<f64>,
}

struct DualSolution {
    alpha: Vec<f64>,
    v: Vec<f64>,
    b: f64,
}

impl MinNormProblem {
    fn k(&self) -> usize {
        self.margins.len()
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.p..(j + 1) * self.p]
    }

    fn gram(&self) -> Vec<f64> {
        let k = self.k();
        let mut q = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                q[i * k + j] = v;
                q[j * k + i] = v;
            }
        }
        q
    }

    fn primal_from_dual(&self, alpha: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.p];
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                axpy(a, self.row(j), &mut v);
            }
        }
        v
    }

    fn is_feasible(&self) -> Result<bool> {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..self.p).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
        let bvar = self.signs.as_ref().map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)));
        for j in 0..self.k() {
            let mut expr: Vec<_> = vars
                .iter()
                .zip(self.row(j))
                .filter(|(_, &c)| c != 0.0)
                .map(|(&v, &c)| (v, c))
                .collect();
            if let (Some(b), Some(s)) = (bvar, &self.signs) {
                expr.push((b, s[j]));
            }
            lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, 1.0);
        }
        match lp.solve() {
            Ok(_) => Ok(true),
            Err(microlp::Error::Infeasible) => Ok(false),
            Err(e) => Err(invalid(format!("separability LP failed: {e}"))),
        }
    }

    fn solve(&self) -> Result<DualSolution> {
        if self.margins.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(invalid("required margins must be positive and finite"));
        }
        if !self.is_feasible()? {
            return Err(Error::Infeasible);
        }
        let q = self.gram();
        let alpha = match &self.signs {
            Some(s) => self.smo(&q, s)?,
            None => self.coordinate_ascent(&q)?,
        };
        let mut sol = self.finish(&q, alpha);
        if let Some(polished) = self.polish(&q, &sol.alpha) {
            sol = polished;
        }
        Ok(sol)
    }

    /// Pairwise dual steps keeping Σ s_j α_j = 0 (hard-margin SMO).
    fn smo(&self, q: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let k = self.k();
        let scale = self.margins.iter().copied().fold(1.0, f64::max);
        let tol = KKT_TOL * scale;
        let mut alpha = vec![0.0; k];
        // Dual gradient G_t = a_t'v - m_t.
        let mut grad: Vec<f64> = self.margins.iter().map(|m| -m).collect();
        let max_iter = (200 * k).max(10_000_000);
        let refresh = 10 * k.max(100);
        let mut since_refresh = 0;
        let mut last_gap = f64::INFINITY;
        for _ in 0..max_iter {
            // i: most violating index that may move "up".
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = usize::MAX;
            for t in 0..k {
                if s[t] > 0.0 || alpha[t] > 0.0 {
                    let v = -s[t] * grad[t];
                    if v > gmax {
                        gmax = v;
                        i_sel = t;
                    }
                }
            }
            let mut gmin = f64::INFINITY;
            let mut j_sel = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..k {
                if s[t] < 0.0 || alpha[t] > 0.0 {
                    let v = -s[t] * grad[t];
                    gmin = gmin.min(v);
                    if i_sel != usize::MAX && v < gmax {
                        let b = gmax - v;
                        let a = (q[i_sel * k + i_sel] + q[t * k + t] - 2.0 * s[i_sel] * s[t] * q[i_sel * k + t])
                            .max(1e-12);
                        let obj = -b * b / a;
                        if obj < best {
                            best = obj;
                            j_sel = t;
                        }
                    }
                }
            }
            if gmax - gmin <= tol || j_sel == usize::MAX {
                // Re-derive the gradient exactly before accepting.
                if since_refresh > 0 {
                    self.exact_gradient(q, &alpha, &mut grad);
                    since_refresh = 0;
                    continue;
                }
                return Ok(alpha);
            }
            let (i, j) = (i_sel, j_sel);
            let a = (q[i * k + i] + q[j * k + j] - 2.0 * s[i] * s[j] * q[i * k + j]).max(1e-12);
            let mut lam = (gmax + s[j] * grad[j]) / a;
            if s[i] < 0.0 {
                lam = lam.min(alpha[i]);
            }
            if s[j] > 0.0 {
                lam = lam.min(alpha[j]);
            }
            alpha[i] += s[i] * lam;
            alpha[j] -= s[j] * lam;
            if alpha[i] < 0.0 {
                alpha[i] = 0.0;
            }
            if alpha[j] < 0.0 {
                alpha[j] = 0.0;
            }
            for t in 0..k {
                grad[t] += lam * (s[i] * q[t * k + i] - s[j] * q[t * k + j]);
            }
            since_refresh += 1;
            if since_refresh >= refresh {
                self.exact_gradient(q, &alpha, &mut grad);
                since_refresh = 0;
            }
            last_gap = gmax - gmin;
        }
        Err(Error::NoConvergence { what: "SMO dual solver", iters: max_iter, residual: last_gap })
    }

    /// G_t = a_t'v - m_t with v = Σ_j α_j a_j (rows already carry the label sign).
    fn exact_gradient(&self, q: &[f64], alpha: &[f64], grad: &mut [f64]) {
        let k = self.k();
        for t in 0..k {
            let row = &q[t * k..(t + 1) * k];
            grad[t] = dot(row, alpha) - self.margins[t];
        }
    }

    /// Cyclic coordinate ascent over random permutations (no equality constraint).
    fn coordinate_ascent(&self, q: &[f64]) -> Result<Vec<f64>> {
        let k = self.k();
        let scale = self.margins.iter().copied().fold(1.0, f64::max);
        let tol = KKT_TOL * scale;
        let mut alpha = vec![0.0; k];
        let mut grad: Vec<f64> = self.margins.iter().map(|m| -m).collect();
        let mut order: Vec<usize> = (0..k).collect();
        let mut rng = rng_from_seed(0x5eed);
        let max_sweeps = 1_000_000;
        for sweep in 0..max_sweeps {
            order.shuffle(&mut rng);
            for &t in &order {
                let qtt = q[t * k + t];
                if qtt <= 0.0 {
                    continue;
                }
                let new = (alpha[t] - grad[t] / qtt).max(0.0);
                let step = new - alpha[t];
                if step != 0.0 {
                    alpha[t] = new;
                    let row = &q[t * k..(t + 1) * k];
                    for (g, qv) in grad.iter_mut().zip(row) {
                        *g += step * qv;
                    }
                }
            }
            if sweep % 10 == 9 {
                self.exact_gradient(q, &alpha, &mut grad);
            }
            let viol = alpha
                .iter()
                .zip(&grad)
                .map(|(&a, &g)| if a > 0.0 { g.abs() } else { (-g).max(0.0) })
                .fold(0.0, f64::max);
            if viol <= tol {
                self.exact_gradient(q, &alpha, &mut grad);
                let viol = alpha
                    .iter()
                    .zip(&grad)
                    .map(|(&a, &g)| if a > 0.0 { g.abs() } else { (-g).max(0.0) })
                    .fold(0.0, f64::max);
                if viol <= tol {
                    return Ok(alpha);
                }
            }
        }
        Err(Error::NoConvergence { what: "coordinate ascent dual solver", iters: max_sweeps, residual: f64::NAN })
    }

    /// Build v and b from multipliers.
    fn finish(&self, q: &[f64], alpha: Vec<f64>) -> DualSolution {
        let v = self.primal_from_dual(&alpha);
        let b = match &self.signs {
            None => 0.0,
            Some(s) => {
                let k = self.k();
                let mut grad = vec![0.0; k];
                self.exact_gradient(q, &alpha, &mut grad);
                // On the support y_t(w'x_t + b) = m_t, i.e. b = -s_t G_t.
                let support: Vec<f64> = (0..k).filter(|&t| alpha[t] > 0.0).map(|t| -s[t] * grad[t]).collect();
                if support.is_empty() {
                    // Midpoint of the feasible interval for b.
                    let lo = (0..k).filter(|&t| s[t] > 0.0).map(|t| -grad[t]).fold(f64::NEG_INFINITY, f64::max);
                    let hi = (0..k).filter(|&t| s[t] < 0.0).map(|t| grad[t]).fold(f64::INFINITY, f64::min);
                    0.5 * (lo + hi)
                } else {
                    support.iter().sum::<f64>() / support.len() as f64
                }
            }
        };
        DualSolution { alpha, v, b }
    }

    /// Solve the KKT equations on the support set exactly, adjusting the set
    /// a few times if a multiplier turns negative or a constraint is violated.
    fn polish(&self, q: &[f64], alpha: &[f64]) -> Option<DualSolution> {
        let k = self.k();
        let amax = alpha.iter().copied().fold(0.0, f64::max);
        if amax <= 0.0 {
            return None;
        }
        let mut active: Vec<usize> = (0..k).filter(|&t| alpha[t] > 1e-14 * amax).collect();
        let mscale = self.margins.iter().copied().fold(1.0, f64::max);
        for _ in 0..20 {
            let na = active.len();
            let extra = usize::from(self.signs.is_some());
            let dim = na + extra;
            let mut mat = DMatrix::<f64>::zeros(dim, dim);
            let mut rhs = DVector::<f64>::zeros(dim);
            for (r, &i) in active.iter().enumerate() {
                for (c, &j) in active.iter().enumerate() {
                    mat[(r, c)] = q[i * k + j];
                }
                rhs[r] = self.margins[i];
                if let Some(s) = &self.signs {
                    mat[(r, na)] = s[i];
                    mat[(na, r)] = s[i];
                }
            }
            let sol = mat.clone().lu().solve(&rhs)?;
            let resid = (&mat * &sol - &rhs).amax();
            if !resid.is_finite() || resid > 1e-9 * mscale {
                return None;
            }
            let mut full = vec![0.0; k];
            for (r, &i) in active.iter().enumerate() {
                full[i] = sol[r];
            }
            let b = if self.signs.is_some() { sol[na] } else { 0.0 };
            let (neg_pos, neg_val) = active
                .iter()
                .enumerate()
                .map(|(r, _)| (r, sol[r]))
                .fold((usize::MAX, 0.0), |acc, (r, v)| if v < acc.1 { (r, v) } else { acc });
            let v = self.primal_from_dual(&full);
            let slack = |t: usize| -> f64 {
                let sb = self.signs.as_ref().map_or(0.0, |s| s[t] * b);
                dot(self.row(t), &v) + sb - self.margins[t]
            };
            let worst = (0..k).filter(|t| !active.contains(t)).map(|t| (t, slack(t))).fold(
                (usize::MAX, 0.0),
                |acc, (t, sl)| if sl < acc.1 { (t, sl) } else { acc },
            );
            let neg_ok = neg_val >= -1e-12 * amax.max(1.0);
            let feas_ok = worst.1 >= -1e-12 * mscale;
            if neg_ok && feas_ok {
                for a in full.iter_mut() {
                    *a = a.max(0.0);
                }
                return Some(DualSolution { alpha: full, v, b });
            }
            if !neg_ok {
                active.remove(neg_pos);
            }
            if !feas_ok {
                active.push(worst.0);
            }
            if active.is_empty() {
                return None;
            }
        }
        None
    }
}

// ============================================================================
// Binary solvers
// ============================================================================

fn binary_problem(data: &Dataset, margins: Vec<f64>, with_intercept: bool) -> Result<MinNormProblem> {
    if !data.is_binary() {
        return Err(invalid("max-margin solvers need labels in {+1, -1}"));
    }
    if margins.len() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: margins.len() });
    }
    let d = data.d();
    let mut rows = Vec::with_capacity(data.n() * d);
    for i in 0..data.n() {
        let y = data.label(i) as f64;
        rows.extend(data.row(i).iter().map(|v| y * v));
    }
    let signs = with_intercept.then(|| data.labels().iter().map(|&y| y as f64).collect());
    Ok(MinNormProblem { p: d, rows, signs, margins })
}

/// True iff some (w, b) (b = 0 without intercept) has y_i(w'x_i + b) ≥ 1 for all i.
pub fn is_separable(data: &Dataset, with_intercept: bool) -> Result<bool> {
    binary_problem(data, vec![1.0; data.n()], with_intercept)?.is_feasible()
}

/// Minimum-norm classifier meeting per-example margins y_i(w'x_i + b) ≥ m_i.
pub fn margin_svm(data: &Dataset, margins: &[f64], with_intercept: bool) -> Result<MarginSolution> {
    let prob = binary_problem(data, margins.to_vec(), with_intercept)?;
    let sol = prob.solve()?;
    let model = LinearModel::new(sol.v, sol.b);
    let achieved: Vec<f64> = (0..data.n()).map(|i| data.label(i) as f64 * model.decision(data.row(i))).collect();
    let margin_value = achieved.iter().zip(margins).map(|(a, m)| a / m).fold(f64::INFINITY, f64::min);
    let w2 = dot(&model.w, &model.w);
    let dual_lin: f64 = sol.alpha.iter().zip(margins).map(|(a, m)| a * m).sum();
    Ok(MarginSolution {
        model,
        dual: sol.alpha,
        margin_value,
        duality_gap: (w2 - dual_lin).abs(),
        delta: 1.0,
    })
}

/// Hard-margin SVM (margin 1 on both classes).
pub fn svm(data: &Dataset, with_intercept: bool) -> Result<MarginSolution> {
    cs_svm(data, 1.0, with_intercept)
}

/// Cost-sensitive SVM: margin `delta` for y = +1 and 1 for y = -1.
pub fn cs_svm(data: &Dataset, delta: f64, with_intercept: bool) -> Result<MarginSolution> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(invalid("margin ratio must be positive and finite"));
    }
    let margins: Vec<f64> = data.labels().iter().map(|&y| if y == 1 { delta } else { 1.0 }).collect();
    let mut sol = margin_svm(data, &margins, with_intercept)?;
    sol.delta = delta;
    Ok(sol)
}

/// Group-sensitive SVM: margin `delta_per_group[g - 1]` for examples in group g.
pub fn gs_svm(data: &Dataset, delta_per_group: [f64; 2], with_intercept: bool) -> Result<MarginSolution> {
    let groups = data.groups().ok_or(Error::MissingGroups)?;
    let margins: Vec<f64> = groups.iter().map(|&g| delta_per_group[g as usize - 1]).collect();
    let mut sol = margin_svm(data, &margins, with_intercept)?;
    sol.delta = delta_per_group[0] / delta_per_group[1];
    Ok(sol)
}

/// Map the SVM solution to the CS-SVM(δ) solution:
/// w_δ = ((δ+1)/2) w_1, b_δ = ((δ+1)/2) b_1 + (δ-1)/2.
pub fn posthoc_transform(svm_model: &LinearModel, delta: f64) -> LinearModel {
    let c = 0.5 * (delta + 1.0);
    LinearModel::new(svm_model.w.iter().map(|v| c * v).collect(), c * svm_model.b + 0.5 * (delta - 1.0))
}

/// min_i Δ_i y_i x_i'w / ‖w‖ for a homogeneous classifier.
pub fn min_weighted_margin(data: &Dataset, w: &[f64], weights: &[f64]) -> f64 {
    let n = norm(w);
    (0..data.n())
        .map(|i| weights[i] * data.label(i) as f64 * dot(data.row(i), w) / n)
        .fold(f64::INFINITY, f64::min)
}

/// Worst violation of the KKT system of a binary margin problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// ‖w - Σ α_i y_i x_i‖_∞
    pub stationarity: f64,
    /// |Σ α_i y_i| (zero by construction without intercept)
    pub balance: f64,
    /// max_i (m_i - y_i(w'x_i + b))_+
    pub primal: f64,
    /// max_i α_i |y_i(w'x_i + b) - m_i|
    pub complementarity: f64,
    /// max_i (-α_i)_+
    pub dual_sign: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [self.stationarity, self.balance, self.primal, self.complementarity, self.dual_sign]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn kkt_report(data: &Dataset, margins: &[f64], sol: &MarginSolution, with_intercept: bool) -> KktReport {
    let mut recon = vec![0.0; data.d()];
    let mut balance = 0.0;
    let (mut primal, mut comp, mut sign) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..data.n() {
        let y = data.label(i) as f64;
        let a = sol.dual[i];
        axpy(a * y, data.row(i), &mut recon);
        balance += a * y;
        let slack = y * sol.model.decision(data.row(i)) - margins[i];
        primal = primal.max(-slack);
        comp = comp.max(a * slack.abs());
        sign = sign.max(-a);
    }
    let stationarity = recon.iter().zip(&sol.model.w).map(|(r, w)| (r - w).abs()).fold(0.0, f64::max);
    KktReport {
        stationarity,
        balance: if with_intercept { balance.abs() } else { 0.0 },
        primal,
        complementarity: comp,
        dual_sign: sign,
    }
}

// ============================================================================
// Multiclass
// ============================================================================

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSolution {
    pub model: MultiModel,
    /// Multipliers for constraints (i, c), c ≠ y_i, in row-major order.
    pub dual: Vec<f64>,
}

/// Multiclass CS-SVM: min ‖W‖_F subject to, for all i and c ≠ y_i,
/// SharedDelta: Δ_{y_i} x_i'(w_{y_i} - w_c) ≥ 1;
/// PerLogitDelta: x_i'(Δ_{y_i} w_{y_i} - Δ_c w_c) ≥ 1.
pub fn cs_svm_multi(data: &Dataset, deltas: &[f64], variant: MulticlassVariant) -> Result<MultiSolution> {
    let c = deltas.len();
    if c < 2 {
        return Err(invalid("need at least two classes"));
    }
    if deltas.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("class factors must be positive"));
    }
    if data.labels().iter().any(|&y| y < 0 || y as usize >= c) {
        return Err(invalid("multiclass labels must lie in 0..C"));
    }
    let d = data.d();
    let p = c * d;
    let mut rows = Vec::new();
    for i in 0..data.n() {
        let y = data.label(i) as usize;
        let x = data.row(i);
        for other in (0..c).filter(|&k| k != y) {
            let mut r = vec![0.0; p];
            let (sy, so) = match variant {
                MulticlassVariant::SharedDelta => (deltas[y], deltas[y]),
                MulticlassVariant::PerLogitDelta => (deltas[y], deltas[other]),
            };
            for j in 0..d {
                r[y * d + j] = sy * x[j];
                r[other * d + j] = -so * x[j];
            }
            rows.extend(r);
        }
    }
    let k = rows.len() / p;
    let prob = MinNormProblem { p, rows, signs: None, margins: vec![1.0; k] };
    let sol = prob.solve()?;
    let w = (0..c).map(|cl| sol.v[cl * d..(cl + 1) * d].to_vec()).collect();
    Ok(MultiSolution { model: MultiModel { w }, dual: sol.alpha })
}
