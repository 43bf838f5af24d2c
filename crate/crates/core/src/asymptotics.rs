//! Sharp high-dimensional limits of CS-SVM and GS-SVM under the Gaussian
//! mixtures: the scalar function η, its inner minimization over (ρ, b), the
//! root in q, the separability threshold γ⋆, and the predicted risks.
//!
//! Every expectation is a finite mixture of Gaussian partial moments
//! m(c) = E[(G + c)_-²], one atom per label (or per label and group).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model_data::{GroupGmmSpec, LabelGmmSpec, MeanModel};
use crate::numerics::{
    dot, neg_part_sq_moment as m, neg_part_sq_moment_d1 as m1, neg_part_sq_moment_d2 as m2, norm, q_function,
};
use crate::risk_eval::RiskReport;

/// Projected-gradient norm at which the inner minimization stops.
pub const INNER_TOL: f64 = 1e-9;
/// Iteration cap of the inner minimization.
pub const INNER_MAX_ITERS: usize = 100_000;
/// Target residual |f(q)| of the outer root search.
pub const ROOT_TOL: f64 = 1e-9;
/// Margin kept above γ⋆ before solving.
pub const REGIME_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub p: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryProblem {
    pub means: MeanModel,
    pub pi: f64,
    pub gamma: f64,
    pub delta: f64,
    pub group: Option<GroupParams>,
}

impl TheoryProblem {
    pub fn label(means: MeanModel, pi: f64, gamma: f64, delta: f64) -> Result<Self> {
        let p = Self { means, pi, gamma, delta, group: None };
        p.validate()?;
        Ok(p)
    }

    pub fn group(means: MeanModel, pi: f64, group: GroupParams, gamma: f64, delta: f64) -> Result<Self> {
        let p = Self { means, pi, gamma, delta, group: Some(group) };
        p.validate()?;
        Ok(p)
    }

    pub fn from_label_spec(spec: &LabelGmmSpec, gamma: f64, delta: f64) -> Result<Self> {
        let spec = crate::model_data::whiten(spec)?;
        Self::label(spec.means, spec.pi, gamma, delta)
    }

    pub fn from_group_spec(spec: &GroupGmmSpec, gamma: f64, delta: f64) -> Result<Self> {
        let g = GroupParams { p: spec.p, sigma1: spec.sigma1, sigma2: spec.sigma2 };
        Self::group(spec.means.clone(), spec.pi, g, gamma, delta)
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(invalid("pi must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(invalid("gamma must be positive"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(invalid("delta must be positive"));
        }
        if let Some(g) = &self.group {
            if !(g.p > 0.0 && g.p < 1.0) || !(g.sigma1 > 0.0) || !(g.sigma2 > 0.0) {
                return Err(invalid("group prior must lie in (0, 1) and noise levels be positive"));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.means.rank()
    }

    fn atoms(&self) -> Vec<Atom> {
        build_atoms(&self.means, self.pi, self.group.as_ref(), self.delta)
    }
}

/// One term of the mixture: weight, direction u (so the mean contributes
/// u'ρ), label y, required margin Δ, and noise level σ.
#[derive(Debug, Clone)]
struct Atom {
    weight: f64,
    u: Vec<f64>,
    y: f64,
    margin: f64,
    sigma: f64,
}

fn build_atoms(means: &MeanModel, pi: f64, group: Option<&GroupParams>, delta: f64) -> Vec<Atom> {
    match group {
        None => vec![
            Atom { weight: pi, u: means.vs_row(0), y: 1.0, margin: delta, sigma: 1.0 },
            Atom { weight: 1.0 - pi, u: means.vs_row(1).iter().map(|v| -v).collect(), y: -1.0, margin: 1.0, sigma: 1.0 },
        ],
        Some(g) => {
            let mut atoms = Vec::with_capacity(4);
            for (wy, y) in [(pi, 1.0), (1.0 - pi, -1.0)] {
                for (s, (ws, margin, sigma)) in [(g.p, delta, g.sigma1), (1.0 - g.p, 1.0, g.sigma2)].into_iter().enumerate() {
                    atoms.push(Atom { weight: wy * ws, u: means.vs_row(s), y, margin, sigma });
                }
            }
            atoms
        }
    }
}

impl Atom {
    fn arg(&self, q: f64, rho: &[f64], b: f64) -> f64 {
        (dot(&self.u, rho) + (self.y * b - self.margin) / q) / self.sigma
    }

    /// Same argument with the intercept expressed as β = b/q.
    fn arg_scaled(&self, q: f64, rho: &[f64], beta: f64) -> f64 {
        (dot(&self.u, rho) + self.y * beta - self.margin / q) / self.sigma
    }
}

/// Value, gradient and Hessian in x = (ρ, β), β = b/q. Working with β keeps
/// the intercept coordinate on the same scale as ρ for every q.
struct Local {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn eta_atoms(atoms: &[Atom], gamma: f64, q: f64, rho: &[f64], b: f64) -> f64 {
    let e: f64 = atoms.iter().map(|a| a.weight * m(a.arg(q, rho, b))).sum();
    e - (1.0 - dot(rho, rho)) * gamma
}

fn eta_scaled(atoms: &[Atom], gamma: f64, q: f64, x: &DVector<f64>) -> f64 {
    let r = x.len() - 1;
    let rho = &x.as_slice()[..r];
    let e: f64 = atoms.iter().map(|a| a.weight * m(a.arg_scaled(q, rho, x[r]))).sum();
    e - (1.0 - dot(rho, rho)) * gamma
}

fn eta_local(atoms: &[Atom], gamma: f64, q: f64, x: &DVector<f64>) -> Local {
    let r = x.len() - 1;
    let rho = &x.as_slice()[..r];
    let beta = x[r];
    let mut grad = DVector::zeros(r + 1);
    let mut hess = DMatrix::zeros(r + 1, r + 1);
    let mut value = 0.0;
    let mut gv = DVector::zeros(r + 1);
    for a in atoms {
        let c = a.arg_scaled(q, rho, beta);
        for k in 0..r {
            gv[k] = a.u[k] / a.sigma;
        }
        gv[r] = a.y / a.sigma;
        value += a.weight * m(c);
        grad.axpy(a.weight * m1(c), &gv, 1.0);
        hess.ger(a.weight * m2(c), &gv, &gv, 1.0);
    }
    value -= (1.0 - dot(rho, rho)) * gamma;
    for k in 0..r {
        grad[k] += 2.0 * gamma * rho[k];
        hess[(k, k)] += 2.0 * gamma;
    }
    Local { value, grad, hess }
}

/// η_δ(q, ρ, b) for label or group problems.
pub fn eta(problem: &TheoryProblem, q: f64, rho: &[f64], b: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(invalid("q must be positive"));
    }
    if rho.len() != problem.rank() {
        return Err(Error::DimensionMismatch { expected: problem.rank(), got: rho.len() });
    }
    if norm(rho) > 1.0 + 1e-12 {
        return Err(invalid("rho must lie in the unit ball"));
    }
    Ok(eta_atoms(&problem.atoms(), problem.gamma, q, rho, b))
}

/// Alias kept for symmetry with the label case; dispatches on the problem.
pub fn eta_group(problem: &TheoryProblem, q: f64, rho: &[f64], b: f64) -> Result<f64> {
    if problem.group.is_none() {
        return Err(Error::MissingGroups);
    }
    eta(problem, q, rho, b)
}

fn project_ball(x: &mut DVector<f64>) {
    let r = x.len() - 1;
    let n = x.rows(0, r).norm();
    if n > 1.0 {
        for k in 0..r {
            x[k] /= n;
        }
    }
}

fn projected_grad_norm(x: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let mut y = x - g;
    project_ball(&mut y);
    (x - y).norm()
}

/// Minimizer of the quadratic model g's + ½ s'Hs subject to ‖ρ + s_ρ‖ ≤ 1.
fn ball_newton_step(x: &DVector<f64>, loc: &Local) -> Option<DVector<f64>> {
    let r = x.len() - 1;
    let mut h = loc.hess.clone();
    h[(r, r)] += 1e-14 * (1.0 + h[(r, r)].abs());
    let solve = |lam: f64| -> Option<DVector<f64>> {
        let mut a = h.clone();
        let mut rhs = -&loc.grad;
        for k in 0..r {
            a[(k, k)] += lam;
            rhs[k] -= lam * x[k];
        }
        a.cholesky().map(|c| c.solve(&rhs))
    };
    let rho_norm = |s: &DVector<f64>| (x.rows(0, r) + s.rows(0, r)).norm();
    let s0 = solve(0.0)?;
    if rho_norm(&s0) <= 1.0 {
        return Some(s0);
    }
    let mut hi = 1.0;
    while rho_norm(&solve(hi)?) > 1.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rho_norm(&solve(mid)?) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let mut s = solve(hi)?;
    // Land exactly inside the ball despite rounding.
    let mut z = x + &s;
    project_ball(&mut z);
    s = z - x;
    Some(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub rho: Vec<f64>,
    pub b: f64,
    /// f(q) = min η.
    pub value: f64,
    pub pg_norm: f64,
    pub iters: usize,
}

fn inner_min_atoms(atoms: &[Atom], gamma: f64, q: f64, start: &DVector<f64>) -> Result<(DVector<f64>, InnerSolution)> {
    let r = start.len() - 1;
    let mut x = start.clone();
    project_ball(&mut x);
    let mut loc = eta_local(atoms, gamma, q, &x);
    let mut stalled = 0;
    for iter in 0..INNER_MAX_ITERS {
        let pg = projected_grad_norm(&x, &loc.grad);
        if pg <= INNER_TOL || stalled >= 3 {
            if pg > 1e3 * INNER_TOL {
                return Err(Error::NoConvergence { what: "inner minimization", iters: iter, residual: pg });
            }
            let sol = InnerSolution { rho: x.as_slice()[..r].to_vec(), b: q * x[r], value: loc.value, pg_norm: pg, iters: iter };
            return Ok((x, sol));
        }
        let mut dir = ball_newton_step(&x, &loc);
        if let Some(s) = &dir {
            if loc.grad.dot(s) >= 0.0 {
                dir = None;
            }
        }
        // Projected-gradient fallback.
        let s = match dir {
            Some(s) => s,
            None => {
                let scale = loc.hess.diagonal().amax().max(1e-12);
                let mut z = &x - &loc.grad / scale;
                project_ball(&mut z);
                z - &x
            }
        };
        let slope = loc.grad.dot(&s);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + &s * t;
            let v = eta_scaled(atoms, gamma, q, &cand);
            if v < loc.value && v <= loc.value + 1e-4 * t * slope {
                x = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if accepted {
            stalled = 0;
        } else {
            // Near the rounding floor of η decrease is no longer observable;
            // judge the full step by the projected gradient instead.
            let mut cand = &x + &s;
            project_ball(&mut cand);
            let lc = eta_local(atoms, gamma, q, &cand);
            if projected_grad_norm(&cand, &lc.grad) < 0.5 * pg {
                x = cand;
                stalled = 0;
            } else {
                stalled += 1;
            }
        }
        project_ball(&mut x);
        loc = eta_local(atoms, gamma, q, &x);
    }
    Err(Error::NoConvergence {
        what: "inner minimization",
        iters: INNER_MAX_ITERS,
        residual: projected_grad_norm(&x, &loc.grad),
    })
}

/// (ρ*, b*) = argmin over ‖ρ‖ ≤ 1, b of η(q, ρ, b), and the minimum f(q).
pub fn inner_min(problem: &TheoryProblem, q: f64) -> Result<InnerSolution> {
    problem.validate()?;
    if !(q > 0.0) {
        return Err(invalid("q must be positive"));
    }
    let start = DVector::zeros(problem.rank() + 1);
    Ok(inner_min_atoms(&problem.atoms(), problem.gamma, q, &start)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticTriple {
    pub q: f64,
    pub rho: Vec<f64>,
    pub b: f64,
    /// |η| at the returned point.
    pub residual: f64,
}

/// Smallest γ for which the problem is separable (label or group).
pub fn problem_gamma_star(problem: &TheoryProblem) -> Result<f64> {
    gamma_star_atoms(&problem.atoms())
}

/// (q, ρ, b) with η = 0 and (ρ, b) minimizing η at that q.
pub fn solve_triple(problem: &TheoryProblem) -> Result<AsymptoticTriple> {
    problem.validate()?;
    let gamma_star = problem_gamma_star(problem)?;
    if problem.gamma <= gamma_star + REGIME_SLACK {
        return Err(Error::NonSeparableRegime { gamma: problem.gamma, gamma_star });
    }
    let atoms = problem.atoms();
    let gamma = problem.gamma;
    let r = problem.rank();
    let mut warm = DVector::zeros(r + 1);
    let f = |q: f64, warm: &mut DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (x, sol) = inner_min_atoms(&atoms, gamma, q, warm)?;
        *warm = x.clone();
        Ok((sol.value, x))
    };

    let (mut lo, mut hi) = (1e-3, 1e3);
    let (mut f_lo, _) = f(lo, &mut warm)?;
    while f_lo <= 0.0 && lo > 1e-6 {
        lo /= 10.0;
        f_lo = f(lo, &mut DVector::zeros(r + 1))?.0;
    }
    let (mut f_hi, mut x_hi) = f(hi, &mut DVector::zeros(r + 1))?;
    while f_hi >= 0.0 && hi < 1e6 {
        hi *= 10.0;
        (f_hi, x_hi) = f(hi, &mut DVector::zeros(r + 1))?;
    }
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::Bracket { q_lo: lo, f_lo, q_hi: hi, f_hi });
    }
    if f_lo.abs() <= 1e-14 {
        let x = inner_min_atoms(&atoms, gamma, lo, &DVector::zeros(r + 1))?.0;
        return Ok(triple_from(lo, &x, f_lo));
    }
    warm = x_hi.clone();
    let mut best = (hi, x_hi, f_hi);
    // Bisection in log q.
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let (fm, xm) = f(mid, &mut warm)?;
        if fm.abs() < best.2.abs() {
            best = (mid, xm.clone(), fm);
        }
        if fm.abs() <= 1e-13 || hi / lo - 1.0 <= 4.0 * f64::EPSILON {
            break;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (q, x, fq) = best;
    if fq.abs() > ROOT_TOL {
        return Err(Error::NoConvergence { what: "root search in q", iters: 200, residual: fq.abs() });
    }
    Ok(triple_from(q, &x, fq))
}

fn triple_from(q: f64, x: &DVector<f64>, fq: f64) -> AsymptoticTriple {
    let r = x.len() - 1;
    AsymptoticTriple { q, rho: x.as_slice()[..r].to_vec(), b: q * x[r], residual: fq.abs() }
}

/// Limiting conditional risks of the classifier described by `triple`.
pub fn predict_risks(triple: &AsymptoticTriple, problem: &TheoryProblem) -> RiskReport {
    let means = &problem.means;
    let proj = |k: usize| dot(&means.vs_row(k), &triple.rho);
    let shift = triple.b / triple.q;
    match &problem.group {
        None => RiskReport::label(problem.pi, q_function(proj(0) + shift), q_function(-proj(1) - shift)),
        Some(g) => {
            let sig = [g.sigma1, g.sigma2];
            let mut s = [[0.0; 2]; 2];
            for i in 0..2 {
                s[0][i] = q_function((proj(i) + shift) / sig[i]);
                s[1][i] = q_function((proj(i) - shift) / sig[i]);
            }
            RiskReport::group(problem.pi, g.p, s)
        }
    }
}

/// Solve and predict in one call.
pub fn theory_risks(problem: &TheoryProblem) -> Result<(AsymptoticTriple, RiskReport)> {
    let t = solve_triple(problem)?;
    let r = predict_risks(&t, problem);
    Ok((t, r))
}

// ============================================================================
// Phase transition
// ============================================================================

/// h(t, β) = Σ_atoms w a² m(c/a), a = √(1+‖t‖²), c = (u't + yβ)/σ, with gradient.
fn threshold_objective(atoms: &[Atom], x: &[f64]) -> (f64, Vec<f64>) {
    let r = x.len() - 1;
    let t = &x[..r];
    let beta = x[r];
    let a = (1.0 + dot(t, t)).sqrt();
    let mut val = 0.0;
    let mut grad = vec![0.0; r + 1];
    for at in atoms {
        let c = (dot(&at.u, t) + at.y * beta) / at.sigma;
        let z = c / a;
        let (mz, m1z) = (m(z), m1(z));
        val += at.weight * a * a * mz;
        // d/dc = a m'(z); d/da = 2a m(z) - c m'(z).
        let dc = at.weight * a * m1z;
        let da = at.weight * (2.0 * a * mz - c * m1z);
        for k in 0..r {
            grad[k] += dc * at.u[k] / at.sigma + da * t[k] / a;
        }
        grad[r] += dc * at.y / at.sigma;
    }
    (val, grad)
}

fn threshold_hessian(atoms: &[Atom], x: &[f64]) -> DMatrix<f64> {
    let dim = x.len();
    let mut h = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let step = 1e-6 * (1.0 + x[k].abs());
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[k] += step;
        xm[k] -= step;
        let (gp, gm) = (threshold_objective(atoms, &xp).1, threshold_objective(atoms, &xm).1);
        for j in 0..dim {
            h[(j, k)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Damped Newton on the threshold objective, with the gradient norm as the
/// acceptance test once decrease is below rounding.
fn gamma_star_atoms(atoms: &[Atom]) -> Result<f64> {
    let dim = atoms[0].u.len() + 1;
    let mut x = vec![0.0; dim];
    let (mut f, mut g) = threshold_objective(atoms, &x);
    let mut stalled = 0;
    for _ in 0..10_000 {
        let gn = norm(&g);
        if gn <= 1e-11 || (stalled >= 3 && gn <= 1e-7) {
            return Ok(f);
        }
        let gv = DVector::from_column_slice(&g);
        let newton = threshold_hessian(atoms, &x).cholesky().map(|c| -c.solve(&gv));
        let p = match newton {
            Some(p) if p.dot(&gv) < 0.0 => p,
            _ => -gv.clone(),
        };
        let slope = p.dot(&gv);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(p.iter()).map(|(xi, pi)| xi + t * pi).collect();
            let (fc, gc) = threshold_objective(atoms, &cand);
            if fc < f && fc <= f + 1e-4 * t * slope {
                next = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        if next.is_none() {
            let cand: Vec<f64> = x.iter().zip(p.iter()).map(|(xi, pi)| xi + pi).collect();
            let (fc, gc) = threshold_objective(atoms, &cand);
            if norm(&gc) < 0.5 * gn {
                next = Some((cand, fc, gc));
            }
        }
        match next {
            Some((xn, fnew, gnew)) => {
                x = xn;
                f = fnew;
                g = gnew;
                stalled = 0;
            }
            None => stalled += 1,
        }
    }
    Err(Error::NoConvergence { what: "separability threshold", iters: 10_000, residual: norm(&g) })
}

/// Label-imbalanced separability threshold γ⋆(V, S, π).
pub fn gamma_star(means: &MeanModel, pi: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(invalid("pi must lie in (0, 1)"));
    }
    gamma_star_atoms(&build_atoms(means, pi, None, 1.0))
}

/// Group-model separability threshold.
pub fn gamma_star_group(means: &MeanModel, pi: f64, group: &GroupParams) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) || !(group.p > 0.0 && group.p < 1.0) {
        return Err(invalid("priors must lie in (0, 1)"));
    }
    gamma_star_atoms(&build_atoms(means, pi, Some(group), 1.0))
}

/// SVM after undersampling the majority class to balance: the balanced
/// problem at ratio γ/(2π) with δ = 1. The report keeps the original π.
pub fn undersampling_risks(gamma: f64, pi: f64, means: &MeanModel) -> Result<RiskReport> {
    let mapped = TheoryProblem::label(means.clone(), 0.5, gamma / (2.0 * pi), 1.0)?;
    let (_, mut report) = theory_risks(&mapped)?;
    report.pi = pi;
    Ok(report)
}
