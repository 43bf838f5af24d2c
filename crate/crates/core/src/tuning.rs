//! Margin-ratio tuning: the balanced-error-optimal δ⋆ computed from the SVM
//! limit, its data-driven estimate, and the δ at which GS-SVM equalizes the
//! positive-class errors of the two groups.
//!
//! Shifting the SVM boundary by t = (δ-1)/(δ+1) ∈ (-1, 1) moves the two
//! normalized margins to ℓ₊ + t/q₁ and ℓ₋ - t/q₁, so every quantity here is a
//! function of (ℓ₊, ℓ₋, 1/q₁) alone.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{predict_risks, solve_triple, AsymptoticTriple, TheoryProblem};
use crate::error::{invalid, Error, Result};
use crate::maxmargin::svm;
use crate::model_data::Dataset;
use crate::numerics::{dot, q_function};

/// Value substituted for δ⋆ = ∞ when a concrete classifier is needed.
pub const DELTA_CAP: f64 = 1e6;
/// Value substituted for δ⋆ → 0.
pub const DELTA_FLOOR: f64 = 1e-6;

/// Normalized SVM margins ℓ± and inverse norm 1/q₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmSummary {
    pub ell_plus: f64,
    pub ell_minus: f64,
    pub q1_inv: f64,
}

impl SvmSummary {
    pub fn new(ell_plus: f64, ell_minus: f64, q1_inv: f64) -> Result<Self> {
        if !(ell_plus.is_finite() && ell_minus.is_finite()) || !(q1_inv > 0.0) || !q1_inv.is_finite() {
            return Err(invalid("summary needs finite margins and positive 1/q1"));
        }
        Ok(Self { ell_plus, ell_minus, q1_inv })
    }

    /// Summary of the δ = 1 triple.
    pub fn from_triple(triple: &AsymptoticTriple, problem: &TheoryProblem) -> Result<Self> {
        let p0 = dot(&problem.means.vs_row(0), &triple.rho);
        let p1 = dot(&problem.means.vs_row(1), &triple.rho);
        let shift = triple.b / triple.q;
        Self::new(p0 + shift, -p1 - shift, 1.0 / triple.q)
    }

    /// (R₊, R₋) of the boundary shifted to margin ratio δ.
    pub fn risks_at(&self, delta: f64) -> (f64, f64) {
        self.risks_at_shift(shift_of(delta))
    }

    fn risks_at_shift(&self, t: f64) -> (f64, f64) {
        (q_function(self.ell_plus + t * self.q1_inv), q_function(self.ell_minus - t * self.q1_inv))
    }

    pub fn balanced_error_at(&self, delta: f64) -> f64 {
        let (a, b) = self.risks_at(delta);
        0.5 * (a + b)
    }
}

fn shift_of(delta: f64) -> f64 {
    if delta.is_infinite() {
        1.0
    } else {
        (delta - 1.0) / (delta + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeltaStar {
    Finite(f64),
    /// Balanced error keeps decreasing as δ → ∞.
    Infinite,
    /// Balanced error keeps decreasing as δ → 0.
    Zero,
}

impl DeltaStar {
    /// Concrete margin ratio, with sentinels replaced by the cap or floor.
    pub fn value(&self) -> f64 {
        match *self {
            DeltaStar::Finite(d) => d.clamp(DELTA_FLOOR, DELTA_CAP),
            DeltaStar::Infinite => DELTA_CAP,
            DeltaStar::Zero => DELTA_FLOOR,
        }
    }

    fn shift(&self) -> f64 {
        match *self {
            DeltaStar::Finite(d) => shift_of(d),
            DeltaStar::Infinite => 1.0,
            DeltaStar::Zero => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaStarResult {
    pub delta: DeltaStar,
    /// 1: interior optimum; 2: δ⋆ = ∞; 3: boundary optimum at the δ → 0 end
    /// (or, when ℓ₊ + ℓ₋ < 0, whichever end is better).
    pub branch: u8,
}

/// Minimizer of Q(ℓ₊ + t/q₁) + Q(ℓ₋ - t/q₁) over t = (δ-1)/(δ+1).
pub fn delta_star(s: &SvmSummary) -> DeltaStarResult {
    let sum = s.ell_plus + s.ell_minus;
    let num = s.ell_minus - s.ell_plus + 2.0 * s.q1_inv;
    let den = s.ell_plus - s.ell_minus + 2.0 * s.q1_inv;
    if sum >= 0.0 {
        if den <= 0.0 {
            DeltaStarResult { delta: DeltaStar::Infinite, branch: 2 }
        } else if num <= 0.0 {
            // Stationary shift below -1: the objective decreases all the way to δ → 0.
            DeltaStarResult { delta: DeltaStar::Zero, branch: 3 }
        } else {
            DeltaStarResult { delta: DeltaStar::Finite(num / den), branch: 1 }
        }
    } else {
        // The stationary point is a maximum and the objective is symmetric
        // about it, so the endpoint farther from it wins.
        let t_stat = (s.ell_minus - s.ell_plus) / (2.0 * s.q1_inv);
        let delta = if t_stat >= 0.0 { DeltaStar::Zero } else { DeltaStar::Infinite };
        DeltaStarResult { delta, branch: 3 }
    }
}

/// `tune` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub delta_star: DeltaStar,
    pub branch: u8,
    #[serde(rename = "R_bal_at_star")]
    pub r_bal_at_star: f64,
    #[serde(rename = "R_plus")]
    pub r_plus: f64,
    #[serde(rename = "R_minus")]
    pub r_minus: f64,
    pub summary: SvmSummary,
}

impl TuningReport {
    fn from_summary(summary: SvmSummary) -> Self {
        let res = delta_star(&summary);
        let (r_plus, r_minus) = summary.risks_at_shift(res.delta.shift());
        Self {
            delta_star: res.delta,
            branch: res.branch,
            r_bal_at_star: 0.5 * (r_plus + r_minus),
            r_plus,
            r_minus,
            summary,
        }
    }
}

/// δ⋆ for a label problem: solve the SVM (δ = 1) limit, then apply the formula.
pub fn delta_star_from_theory(problem: &TheoryProblem) -> Result<TuningReport> {
    if problem.group.is_some() {
        return Err(invalid("delta_star applies to label-imbalanced problems"));
    }
    let base = problem.with_delta(1.0);
    let triple = solve_triple(&base)?;
    Ok(TuningReport::from_summary(SvmSummary::from_triple(&triple, &base)?))
}

/// Data-driven δ̃⋆: SVM on the data, class means replaced by the given
/// estimates (by default the training-set class averages).
pub fn delta_star_heuristic(data: &Dataset, means: Option<(&[f64], &[f64])>) -> Result<TuningReport> {
    let sol = svm(data, true)?;
    let (owned_plus, owned_minus);
    let (mu_plus, mu_minus) = match means {
        Some(m) => m,
        None => {
            owned_plus = class_mean(data, 1)?;
            owned_minus = class_mean(data, -1)?;
            (owned_plus.as_slice(), owned_minus.as_slice())
        }
    };
    let w = &sol.model.w;
    let wn = sol.model.w_norm();
    let summary = SvmSummary::new(
        (dot(w, mu_plus) + sol.model.b) / wn,
        -(dot(w, mu_minus) + sol.model.b) / wn,
        1.0 / wn,
    )?;
    Ok(TuningReport::from_summary(summary))
}

/// Average feature vector of the samples with label `y`.
pub fn class_mean(data: &Dataset, y: i32) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; data.d()];
    let mut count = 0usize;
    for i in (0..data.n()).filter(|&i| data.label(i) == y) {
        crate::numerics::axpy(1.0, data.row(i), &mut acc);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyClass(0));
    }
    Ok(acc.into_iter().map(|v| v / count as f64).collect())
}

/// Margin ratio δ₀ in [lo, hi] at which the predicted GS-SVM DEO vanishes,
/// by bisection in log δ to |DEO| ≤ 1e-6.
pub fn find_deo_zero(problem: &TheoryProblem, lo: f64, hi: f64) -> Result<f64> {
    if problem.group.is_none() {
        return Err(Error::MissingGroups);
    }
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid("bracket must satisfy 0 < lo < hi"));
    }
    let deo = |delta: f64| -> Result<f64> {
        let p = problem.with_delta(delta);
        let t = solve_triple(&p)?;
        Ok(predict_risks(&t, &p).deo().expect("group problem"))
    };
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (deo(a)?, deo(b)?);
    if fa.abs() <= 1e-6 {
        return Ok(a);
    }
    if fb.abs() <= 1e-6 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSignChange { lo, hi, deo_lo: fa, deo_hi: fb });
    }
    for _ in 0..200 {
        let mid = (a * b).sqrt();
        let fm = deo(mid)?;
        if fm.abs() <= 1e-6 || b / a - 1.0 <= 1e-14 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Err(Error::NoConvergence { what: "DEO bisection", iters: 200, residual: fa.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{theory_risks, GroupParams};
    use crate::model_data::{sample_label_gmm, LabelGmmSpec, MeanModel};
    use crate::numerics::logspace;
    use crate::risk_eval::closed_form_risks;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assume, proptest, ProptestConfig};

    fn grid_argmin(s: &SvmSummary, grid: &[f64]) -> (usize, f64) {
        grid.iter()
            .enumerate()
            .map(|(i, &d)| (i, s.balanced_error_at(d)))
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc })
    }

    #[test]
    fn equal_margins_give_unit_ratio() {
        let r = delta_star(&SvmSummary::new(0.7, 0.7, 0.4).unwrap());
        assert_eq!(r.branch, 1);
        assert_eq!(r.delta, DeltaStar::Finite(1.0));
    }

    #[test]
    fn sentinel_branches() {
        // Minority margin far below the majority's and negative sum.
        let r = delta_star(&SvmSummary::new(-1.5, 0.5, 0.3).unwrap());
        assert_eq!((r.delta, r.branch), (DeltaStar::Zero, 3));
        let r = delta_star(&SvmSummary::new(0.1, 2.0, 0.2).unwrap());
        assert_eq!((r.delta, r.branch), (DeltaStar::Infinite, 2));
        // Stationary shift below -1 with a nonnegative margin sum.
        let r = delta_star(&SvmSummary::new(2.0, 0.1, 0.2).unwrap());
        assert_eq!((r.delta, r.branch), (DeltaStar::Zero, 3));
        assert_eq!(DeltaStar::Infinite.value(), DELTA_CAP);
        assert_eq!(DeltaStar::Zero.value(), DELTA_FLOOR);
    }

    #[test]
    fn sentinel_direction_decreases_balanced_error() {
        let grid = logspace(1e-2, 1e2, 200);
        for s in [
            SvmSummary::new(-1.5, 0.5, 0.3).unwrap(),
            SvmSummary::new(0.5, -1.5, 0.3).unwrap(),
            SvmSummary::new(2.0, 0.1, 0.2).unwrap(),
            SvmSummary::new(0.1, 2.0, 0.2).unwrap(),
        ] {
            let res = delta_star(&s);
            let vals: Vec<f64> = grid.iter().map(|&d| s.balanced_error_at(d)).collect();
            match res.delta {
                DeltaStar::Infinite => assert!(vals.windows(2).all(|w| w[1] < w[0] + 1e-9)),
                DeltaStar::Zero => assert!(vals.windows(2).all(|w| w[0] < w[1] + 1e-9)),
                DeltaStar::Finite(_) => panic!("expected a sentinel for {s:?}"),
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn formula_matches_grid_argmin(lp in -1.0f64..3.0, lm in -1.0f64..3.0, k in 0.05f64..2.0) {
            let s = SvmSummary::new(lp, lm, k).unwrap();
            let res = delta_star(&s);
            prop_assume!(res.branch == 1);
            let DeltaStar::Finite(d) = res.delta else { unreachable!() };
            prop_assume!(d > 1.1e-4 && d < 0.9e4);
            let grid = logspace(1e-4, 1e4, 10_000);
            let (i, best) = grid_argmin(&s, &grid);
            let ratio = grid[1] / grid[0];
            prop_assert!(s.balanced_error_at(d) <= best + 1e-12);
            prop_assert!(d >= grid[i] / ratio && d <= grid[i] * ratio);
            let (rp, rm) = s.risks_at(d);
            prop_assert!((rp - rm).abs() <= 1e-12);
            prop_assert!((0.5 * (rp + rm) - q_function(0.5 * (lp + lm))).abs() <= 1e-12);
        }
    }

    fn skewed(gamma: f64) -> TheoryProblem {
        TheoryProblem::label(MeanModel::antipodal(500, 4.0).unwrap(), 0.05, gamma, 1.0).unwrap()
    }

    #[test]
    fn theory_delta_star_balances_and_minimizes() {
        let prob = skewed(1.0);
        let rep = delta_star_from_theory(&prob).unwrap();
        assert_eq!(rep.branch, 1);
        let d = rep.delta_star.value();
        // Direct solve at δ⋆, not the post-hoc shortcut.
        let (_, r) = theory_risks(&prob.with_delta(d)).unwrap();
        assert!((r.r_plus - r.r_minus).abs() <= 1e-6);
        assert!((r.r_bal() - rep.r_bal_at_star).abs() <= 1e-7);
        for dg in logspace(1e-2, 1e2, 200) {
            let (_, rg) = theory_risks(&prob.with_delta(dg)).unwrap();
            assert!(rg.r_bal() >= r.r_bal() - 1e-9, "delta {dg}");
        }
    }

    #[test]
    fn symmetric_prior_gives_unit_ratio() {
        let prob = TheoryProblem::label(MeanModel::antipodal(10, 2.0).unwrap(), 0.5, 1.5, 1.0).unwrap();
        let rep = delta_star_from_theory(&prob).unwrap();
        let DeltaStar::Finite(d) = rep.delta_star else { panic!() };
        assert_relative_eq!(d, 1.0, max_relative = 1e-7);
    }

    #[test]
    fn weak_signal_branches() {
        let means = MeanModel::antipodal(10, 1.0).unwrap();
        let at = |g: f64| delta_star_from_theory(&TheoryProblem::label(means.clone(), 0.1, g, 1.0).unwrap()).unwrap();
        assert_eq!(at(0.5).delta_star, DeltaStar::Infinite);
        assert_eq!(at(2.0).branch, 1);
        assert_eq!(at(5.0).branch, 1);
    }

    fn heuristic_mean(gamma: f64, held_out: bool) -> (f64, f64) {
        let spec = LabelGmmSpec::isotropic(MeanModel::antipodal(500, 4.0).unwrap(), 0.05).unwrap();
        let theory = delta_star_from_theory(&skewed(gamma)).unwrap().delta_star.value();
        let n = (500.0 / gamma).round() as usize;
        let mut acc = 0.0;
        for seed in 0..5 {
            let data = sample_label_gmm(&spec, n, seed).unwrap();
            let rep = if held_out {
                // Balanced validation draw, independent of the SVM.
                let bal = LabelGmmSpec::isotropic(spec.means.clone(), 0.5).unwrap();
                let val = sample_label_gmm(&bal, 1000, 1000 + seed).unwrap();
                let (mp, mm) = (class_mean(&val, 1).unwrap(), class_mean(&val, -1).unwrap());
                delta_star_heuristic(&data, Some((&mp, &mm))).unwrap()
            } else {
                delta_star_heuristic(&data, None).unwrap()
            };
            acc += rep.delta_star.value();
        }
        (acc / 5.0, theory)
    }

    #[test]
    fn heuristic_with_held_out_means_tracks_theory() {
        for gamma in [0.5, 1.0, 2.0] {
            let (est, theory) = heuristic_mean(gamma, true);
            assert!((est / theory - 1.0).abs() <= 0.2, "gamma {gamma}: {est} vs {theory}");
        }
    }

    #[test]
    fn heuristic_with_training_means_is_biased_low_at_large_gamma() {
        let (est, theory) = heuristic_mean(0.2, false);
        assert!((est / theory - 1.0).abs() <= 0.2, "{est} vs {theory}");
        let (est, theory) = heuristic_mean(2.0, false);
        assert!(est > 1.0 && est < theory);
    }

    #[test]
    fn heuristic_on_balanced_symmetric_data() {
        // Mirror-symmetric sample: SVM intercept is zero and the class means are antipodal.
        let spec = LabelGmmSpec::isotropic(MeanModel::antipodal(40, 2.0).unwrap(), 0.5).unwrap();
        let half = sample_label_gmm(&spec, 30, 4).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..half.n() {
            rows.push(half.row(i).to_vec());
            y.push(half.label(i));
            rows.push(half.row(i).iter().map(|v| -v).collect());
            y.push(-half.label(i));
        }
        let data = Dataset::from_rows(&rows, y, None).unwrap();
        let rep = delta_star_heuristic(&data, None).unwrap();
        assert_relative_eq!(rep.delta_star.value(), 1.0, max_relative = 1e-6);
        // Supplying the true means uses them instead.
        let tm = delta_star_heuristic(&data, Some((spec.mu_plus(), spec.mu_minus()))).unwrap();
        assert!(tm.summary.ell_plus.is_finite());
        let sol = svm(&data, true).unwrap();
        let cf = closed_form_risks(&sol.model, &spec).unwrap();
        assert_relative_eq!(cf.r_plus, cf.r_minus, max_relative = 1e-6);
    }

    fn group_problem(gamma: f64, delta: f64) -> TheoryProblem {
        let g = GroupParams { p: 0.05, sigma1: 1.0, sigma2: 1.0 };
        TheoryProblem::group(MeanModel::orthogonal(500, 3.0, 3.0).unwrap(), 0.5, g, gamma, delta).unwrap()
    }

    #[test]
    fn deo_zero_symmetric_groups() {
        let g = GroupParams { p: 0.5, sigma1: 1.0, sigma2: 1.0 };
        let prob = TheoryProblem::group(MeanModel::orthogonal(20, 2.0, 2.0).unwrap(), 0.5, g, 1.5, 1.0).unwrap();
        let (_, r) = theory_risks(&prob).unwrap();
        assert!(r.deo().unwrap().abs() <= 1e-9);
        let d0 = find_deo_zero(&prob, 0.5, 3.0).unwrap();
        assert!((d0 - 1.0).abs() < 1e-4, "{d0}");
    }

    #[test]
    fn deo_zero_matches_grid_and_grows_with_gamma() {
        let prob = group_problem(2.0, 1.0);
        let d0 = find_deo_zero(&prob, 1.0, 1e3).unwrap();
        // Grid oracle: sign change located between adjacent grid points.
        let grid = logspace(1.0, 1e3, 10_000);
        let deos: Vec<f64> = grid
            .iter()
            .map(|&d| {
                let p = prob.with_delta(d);
                theory_risks(&p).unwrap().1.deo().unwrap()
            })
            .collect();
        let k = deos.windows(2).position(|w| w[0].signum() != w[1].signum()).unwrap();
        assert!(d0 >= grid[k] && d0 <= grid[k + 1]);
        let d_lo = find_deo_zero(&group_problem(1.0, 1.0), 1.0, 1e3).unwrap();
        let d_hi = find_deo_zero(&group_problem(5.0, 1.0), 1.0, 1e3).unwrap();
        assert!(d_lo < d0 && d0 < d_hi, "{d_lo} {d0} {d_hi}");
        assert!(matches!(find_deo_zero(&prob, 1.0, 1.01), Err(Error::NoSignChange { .. })));
    }
}
