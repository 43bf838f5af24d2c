//! Gaussian-mixture data models (label-imbalanced and group-sensitive),
//! dataset sampling, and the mean-Gramian decomposition M'M = V S^2 V'.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, norm};

/// Relative eigenvalue ratio below which the mean Gramian is treated as rank one.
pub const RANK_TOL: f64 = 1e-12;

/// Attempts at redrawing labels before giving up on getting both classes.
pub const MAX_LABEL_ATTEMPTS: usize = 100;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ============================================================================
// Mean model
// ============================================================================

/// Two mean columns plus the eigendecomposition of their 2x2 Gramian.
///
/// `v` holds the r orthonormal eigenvectors (each a 2-vector) and `s` the
/// square roots of the matching eigenvalues, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    means: [Vec<f64>; 2],
    v: Vec<[f64; 2]>,
    s: Vec<f64>,
}

impl MeanModel {
    pub fn new(mu1: Vec<f64>, mu2: Vec<f64>) -> Result<Self> {
        gramian_decompose(mu1, mu2)
    }

    /// mu_+ = s e_1 = -mu_-.
    pub fn antipodal(d: usize, s: f64) -> Result<Self> {
        let mut mu = vec![0.0; d];
        mu[0] = s;
        let neg = mu.iter().map(|v| -v).collect();
        Self::new(mu, neg)
    }

    /// mu_1 = s1 e_1, mu_2 = s2 e_2.
    pub fn orthogonal(d: usize, s1: f64, s2: f64) -> Result<Self> {
        if d < 2 {
            return Err(invalid("orthogonal means need d >= 2"));
        }
        let mut mu1 = vec![0.0; d];
        let mut mu2 = vec![0.0; d];
        mu1[0] = s1;
        mu2[1] = s2;
        Self::new(mu1, mu2)
    }

    /// Independent Gaussian directions rescaled to the requested norms.
    pub fn random_directions(d: usize, norm1: f64, norm2: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut draw = |target: f64| -> Vec<f64> {
            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&g);
            g.iter().map(|v| v * target / n).collect()
        };
        let mu1 = draw(norm1);
        let mu2 = draw(norm2);
        Self::new(mu1, mu2)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Mean column k in {0, 1}.
    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    pub fn means(&self) -> &[Vec<f64>; 2] {
        &self.means
    }

    pub fn v(&self) -> &[[f64; 2]] {
        &self.v
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// Row k of V S, i.e. the r-vector e_k' V S.
    pub fn vs_row(&self, k: usize) -> Vec<f64> {
        self.v.iter().zip(&self.s).map(|(col, s)| col[k] * s).collect()
    }

    pub fn gramian(&self) -> [[f64; 2]; 2] {
        gramian_of(&self.means[0], &self.means[1])
    }

    /// V S^2 V' rebuilt from the decomposition.
    pub fn reconstruct(&self) -> [[f64; 2]; 2] {
        let mut g = [[0.0; 2]; 2];
        for (col, s) in self.v.iter().zip(&self.s) {
            for i in 0..2 {
                for j in 0..2 {
                    g[i][j] += col[i] * col[j] * s * s;
                }
            }
        }
        g
    }

    pub fn truncate(&self, p: usize) -> Result<Self> {
        check_truncation(p, self.dim())?;
        Self::new(self.means[0][..p].to_vec(), self.means[1][..p].to_vec())
    }
}

fn gramian_of(a: &[f64], b: &[f64]) -> [[f64; 2]; 2] {
    let ab = dot(a, b);
    [[dot(a, a), ab], [ab, dot(b, b)]]
}

/// Eigendecomposition of the 2x2 Gramian of the mean columns.
pub fn gramian_decompose(mu1: Vec<f64>, mu2: Vec<f64>) -> Result<MeanModel> {
    if mu1.len() != mu2.len() {
        return Err(Error::DimensionMismatch { expected: mu1.len(), got: mu2.len() });
    }
    if mu1.is_empty() {
        return Err(invalid("mean vectors are empty"));
    }
    if mu1.iter().chain(&mu2).any(|v| !v.is_finite()) {
        return Err(invalid("mean vectors contain non-finite entries"));
    }
    let g = gramian_of(&mu1, &mu2);
    let (a, c, d) = (g[0][0], g[0][1], g[1][1]);
    let half_tr = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + c * c).sqrt();
    let lam1 = half_tr + rad;
    if lam1 <= 0.0 {
        return Err(Error::DegenerateMeans);
    }
    let lam2 = (half_tr - rad).max(0.0);

    let v1 = {
        let p = [c, lam1 - a];
        let q = [lam1 - d, c];
        let (np, nq) = (p[0].hypot(p[1]), q[0].hypot(q[1]));
        if np.max(nq) <= f64::EPSILON * lam1 {
            // c = 0 and a = d: any basis works.
            [1.0, 0.0]
        } else if np >= nq {
            [p[0] / np, p[1] / np]
        } else {
            [q[0] / nq, q[1] / nq]
        }
    };
    let v1 = canonical_sign(v1);
    let v2 = canonical_sign([-v1[1], v1[0]]);

    let (v, s) = if lam2 < RANK_TOL * lam1 {
        (vec![v1], vec![lam1.sqrt()])
    } else {
        (vec![v1, v2], vec![lam1.sqrt(), lam2.sqrt()])
    };
    Ok(MeanModel { means: [mu1, mu2], v, s })
}

fn canonical_sign(v: [f64; 2]) -> [f64; 2] {
    let lead = if v[0].abs() > 1e-300 { v[0] } else { v[1] };
    if lead < 0.0 {
        [-v[0], -v[1]]
    } else {
        v
    }
}

fn check_truncation(p: usize, d: usize) -> Result<()> {
    if p == 0 || p > d {
        return Err(invalid(format!("kept dimension p={p} must lie in 1..={d}")));
    }
    Ok(())
}

// ============================================================================
// Specs
// ============================================================================

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Identity,
    Full(DMatrix<f64>),
}

/// x | y ~ N(mu_y, Sigma), P(y = +1) = pi. Column 0 of the mean model is mu_+.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGmmSpec {
    pub means: MeanModel,
    pub pi: f64,
    pub covariance: Covariance,
}

impl LabelGmmSpec {
    pub fn new(means: MeanModel, pi: f64, covariance: Covariance) -> Result<Self> {
        check_prob("pi", pi)?;
        if let Covariance::Full(s) = &covariance {
            let d = means.dim();
            if s.nrows() != d || s.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.nrows() });
            }
            if (s - s.transpose()).amax() > 1e-12 * s.amax().max(1.0) {
                return Err(invalid("covariance is not symmetric"));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::SingularCovariance);
            }
        }
        Ok(Self { means, pi, covariance })
    }

    pub fn isotropic(means: MeanModel, pi: f64) -> Result<Self> {
        Self::new(means, pi, Covariance::Identity)
    }

    pub fn dim(&self) -> usize {
        self.means.dim()
    }

    pub fn mu_plus(&self) -> &[f64] {
        self.means.mean(0)
    }

    pub fn mu_minus(&self) -> &[f64] {
        self.means.mean(1)
    }

    pub fn truncate(&self, p: usize) -> Result<Self> {
        let means = self.means.truncate(p)?;
        let covariance = match &self.covariance {
            Covariance::Identity => Covariance::Identity,
            Covariance::Full(s) => Covariance::Full(s.view((0, 0), (p, p)).into_owned()),
        };
        Self::new(means, self.pi, covariance)
    }
}

/// x | (y, g) ~ N(y mu_g, sigma_g^2 I), P(y = +1) = pi, P(g = 1) = p independent of y.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupGmmSpec {
    pub means: MeanModel,
    pub pi: f64,
    pub p: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl GroupGmmSpec {
    pub fn new(means: MeanModel, pi: f64, p: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        check_prob("pi", pi)?;
        check_prob("p", p)?;
        if !(sigma1 > 0.0 && sigma2 > 0.0) || !sigma1.is_finite() || !sigma2.is_finite() {
            return Err(invalid("group noise levels must be positive and finite"));
        }
        Ok(Self { means, pi, p, sigma1, sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.means.dim()
    }

    /// Noise level of group g in {1, 2}.
    pub fn sigma(&self, g: u8) -> f64 {
        if g == 1 {
            self.sigma1
        } else {
            self.sigma2
        }
    }

    pub fn truncate(&self, p: usize) -> Result<Self> {
        Self::new(self.means.truncate(p)?, self.pi, self.p, self.sigma1, self.sigma2)
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(invalid(format!("{name}={v} must lie strictly between 0 and 1")));
    }
    Ok(())
}

/// Maps a label spec to identity covariance: means become Sigma^{-1/2} mu_y.
pub fn whiten(spec: &LabelGmmSpec) -> Result<LabelGmmSpec> {
    let sigma = match &spec.covariance {
        Covariance::Identity => return Ok(spec.clone()),
        Covariance::Full(s) => s,
    };
    let inv_sqrt = inverse_sqrt_spd(sigma)?;
    let map = |mu: &[f64]| -> Vec<f64> {
        (&inv_sqrt * DVector::from_column_slice(mu)).iter().copied().collect()
    };
    let means = MeanModel::new(map(spec.mu_plus()), map(spec.mu_minus()))?;
    LabelGmmSpec::new(means, spec.pi, Covariance::Identity)
}

pub(crate) fn inverse_sqrt_spd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(sigma.clone());
    let max = eig.eigenvalues.max();
    if !(max > 0.0) || eig.eigenvalues.min() <= 1e-14 * max {
        return Err(Error::SingularCovariance);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

// ============================================================================
// Dataset
// ============================================================================

/// Row-major feature matrix with labels (binary: +1/-1; multiclass: 0..C)
/// and optional group memberships in {1, 2}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
    y: Vec<i32>,
    groups: Option<Vec<u8>>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: Vec<f64>, d: usize, y: Vec<i32>, groups: Option<Vec<u8>>, seed: u64) -> Result<Self> {
        let n = y.len();
        if d == 0 || n == 0 {
            return Err(invalid("dataset must have at least one example and one feature"));
        }
        if x.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: x.len() });
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: g.len() });
            }
            if g.iter().any(|&v| v != 1 && v != 2) {
                return Err(invalid("group labels must be 1 or 2"));
            }
        }
        Ok(Self { n, d, x, y, groups, seed })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<i32>, groups: Option<Vec<u8>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("ragged feature rows"));
        }
        Self::new(rows.concat(), d, y, groups, 0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Overparameterization ratio d / n.
    pub fn gamma(&self) -> f64 {
        self.d as f64 / self.n as f64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn labels(&self) -> &[i32] {
        &self.y
    }

    pub fn label(&self, i: usize) -> i32 {
        self.y[i]
    }

    pub fn groups(&self) -> Option<&[u8]> {
        self.groups.as_deref()
    }

    pub fn is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == 1 || v == -1)
    }

    /// (N_+, N_-) for binary labels.
    pub fn binary_counts(&self) -> (usize, usize) {
        let pos = self.y.iter().filter(|&&v| v == 1).count();
        (pos, self.n - pos)
    }

    /// Number of classes for multiclass labels in 0..C.
    pub fn num_classes(&self) -> usize {
        self.y.iter().copied().max().map_or(0, |m| m.max(0) as usize + 1)
    }

    /// Keep the examples at the given indices, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let groups = self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect());
        Self::new(x, self.d, y, groups, self.seed)
    }

    /// Drop a uniformly random subset of the larger binary class so both
    /// classes have the size of the smaller one. Original order is kept.
    pub fn undersample_majority(&self, seed: u64) -> Result<Self> {
        if !self.is_binary() {
            return Err(invalid("undersampling needs binary labels"));
        }
        let (pos, neg) = self.binary_counts();
        if pos == 0 || neg == 0 {
            return Err(Error::EmptyClass(0));
        }
        let major = if pos >= neg { 1 } else { -1 };
        let keep = pos.min(neg);
        let major_idx: Vec<usize> = (0..self.n).filter(|&i| self.y[i] == major).collect();
        let mut rng = rng_from_seed(seed);
        let mut chosen = vec![false; self.n];
        for k in rand::seq::index::sample(&mut rng, major_idx.len(), keep) {
            chosen[major_idx[k]] = true;
        }
        let idx: Vec<usize> = (0..self.n).filter(|&i| self.y[i] != major || chosen[i]).collect();
        self.subset(&idx)
    }

    /// Keep only the first `p` feature coordinates.
    pub fn truncate(&self, p: usize) -> Result<Self> {
        check_truncation(p, self.d)?;
        let mut x = Vec::with_capacity(self.n * p);
        for i in 0..self.n {
            x.extend_from_slice(&self.row(i)[..p]);
        }
        Self::new(x, p, self.y.clone(), self.groups.clone(), self.seed)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string(), "g".to_string()];
        header.extend((1..=self.d).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = vec![self.y[i].to_string()];
            rec.push(self.groups.as_ref().map_or(String::new(), |g| g[i].to_string()));
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let d = rdr.headers()?.len().saturating_sub(2);
        let (mut x, mut y, mut g) = (Vec::new(), Vec::new(), Vec::new());
        let mut any_group = false;
        for rec in rdr.records() {
            let rec = rec?;
            let parse_err = |field: &str| invalid(format!("cannot parse CSV field '{field}'"));
            y.push(rec[0].trim().parse::<i32>().map_err(|_| parse_err(&rec[0]))?);
            let gf = rec[1].trim();
            if gf.is_empty() {
                g.push(0);
            } else {
                any_group = true;
                g.push(gf.parse::<u8>().map_err(|_| parse_err(gf))?);
            }
            for f in rec.iter().skip(2) {
                x.push(f.trim().parse::<f64>().map_err(|_| parse_err(f))?);
            }
        }
        Self::new(x, d, y, any_group.then_some(g), 0)
    }
}

// ============================================================================
// Sampling
// ============================================================================

fn draw_labels(rng: &mut ChaCha8Rng, n: usize, pi: f64) -> Result<Vec<i32>> {
    for _ in 0..MAX_LABEL_ATTEMPTS {
        let y: Vec<i32> = (0..n).map(|_| if rng.random::<f64>() < pi { 1 } else { -1 }).collect();
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos > 0 && pos < n {
            return Ok(y);
        }
    }
    Err(Error::EmptyClass(MAX_LABEL_ATTEMPTS))
}

/// n i.i.d. draws from the label-imbalanced mixture. Deterministic in `seed`.
pub fn sample_label_gmm(spec: &LabelGmmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid("need n >= 2 to see both classes"));
    }
    let mut rng = rng_from_seed(seed);
    let y = draw_labels(&mut rng, n, spec.pi)?;
    label_features(spec, y, &mut rng, seed)
}

/// Like [`sample_label_gmm`] but with exactly round(πn) positives (at least
/// one of each class) in random positions, so the training class proportion
/// equals π instead of fluctuating around it.
pub fn sample_label_gmm_stratified(spec: &LabelGmmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid("need n >= 2 to see both classes"));
    }
    let mut rng = rng_from_seed(seed);
    let k = ((spec.pi * n as f64).round() as usize).clamp(1, n - 1);
    let mut y = vec![-1; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        y[i] = 1;
    }
    label_features(spec, y, &mut rng, seed)
}

fn label_features(spec: &LabelGmmSpec, y: Vec<i32>, rng: &mut ChaCha8Rng, seed: u64) -> Result<Dataset> {
    let n = y.len();
    let d = spec.dim();
    let chol = match &spec.covariance {
        Covariance::Identity => None,
        Covariance::Full(s) => Some(s.clone().cholesky().ok_or(Error::SingularCovariance)?.unpack()),
    };
    let mut x = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    for &yi in &y {
        let mu = if yi == 1 { spec.mu_plus() } else { spec.mu_minus() };
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        match &chol {
            None => x.extend(mu.iter().zip(&z).map(|(m, e)| m + e)),
            Some(l) => {
                let noise = l * DVector::from_column_slice(&z);
                x.extend(mu.iter().zip(noise.iter()).map(|(m, e)| m + e));
            }
        }
    }
    Dataset::new(x, d, y, None, seed)
}

/// n i.i.d. draws from the group mixture. Deterministic in `seed`.
pub fn sample_group_gmm(spec: &GroupGmmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid("need n >= 2 to see both classes"));
    }
    let mut rng = rng_from_seed(seed);
    let y = draw_labels(&mut rng, n, spec.pi)?;
    let g: Vec<u8> = (0..n).map(|_| if rng.random::<f64>() < spec.p { 1 } else { 2 }).collect();
    let d = spec.dim();
    let mut x = Vec::with_capacity(n * d);
    for (&yi, &gi) in y.iter().zip(&g) {
        let mu = spec.means.mean(gi as usize - 1);
        let sigma = spec.sigma(gi);
        let sign = yi as f64;
        for &m in mu {
            let e: f64 = rng.sample(StandardNormal);
            x.push(sign * m + sigma * e);
        }
    }
    Dataset::new(x, d, y, Some(g), seed)
}

// ============================================================================
// Serialization
// ============================================================================

/// JSON form shared by label and group specs; group-only keys are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    pub means: [Vec<f64>; 2],
    pub pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl SpecFile {
    pub fn is_group(&self) -> bool {
        self.p.is_some()
    }

    pub fn to_label(&self) -> Result<LabelGmmSpec> {
        let means = MeanModel::new(self.means[0].clone(), self.means[1].clone())?;
        let covariance = match &self.covariance {
            None => Covariance::Identity,
            Some(rows) => {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(invalid("covariance must be square"));
                }
                Covariance::Full(DMatrix::from_row_slice(d, d, &rows.concat()))
            }
        };
        LabelGmmSpec::new(means, self.pi, covariance)
    }

    pub fn to_group(&self) -> Result<GroupGmmSpec> {
        let means = MeanModel::new(self.means[0].clone(), self.means[1].clone())?;
        let p = self.p.ok_or_else(|| invalid("group spec needs key 'p'"))?;
        GroupGmmSpec::new(means, self.pi, p, self.sigma1.unwrap_or(1.0), self.sigma2.unwrap_or(1.0))
    }

    pub fn from_label(spec: &LabelGmmSpec) -> Self {
        let covariance = match &spec.covariance {
            Covariance::Identity => None,
            Covariance::Full(s) => Some(s.row_iter().map(|r| r.iter().copied().collect()).collect()),
        };
        Self {
            means: spec.means.means().clone(),
            pi: spec.pi,
            p: None,
            sigma1: None,
            sigma2: None,
            covariance,
        }
    }

    pub fn from_group(spec: &GroupGmmSpec) -> Self {
        Self {
            means: spec.means.means().clone(),
            pi: spec.pi,
            p: Some(spec.p),
            sigma1: Some(spec.sigma1),
            sigma2: Some(spec.sigma2),
            covariance: None,
        }
    }
}
