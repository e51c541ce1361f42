//! ε-support-vector regression with a Gaussian kernel, and the five score
//! maps built on it.
//!
//! The dual is solved by sequential minimal optimization over the usual
//! 2l-variable form `min ½ aᵀQa + pᵀa` with `yᵀa = 0`, `0 ≤ a ≤ C`, using
//! second-order working-set selection.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ScoreDataset;
use crate::world::{Arm, WorldError, WorldLayout};

#[derive(Debug, Error)]
pub enum SvrError {
    #[error("need at least two samples, got {0}")]
    TooFew(usize),
    #[error("features and targets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("expected {expected}-dimensional input, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all feature vectors are identical")]
    DegenerateFeatures,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    BadParam(&'static str),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub kkt_tol: f64,
    /// Iteration budget in multiples of the training-set size.
    pub max_passes: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            epsilon: 0.01,
            gamma: 5.0,
            kkt_tol: 1e-3,
            max_passes: 10_000,
        }
    }
}

impl SvrParams {
    fn validate(&self) -> Result<(), SvrError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvrError::BadParam("C must be positive"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(SvrError::BadParam("epsilon must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(SvrError::BadParam("gamma must be positive"));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(SvrError::BadParam("kkt_tol must be positive"));
        }
        if self.max_passes == 0 {
            return Err(SvrError::BadParam("max_passes must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStats {
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal KKT violation `m(a) - M(a)`.
    pub kkt_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SvrFile {
    dim: usize,
    gamma: f64,
    #[serde(rename = "C")]
    c: f64,
    epsilon: f64,
    bias: f64,
    supports: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
}

/// `y(x) = Σ coeff_i k(x, x_i) + bias` with `k(a, b) = exp(-γ|a - b|²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    dim: usize,
    gamma: f64,
    c: f64,
    epsilon: f64,
    bias: f64,
    supports: Vec<f64>,
    coeffs: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn clip_score(y: f64) -> f64 {
    y.clamp(0.0, 1.0)
}

impl SvrModel {
    pub fn from_parts(
        dim: usize,
        gamma: f64,
        bias: f64,
        supports: &[Vec<f64>],
        coeffs: &[f64],
    ) -> Result<Self, SvrError> {
        if supports.len() != coeffs.len() {
            return Err(SvrError::LengthMismatch(supports.len(), coeffs.len()));
        }
        let mut flat = Vec::with_capacity(dim * supports.len());
        for s in supports {
            if s.len() != dim {
                return Err(SvrError::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            flat.extend_from_slice(s);
        }
        if flat.iter().chain(coeffs).any(|v| !v.is_finite()) || !bias.is_finite() {
            return Err(SvrError::NonFinite("model"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(SvrError::BadParam("gamma must be positive"));
        }
        // Without a training record the tightest valid box bound is used.
        let c = coeffs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(Self {
            dim,
            gamma,
            c,
            epsilon: 0.0,
            bias,
            supports: flat,
            coeffs: coeffs.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn support_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn supports(&self) -> impl Iterator<Item = &[f64]> {
        self.supports.chunks_exact(self.dim.max(1)).take(self.coeffs.len())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), SvrError> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(SvrError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            })
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, SvrError> {
        self.check_dim(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut y = self.bias;
        for (s, c) in self.supports().zip(&self.coeffs) {
            y += c * (-self.gamma * sq_dist(x, s)).exp();
        }
        y
    }

    /// Prediction and its gradient with respect to `x`, written into `grad`.
    pub fn predict_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, SvrError> {
        self.check_dim(x)?;
        self.check_dim(grad)?;
        grad.fill(0.0);
        let mut y = self.bias;
        for (s, c) in self.supports().zip(&self.coeffs) {
            let k = c * (-self.gamma * sq_dist(x, s)).exp();
            y += k;
            for ((g, xi), si) in grad.iter_mut().zip(x).zip(s) {
                *g += -2.0 * self.gamma * (xi - si) * k;
            }
        }
        Ok(y)
    }

    pub fn to_json(&self) -> String {
        let file = SvrFile {
            dim: self.dim,
            gamma: self.gamma,
            c: self.c,
            epsilon: self.epsilon,
            bias: self.bias,
            supports: self.supports().map(<[f64]>::to_vec).collect(),
            coeffs: self.coeffs.clone(),
        };
        serde_json::to_string_pretty(&file).expect("finite model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SvrError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: SvrFile = serde_path_to_error::deserialize(de).map_err(|e| SvrError::File {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let mut m = Self::from_parts(file.dim, file.gamma, file.bias, &file.supports, &file.coeffs)?;
        m.c = file.c;
        m.epsilon = file.epsilon;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SvrError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SvrError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| SvrError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Kernel columns, precomputed when the Gram matrix is small enough.
struct Kernel<'a> {
    x: &'a [f64],
    dim: usize,
    n: usize,
    gamma: f64,
    gram: Option<Vec<f64>>,
}

const GRAM_LIMIT: usize = 6000;

impl<'a> Kernel<'a> {
    fn new(x: &'a [f64], dim: usize, gamma: f64) -> Self {
        let n = x.len() / dim;
        let mut k = Self {
            x,
            dim,
            n,
            gamma,
            gram: None,
        };
        if n <= GRAM_LIMIT {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                g[i * n + i] = 1.0;
                for j in 0..i {
                    let v = k.eval(i, j);
                    g[i * n + j] = v;
                    g[j * n + i] = v;
                }
            }
            k.gram = Some(g);
        }
        k
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        (-self.gamma * sq_dist(&self.x[i * d..(i + 1) * d], &self.x[j * d..(j + 1) * d])).exp()
    }

    fn column(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        match &self.gram {
            Some(g) => out.extend_from_slice(&g[i * self.n..(i + 1) * self.n]),
            None => out.extend((0..self.n).map(|j| self.eval(i, j))),
        }
    }
}

/// Fits an ε-SVR to `targets` over row-major `features` of width `dim`.
pub fn fit(
    features: &[f64],
    dim: usize,
    targets: &[f64],
    params: &SvrParams,
) -> Result<(SvrModel, FitStats), SvrError> {
    params.validate()?;
    if dim == 0 {
        return Err(SvrError::BadParam("dim must be at least 1"));
    }
    if features.len() % dim != 0 {
        return Err(SvrError::DimensionMismatch {
            expected: dim,
            got: features.len() % dim,
        });
    }
    let l = features.len() / dim;
    if l != targets.len() {
        return Err(SvrError::LengthMismatch(l, targets.len()));
    }
    if l < 2 {
        return Err(SvrError::TooFew(l));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(SvrError::NonFinite("features"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(SvrError::NonFinite("targets"));
    }
    let first = &features[..dim];
    if features.chunks_exact(dim).all(|r| r == first) {
        return Err(SvrError::DegenerateFeatures);
    }

    let c = params.c;
    let eps = params.epsilon;
    let kernel = Kernel::new(features, dim, params.gamma);
    let n2 = 2 * l;
    let sign = |t: usize| if t < l { 1.0 } else { -1.0 };
    let mut alpha = vec![0.0_f64; n2];
    let mut grad: Vec<f64> = (0..n2)
        .map(|t| if t < l { eps - targets[t] } else { eps + targets[t - l] })
        .collect();
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let max_iter = params.max_passes.saturating_mul(l);
    let mut ki = Vec::with_capacity(l);
    let mut kj = Vec::with_capacity(l);
    let mut iterations = 0;
    let mut gap;
    let tau = 1e-12;

    loop {
        // i maximizes -y_t G_t over I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n2 {
            let y = sign(t);
            let up = if y > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            if up && -y * grad[t] >= gmax {
                gmax = -y * grad[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i != usize::MAX {
            kernel.column(i % l, &mut ki);
        }
        for t in 0..n2 {
            let y = sign(t);
            let low = if y > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
            if !low {
                continue;
            }
            let yg = y * grad[t];
            if yg >= gmax2 {
                gmax2 = yg;
            }
            if i == usize::MAX {
                continue;
            }
            let b = gmax + yg;
            if b > 0.0 {
                // Q_ii + Q_tt - 2 y_i y_t Q_it with Q_ab = y_a y_b K_ab and K_aa = 1.
                let a = 2.0 - 2.0 * ki[t % l];
                let a = if a > 0.0 { a } else { tau };
                let obj = -(b * b) / a;
                if obj <= obj_min {
                    obj_min = obj;
                    j = t;
                }
            }
        }
        gap = gmax + gmax2;
        if gap < params.kkt_tol || j == usize::MAX || iterations >= max_iter {
            break;
        }
        iterations += 1;
        kernel.column(j % l, &mut kj);

        let (yi, yj) = (sign(i), sign(j));
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = ki[j % l];
        if yi != yj {
            let quad = (2.0 + 2.0 * kij).max(tau);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * kij).max(tau);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n2 {
            let yt = sign(t);
            let r = t % l;
            grad[t] += yt * (yi * ki[r] * di + yj * kj[r] * dj);
        }
    }

    // Offset from free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb, mut sum, mut nfree) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n2 {
        let y = sign(t);
        let yg = y * grad[t];
        if is_upper(alpha[t]) {
            if y < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nfree += 1;
            sum += yg;
        }
    }
    let rho = if nfree > 0 { sum / nfree as f64 } else { (ub + lb) / 2.0 };

    let mut supports = Vec::new();
    let mut coeffs = Vec::new();
    for r in 0..l {
        let coef = alpha[r] - alpha[r + l];
        if coef != 0.0 {
            supports.extend_from_slice(&features[r * dim..(r + 1) * dim]);
            coeffs.push(coef);
        }
    }
    let model = SvrModel {
        dim,
        gamma: params.gamma,
        c,
        epsilon: eps,
        bias: -rho,
        supports,
        coeffs,
    };
    Ok((
        model,
        FitStats {
            iterations,
            converged: gap < params.kkt_tol,
            kkt_gap: gap,
        },
    ))
}

/// Which of the five score maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    Reach(Arm),
    Env(Arm),
    SelfFree,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] = [
        ScoreKind::Reach(Arm::One),
        ScoreKind::Reach(Arm::Two),
        ScoreKind::Env(Arm::One),
        ScoreKind::Env(Arm::Two),
        ScoreKind::SelfFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Reach(Arm::One) => "reach1",
            ScoreKind::Reach(Arm::Two) => "reach2",
            ScoreKind::Env(Arm::One) => "env1",
            ScoreKind::Env(Arm::Two) => "env2",
            ScoreKind::SelfFree => "self_free",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ScoreKind::SelfFree => 6,
            _ => 3,
        }
    }

    /// Offset of this map's input inside the normalized 6-D setup.
    pub fn input_offset(self) -> usize {
        match self {
            ScoreKind::Reach(a) | ScoreKind::Env(a) => 3 * a.index(),
            ScoreKind::SelfFree => 0,
        }
    }

    pub fn target(self, row: &crate::scoring::ScoreSample) -> f64 {
        match self {
            ScoreKind::Reach(a) => row.reach(a),
            ScoreKind::Env(a) => row.env(a),
            ScoreKind::SelfFree => row.self_free,
        }
    }
}

/// Regression settings per score family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreMapParams {
    pub reach: SvrParams,
    pub env: SvrParams,
    #[serde(rename = "self")]
    pub self_free: SvrParams,
}

impl Default for ScoreMapParams {
    fn default() -> Self {
        Self {
            reach: SvrParams {
                gamma: 12.0,
                c: 1.0,
                ..SvrParams::default()
            },
            env: SvrParams::default(),
            self_free: SvrParams {
                gamma: 2.0,
                ..SvrParams::default()
            },
        }
    }
}

impl ScoreMapParams {
    pub fn for_kind(&self, kind: ScoreKind) -> &SvrParams {
        match kind {
            ScoreKind::Reach(_) => &self.reach,
            ScoreKind::Env(_) => &self.env,
            ScoreKind::SelfFree => &self.self_free,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, SvrError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| SvrError::File {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

/// The five fitted maps: reach and env per arm over 3-D normalized base
/// poses, and self over the 6-D normalized setup.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    pub reach: [SvrModel; 2],
    pub env: [SvrModel; 2],
    pub self_free: SvrModel,
}

impl ScoreMaps {
    pub const FILE_NAMES: [&'static str; 5] = [
        "svr_reach1.json",
        "svr_reach2.json",
        "svr_env1.json",
        "svr_env2.json",
        "svr_self.json",
    ];

    pub fn get(&self, kind: ScoreKind) -> &SvrModel {
        match kind {
            ScoreKind::Reach(a) => &self.reach[a.index()],
            ScoreKind::Env(a) => &self.env[a.index()],
            ScoreKind::SelfFree => &self.self_free,
        }
    }

    /// Normalized 6-D inputs of every dataset row.
    pub fn inputs(data: &ScoreDataset, layout: &WorldLayout) -> Result<Vec<[f64; 6]>, SvrError> {
        data.rows
            .iter()
            .map(|r| layout.normalize_setup(&r.setup).map_err(SvrError::from))
            .collect()
    }

    /// Training matrix and targets of one map over the given rows.
    pub fn design(kind: ScoreKind, inputs: &[[f64; 6]], data: &ScoreDataset, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (o, d) = (kind.input_offset(), kind.dim());
        let mut x = Vec::with_capacity(rows.len() * d);
        let mut t = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(&inputs[r][o..o + d]);
            t.push(kind.target(&data.rows[r]));
        }
        (x, t)
    }

    /// Fits all five maps on the given dataset rows.
    pub fn fit(
        data: &ScoreDataset,
        rows: &[usize],
        layout: &WorldLayout,
        params: &ScoreMapParams,
    ) -> Result<(Self, [FitStats; 5]), SvrError> {
        let inputs = Self::inputs(data, layout)?;
        let fitted = ScoreKind::ALL
            .iter()
            .map(|&k| {
                let (x, t) = Self::design(k, &inputs, data, rows);
                fit(&x, k.dim(), &t, params.for_kind(k))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut it = fitted.into_iter();
        let mut next = || it.next().expect("five maps");
        let (r1, s0) = next();
        let (r2, s1) = next();
        let (e1, s2) = next();
        let (e2, s3) = next();
        let (sf, s4) = next();
        Ok((
            Self {
                reach: [r1, r2],
                env: [e1, e2],
                self_free: sf,
            },
            [s0, s1, s2, s3, s4],
        ))
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (k, name) in ScoreKind::ALL.iter().zip(Self::FILE_NAMES) {
            self.get(*k).save(dir.join(name))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, SvrError> {
        let dir = dir.as_ref();
        let mut m = Self::FILE_NAMES
            .iter()
            .map(|n| SvrModel::load(dir.join(n)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter();
        let mut next = || m.next().expect("five files");
        let maps = Self {
            reach: [next(), next()],
            env: [next(), next()],
            self_free: next(),
        };
        for k in ScoreKind::ALL {
            if maps.get(k).dim() != k.dim() {
                return Err(SvrError::DimensionMismatch {
                    expected: k.dim(),
                    got: maps.get(k).dim(),
                });
            }
        }
        Ok(maps)
    }
}

/// Root mean squared error of `model` over row-major `features`.
pub fn rmse(model: &SvrModel, features: &[f64], targets: &[f64]) -> Result<f64, SvrError> {
    let d = model.dim();
    if features.len() != targets.len() * d || targets.is_empty() {
        return Err(SvrError::LengthMismatch(features.len() / d.max(1), targets.len()));
    }
    let sse: f64 = features
        .chunks_exact(d)
        .zip(targets)
        .map(|(x, t)| {
            let e = model.predict_unchecked(x) - t;
            e * e
        })
        .sum();
    Ok((sse / targets.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    /// Dual objective `½ cᵀKc - Σ t_i c_i + ε Σ |c_i|` of a coefficient vector.
    fn dual_objective(x: &[f64], dim: usize, t: &[f64], coef: &[f64], gamma: f64, eps: f64) -> f64 {
        let n = t.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                let k = (-gamma * sq_dist(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim])).exp();
                q += coef[i] * coef[j] * k;
            }
        }
        0.5 * q - coef.iter().zip(t).map(|(c, t)| c * t).sum::<f64>()
            + eps * coef.iter().map(|c| c.abs()).sum::<f64>()
    }

    /// Per-row coefficients (zero for non-supports).
    fn dense_coeffs(model: &SvrModel, x: &[f64], dim: usize) -> Vec<f64> {
        x.chunks_exact(dim)
            .map(|r| {
                model
                    .supports()
                    .zip(model.coeffs())
                    .find(|(s, _)| *s == r)
                    .map_or(0.0, |(_, c)| *c)
            })
            .collect()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_score(1.2), 1.0);
        assert_eq!(clip_score(-0.1), 0.0);
        assert_eq!(clip_score(0.5), 0.5);
    }

    #[test]
    fn empty_model_predicts_bias() {
        let m = SvrModel::from_parts(3, 5.0, 0.25, &[], &[]).unwrap();
        assert_eq!(m.predict(&[0.1, 0.2, 0.3]).unwrap(), 0.25);
        assert!(m.predict(&[0.1]).is_err());
    }

    #[test]
    fn single_support_at_query() {
        let m = SvrModel::from_parts(2, 5.0, 0.1, &[vec![0.3, -0.2]], &[0.7]).unwrap();
        assert_abs_diff_eq!(m.predict(&[0.3, -0.2]).unwrap(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn constant_targets_stay_in_tube() {
        let x = random_points(60, 3, 1);
        let t = vec![0.42; 60];
        let p = SvrParams::default();
        let (m, stats) = fit(&x, 3, &t, &p).unwrap();
        assert!(stats.converged);
        for r in x.chunks_exact(3) {
            assert!((m.predict(r).unwrap() - 0.42).abs() <= p.epsilon + 1e-9);
        }
    }

    #[test]
    fn radial_function_is_learned() {
        let gamma = 5.0;
        let f = |x: &[f64]| (-gamma * x.iter().map(|v| v * v).sum::<f64>()).exp();
        let x = random_points(400, 3, 2);
        let t: Vec<f64> = x.chunks_exact(3).map(f).collect();
        let p = SvrParams::default();
        let (m, stats) = fit(&x, 3, &t, &p).unwrap();
        assert!(stats.converged);
        let hx = random_points(500, 3, 3);
        let ht: Vec<f64> = hx.chunks_exact(3).map(f).collect();
        assert!(rmse(&m, &hx, &ht).unwrap() <= p.epsilon + 0.01);
    }

    #[test]
    fn dual_constraints_hold() {
        let x = random_points(150, 2, 4);
        let t: Vec<f64> = x.chunks_exact(2).map(|r| (3.0 * r[0]).sin() * 0.5 + 0.5).collect();
        let p = SvrParams {
            c: 1.0,
            ..SvrParams::default()
        };
        let (m, _) = fit(&x, 2, &t, &p).unwrap();
        assert!(m.coeffs().iter().all(|c| c.abs() <= p.c + 1e-12));
        assert!(m.coeffs().iter().sum::<f64>().abs() <= 1e-6);
    }

    #[test]
    fn points_inside_tube_have_zero_coefficients() {
        let x = random_points(200, 3, 5);
        let t: Vec<f64> = x.chunks_exact(3).map(|r| 0.5 + 0.3 * r[0] * r[1] - 0.2 * r[2]).collect();
        let p = SvrParams {
            epsilon: 0.05,
            ..SvrParams::default()
        };
        let (m, _) = fit(&x, 3, &t, &p).unwrap();
        let coef = dense_coeffs(&m, &x, 3);
        for (i, r) in x.chunks_exact(3).enumerate() {
            if (m.predict(r).unwrap() - t[i]).abs() < p.epsilon - p.kkt_tol {
                assert_eq!(coef[i], 0.0, "row {i}");
            }
        }
    }

    #[test]
    fn solution_beats_perturbations() {
        let x = random_points(40, 2, 6);
        let t: Vec<f64> = x.chunks_exact(2).map(|r| r[0] * r[0] - r[1]).collect();
        let p = SvrParams {
            c: 2.0,
            kkt_tol: 1e-8,
            ..SvrParams::default()
        };
        let (m, stats) = fit(&x, 2, &t, &p).unwrap();
        assert!(stats.converged);
        let coef = dense_coeffs(&m, &x, 2);
        let best = dual_objective(&x, 2, &t, &coef, p.gamma, p.epsilon);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            // Feasible pairwise move keeps the sum at zero and the box.
            let (i, j) = (rng.random_range(0..40), rng.random_range(0..40));
            if i == j {
                continue;
            }
            let h = rng.random_range(-0.05..0.05);
            let mut c2 = coef.clone();
            c2[i] += h;
            c2[j] -= h;
            if c2.iter().any(|c| c.abs() > p.c) {
                continue;
            }
            assert!(dual_objective(&x, 2, &t, &c2, p.gamma, p.epsilon) >= best - 1e-7);
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(
            fit(&[0.1, 0.2, 0.1, 0.2], 2, &[0.0, 1.0], &SvrParams::default()),
            Err(SvrError::DegenerateFeatures)
        ));
        assert!(matches!(
            fit(&[0.1, 0.2], 2, &[0.0], &SvrParams::default()),
            Err(SvrError::TooFew(1))
        ));
        assert!(matches!(
            fit(&[0.1, 0.2, 0.3, 0.4], 2, &[0.0], &SvrParams::default()),
            Err(SvrError::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let x = random_points(120, 3, 8);
        let t: Vec<f64> = x.chunks_exact(3).map(|r| (2.0 * r[0]).cos() * r[1] + 0.5).collect();
        let (m, _) = fit(&x, 3, &t, &SvrParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let mut g = vec![0.0; 3];
            m.predict_with_gradient(&q, &mut g).unwrap();
            for k in 0..3 {
                let (mut a, mut b) = (q.clone(), q.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (m.predict(&a).unwrap() - m.predict(&b).unwrap()) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-5 * g[k].abs().max(1.0), "{} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let x = random_points(80, 6, 10);
        let t: Vec<f64> = x.chunks_exact(6).map(|r| r.iter().sum::<f64>().tanh()).collect();
        let (m, _) = fit(&x, 6, &t, &SvrParams::default()).unwrap();
        let back = SvrModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(SvrModel::from_json("{\"dim\": 1}").is_err());
    }

    #[test]
    fn score_params_json_defaults() {
        let p = ScoreMapParams::from_json_str("{\"self\": {\"gamma\": 8.0}}").unwrap();
        assert_eq!(p.self_free.gamma, 8.0);
        assert_eq!(p.reach, ScoreMapParams::default().reach);
        assert!(ScoreMapParams::from_json_str("{\"other\": 1}").is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            prop_assert_eq!(clip_score(clip_score(a)), clip_score(a));
            if a <= b {
                prop_assert!(clip_score(a) <= clip_score(b));
            }
        }
    }
}
