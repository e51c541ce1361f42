//! Sparse kernel-perceptron collision proxy.
//!
//! The model is `F(x) = sum_i alpha_i * exp(-gamma * |x_i - x|^2)` over a
//! small set of support points; `F(x) >= 0` predicts a collision. Training
//! greedily corrects the worst-margin point until every training point is
//! classified correctly (or the update budget runs out), then prunes support
//! points that are redundant for their own classification.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::JointConfig;
use crate::world::{Arm, SetupPose, WorldError, WorldLayout};

#[derive(Debug, Error)]
pub enum FastronError {
    #[error("training data must contain both collision and free labels")]
    DegenerateLabels,
    #[error("training data is empty")]
    Empty,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("labels must be +1 or -1, got {0}")]
    BadLabel(i8),
    #[error("model file {path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    World(#[from] WorldError),
}

pub const COLLISION: i8 = 1;
pub const FREE: i8 = -1;

/// Row-major feature matrix with `+1` (collision) / `-1` (free) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledConfigSet {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<i8>,
}

impl LabeledConfigSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[i8]) -> Result<Self, FastronError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut set = Self::new(dim);
        if rows.len() != labels.len() {
            return Err(FastronError::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        for (r, &l) in rows.iter().zip(labels) {
            set.push(r, l)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, x: &[f64], label: i8) -> Result<(), FastronError> {
        if x.len() != self.dim {
            return Err(FastronError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if label != COLLISION && label != FREE {
            return Err(FastronError::BadLabel(label));
        }
        self.features.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    /// Splits off the last `fraction` of rows.
    pub fn split_tail(&self, fraction: f64) -> (Self, Self) {
        let n_tail = ((self.len() as f64) * fraction).round() as usize;
        let cut = self.len() - n_tail.min(self.len());
        let head = Self {
            dim: self.dim,
            features: self.features[..cut * self.dim].to_vec(),
            labels: self.labels[..cut].to_vec(),
        };
        let tail = Self {
            dim: self.dim,
            features: self.features[cut * self.dim..].to_vec(),
            labels: self.labels[cut..].to_vec(),
        };
        (head, tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastronParams {
    pub gamma: f64,
    /// Target margin multiplier for collision points (>= 1).
    pub beta: f64,
    pub max_updates: usize,
    pub max_supports: usize,
}

impl FastronParams {
    pub fn env_default() -> Self {
        Self {
            gamma: 1.0,
            beta: 100.0,
            max_updates: 5_000,
            max_supports: 3_000,
        }
    }

    /// The 12-D self-collision boundary needs far more supports than the
    /// 6-D wall boundary.
    pub fn self_default() -> Self {
        Self {
            gamma: 2.0,
            beta: 1.5,
            max_updates: 30_000,
            max_supports: 20_000,
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastronModel {
    pub gamma: f64,
    pub beta: f64,
    pub dim: usize,
    pub max_supports: usize,
    supports: Vec<f64>,
    alphas: Vec<f64>,
}

/// On-disk form of a [`FastronModel`].
#[derive(Debug, Serialize, Deserialize)]
struct FastronFile {
    gamma: f64,
    beta: f64,
    dim: usize,
    supports: Vec<Vec<f64>>,
    alphas: Vec<f64>,
}

impl FastronModel {
    pub fn empty(dim: usize, params: &FastronParams) -> Self {
        Self {
            gamma: params.gamma,
            beta: params.beta,
            dim,
            max_supports: params.max_supports,
            supports: Vec::new(),
            alphas: Vec::new(),
        }
    }

    /// Builds a model from explicit supports. Zero weights are dropped.
    pub fn from_parts(
        gamma: f64,
        beta: f64,
        dim: usize,
        supports: &[Vec<f64>],
        alphas: &[f64],
    ) -> Result<Self, FastronError> {
        if supports.len() != alphas.len() {
            return Err(FastronError::DimensionMismatch {
                expected: supports.len(),
                got: alphas.len(),
            });
        }
        let mut model = Self {
            gamma,
            beta,
            dim,
            max_supports: supports.len().max(1),
            supports: Vec::with_capacity(supports.len() * dim),
            alphas: Vec::with_capacity(alphas.len()),
        };
        for (s, &a) in supports.iter().zip(alphas) {
            if s.len() != dim {
                return Err(FastronError::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            if a != 0.0 {
                model.supports.extend_from_slice(s);
                model.alphas.push(a);
            }
        }
        Ok(model)
    }

    pub fn support_count(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn support(&self, i: usize) -> &[f64] {
        &self.supports[i * self.dim..(i + 1) * self.dim]
    }

    pub fn supports(&self) -> impl Iterator<Item = &[f64]> {
        self.supports.chunks_exact(self.dim.max(1))
    }

    /// Raw kernel sum `F(x)`. Caller guarantees `x.len() == dim`.
    #[inline]
    pub fn score_unchecked(&self, x: &[f64]) -> f64 {
        let g = self.gamma;
        self.supports
            .chunks_exact(self.dim)
            .zip(&self.alphas)
            .map(|(s, &a)| a * (-g * sq_dist(s, x)).exp())
            .sum()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, FastronError> {
        if x.len() != self.dim {
            return Err(FastronError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.score_unchecked(x))
    }

    /// `+1` (collision) iff `F(x) >= 0`, else `-1`.
    pub fn predict(&self, x: &[f64]) -> Result<i8, FastronError> {
        Ok(label_of(self.score(x)?))
    }

    #[inline]
    pub fn predict_unchecked(&self, x: &[f64]) -> i8 {
        label_of(self.score_unchecked(x))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FastronError> {
        let path = path.as_ref();
        crate::io::write_atomic(path, self.to_json().as_bytes()).map_err(|e| {
            FastronError::File {
                path: path.display().to_string(),
                message: e.to_string(),
            }
        })
    }

    pub fn to_json(&self) -> String {
        let file = FastronFile {
            gamma: self.gamma,
            beta: self.beta,
            dim: self.dim,
            supports: self.supports().map(<[f64]>::to_vec).collect(),
            alphas: self.alphas.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FastronError> {
        let file: FastronFile = serde_json::from_str(text).map_err(|e| FastronError::File {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        Self::from_parts(file.gamma, file.beta, file.dim, &file.supports, &file.alphas)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FastronError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FastronError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            FastronError::File { message, .. } => FastronError::File {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

#[inline]
fn label_of(f: f64) -> i8 {
    if f >= 0.0 {
        COLLISION
    } else {
        FREE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub updates: usize,
    pub converged: bool,
    pub removed: usize,
}

/// Trains a model on `data`.
pub fn train(
    data: &LabeledConfigSet,
    params: &FastronParams,
) -> Result<(FastronModel, TrainStats), FastronError> {
    if data.is_empty() {
        return Err(FastronError::Empty);
    }
    let labels = data.labels();
    if !labels.contains(&COLLISION) || !labels.contains(&FREE) {
        return Err(FastronError::DegenerateLabels);
    }
    let n = data.len();
    let dim = data.dim();
    let gamma = params.gamma;
    let mut f = vec![0.0_f64; n];
    let mut alpha = vec![0.0_f64; n];
    let mut n_support = 0usize;
    let mut updates = 0usize;
    let mut converged = false;

    // Adds `delta * k(x_i, x_j)` to every F_j.
    let apply = |f: &mut [f64], i: usize, delta: f64| {
        let xi = data.row(i);
        f.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
            let base = c * 4096;
            for (k, fj) in chunk.iter_mut().enumerate() {
                *fj += delta * (-gamma * sq_dist(xi, data.row(base + k))).exp();
            }
        });
    };

    loop {
        let (worst, margin) = argmin_margin(&f, labels);
        if margin > 0.0 {
            converged = true;
            break;
        }
        if updates >= params.max_updates {
            break;
        }
        if alpha[worst] == 0.0 && n_support >= params.max_supports {
            break;
        }
        let y = f64::from(labels[worst]);
        let target = if labels[worst] == COLLISION { params.beta * y } else { y };
        let delta = target - f[worst];
        if alpha[worst] == 0.0 {
            n_support += 1;
        }
        alpha[worst] += delta;
        if alpha[worst] == 0.0 {
            n_support -= 1;
        }
        apply(&mut f, worst, delta);
        updates += 1;
    }

    // Prune supports that stay correctly classified without their own term,
    // as long as every other retained support stays correct too.
    let mut removed = 0;
    let mut pinned = vec![false; n];
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if alpha[i] == 0.0 || pinned[i] {
                continue;
            }
            let m = f64::from(labels[i]) * (f[i] - alpha[i]);
            if m > 0.0 && best.is_none_or(|(_, bm)| m > bm) {
                best = Some((i, m));
            }
        }
        let Some((i, _)) = best else { break };
        let a = alpha[i];
        let xi = data.row(i);
        let safe = (0..n).all(|j| {
            j == i
                || alpha[j] == 0.0
                || f64::from(labels[j]) * (f[j] - a * (-gamma * sq_dist(xi, data.row(j))).exp())
                    > 0.0
        });
        if !safe {
            pinned[i] = true;
            continue;
        }
        apply(&mut f, i, -a);
        alpha[i] = 0.0;
        removed += 1;
    }

    let mut model = FastronModel::empty(dim, params);
    for i in 0..n {
        if alpha[i] != 0.0 {
            model.supports.extend_from_slice(data.row(i));
            model.alphas.push(alpha[i]);
        }
    }
    Ok((
        model,
        TrainStats {
            updates,
            converged,
            removed,
        },
    ))
}

fn argmin_margin(f: &[f64], labels: &[i8]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, (&fi, &y)) in f.iter().zip(labels).enumerate() {
        let m = f64::from(y) * fi;
        if m < best.1 {
            best = (i, m);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
    /// Mean wall-clock seconds per prediction.
    pub mean_query_time: f64,
}

/// Confusion-matrix rates with collision as the positive class. Timing is
/// averaged over at least 10^4 predictions (the data is cycled if shorter).
pub fn evaluate(model: &FastronModel, data: &LabeledConfigSet) -> Result<Evaluation, FastronError> {
    if data.is_empty() {
        return Err(FastronError::Empty);
    }
    if data.dim() != model.dim {
        return Err(FastronError::DimensionMismatch {
            expected: model.dim,
            got: data.dim(),
        });
    }
    let (mut tp, mut tn, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (i, &y) in data.labels().iter().enumerate() {
        let p = model.predict_unchecked(data.row(i));
        if y == COLLISION {
            pos += 1;
            tp += usize::from(p == COLLISION);
        } else {
            neg += 1;
            tn += usize::from(p == FREE);
        }
    }
    let queries = data.len().max(10_000);
    let start = Instant::now();
    let mut sink = 0i64;
    for k in 0..queries {
        sink += i64::from(model.predict_unchecked(data.row(k % data.len())));
    }
    let elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    let rate = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(Evaluation {
        accuracy: (tp + tn) as f64 / data.len() as f64,
        tpr: rate(tp, pos),
        tnr: rate(tn, neg),
        mean_query_time: elapsed / queries as f64,
    })
}

/// Normalized per-arm feature `(x, y, theta, yaw, pitch, insertion)`.
pub fn env_features(
    setup: &SetupPose,
    q: &JointConfig,
    layout: &WorldLayout,
    arm: Arm,
) -> Result<[f64; 6], FastronError> {
    let u = layout.normalize_base(setup.arm(arm), arm)?;
    let j = q.normalized(&layout.joint_limits);
    Ok([u.x, u.y, u.z, j[0], j[1], j[2]])
}

/// Both arms' env features concatenated.
pub fn self_features(
    setup: &SetupPose,
    q1: &JointConfig,
    q2: &JointConfig,
    layout: &WorldLayout,
) -> Result<[f64; 12], FastronError> {
    let a = env_features(setup, q1, layout, Arm::One)?;
    let b = env_features(setup, q2, layout, Arm::Two)?;
    let mut out = [0.0; 12];
    out[..6].copy_from_slice(&a);
    out[6..].copy_from_slice(&b);
    Ok(out)
}

/// The three proxy models used as a collision backend.
#[derive(Debug, Clone, PartialEq)]
pub struct FastronSet {
    pub env: [FastronModel; 2],
    pub self_model: FastronModel,
}

impl FastronSet {
    pub const FILE_NAMES: [&'static str; 3] =
        ["fastron_env1.json", "fastron_env2.json", "fastron_self.json"];

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), FastronError> {
        let dir = dir.as_ref();
        self.env[0].save(dir.join(Self::FILE_NAMES[0]))?;
        self.env[1].save(dir.join(Self::FILE_NAMES[1]))?;
        self.self_model.save(dir.join(Self::FILE_NAMES[2]))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, FastronError> {
        let dir = dir.as_ref();
        let set = Self {
            env: [
                FastronModel::load(dir.join(Self::FILE_NAMES[0]))?,
                FastronModel::load(dir.join(Self::FILE_NAMES[1]))?,
            ],
            self_model: FastronModel::load(dir.join(Self::FILE_NAMES[2]))?,
        };
        for (m, want) in [(&set.env[0], 6), (&set.env[1], 6), (&set.self_model, 12)] {
            if m.dim != want {
                return Err(FastronError::DimensionMismatch {
                    expected: want,
                    got: m.dim,
                });
            }
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> FastronParams {
        FastronParams {
            gamma: 10.0,
            beta: 1.5,
            max_updates: 1000,
            max_supports: 100,
        }
    }

    #[test]
    fn separable_pair() {
        let data = LabeledConfigSet::from_rows(
            &[vec![0.9, 0.9], vec![-0.9, -0.9]],
            &[COLLISION, FREE],
        )
        .unwrap();
        let (model, stats) = train(&data, &params()).unwrap();
        assert!(stats.converged);
        assert_eq!(model.predict(&[0.9, 0.9]).unwrap(), COLLISION);
        assert_eq!(model.predict(&[-0.9, -0.9]).unwrap(), FREE);
    }

    #[test]
    fn single_class_rejected() {
        let data =
            LabeledConfigSet::from_rows(&[vec![0.1], vec![0.2]], &[FREE, FREE]).unwrap();
        assert!(matches!(train(&data, &params()), Err(FastronError::DegenerateLabels)));
    }

    #[test]
    fn zero_updates_gives_empty_collision_model() {
        let data = LabeledConfigSet::from_rows(&[vec![0.5], vec![-0.5]], &[COLLISION, FREE])
            .unwrap();
        let p = FastronParams {
            max_updates: 0,
            ..params()
        };
        let (model, _) = train(&data, &p).unwrap();
        assert_eq!(model.support_count(), 0);
        assert_eq!(model.predict(&[0.3]).unwrap(), COLLISION);
        assert_eq!(model.predict(&[-0.7]).unwrap(), COLLISION);
    }

    #[test]
    fn single_kernel_and_tie_rule() {
        let m = FastronModel::from_parts(10.0, 1.5, 2, &[vec![0.2, 0.3]], &[1.0]).unwrap();
        assert_eq!(m.score(&[0.2, 0.3]).unwrap(), 1.0);
        assert_eq!(m.predict(&[0.2, 0.3]).unwrap(), COLLISION);
        let m = FastronModel::from_parts(10.0, 1.5, 1, &[vec![-0.5], vec![0.5]], &[1.0, -1.0])
            .unwrap();
        assert_eq!(m.score(&[0.0]).unwrap(), 0.0);
        assert_eq!(m.predict(&[0.0]).unwrap(), COLLISION);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = FastronModel::from_parts(10.0, 1.5, 2, &[vec![0.2, 0.3]], &[1.0]).unwrap();
        assert!(matches!(
            m.predict(&[0.1]),
            Err(FastronError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn perfect_and_inverted_rates() {
        let data = LabeledConfigSet::from_rows(
            &[vec![1.0], vec![-1.0], vec![0.9], vec![-0.9]],
            &[COLLISION, FREE, COLLISION, FREE],
        )
        .unwrap();
        let good = FastronModel::from_parts(10.0, 1.0, 1, &[vec![1.0], vec![-1.0]], &[1.0, -1.0])
            .unwrap();
        let e = evaluate(&good, &data).unwrap();
        assert_eq!((e.accuracy, e.tpr, e.tnr), (1.0, 1.0, 1.0));
        let bad = FastronModel::from_parts(10.0, 1.0, 1, &[vec![1.0], vec![-1.0]], &[-1.0, 1.0])
            .unwrap();
        let e = evaluate(&bad, &data).unwrap();
        assert_eq!((e.accuracy, e.tpr, e.tnr), (0.0, 0.0, 0.0));
        assert!(e.mean_query_time > 0.0);
    }

    #[test]
    fn converged_training_classifies_every_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut data = LabeledConfigSet::new(2);
        for _ in 0..400 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = if x[0] * x[0] + x[1] * x[1] < 0.4 { COLLISION } else { FREE };
            data.push(&x, y).unwrap();
        }
        let p = FastronParams {
            gamma: 20.0,
            beta: 1.0,
            max_updates: 20_000,
            max_supports: 400,
        };
        let (model, stats) = train(&data, &p).unwrap();
        assert!(stats.converged);
        assert!(model.support_count() <= 400);
        for x in model.supports() {
            let i = (0..data.len()).find(|&i| data.row(i) == x).unwrap();
            let y = f64::from(data.labels()[i]);
            assert!(y * model.score(x).unwrap() > 0.0);
        }
        assert!(evaluate(&model, &data).unwrap().accuracy > 0.97);
        assert!(model.alphas().iter().all(|&a| a != 0.0));
    }

    #[test]
    fn support_cap_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut data = LabeledConfigSet::new(3);
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = if rng.random_bool(0.5) { COLLISION } else { FREE };
            data.push(&x, y).unwrap();
        }
        let p = FastronParams {
            gamma: 10.0,
            beta: 1.5,
            max_updates: 10_000,
            max_supports: 25,
        };
        let (model, _) = train(&data, &p).unwrap();
        assert!(model.support_count() <= 25);
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let supports: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let alphas: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = FastronModel::from_parts(10.0, 1.5, 6, &supports, &alphas).unwrap();
        let back = FastronModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.alphas(), m.alphas());
        for (a, b) in back.supports().zip(m.supports()) {
            assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn prediction_matches_direct_sum(seed in any::<u64>(), n in 0usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let supports: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let alphas: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = FastronModel::from_parts(7.0, 1.0, 4, &supports, &alphas).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut direct = 0.0;
            for (s, a) in supports.iter().zip(&alphas) {
                let d2: f64 = s.iter().zip(&x).map(|(p, q)| (p - q).powi(2)).sum();
                direct += a * (-7.0 * d2).exp();
            }
            if direct.abs() > 1e-12 {
                let want = if direct >= 0.0 { COLLISION } else { FREE };
                prop_assert_eq!(m.predict(&x).unwrap(), want);
            }
        }
    }
}
