//! Model-free scores: reachability over RoI voxels and the self- and
//! environment-collision-free proportions over sampled joint configurations.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fastron::{
    evaluate, train, Evaluation, FastronError, FastronParams, FastronSet, LabeledConfigSet, COLLISION,
    FREE,
};
use crate::geometry::{check_setup, CollisionReport, GeometricChecker};
use crate::kinematics::{ArmFrame, IkSettings, JointConfig};
use crate::world::{Arm, BasePose, JointLimits, SetupPose, WorldError, WorldLayout};

pub const DEFAULT_JOINT_SAMPLES: usize = 1000;
pub const DEFAULT_SETUPS: usize = 700;
pub const CSV_HEADER: [&str; 11] = [
    "x1", "y1", "th1", "x2", "y2", "th2", "reach1", "reach2", "self_free", "env1", "env2",
];

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("fastron backend selected but no models are loaded")]
    MissingModels,
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("score sequences must be non-empty and of equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("dataset csv: {0}")]
    Csv(String),
    #[error("holdout fraction must lie in [0, 1), got {0}")]
    BadHoldout(f64),
    #[error(transparent)]
    Fastron(#[from] FastronError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckerKind {
    Geometric,
    Fastron,
}

/// Collision backend used for the collision-free scores.
#[derive(Debug, Clone)]
pub enum Checker {
    Geometric,
    Fastron(Box<FastronSet>),
}

impl Checker {
    pub fn from_kind(kind: CheckerKind, models: Option<FastronSet>) -> Result<Self, ScoringError> {
        match kind {
            CheckerKind::Geometric => Ok(Checker::Geometric),
            CheckerKind::Fastron => models
                .map(|m| Checker::Fastron(Box::new(m)))
                .ok_or(ScoringError::MissingModels),
        }
    }

    pub fn kind(&self) -> CheckerKind {
        match self {
            Checker::Geometric => CheckerKind::Geometric,
            Checker::Fastron(_) => CheckerKind::Fastron,
        }
    }
}

/// A checker bound to one setup.
enum Prepared<'a> {
    Geometric {
        checker: GeometricChecker<'a>,
        frames: [ArmFrame; 2],
    },
    Fastron {
        models: &'a FastronSet,
        base: [[f64; 3]; 2],
        limits: JointLimits,
    },
}

impl<'a> Prepared<'a> {
    fn new(checker: &'a Checker, setup: &SetupPose, layout: &'a WorldLayout) -> Result<Self, ScoringError> {
        Ok(match checker {
            Checker::Geometric => Prepared::Geometric {
                checker: GeometricChecker::new(layout),
                frames: [
                    ArmFrame::new(&setup.arm1, layout, Arm::One),
                    ArmFrame::new(&setup.arm2, layout, Arm::Two),
                ],
            },
            Checker::Fastron(models) => {
                let u1 = layout.normalize_base(&setup.arm1, Arm::One)?;
                let u2 = layout.normalize_base(&setup.arm2, Arm::Two)?;
                Prepared::Fastron {
                    models,
                    base: [[u1.x, u1.y, u1.z], [u2.x, u2.y, u2.z]],
                    limits: layout.joint_limits,
                }
            }
        })
    }

    fn check(&self, q1: &JointConfig, q2: &JointConfig) -> CollisionReport {
        match self {
            Prepared::Geometric { checker, frames } => checker.check_frames(frames, q1, q2),
            Prepared::Fastron {
                models,
                base,
                limits,
            } => {
                let mut x = [0.0; 12];
                x[..3].copy_from_slice(&base[0]);
                x[3..6].copy_from_slice(&q1.normalized(limits));
                x[6..9].copy_from_slice(&base[1]);
                x[9..].copy_from_slice(&q2.normalized(limits));
                CollisionReport {
                    self_collision: models.self_model.predict_unchecked(&x) == COLLISION,
                    env_collision_arm1: models.env[0].predict_unchecked(&x[..6]) == COLLISION,
                    env_collision_arm2: models.env[1].predict_unchecked(&x[6..]) == COLLISION,
                }
            }
        }
    }
}

/// One collision query against `checker`.
pub fn check_with(
    checker: &Checker,
    setup: &SetupPose,
    q1: &JointConfig,
    q2: &JointConfig,
    layout: &WorldLayout,
) -> Result<CollisionReport, ScoringError> {
    Ok(Prepared::new(checker, setup, layout)?.check(q1, q2))
}

pub fn random_joint<R: Rng>(limits: &JointLimits, rng: &mut R) -> JointConfig {
    JointConfig::new(
        rng.random_range(limits.yaw.lo..=limits.yaw.hi),
        rng.random_range(limits.pitch.lo..=limits.pitch.hi),
        rng.random_range(limits.insertion.lo..=limits.insertion.hi),
    )
}

pub fn random_base<R: Rng>(layout: &WorldLayout, arm: Arm, rng: &mut R) -> BasePose {
    let g = layout.grid(arm);
    let (xl, yl, tl) = (g.x_limits(), g.y_limits(), layout.theta_limits());
    BasePose::new(
        rng.random_range(xl.lo..=xl.hi),
        rng.random_range(yl.lo..=yl.hi),
        rng.random_range(tl.lo..=tl.hi),
    )
}

pub fn random_setup<R: Rng>(layout: &WorldLayout, rng: &mut R) -> SetupPose {
    let a = random_base(layout, Arm::One, rng);
    let b = random_base(layout, Arm::Two, rng);
    SetupPose::new(a, b)
}

/// Stream derived from a run seed and an item index.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Fraction of RoI voxel centers the arm reaches within joint limits.
pub fn reachability_score(base: &BasePose, layout: &WorldLayout, arm: Arm) -> f64 {
    let frame = ArmFrame::new(base, layout, arm);
    let settings = IkSettings::default();
    let limits = &layout.joint_limits;
    let home = JointConfig::home(limits);
    let voxels = layout.voxel_centers();
    let mut q = home;
    let mut reachable = 0usize;
    for target in &voxels {
        let r = frame.solve_ik(target, &settings, &q, limits);
        if r.converged && r.within_limits {
            reachable += 1;
        }
        q = if r.converged { r.q } else { home };
    }
    reachable as f64 / voxels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionScores {
    pub self_free: f64,
    pub env1: f64,
    pub env2: f64,
}

/// Collision-free proportions over `n_samples` joint-configuration pairs
/// drawn from `rng`.
pub fn collision_scores_with_rng<R: Rng>(
    setup: &SetupPose,
    layout: &WorldLayout,
    checker: &Checker,
    n_samples: usize,
    rng: &mut R,
) -> Result<CollisionScores, ScoringError> {
    if n_samples == 0 {
        return Err(ScoringError::NoSamples);
    }
    let prepared = Prepared::new(checker, setup, layout)?;
    let limits = &layout.joint_limits;
    let (mut self_free, mut env1, mut env2) = (0usize, 0usize, 0usize);
    for _ in 0..n_samples {
        let q1 = random_joint(limits, rng);
        let q2 = random_joint(limits, rng);
        let r = prepared.check(&q1, &q2);
        self_free += usize::from(!r.self_collision);
        env1 += usize::from(!r.env_collision_arm1);
        env2 += usize::from(!r.env_collision_arm2);
    }
    let n = n_samples as f64;
    Ok(CollisionScores {
        self_free: self_free as f64 / n,
        env1: env1 as f64 / n,
        env2: env2 as f64 / n,
    })
}

pub fn collision_scores(
    setup: &SetupPose,
    layout: &WorldLayout,
    checker: &Checker,
    n_samples: usize,
    seed: u64,
) -> Result<CollisionScores, ScoringError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collision_scores_with_rng(setup, layout, checker, n_samples, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub setup: SetupPose,
    pub reach1: f64,
    pub reach2: f64,
    pub self_free: f64,
    pub env1: f64,
    pub env2: f64,
}

impl ScoreSample {
    pub fn reach(&self, arm: Arm) -> f64 {
        match arm {
            Arm::One => self.reach1,
            Arm::Two => self.reach2,
        }
    }

    pub fn env(&self, arm: Arm) -> f64 {
        match arm {
            Arm::One => self.env1,
            Arm::Two => self.env2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub voxels: usize,
    pub joint_samples: usize,
    pub setups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDataset {
    pub rows: Vec<ScoreSample>,
    pub seed: u64,
    pub counts: DatasetCounts,
}

/// Scores one row. The row stream draws the setup first, then the joint
/// samples, so every backend sees identical setups and configurations.
pub fn score_row(
    layout: &WorldLayout,
    checker: &Checker,
    n_samples: usize,
    seed: u64,
    row: u64,
) -> Result<ScoreSample, ScoringError> {
    let mut rng = stream_rng(seed, row);
    let setup = random_setup(layout, &mut rng);
    let c = collision_scores_with_rng(&setup, layout, checker, n_samples, &mut rng)?;
    Ok(ScoreSample {
        setup,
        reach1: reachability_score(&setup.arm1, layout, Arm::One),
        reach2: reachability_score(&setup.arm2, layout, Arm::Two),
        self_free: c.self_free,
        env1: c.env1,
        env2: c.env2,
    })
}

/// Samples `n_setups` setups uniformly over both grids and scores each.
/// Rows are independent streams, so the parallel result equals the serial one.
pub fn generate_dataset(
    layout: &WorldLayout,
    n_setups: usize,
    checker: &Checker,
    n_samples: usize,
    seed: u64,
) -> Result<ScoreDataset, ScoringError> {
    if n_setups == 0 || n_samples == 0 {
        return Err(ScoringError::NoSamples);
    }
    let rows = (0..n_setups as u64)
        .into_par_iter()
        .map(|row| score_row(layout, checker, n_samples, seed, row))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreDataset {
        rows,
        seed,
        counts: DatasetCounts {
            voxels: layout.voxel_count_per_axis.pow(3),
            joint_samples: n_samples,
            setups: n_setups,
        },
    })
}

pub const DEFAULT_ENV_TRAINING_ROWS: usize = 50_000;
pub const DEFAULT_SELF_TRAINING_ROWS: usize = 100_000;

fn labeled_rows<F>(dim: usize, n: usize, seed: u64, draw: F) -> LabeledConfigSet
where
    F: Fn(&mut ChaCha8Rng) -> (Vec<f64>, bool) + Sync,
{
    let rows: Vec<(Vec<f64>, bool)> = (0..n as u64)
        .into_par_iter()
        .map(|i| draw(&mut stream_rng(seed, i)))
        .collect();
    let mut set = LabeledConfigSet::new(dim);
    for (x, hit) in rows {
        set.push(&x, if hit { COLLISION } else { FREE })
            .expect("feature width matches");
    }
    set
}

/// Uniform base poses and joint configurations for one arm, labeled by the
/// geometric wall test.
pub fn env_training_set(layout: &WorldLayout, arm: Arm, n: usize, seed: u64) -> LabeledConfigSet {
    let checker = GeometricChecker::new(layout);
    labeled_rows(6, n, seed, |rng| {
        let base = random_base(layout, arm, rng);
        let q = random_joint(&layout.joint_limits, rng);
        let frame = ArmFrame::new(&base, layout, arm);
        let x = env_features_of(&base, &q, layout, arm);
        (x.to_vec(), checker.env_collision(&frame, &q))
    })
}

/// Uniform setups and joint-configuration pairs labeled by the geometric
/// self-collision test.
pub fn self_training_set(layout: &WorldLayout, n: usize, seed: u64) -> LabeledConfigSet {
    let checker = GeometricChecker::new(layout);
    labeled_rows(12, n, seed, |rng| {
        let setup = random_setup(layout, rng);
        let q1 = random_joint(&layout.joint_limits, rng);
        let q2 = random_joint(&layout.joint_limits, rng);
        let mut x = env_features_of(&setup.arm1, &q1, layout, Arm::One).to_vec();
        x.extend_from_slice(&env_features_of(&setup.arm2, &q2, layout, Arm::Two));
        (x, checker.check(&setup, &q1, &q2).self_collision)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyTrainingConfig {
    pub env_rows: usize,
    pub self_rows: usize,
    /// Fraction of each set held out for the accuracy report.
    pub holdout: f64,
    pub env: FastronParams,
    #[serde(rename = "self")]
    pub self_model: FastronParams,
}

impl Default for ProxyTrainingConfig {
    fn default() -> Self {
        Self {
            env_rows: DEFAULT_ENV_TRAINING_ROWS,
            self_rows: DEFAULT_SELF_TRAINING_ROWS,
            holdout: 0.1,
            env: FastronParams::env_default(),
            self_model: FastronParams::self_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyReport {
    pub name: &'static str,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub supports: usize,
    pub updates: usize,
    pub converged: bool,
    pub holdout: Evaluation,
}

/// Trains the three proxy models on fresh geometric labels. Set `k` (env
/// arm 1, env arm 2, self) draws from the seed `seed + k`.
pub fn train_proxies(
    layout: &WorldLayout,
    config: &ProxyTrainingConfig,
    seed: u64,
) -> Result<(FastronSet, [ProxyReport; 3]), ScoringError> {
    if !(0.0..1.0).contains(&config.holdout) {
        return Err(ScoringError::BadHoldout(config.holdout));
    }
    let one = |name: &'static str, data: LabeledConfigSet, params: &FastronParams| {
        let (train_set, hold) = data.split_tail(config.holdout);
        let (model, stats) = train(&train_set, params)?;
        let check = if hold.is_empty() { &train_set } else { &hold };
        let report = ProxyReport {
            name,
            train_rows: train_set.len(),
            holdout_rows: hold.len(),
            supports: model.support_count(),
            updates: stats.updates,
            converged: stats.converged,
            holdout: evaluate(&model, check)?,
        };
        Ok::<_, ScoringError>((model, report))
    };
    let (e1, r1) = one(
        "env1",
        env_training_set(layout, Arm::One, config.env_rows, seed),
        &config.env,
    )?;
    let (e2, r2) = one(
        "env2",
        env_training_set(layout, Arm::Two, config.env_rows, seed.wrapping_add(1)),
        &config.env,
    )?;
    let (s, r3) = one(
        "self",
        self_training_set(layout, config.self_rows, seed.wrapping_add(2)),
        &config.self_model,
    )?;
    Ok((
        FastronSet {
            env: [e1, e2],
            self_model: s,
        },
        [r1, r2, r3],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerTiming {
    pub queries: usize,
    /// Mean seconds per geometric check.
    pub geometric: f64,
    /// Mean seconds per proxy check.
    pub proxy: f64,
    /// Fraction of queries where the two backends give identical flags.
    pub agreement: f64,
}

impl CheckerTiming {
    pub fn ratio(&self) -> f64 {
        self.proxy / self.geometric
    }
}

/// Times both backends, single-threaded, on the same `n` random queries.
pub fn time_checkers(
    layout: &WorldLayout,
    models: &FastronSet,
    n: usize,
    seed: u64,
) -> Result<CheckerTiming, ScoringError> {
    if n == 0 {
        return Err(ScoringError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries: Vec<(SetupPose, JointConfig, JointConfig)> = (0..n)
        .map(|_| {
            let s = random_setup(layout, &mut rng);
            let q1 = random_joint(&layout.joint_limits, &mut rng);
            let q2 = random_joint(&layout.joint_limits, &mut rng);
            (s, q1, q2)
        })
        .collect();
    let start = Instant::now();
    let geo: Vec<CollisionReport> = queries
        .iter()
        .map(|(s, a, b)| check_setup(s, a, b, layout))
        .collect();
    let geometric = start.elapsed().as_secs_f64() / n as f64;
    let proxy_checker = Checker::Fastron(Box::new(models.clone()));
    let start = Instant::now();
    let proxy = queries
        .iter()
        .map(|(s, a, b)| check_with(&proxy_checker, s, a, b, layout))
        .collect::<Result<Vec<_>, _>>()?;
    let proxy_time = start.elapsed().as_secs_f64() / n as f64;
    let same = geo.iter().zip(&proxy).filter(|(g, p)| g == p).count();
    Ok(CheckerTiming {
        queries: n,
        geometric,
        proxy: proxy_time,
        agreement: same as f64 / n as f64,
    })
}

fn env_features_of(base: &BasePose, q: &JointConfig, layout: &WorldLayout, arm: Arm) -> [f64; 6] {
    let u = layout
        .normalize_base(base, arm)
        .expect("sampled base lies inside its grid");
    let j = q.normalized(&layout.joint_limits);
    [u.x, u.y, u.z, j[0], j[1], j[2]]
}

/// Mean squared error between true and estimated scores.
pub fn score_mse(truth: &[f64], estimate: &[f64]) -> Result<f64, ScoringError> {
    if truth.is_empty() || truth.len() != estimate.len() {
        return Err(ScoringError::LengthMismatch(truth.len(), estimate.len()));
    }
    let sum: f64 = truth
        .iter()
        .zip(estimate)
        .map(|(s, e)| (s - e) * (s - e))
        .sum();
    Ok(sum / truth.len() as f64)
}

impl ScoreDataset {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            let s = r.setup.to_array();
            let scores = [r.reach1, r.reach2, r.self_free, r.env1, r.env2];
            let fields = s.iter().chain(scores.iter()).map(|v| crate::io::sig9(*v));
            w.write_record(fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ScoringError> {
        crate::io::write_atomic(path.as_ref(), self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Parses rows from CSV text; `seed` and counts are not stored in the
    /// file and are filled from the arguments and the row count.
    pub fn from_csv(text: &str, seed: u64) -> Result<Self, ScoringError> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| ScoringError::Csv(e.to_string()))?;
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(ScoringError::Csv(format!(
                "unexpected header `{}`; expected `{}`",
                header.iter().collect::<Vec<_>>().join(","),
                CSV_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| ScoringError::Csv(e.to_string()))?;
            let mut v = [0.0; 11];
            if rec.len() != 11 {
                return Err(ScoringError::Csv(format!("row {}: expected 11 fields", line + 1)));
            }
            for (k, field) in rec.iter().enumerate() {
                v[k] = field.trim().parse().map_err(|_| {
                    ScoringError::Csv(format!("row {}: bad number `{field}` in {}", line + 1, CSV_HEADER[k]))
                })?;
            }
            rows.push(ScoreSample {
                setup: SetupPose::from_array([v[0], v[1], v[2], v[3], v[4], v[5]]),
                reach1: v[6],
                reach2: v[7],
                self_free: v[8],
                env1: v[9],
                env2: v[10],
            });
        }
        let n = rows.len();
        Ok(Self {
            rows,
            seed,
            counts: DatasetCounts {
                voxels: 0,
                joint_samples: 0,
                setups: n,
            },
        })
    }

    pub fn read_csv(path: impl AsRef<Path>, seed: u64) -> Result<Self, ScoringError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, seed)
    }
}
