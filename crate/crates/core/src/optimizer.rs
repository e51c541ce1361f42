//! Weighted-sum placement objective over the normalized 6-D setup and a
//! multi-start projected gradient ascent.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::stream_rng;
use crate::svr::{clip_score, ScoreKind, ScoreMaps};
use crate::world::{Arm, BasePose, SetupPose, WorldError, WorldLayout};

pub const DEFAULT_STARTS: usize = 100;
pub const HEATMAP_THETAS: usize = 21;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("weights must be finite and non-negative, and not all zero")]
    BadWeights,
    #[error("point outside [-1, 1]^6: component {0} = {1}")]
    OutOfBox(usize, f64),
    #[error("need at least one start")]
    NoStarts,
    #[error("heatmap resolution must be at least 2")]
    BadResolution,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("solution file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub reach: f64,
    #[serde(rename = "self")]
    pub self_free: f64,
    pub env: f64,
}

impl Weights {
    pub fn new(reach: f64, self_free: f64, env: f64) -> Result<Self, OptimizeError> {
        let w = Self {
            reach,
            self_free,
            env,
        };
        let all = [reach, self_free, env];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || all.iter().all(|v| *v == 0.0) {
            return Err(OptimizeError::BadWeights);
        }
        Ok(w)
    }

    pub fn of(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::Reach(_) => self.reach,
            ScoreKind::Env(_) => self.env,
            ScoreKind::SelfFree => self.self_free,
        }
    }

    /// Largest attainable objective value.
    pub fn upper_bound(&self) -> f64 {
        2.0 * self.reach + 2.0 * self.env + self.self_free
    }
}

/// A smooth function on `[-1, 1]^6` to be maximized.
pub trait Objective: Sync {
    /// Value at `u`, with the gradient written into `grad`.
    fn value_grad(&self, u: &[f64; 6], grad: &mut [f64; 6]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64; 6], &mut [f64; 6]) -> f64 + Sync,
{
    fn value_grad(&self, u: &[f64; 6], grad: &mut [f64; 6]) -> f64 {
        self(u, grad)
    }
}

/// Clipped score predictions at one setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub reach1: f64,
    pub reach2: f64,
    pub env1: f64,
    pub env2: f64,
    pub self_free: f64,
}

impl ScoreBreakdown {
    fn from_values(v: [f64; 5]) -> Self {
        Self {
            reach1: v[0],
            reach2: v[1],
            env1: v[2],
            env2: v[3],
            self_free: v[4],
        }
    }
}

/// `f(u) = Σ_arm [w_reach·reach'_arm + w_env·env'_arm] + w_self·self'`, where
/// `'` marks a clipped prediction.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub weights: Weights,
    pub maps: ScoreMaps,
}

fn check_box(u: &[f64; 6]) -> Result<(), OptimizeError> {
    match u.iter().position(|v| !(-1.0..=1.0).contains(v)) {
        Some(k) => Err(OptimizeError::OutOfBox(k, u[k])),
        None => Ok(()),
    }
}

impl ObjectiveSpec {
    pub fn new(maps: ScoreMaps, weights: Weights) -> Result<Self, OptimizeError> {
        Weights::new(weights.reach, weights.self_free, weights.env)?;
        Ok(Self { weights, maps })
    }

    pub fn scores(&self, u: &[f64; 6]) -> Result<ScoreBreakdown, OptimizeError> {
        check_box(u)?;
        Ok(ScoreBreakdown::from_values(ScoreKind::ALL.map(|k| {
            let (o, d) = (k.input_offset(), k.dim());
            clip_score(self.maps.get(k).predict_unchecked(&u[o..o + d]))
        })))
    }

    pub fn value(&self, u: &[f64; 6]) -> Result<f64, OptimizeError> {
        check_box(u)?;
        let mut g = [0.0; 6];
        Ok(self.value_grad(u, &mut g))
    }
}

impl Objective for ObjectiveSpec {
    fn value_grad(&self, u: &[f64; 6], grad: &mut [f64; 6]) -> f64 {
        grad.fill(0.0);
        let mut f = 0.0;
        let mut g = [0.0; 6];
        for k in ScoreKind::ALL {
            let w = self.weights.of(k);
            if w == 0.0 {
                continue;
            }
            let (o, d) = (k.input_offset(), k.dim());
            let y = self.maps
                .get(k)
                .predict_with_gradient(&u[o..o + d], &mut g[..d])
                .expect("map dimensions checked at load");
            f += w * clip_score(y);
            // The clipped score is flat outside (0, 1).
            if y > 0.0 && y < 1.0 {
                for (gi, gk) in grad[o..o + d].iter_mut().zip(&g[..d]) {
                    *gi += w * gk;
                }
            }
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalParams {
    pub max_iters: usize,
    /// Initial trial step along the gradient.
    pub step0: f64,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub escape_radius: f64,
    pub escape_tries: usize,
}

impl Default for LocalParams {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step0: 0.1,
            grad_tol: 1e-6,
            f_tol: 1e-8,
            escape_radius: 0.05,
            escape_tries: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalResult {
    pub start: usize,
    pub u: [f64; 6],
    pub f: f64,
    pub iterations: usize,
}

fn project(u: &mut [f64; 6]) {
    for v in u.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
}

fn stepped(u: &[f64; 6], g: &[f64; 6], t: f64) -> [f64; 6] {
    let mut v = *u;
    for (vi, gi) in v.iter_mut().zip(g) {
        *vi += t * gi;
    }
    project(&mut v);
    v
}

fn dist(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Projected gradient ascent from `u0`. Every accepted step strictly raises
/// `f`; a zero gradient triggers random perturbations that are kept only when
/// they do not lower `f`.
pub fn local_ascent<O: Objective + ?Sized, R: Rng>(
    obj: &O,
    u0: [f64; 6],
    params: &LocalParams,
    rng: &mut R,
) -> LocalResult {
    let mut u = u0;
    project(&mut u);
    let mut g = [0.0; 6];
    let mut f = obj.value_grad(&u, &mut g);
    let mut t = params.step0;
    let mut escapes = 0;
    let mut iterations = 0;

    while iterations < params.max_iters {
        if g.iter().all(|v| *v == 0.0) {
            if escapes >= params.escape_tries {
                break;
            }
            escapes += 1;
            let mut v = u;
            for vi in v.iter_mut() {
                *vi += rng.random_range(-params.escape_radius..=params.escape_radius);
            }
            project(&mut v);
            let mut gv = [0.0; 6];
            let fv = obj.value_grad(&v, &mut gv);
            if fv >= f {
                u = v;
                f = fv;
                g = gv;
            }
            continue;
        }
        // Projected-gradient stationarity.
        if dist(&stepped(&u, &g, 1.0), &u) < params.grad_tol {
            break;
        }
        iterations += 1;
        let mut accepted = None;
        let mut trial_t = (2.0 * t).min(1.0);
        for _ in 0..60 {
            let v = stepped(&u, &g, trial_t);
            let mut gv = [0.0; 6];
            let fv = obj.value_grad(&v, &mut gv);
            if fv > f {
                accepted = Some((v, fv, gv));
                break;
            }
            trial_t *= 0.5;
        }
        let Some((v, fv, gv)) = accepted else { break };
        let df = fv - f;
        u = v;
        f = fv;
        g = gv;
        t = trial_t;
        if df < params.f_tol {
            break;
        }
    }
    LocalResult {
        start: 0,
        u,
        f,
        iterations,
    }
}

/// Runs `n_starts` local ascents from uniform seeds in `[-1, 1]^6`. Start
/// `k` draws from stream `k` of `seed`; the best value wins, ties going to
/// the lowest start index. Returns the winner and every start's result.
pub fn multi_start<O: Objective + ?Sized>(
    obj: &O,
    n_starts: usize,
    seed: u64,
    params: &LocalParams,
) -> Result<(LocalResult, Vec<LocalResult>), OptimizeError> {
    if n_starts == 0 {
        return Err(OptimizeError::NoStarts);
    }
    let runs: Vec<LocalResult> = (0..n_starts)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let u0: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            LocalResult {
                start: k,
                ..local_ascent(obj, u0, params, &mut rng)
            }
        })
        .collect();
    let best = runs
        .iter()
        .copied()
        .reduce(|a, b| if b.f > a.f { b } else { a })
        .expect("at least one start");
    Ok((best, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solution {
    pub setup: SetupPose,
    pub u: [f64; 6],
    pub f: f64,
    pub scores: ScoreBreakdown,
    pub weights: Weights,
    pub seed: u64,
    pub starts_used: usize,
}

impl Solution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OptimizeError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| OptimizeError::File(format!("{}: {}", e.path(), e.inner())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OptimizeError> {
        let text = std::fs::read_to_string(path).map_err(|e| OptimizeError::File(e.to_string()))?;
        Self::from_json(&text)
    }
}

/// Maximizes the weighted objective and maps the winner back to a setup.
pub fn optimize(
    spec: &ObjectiveSpec,
    layout: &WorldLayout,
    n_starts: usize,
    seed: u64,
    params: &LocalParams,
) -> Result<Solution, OptimizeError> {
    let (best, _) = multi_start(spec, n_starts, seed, params)?;
    Ok(Solution {
        setup: layout.denormalize_setup(&best.u),
        u: best.u,
        f: best.f,
        scores: spec.scores(&best.u)?,
        weights: spec.weights,
        seed,
        starts_used: n_starts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// Per-arm weighted score `w_reach·reach + w_env·env + w_self·self` on a
/// `res × res` grid over the arm's base region, maximized over
/// [`HEATMAP_THETAS`] headings. The other arm stays at `other`. Cells run
/// over `x` first, then `y`.
pub fn heatmap(
    spec: &ObjectiveSpec,
    layout: &WorldLayout,
    arm: Arm,
    res: usize,
    other: &BasePose,
) -> Result<Vec<HeatmapCell>, OptimizeError> {
    if res < 2 {
        return Err(OptimizeError::BadResolution);
    }
    let v = layout.normalize_base(other, arm.other())?;
    let (mine, theirs) = match arm {
        Arm::One => (0, 3),
        Arm::Two => (3, 0),
    };
    let w = spec.weights;
    let g = layout.grid(arm);
    let (xl, yl, tl) = (g.x_limits(), g.y_limits(), layout.theta_limits());
    let thetas: Vec<f64> = linspace(tl.lo, tl.hi, HEATMAP_THETAS).collect();
    let mut cells = Vec::with_capacity(res * res);
    for y in linspace(yl.lo, yl.hi, res) {
        for x in linspace(xl.lo, xl.hi, res) {
            let mut best = f64::NEG_INFINITY;
            for &th in &thetas {
                let p = layout.normalize_base(&BasePose::new(x, y, th), arm)?;
                let mut u = [0.0; 6];
                u[mine..mine + 3].copy_from_slice(&[p.x, p.y, p.z].map(|c| c.clamp(-1.0, 1.0)));
                u[theirs..theirs + 3].copy_from_slice(&[v.x, v.y, v.z].map(|c| c.clamp(-1.0, 1.0)));
                let s = spec.scores(&u)?;
                let (reach, env) = match arm {
                    Arm::One => (s.reach1, s.env1),
                    Arm::Two => (s.reach2, s.env2),
                };
                best = best.max(w.reach * reach + w.env * env + w.self_free * s.self_free);
            }
            cells.push(HeatmapCell { x, y, score: best });
        }
    }
    Ok(cells)
}
