//! Synthetic paired sequences with known latent alignment.
//!
//! A latent process is a smooth curve through `d_latent` dimensions over a unit
//! canonical time axis, cut into contiguous phases. Observed sequences replay
//! the curve through a random monotone time warp, lift it into the observation
//! space with a per-sequence orthogonal map, and add Gaussian noise. The warp
//! and phase labels are kept as ground truth for evaluation only.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

/// Independent generator stream `stream` under `seed`.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One phase of a latent curve: `start + disp * s + s (1 - s) (bend + twist * s)` for `s` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegment {
    pub start: Vec<f64>,
    pub disp: Vec<f64>,
    pub bend: Vec<f64>,
    pub twist: Vec<f64>,
}

impl PhaseSegment {
    pub fn at(&self, s: f64) -> Vec<f64> {
        let q = s * (1.0 - s);
        (0..self.start.len())
            .map(|k| self.start[k] + self.disp[k] * s + q * (self.bend[k] + self.twist[k] * s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentProcess {
    /// `d_latent x L` samples of the curve at canonical times `t / (L - 1)`.
    pub trajectory: Array2<f64>,
    /// Phase index per canonical sample; non-decreasing, every phase present.
    pub phase_labels: Vec<usize>,
    pub segments: Vec<PhaseSegment>,
    /// Canonical start time of each phase, then 1.0.
    pub bounds: Vec<f64>,
}

impl LatentProcess {
    pub fn n_phases(&self) -> usize {
        self.segments.len()
    }

    pub fn phase_at(&self, t: f64) -> usize {
        let k = self.n_phases();
        (1..k).filter(|&p| self.bounds[p] <= t).count().min(k - 1)
    }

    /// Latent state at canonical time `t` in `[0, 1]`.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let p = self.phase_at(t);
        let (a, b) = (self.bounds[p], self.bounds[p + 1]);
        let s = if b > a { ((t - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
        self.segments[p].at(s)
    }

    pub fn from_segments(segments: Vec<PhaseSegment>, bounds: Vec<f64>, length: usize) -> Result<Self> {
        if segments.is_empty() || bounds.len() != segments.len() + 1 || length == 0 {
            return Err(Error::invalid("inconsistent latent process description"));
        }
        let d = segments[0].start.len();
        let mut proc = LatentProcess {
            trajectory: Array2::zeros((d, length)),
            phase_labels: Vec::with_capacity(length),
            segments,
            bounds,
        };
        for t in 0..length {
            let tau = canonical_grid(t, length);
            let z = proc.state_at(tau);
            proc.trajectory.column_mut(t).assign(&Array1::from(z));
            proc.phase_labels.push(proc.phase_at(tau));
        }
        Ok(proc)
    }
}

fn canonical_grid(t: usize, length: usize) -> f64 {
    if length == 1 {
        0.0
    } else {
        t as f64 / (length - 1) as f64
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

/// Random smooth latent process with `k_phases` contiguous phases over `length` canonical samples,
/// centred so the trajectory has zero mean.
pub fn generate_process<R: Rng>(k_phases: usize, d_latent: usize, length: usize, rng: &mut R) -> Result<LatentProcess> {
    if k_phases == 0 || d_latent == 0 || length < k_phases {
        return Err(Error::invalid(format!(
            "need k_phases >= 1, d_latent >= 1, length >= k_phases (got {k_phases}, {d_latent}, {length})"
        )));
    }
    // Phase lengths roughly balanced, each at least one sample.
    let weights: Vec<f64> = (0..k_phases).map(|_| rng.random_range(0.6..1.4)).collect();
    let total: f64 = weights.iter().sum();
    let mut cuts = vec![0usize];
    let mut acc = 0.0;
    for (p, w) in weights.iter().enumerate().take(k_phases - 1) {
        acc += w;
        let lo = cuts[p] + 1;
        let hi = length - (k_phases - 1 - p);
        let c = ((acc / total) * length as f64).round() as usize;
        cuts.push(c.clamp(lo, hi));
    }
    let mut bounds: Vec<f64> = cuts.iter().map(|&c| canonical_grid(c, length)).collect();
    bounds.push(1.0);

    let mut segments = Vec::with_capacity(k_phases);
    let mut start = gaussian_vec(rng, d_latent, 1.0);
    for _ in 0..k_phases {
        let seg = PhaseSegment {
            start: start.clone(),
            disp: gaussian_vec(rng, d_latent, 1.5),
            bend: gaussian_vec(rng, d_latent, 2.0),
            twist: gaussian_vec(rng, d_latent, 2.0),
        };
        start = seg.start.iter().zip(&seg.disp).map(|(a, b)| a + b).collect();
        segments.push(seg);
    }
    // Shift the whole curve so its canonical samples have zero mean.
    let draft = LatentProcess::from_segments(segments.clone(), bounds.clone(), length)?;
    let mean = draft.trajectory.mean_axis(ndarray::Axis(1)).expect("length >= 1");
    let mut start: Vec<f64> = segments[0].start.iter().zip(mean.iter()).map(|(v, m)| v - m).collect();
    for seg in &mut segments {
        seg.start = start;
        start = seg.start.iter().zip(&seg.disp).map(|(a, b)| a + b).collect();
    }
    LatentProcess::from_segments(segments, bounds, length)
}

/// Strictly increasing piecewise-linear map from observed time to canonical time, `[0,1] -> [0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpMap {
    /// `(observed, canonical)` knots including both endpoints.
    pub knots: Vec<(f64, f64)>,
}

impl WarpMap {
    pub fn identity() -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        let ok_ends = knots.first() == Some(&(0.0, 0.0)) && knots.last() == Some(&(1.0, 1.0));
        let increasing = knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
        if knots.len() < 2 || !ok_ends || !increasing {
            return Err(Error::invalid(
                "warp knots must run from (0,0) to (1,1) and strictly increase in both coordinates",
            ));
        }
        Ok(Self { knots })
    }

    /// Random warp with `interior` knots and per-segment speeds log-uniform in `[1/max_speed, max_speed]`.
    pub fn random<R: Rng>(interior: usize, max_speed: f64, rng: &mut R) -> Result<Self> {
        if !(max_speed >= 1.0) {
            return Err(Error::invalid("max_speed must be >= 1"));
        }
        let mut us: Vec<f64> = (0..interior).map(|_| rng.random_range(0.05..0.95)).collect();
        us.sort_by(f64::total_cmp);
        us.dedup();
        let mut xs = vec![0.0];
        xs.extend(us);
        xs.push(1.0);
        let ln = max_speed.ln();
        let mut taus = vec![0.0];
        for w in xs.windows(2) {
            let speed = rng.random_range(-ln..=ln).exp();
            taus.push(taus.last().unwrap() + speed * (w[1] - w[0]));
        }
        let total = *taus.last().unwrap();
        let n = xs.len();
        let knots = xs
            .into_iter()
            .zip(taus)
            .enumerate()
            .map(|(k, (u, t))| if k + 1 == n { (1.0, 1.0) } else { (u, t / total) })
            .collect();
        Self::new(knots)
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let k = self
            .knots
            .windows(2)
            .position(|w| u <= w[1].0)
            .unwrap_or(self.knots.len() - 2);
        let ((u0, t0), (u1, t1)) = (self.knots[k], self.knots[k + 1]);
        t0 + (u - u0) * (t1 - t0) / (u1 - u0)
    }

    /// Canonical time of each of `length` evenly spaced observed frames.
    pub fn frame_times(&self, length: usize) -> Vec<f64> {
        (0..length).map(|i| self.eval(canonical_grid(i, length))).collect()
    }
}

/// Uniformly random `rows x cols` matrix with orthonormal columns (`rows >= cols`).
pub fn random_orthonormal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    assert!(rows >= cols);
    loop {
        let mut q = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng));
        let mut ok = true;
        for j in 0..cols {
            for k in 0..j {
                let proj: f64 = q.column(k).dot(&q.column(j));
                let qk = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &qk);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

/// How a latent state is mapped into observation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceParams {
    /// Fixed `obs_dim x d_latent` orthonormal lift shared by all sequences.
    pub lift: Array2<f64>,
    /// Leading observation coordinates left untouched; the rest are rotated per sequence.
    pub shared_dims: usize,
}

impl NuisanceParams {
    /// Lift that puts a fixed fraction `rotated_energy` of every latent direction's
    /// energy into the rotated block and the rest into the shared block.
    ///
    /// Each block receives its own orthonormal `block x d_latent` frame, so the
    /// shared coordinates are a scaled isometric copy of the latent state.
    /// A block with zero weight may be empty; otherwise it needs `d_latent` rows.
    pub fn with_energy_split<R: Rng>(
        obs_dim: usize,
        shared_dims: usize,
        d_latent: usize,
        rotated_energy: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rotated_energy) {
            return Err(Error::invalid(format!("rotated_energy {rotated_energy} is outside [0, 1]")));
        }
        let shared = shared_dims.min(obs_dim);
        let blocks = [(shared, 1.0 - rotated_energy), (obs_dim - shared, rotated_energy)];
        if d_latent == 0 || blocks.iter().any(|&(rows, w)| w > 0.0 && rows < d_latent) {
            return Err(Error::invalid(format!(
                "blocks of {shared} shared and {} rotated rows cannot each hold {d_latent} latent directions",
                obs_dim - shared
            )));
        }
        let mut lift = Array2::zeros((obs_dim, d_latent));
        let mut row = 0;
        for (rows, w) in blocks {
            if w > 0.0 {
                let q = random_orthonormal(rows, d_latent, rng) * w.sqrt();
                lift.slice_mut(ndarray::s![row..row + rows, ..]).assign(&q);
            }
            row += rows;
        }
        Ok(Self { lift, shared_dims })
    }

    /// Per-sequence mixing: a random rotation of the trailing coordinates applied after the lift.
    pub fn sample_mixing<R: Rng>(&self, rng: &mut R) -> Array2<f64> {
        let obs = self.lift.nrows();
        let free = obs - self.shared_dims.min(obs);
        let mut rot = Array2::<f64>::eye(obs);
        if free > 0 {
            let o = random_orthonormal(free, free, rng);
            rot.slice_mut(ndarray::s![obs - free.., obs - free..]).assign(&o);
        }
        rot.dot(&self.lift)
    }
}

/// One observed replay of a latent process.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sequence: FeatureSequence,
    pub warp: WarpMap,
    pub phase_labels: Vec<usize>,
}

/// Replay `process` through `warp`, map by `mixing` (`obs_dim x d_latent`), add noise.
pub fn warp_and_observe<R: Rng>(
    process: &LatentProcess,
    warp: &WarpMap,
    mixing: &Array2<f64>,
    length: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Observation> {
    let warp = WarpMap::new(warp.knots.clone())?;
    let d = process.trajectory.nrows();
    if mixing.ncols() != d || mixing.nrows() < d {
        return Err(Error::invalid(format!(
            "mixing is {}x{}, need obs_dim x {d} with obs_dim >= {d}",
            mixing.nrows(),
            mixing.ncols()
        )));
    }
    if length == 0 || !(noise_sigma >= 0.0) {
        return Err(Error::invalid("length must be positive and noise_sigma >= 0"));
    }
    let times = warp.frame_times(length);
    let mut data = Array2::zeros((mixing.nrows(), length));
    let mut phase_labels = Vec::with_capacity(length);
    for (i, &t) in times.iter().enumerate() {
        let z = Array1::from(process.state_at(t));
        let mut x = mixing.dot(&z);
        if noise_sigma > 0.0 {
            x.mapv_inplace(|v| v + noise_sigma * Distribution::<f64>::sample(&StandardNormal, rng));
        }
        data.column_mut(i).assign(&x);
        phase_labels.push(process.phase_at(t));
    }
    Ok(Observation {
        sequence: FeatureSequence::new(data)?,
        warp,
        phase_labels,
    })
}
