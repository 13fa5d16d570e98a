//! Labeled collections of synthetic sequences and their on-disk layout.
//!
//! A dataset directory holds `manifest.json`, one `seq_NNNN.csv` per observed
//! sequence and one `latent_NN.csv` per latent process (canonical samples,
//! for plotting). CSV rows are timesteps; floats carry 17 significant digits.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::sequence::FeatureSequence;
use crate::synth::{
    derive_rng, generate_process, warp_and_observe, LatentProcess, NuisanceParams,
    PhaseSegment, WarpMap,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "smoothalign-dataset";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_processes: usize,
    pub sequences_per_process: usize,
    pub k_phases: usize,
    pub d_latent: usize,
    pub obs_dim: usize,
    /// Observation coordinates shared unrotated across sequences.
    pub shared_dims: usize,
    /// Fraction of each latent direction's energy placed in the rotated coordinates.
    pub rotated_energy: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub canonical_len: usize,
    pub noise_sigma: f64,
    pub warp_knots: usize,
    pub max_speed: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_processes: 10,
            sequences_per_process: 20,
            k_phases: 4,
            d_latent: 4,
            obs_dim: 16,
            shared_dims: 8,
            rotated_energy: 0.75,
            min_len: 40,
            max_len: 80,
            canonical_len: 100,
            noise_sigma: 0.05,
            warp_knots: 5,
            max_speed: 3.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_processes == 0 || self.sequences_per_process == 0 {
            return bad("n_processes and sequences_per_process must be positive");
        }
        if self.obs_dim < self.d_latent || self.d_latent == 0 {
            return bad("obs_dim must be >= d_latent >= 1");
        }
        if self.shared_dims > self.obs_dim {
            return bad("shared_dims must be <= obs_dim");
        }
        if !(0.0..=1.0).contains(&self.rotated_energy) {
            return bad("rotated_energy must lie in [0, 1]");
        }
        let rotated = self.obs_dim - self.shared_dims;
        if (self.rotated_energy < 1.0 && self.shared_dims < self.d_latent)
            || (self.rotated_energy > 0.0 && rotated < self.d_latent)
        {
            return bad("a block carrying latent energy needs at least d_latent coordinates");
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return bad("need 2 <= min_len <= max_len");
        }
        if self.canonical_len < self.k_phases || self.k_phases == 0 {
            return bad("need 1 <= k_phases <= canonical_len");
        }
        if !(self.noise_sigma >= 0.0) || !(self.max_speed >= 1.0) {
            return bad("noise_sigma must be >= 0 and max_speed >= 1");
        }
        Ok(())
    }
}

/// One observed sequence with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub process: usize,
    pub data: FeatureSequence,
    pub phase_labels: Vec<usize>,
    pub warp: WarpMap,
}

impl SequenceRecord {
    /// Canonical time of every frame.
    pub fn canonical_times(&self) -> Vec<f64> {
        self.warp.frame_times(self.data.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub processes: Vec<LatentProcess>,
    pub sequences: Vec<SequenceRecord>,
}

impl Dataset {
    /// Indices of sequences of each process, in file order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.processes.len()];
        for (i, s) in self.sequences.iter().enumerate() {
            g[s.process].push(i);
        }
        g
    }

    /// Noise-free latent states at each frame's canonical time.
    pub fn oracle_embedding(&self, idx: usize) -> Result<FeatureSequence> {
        let rec = &self.sequences[idx];
        let proc = &self.processes[rec.process];
        let rows: Vec<Vec<f64>> = rec
            .canonical_times()
            .into_iter()
            .map(|t| proc.state_at(t))
            .collect();
        FeatureSequence::from_timesteps(&rows)
    }
}

/// Per-process partition of sequence indices into training and held-out sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Vec<usize>>,
    pub heldout: Vec<Vec<usize>>,
}

impl Split {
    /// Hold out the last `holdout` sequences of every process.
    pub fn last_per_process(ds: &Dataset, holdout: usize) -> Self {
        let (mut train, mut heldout) = (Vec::new(), Vec::new());
        for g in ds.groups() {
            let cut = g.len().saturating_sub(holdout);
            train.push(g[..cut].to_vec());
            heldout.push(g[cut..].to_vec());
        }
        Self { train, heldout }
    }

    /// Every unordered held-out pair within a process.
    pub fn heldout_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for g in &self.heldout {
            for (k, &a) in g.iter().enumerate() {
                for &b in &g[k + 1..] {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.train.iter().flatten().copied().collect()
    }
}

/// Generate `n_processes` groups of `sequences_per_process` sequences.
///
/// Every process and every sequence draws from its own derived stream, so the
/// output depends only on `(cfg, seed)`.
pub fn build_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut lift_rng = derive_rng(seed, 0);
    let nuisance = NuisanceParams::with_energy_split(
        cfg.obs_dim,
        cfg.shared_dims,
        cfg.d_latent,
        cfg.rotated_energy,
        &mut lift_rng,
    )?;
    let processes = (0..cfg.n_processes)
        .map(|p| {
            let mut rng = derive_rng(seed, 1 + p as u64);
            generate_process(cfg.k_phases, cfg.d_latent, cfg.canonical_len, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sequences = Vec::with_capacity(cfg.n_processes * cfg.sequences_per_process);
    for (p, proc) in processes.iter().enumerate() {
        for s in 0..cfg.sequences_per_process {
            let idx = p * cfg.sequences_per_process + s;
            let mut rng = derive_rng(seed, 1_000_000 + idx as u64);
            let length = rng.random_range(cfg.min_len..=cfg.max_len);
            let warp = WarpMap::random(cfg.warp_knots, cfg.max_speed, &mut rng)?;
            let mixing = nuisance.sample_mixing(&mut rng);
            let obs = warp_and_observe(proc, &warp, &mixing, length, cfg.noise_sigma, &mut rng)?;
            sequences.push(SequenceRecord {
                name: format!("seq_{idx:04}"),
                process: p,
                data: obs.sequence,
                phase_labels: obs.phase_labels,
                warp: obs.warp,
            });
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        processes,
        sequences,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    config: DatasetConfig,
    processes: Vec<ProcessEntry>,
    sequences: Vec<SequenceEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessEntry {
    file: String,
    canonical_len: usize,
    bounds: Vec<f64>,
    segments: Vec<PhaseSegment>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceEntry {
    file: String,
    process: usize,
    length: usize,
    phase_labels: Vec<usize>,
    warp_knots: Vec<(f64, f64)>,
}

/// Write the dataset into `dir`, creating it if needed.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    io::create_dir_all(dir)?;
    let mut processes = Vec::new();
    for (p, proc) in ds.processes.iter().enumerate() {
        let file = format!("latent_{p:02}.csv");
        io::write_string(&dir.join(&file), &io::matrix_to_csv(&proc.trajectory.t().to_owned()))?;
        processes.push(ProcessEntry {
            file,
            canonical_len: proc.trajectory.ncols(),
            bounds: proc.bounds.clone(),
            segments: proc.segments.clone(),
        });
    }
    let mut sequences = Vec::new();
    for rec in &ds.sequences {
        let file = format!("{}.csv", rec.name);
        io::write_sequence(&dir.join(&file), &rec.data)?;
        sequences.push(SequenceEntry {
            file,
            process: rec.process,
            length: rec.data.len(),
            phase_labels: rec.phase_labels.clone(),
            warp_knots: rec.warp.knots.clone(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        seed: ds.seed,
        config: ds.config.clone(),
        processes,
        sequences,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write_string(&dir.join(MANIFEST_FILE), &(text + "\n"))
}

/// Read a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = io::read_to_string(&mpath)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mpath.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            path: mpath,
            line: 0,
            msg: format!(
                "unsupported manifest {} v{}",
                manifest.format, manifest.version
            ),
        });
    }
    let processes = manifest
        .processes
        .into_iter()
        .map(|p| LatentProcess::from_segments(p.segments, p.bounds, p.canonical_len))
        .collect::<Result<Vec<_>>>()?;
    let mut sequences = Vec::new();
    for e in manifest.sequences {
        let path = dir.join(&e.file);
        let data = io::read_sequence(&path)?;
        if data.len() != e.length || e.phase_labels.len() != e.length || e.process >= processes.len() {
            return Err(Error::Parse {
                path,
                line: 0,
                msg: "sequence disagrees with its manifest entry".into(),
            });
        }
        let name = e.file.trim_end_matches(".csv").to_string();
        sequences.push(SequenceRecord {
            name,
            process: e.process,
            data,
            phase_labels: e.phase_labels,
            warp: WarpMap::new(e.warp_knots)?,
        });
    }
    Ok(Dataset {
        config: manifest.config,
        seed: manifest.seed,
        processes,
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            n_processes: 2,
            sequences_per_process: 3,
            min_len: 10,
            max_len: 15,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn default_shape() {
        let ds = build_dataset(&DatasetConfig::default(), 1).unwrap();
        assert_eq!(ds.sequences.len(), 200);
        assert_eq!(ds.groups().len(), 10);
        assert!(ds.groups().iter().all(|g| g.len() == 20));
        for s in &ds.sequences {
            assert_eq!(s.data.dim(), 16);
            assert!((40..=80).contains(&s.data.len()));
            assert!(s.phase_labels.iter().all(|&l| l < 4));
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = build_dataset(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn seeds_differ() {
        let a = build_dataset(&small(), 1).unwrap();
        let b = build_dataset(&small(), 2).unwrap();
        assert_ne!(a.sequences[0].data, b.sequences[0].data);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DatasetConfig {
            obs_dim: 2,
            ..DatasetConfig::default()
        };
        assert!(matches!(build_dataset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn split_holds_out_tail() {
        let ds = build_dataset(&small(), 3).unwrap();
        let sp = Split::last_per_process(&ds, 2);
        assert_eq!(sp.train, vec![vec![0], vec![3]]);
        assert_eq!(sp.heldout, vec![vec![1, 2], vec![4, 5]]);
        assert_eq!(sp.heldout_pairs(), vec![(1, 2), (4, 5)]);
    }

    #[test]
    fn oracle_has_latent_dim() {
        let ds = build_dataset(&small(), 3).unwrap();
        let o = ds.oracle_embedding(4).unwrap();
        assert_eq!(o.dim(), 4);
        assert_eq!(o.len(), ds.sequences[4].data.len());
    }
}
