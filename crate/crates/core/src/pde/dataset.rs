//! Binary container and dataset generation.
//!
//! Layout: `b"HNO1"`, `u32` version (1), `u32` metadata length, UTF-8 JSON
//! metadata, then per array: `u8` name length, name, `u8` rank, rank × `u64`
//! extents, `f32` row-major payload. All integers and floats little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::diffusion_reaction::{
    sample_initial_condition_1d, solve_diffusion_reaction, DiffusionReactionConfig,
};
use super::grf::{sample_grf_2d, GrfSpec};
use super::navier_stokes::{subsample, NavierStokesConfig, NavierStokesSolver};
use crate::error::{Error, Result};
use crate::model::Problem;

pub const MAGIC: &[u8; 4] = b"HNO1";
pub const VERSION: u32 = 1;
pub const SOLVER_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn new(name: &str, shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!(
                "array {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if name.len() > u8::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!(
                "array {name}: name or rank too long"
            )));
        }
        Ok(Array {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        })
    }
}

/// Generic container: JSON metadata plus named `f32` arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: String,
    pub arrays: Vec<Array>,
}

impl Container {
    pub fn new<M: Serialize>(meta: &M, arrays: Vec<Array>) -> Result<Self> {
        Ok(Container {
            metadata: serde_json::to_string(meta)?,
            arrays,
        })
    }

    pub fn meta<M: DeserializeOwned>(&self) -> Result<M> {
        Ok(serde_json::from_str(&self.metadata)?)
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        for a in &self.arrays {
            out.push(a.name.len() as u8);
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.shape.len() as u8);
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Format("truncated container".into()));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not an HNO1 container".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let mlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let metadata =
            String::from_utf8(take(mlen)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let mut arrays = Vec::new();
        loop {
            let Ok(len) = take(1) else { break };
            let nlen = len[0] as usize;
            let name = String::from_utf8(take(nlen)?.to_vec())
                .map_err(|e| Error::Format(e.to_string()))?;
            let rank = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
            }
            let count: usize = shape.iter().product();
            let data = take(count * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(Array { name, shape, data });
        }
        Ok(Container { metadata, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Navier–Stokes data settings: solver grid, output grid and the split of
/// snapshots into inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavierStokesData {
    pub solver: NavierStokesConfig,
    pub grf: GrfSpec,
    pub resolution: usize,
    pub steps_in: usize,
    pub horizon: usize,
}

impl Default for NavierStokesData {
    fn default() -> Self {
        NavierStokesData {
            solver: NavierStokesConfig {
                t_final: 19.0,
                ..Default::default()
            },
            grf: GrfSpec::default(),
            resolution: 32,
            steps_in: 10,
            horizon: 10,
        }
    }
}

impl NavierStokesData {
    /// Sets `t_final` so the run stores exactly `steps_in + horizon` snapshots.
    pub fn normalized(mut self) -> Self {
        self.solver.t_final =
            (self.steps_in + self.horizon - 1) as f64 * self.solver.record_interval;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        let n = self.solver.n;
        if self.resolution == 0 || n % self.resolution != 0 || !self.resolution.is_power_of_two() {
            return Err(Error::invalid(format!(
                "navier-stokes: resolution {} must divide the solver grid {n}",
                self.resolution
            )));
        }
        if self.steps_in == 0 || self.horizon == 0 {
            return Err(Error::invalid(
                "navier-stokes: steps_in and horizon must be positive",
            ));
        }
        if self.solver.records()? + 1 != self.steps_in + self.horizon {
            return Err(Error::invalid(format!(
                "navier-stokes: {} snapshots stored but {} + {} requested",
                self.solver.records()? + 1,
                self.steps_in,
                self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    DiffusionReaction {
        solver: DiffusionReactionConfig,
        modes: usize,
    },
    NavierStokes(NavierStokesData),
}

impl ProblemConfig {
    pub fn problem(&self) -> Problem {
        match self {
            ProblemConfig::DiffusionReaction { .. } => Problem::DiffusionReaction1d,
            ProblemConfig::NavierStokes(_) => Problem::NavierStokes2d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProblemConfig::DiffusionReaction { solver, modes } => {
                if *modes == 0 {
                    return Err(Error::invalid("diffusion-reaction: modes must be positive"));
                }
                solver.validate()
            }
            ProblemConfig::NavierStokes(ns) => ns.validate(),
        }
    }

    /// Points per sample after flattening.
    pub fn points(&self) -> usize {
        match self {
            ProblemConfig::DiffusionReaction { solver, .. } => solver.nx,
            ProblemConfig::NavierStokes(ns) => ns.resolution * ns.resolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Per-sample seed. Train and test draw from disjoint halves of the
/// `2³²`-wide block owned by `seed`.
pub fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    let offset = match split {
        Split::Train => 0,
        Split::Test => 1 << 31,
    };
    (seed << 32) | (offset + index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub solver_version: String,
    pub problem: Problem,
    pub split: Split,
    pub seed: u64,
    pub sample_seeds: Vec<u64>,
    pub config: ProblemConfig,
}

/// One split: `input [N, P, C_in]`, `target [N, P, C_out]`, `grid [P, G]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeDataset {
    pub meta: DatasetMeta,
    pub input: Array,
    pub target: Array,
    pub grid: Array,
}

impl PdeDataset {
    pub fn len(&self) -> usize {
        self.input.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> usize {
        self.input.shape[1]
    }

    pub fn to_container(&self) -> Result<Container> {
        Container::new(
            &self.meta,
            vec![self.input.clone(), self.target.clone(), self.grid.clone()],
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: DatasetMeta = c.meta()?;
        let ds = PdeDataset {
            meta,
            input: c.array("input")?.clone(),
            target: c.array("target")?.clone(),
            grid: c.array("grid")?.clone(),
        };
        let (i, t, g) = (&ds.input.shape, &ds.target.shape, &ds.grid.shape);
        if i.len() != 3
            || t.len() != 3
            || g.len() != 2
            || i[0] != t[0]
            || i[1] != t[1]
            || i[1] != g[0]
        {
            return Err(Error::Format(format!(
                "inconsistent dataset shapes input {i:?} target {t:?} grid {g:?}"
            )));
        }
        Ok(ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

fn grid_array(config: &ProblemConfig) -> Result<Array> {
    match config {
        ProblemConfig::DiffusionReaction { solver, .. } => {
            let n = solver.nx;
            Array::new(
                "grid",
                &[n, 1],
                (0..n).map(|i| (i as f64 / n as f64) as f32).collect(),
            )
        }
        ProblemConfig::NavierStokes(ns) => {
            let n = ns.resolution;
            let data = (0..n * n)
                .flat_map(|p| {
                    [
                        ((p % n) as f64 / n as f64) as f32,
                        ((p / n) as f64 / n as f64) as f32,
                    ]
                })
                .collect();
            Array::new("grid", &[n * n, 2], data)
        }
    }
}

/// Input and target channels of one sample, point-major.
fn simulate(config: &ProblemConfig, seed: u64) -> Result<(Vec<f32>, Vec<f32>)> {
    match config {
        ProblemConfig::DiffusionReaction { solver, modes } => {
            let u0 = sample_initial_condition_1d(seed, solver.nx, *modes);
            let traj = solve_diffusion_reaction(&u0, solver)?;
            let last = traj.last().expect("trajectory has t=0");
            Ok((
                u0.iter().map(|&v| v as f32).collect(),
                last.iter().map(|&v| v as f32).collect(),
            ))
        }
        ProblemConfig::NavierStokes(ns) => {
            let omega0 = sample_grf_2d(&ns.grf.with_seed(seed), ns.solver.n)?;
            let snaps = NavierStokesSolver::new(ns.solver.clone())?.run(&omega0)?;
            let stride = ns.solver.n / ns.resolution;
            let coarse: Vec<Vec<f64>> = snaps
                .iter()
                .map(|s| subsample(s, ns.solver.n, stride))
                .collect();
            let p = ns.resolution * ns.resolution;
            let interleave = |range: std::ops::Range<usize>| -> Vec<f32> {
                (0..p)
                    .flat_map(|j| range.clone().map(move |t| (t, j)))
                    .map(|(t, j)| coarse[t][j] as f32)
                    .collect()
            };
            Ok((
                interleave(0..ns.steps_in),
                interleave(ns.steps_in..ns.steps_in + ns.horizon),
            ))
        }
    }
}

/// Simulates `count` samples of one split.
pub fn build_split(
    config: &ProblemConfig,
    split: Split,
    count: usize,
    seed: u64,
) -> Result<PdeDataset> {
    config.validate()?;
    if count == 0 {
        return Err(Error::invalid(format!(
            "{} split needs at least one sample",
            split.name()
        )));
    }
    let seeds: Vec<u64> = (0..count).map(|i| sample_seed(seed, split, i)).collect();
    let samples = seeds
        .par_iter()
        .map(|&s| simulate(config, s))
        .collect::<Result<Vec<_>>>()?;
    let p = config.points();
    let (cin, cout) = (samples[0].0.len() / p, samples[0].1.len() / p);
    let (mut input, mut target) = (
        Vec::with_capacity(count * p * cin),
        Vec::with_capacity(count * p * cout),
    );
    for (i, t) in samples {
        input.extend(i);
        target.extend(t);
    }
    Ok(PdeDataset {
        meta: DatasetMeta {
            format_version: VERSION,
            solver_version: SOLVER_VERSION.into(),
            problem: config.problem(),
            split,
            seed,
            sample_seeds: seeds,
            config: config.clone(),
        },
        input: Array::new("input", &[count, p, cin], input)?,
        target: Array::new("target", &[count, p, cout], target)?,
        grid: grid_array(config)?,
    })
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.hno", split.name()))
}

/// Writes `train.hno` and `test.hno` under `dir`. Existing files are left
/// alone unless `force` is set.
pub fn generate_dataset(
    config: &ProblemConfig,
    train: usize,
    test: usize,
    seed: u64,
    dir: &Path,
    force: bool,
) -> Result<Vec<PathBuf>> {
    config.validate()?;
    if train == 0 || test == 0 {
        return Err(Error::invalid("sample counts must be positive"));
    }
    let paths = [split_path(dir, Split::Train), split_path(dir, Split::Test)];
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::WouldOverwrite(p.clone()));
        }
    }
    fs::create_dir_all(dir)?;
    for (split, count, path) in [
        (Split::Train, train, &paths[0]),
        (Split::Test, test, &paths[1]),
    ] {
        build_split(config, split, count, seed)?.write(path)?;
    }
    Ok(paths.to_vec())
}
