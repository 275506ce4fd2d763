//! Seeded piecewise-constant scenes with known ground truth, used by the
//! tests, the benches and the `scene` CLI command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::LabelMask;
use crate::simulate::{apply_contamination, generate_mask, ContaminationConfig, ShapeConfig};
use crate::stack::{ImageStack, StackMeta};
use crate::tensor::{BandTensor, Dims};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub frames: usize,
    /// Number of Voronoi cells forming the land cover.
    pub cells: usize,
    /// Relative brightness change between consecutive frames.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            rows: 64,
            cols: 64,
            bands: 3,
            frames: 6,
            cells: 14,
            drift: 0.02,
            seed: 2015,
        }
    }
}

/// Voronoi land cover with per-band cell values in `[0.1, 0.6]`, scaled by
/// `(1 + drift)^k` in frame `k`.
pub fn piecewise_scene(cfg: &SceneConfig) -> Result<ImageStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sites: Vec<(f64, f64)> = (0..cfg.cells.max(1))
        .map(|_| (rng.random_range(0.0..cfg.rows as f64), rng.random_range(0.0..cfg.cols as f64)))
        .collect();
    let values: Vec<Vec<f64>> = (0..cfg.bands)
        .map(|_| sites.iter().map(|_| rng.random_range(0.1..0.6)).collect())
        .collect();
    let cell: Vec<usize> = (0..cfg.rows * cfg.cols)
        .map(|q| {
            let (r, c) = ((q / cfg.cols) as f64, (q % cfg.cols) as f64);
            (0..sites.len())
                .min_by(|&a, &b| {
                    let da = (sites[a].0 - r).powi(2) + (sites[a].1 - c).powi(2);
                    let db = (sites[b].0 - r).powi(2) + (sites[b].1 - c).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap_or(0)
        })
        .collect();
    let dims = Dims::new(cfg.rows, cfg.cols, cfg.frames);
    let bands = values
        .iter()
        .map(|vals| {
            BandTensor::from_fn(dims, |i, j, k| vals[cell[i * cfg.cols + j]] * (1.0 + cfg.drift).powi(k as i32))
        })
        .collect();
    ImageStack::new(bands, StackMeta::indexed(cfg.frames, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub scene: SceneConfig,
    pub coverage: f64,
    pub cloudy_frames: Vec<usize>,
    pub shape: ShapeConfig,
    pub contamination: ContaminationConfig,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            scene: SceneConfig::default(),
            coverage: 0.10,
            cloudy_frames: vec![1, 4],
            shape: ShapeConfig::default(),
            contamination: ContaminationConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub clean: ImageStack,
    pub contaminated: ImageStack,
    pub truth: Vec<LabelMask>,
}

/// Per-frame ground-truth masks: `coverage` on each cloudy frame (seeded by
/// `seed + frame`), all-Clear elsewhere.
pub fn contamination_masks(
    dims: Dims,
    cloudy_frames: &[usize],
    coverage: f64,
    seed: u64,
    shape: &ShapeConfig,
) -> Result<Vec<LabelMask>> {
    (0..dims.t)
        .map(|k| {
            if cloudy_frames.contains(&k) {
                generate_mask(k, dims.m, dims.n, coverage, seed.wrapping_add(k as u64), shape)
            } else {
                Ok(LabelMask::clear(k, dims.m, dims.n))
            }
        })
        .collect()
}

pub fn desk_fixture(cfg: &FixtureConfig) -> Result<Fixture> {
    let clean = piecewise_scene(&cfg.scene)?;
    let truth = contamination_masks(clean.dims(), &cfg.cloudy_frames, cfg.coverage, cfg.scene.seed, &cfg.shape)?;
    let contaminated = apply_contamination(&clean, &truth, &cfg.contamination)?;
    Ok(Fixture {
        clean,
        contaminated,
        truth,
    })
}
