//! Simulation of realistic change-detection pairs from a single reference
//! hyperspectral image.
//!
//! The reference is unmixed into endmembers and abundances, the abundances
//! are altered inside chosen regions, and the before/after latent images are
//! degraded spectrally and spatially into the observed pair.

use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{ChangeMask, Grid, ImageCube};
use crate::operators::{DegradationModel, NoiseModel, Resolution, SpatialDegradation};
use crate::unmix::{self, UnmixResult};

/// A set of HR pixel indices, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pixels: Vec<usize>,
}

impl Region {
    pub fn new(grid: Grid, mut pixels: Vec<usize>) -> Result<Self> {
        if let Some(&p) = pixels.iter().find(|&&p| p >= grid.len()) {
            return Err(Error::InvalidParameter(format!("region pixel {p} outside grid {grid}")));
        }
        pixels.sort_unstable();
        pixels.dedup();
        Ok(Region { pixels })
    }

    /// Axis-aligned rectangle with top-left corner `(top, left)`.
    pub fn rect(grid: Grid, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > grid.rows || left + width > grid.cols {
            return Err(Error::InvalidParameter(format!(
                "rectangle {height}x{width} at ({top}, {left}) exceeds grid {grid}"
            )));
        }
        let pixels = (top..top + height)
            .flat_map(|i| (left..left + width).map(move |j| grid.index(i, j)))
            .collect();
        Region::new(grid, pixels)
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    /// Inclusive bounding box `(top, left, bottom, right)`.
    pub fn bounds(&self, grid: Grid) -> (usize, usize, usize, usize) {
        let mut b = (usize::MAX, usize::MAX, 0, 0);
        for &p in &self.pixels {
            let (i, j) = grid.coords(p);
            b = (b.0.min(i), b.1.min(j), b.2.max(i), b.3.max(j));
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeRule {
    /// The endmember most present in the region disappears.
    ZeroAbundance,
    /// Every region pixel takes the abundances of one random pixel.
    SameAbundance,
    /// The region is overwritten by a same-shape patch copied from elsewhere.
    BlockAbundance,
}

impl ChangeRule {
    pub const ALL: [ChangeRule; 3] = [
        ChangeRule::ZeroAbundance,
        ChangeRule::SameAbundance,
        ChangeRule::BlockAbundance,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ChangeRule::ZeroAbundance => "zero",
            ChangeRule::SameAbundance => "same",
            ChangeRule::BlockAbundance => "block",
        }
    }
}

impl std::str::FromStr for ChangeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" | "zero_abundance" => Ok(ChangeRule::ZeroAbundance),
            "same" | "same_abundance" => Ok(ChangeRule::SameAbundance),
            "block" | "block_abundance" => Ok(ChangeRule::BlockAbundance),
            other => Err(Error::InvalidParameter(format!("unknown change rule `{other}`"))),
        }
    }
}

/// Regions and their rules, applied in list order (later regions overwrite
/// earlier ones where they overlap).
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSpec {
    pub regions: Vec<(Region, ChangeRule)>,
    pub seed: u64,
}

impl ChangeSpec {
    pub fn empty(seed: u64) -> Self {
        ChangeSpec {
            regions: Vec::new(),
            seed,
        }
    }
}

/// Rectangles with side lengths drawn uniformly from `sides`, placed
/// uniformly inside the grid.
pub fn random_rect_region(grid: Grid, sides: RangeInclusive<usize>, rng: &mut impl Rng) -> Result<Region> {
    let (lo, hi) = (*sides.start(), *sides.end());
    if lo == 0 || lo > hi || hi > grid.rows.min(grid.cols) {
        return Err(Error::InvalidParameter(format!(
            "region side range {lo}..={hi} invalid for grid {grid}"
        )));
    }
    let h = rng.random_range(lo..=hi);
    let w = rng.random_range(lo..=hi);
    let top = rng.random_range(0..=grid.rows - h);
    let left = rng.random_range(0..=grid.cols - w);
    Region::rect(grid, top, left, h, w)
}

/// Random rectangle with a uniformly drawn rule.
pub fn random_change(grid: Grid, sides: RangeInclusive<usize>, rng: &mut impl Rng) -> Result<(Region, ChangeRule)> {
    let region = random_rect_region(grid, sides, rng)?;
    let rule = ChangeRule::ALL[rng.random_range(0..ChangeRule::ALL.len())];
    Ok((region, rule))
}

/// Abundances after applying `rule` inside `region`. Endmembers are never
/// altered by the implemented rules.
pub fn apply_change_rule(
    abundances: &DMatrix<f64>,
    grid: Grid,
    region: &Region,
    rule: ChangeRule,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    if region.is_empty() {
        return Err(Error::InvalidParameter("change region is empty".into()));
    }
    if abundances.ncols() != grid.len() {
        return Err(Error::Shape(format!(
            "{} abundance columns for grid {grid}",
            abundances.ncols()
        )));
    }
    match rule {
        ChangeRule::ZeroAbundance => zero_abundance(abundances, region),
        ChangeRule::SameAbundance => {
            let src = rng.random_range(0..grid.len());
            let mut out = abundances.clone();
            let column = abundances.column(src).into_owned();
            for &p in region.pixels() {
                out.set_column(p, &column);
            }
            Ok(out)
        }
        ChangeRule::BlockAbundance => {
            let (top, left, bottom, right) = region.bounds(grid);
            let (h, w) = (bottom - top + 1, right - left + 1);
            let src_top = rng.random_range(0..=grid.rows - h);
            let src_left = rng.random_range(0..=grid.cols - w);
            let offset = (src_top as isize - top as isize, src_left as isize - left as isize);
            block_copy(abundances, grid, region, offset)
        }
    }
}

/// Copies the abundances found at `region + offset` onto `region`.
pub fn block_copy(
    abundances: &DMatrix<f64>,
    grid: Grid,
    region: &Region,
    offset: (isize, isize),
) -> Result<DMatrix<f64>> {
    let mut out = abundances.clone();
    for &p in region.pixels() {
        let (i, j) = grid.coords(p);
        let (si, sj) = (i as isize + offset.0, j as isize + offset.1);
        if si < 0 || sj < 0 || si as usize >= grid.rows || sj as usize >= grid.cols {
            return Err(Error::InvalidParameter(format!(
                "block source offset {offset:?} leaves the grid"
            )));
        }
        out.set_column(p, &abundances.column(grid.index(si as usize, sj as usize)));
    }
    Ok(out)
}

fn zero_abundance(abundances: &DMatrix<f64>, region: &Region) -> Result<DMatrix<f64>> {
    let k = abundances.nrows();
    if k < 2 {
        return Err(Error::InvalidParameter(
            "zero-abundance rule needs at least two endmembers".into(),
        ));
    }
    let dominant = (0..k)
        .max_by(|&a, &b| {
            let sa: f64 = region.pixels().iter().map(|&p| abundances[(a, p)]).sum();
            let sb: f64 = region.pixels().iter().map(|&p| abundances[(b, p)]).sum();
            // ties go to the lowest index
            sa.total_cmp(&sb).then(b.cmp(&a))
        })
        .expect("k >= 2");
    let mut out = abundances.clone();
    for &p in region.pixels() {
        out[(dominant, p)] = 0.0;
        let rest: f64 = out.column(p).sum();
        if rest > 1e-12 {
            out.column_mut(p).unscale_mut(rest);
        } else {
            // the dominant endmember was pure here
            let w = 1.0 / (k - 1) as f64;
            for e in 0..k {
                out[(e, p)] = if e == dominant { 0.0 } else { w };
            }
        }
    }
    Ok(out)
}

/// Binary mask set on the union of the regions.
pub fn build_mask(grid: Grid, regions: &[Region]) -> ChangeMask {
    let mut mask = ChangeMask::zeros(grid);
    for r in regions {
        for &p in r.pixels() {
            mask.set(p, true);
        }
    }
    mask
}

/// LR mask: a low-resolution pixel is changed when any high-resolution
/// pixel of its block is.
pub fn degrade_mask(d_hr: &ChangeMask, spatial: &SpatialDegradation) -> Result<ChangeMask> {
    let hr = d_hr.grid();
    let lr = spatial.lr_grid(hr)?;
    let (dr, dc) = spatial.factors();
    let mut out = ChangeMask::zeros(lr);
    for p in 0..hr.len() {
        if d_hr.get(p) {
            let (i, j) = hr.coords(p);
            out.set(lr.index(i / dr, j / dc), true);
        }
    }
    Ok(out)
}

/// Which acquisition feeds which degradation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalConfig {
    /// HR observation from the first date, LR observation from the second.
    One,
    /// HR observation from the second date, LR observation from the first.
    Two,
}

impl TemporalConfig {
    pub fn number(&self) -> u8 {
        match self {
            TemporalConfig::One => 1,
            TemporalConfig::Two => 2,
        }
    }
}

impl std::str::FromStr for TemporalConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(TemporalConfig::One),
            "2" => Ok(TemporalConfig::Two),
            other => Err(Error::InvalidParameter(format!("temporal configuration `{other}`"))),
        }
    }
}

/// Unmixed reference scene, reusable across many simulated pairs.
#[derive(Debug, Clone)]
pub struct LatentScene {
    pub unmixing: UnmixResult,
    /// `X^{t1} = M A`.
    pub x_t1: ImageCube,
}

impl LatentScene {
    /// Unmixes `x_ref`; `k = None` estimates the number of endmembers.
    pub fn from_reference(x_ref: &ImageCube, k: Option<usize>, seed: u64) -> Result<Self> {
        let unmixing = unmix::unmix(x_ref, k, seed)?;
        let x_t1 = unmix::reconstruct(&unmixing.endmembers, &unmixing.abundances, x_ref.grid())?;
        Ok(LatentScene { unmixing, x_t1 })
    }

    pub fn grid(&self) -> Grid {
        self.x_t1.grid()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair {
    pub y_hr: ImageCube,
    pub y_lr: ImageCube,
    pub d_hr: ChangeMask,
    pub d_lr: ChangeMask,
    pub x_t1: ImageCube,
    pub x_t2: ImageCube,
    pub config: TemporalConfig,
}

/// Builds the changed latent image and the observed pair from an unmixed
/// scene.
pub fn simulate_from_scene(
    scene: &LatentScene,
    spec: &ChangeSpec,
    model: &DegradationModel,
    config: TemporalConfig,
    noise: &NoiseModel,
) -> Result<SimulatedPair> {
    let grid = scene.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = scene.unmixing.abundances.clone();
    for (region, rule) in &spec.regions {
        a = apply_change_rule(&a, grid, region, *rule, &mut rng)?;
    }
    let x_t2 = unmix::reconstruct(&scene.unmixing.endmembers, &a, grid)?;
    let x_t1 = scene.x_t1.clone();
    let (spectral_src, spatial_src) = match config {
        TemporalConfig::One => (&x_t1, &x_t2),
        TemporalConfig::Two => (&x_t2, &x_t1),
    };
    let y_hr = noise.add_noise(&model.spectral(spectral_src)?, Resolution::High)?;
    let y_lr = noise.add_noise(&model.spatial(spatial_src)?, Resolution::Low)?;
    let regions: Vec<Region> = spec.regions.iter().map(|(r, _)| r.clone()).collect();
    let d_hr = build_mask(grid, &regions);
    let d_lr = degrade_mask(&d_hr, &model.spatial)?;
    Ok(SimulatedPair {
        y_hr,
        y_lr,
        d_hr,
        d_lr,
        x_t1,
        x_t2,
        config,
    })
}

/// Unmixes `x_ref` (with `k` endmembers, or an estimated count) and
/// simulates one observed pair.
pub fn simulate_pair(
    x_ref: &ImageCube,
    k: Option<usize>,
    spec: &ChangeSpec,
    model: &DegradationModel,
    config: TemporalConfig,
    noise: &NoiseModel,
) -> Result<SimulatedPair> {
    let scene = LatentScene::from_reference(x_ref, k, spec.seed)?;
    simulate_from_scene(&scene, spec, model, config, noise)
}
