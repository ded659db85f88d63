//! ROC curves, their summary scores, and the Monte-Carlo experiment driver.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::detect::{Decision, DetectorConfig, IrMadConfig, Method};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, DEFAULT_LAMBDA};
use crate::image::{ChangeEnergyMap, ChangeMask, ImageCube};
use crate::io;
use crate::operators::{
    landsat_like_groups, make_ms_response, make_pan_response, DegradationModel, NoiseModel,
    SpatialDegradation, SpectralResponse,
};
use crate::pipeline::{self, FusionSettings};
use crate::simulate::{self, ChangeRule, ChangeSpec, LatentScene, TemporalConfig};
use crate::synthetic::SyntheticScene;

pub const DEFAULT_PFA_GRID: usize = 512;

/// Empirical ROC curve: `(pfa, pd)` points from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    points: Vec<(f64, f64)>,
    auc: f64,
    norm_dist: f64,
}

impl RocCurve {
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |why: &str| Err(Error::InvalidParameter(format!("invalid ROC curve: {why}")));
        if points.len() < 2 {
            return bad("fewer than two points");
        }
        if points.first() != Some(&(0.0, 0.0)) || points.last() != Some(&(1.0, 1.0)) {
            return bad("must start at (0, 0) and end at (1, 1)");
        }
        if points.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return bad("points are not monotone");
        }
        let auc = auc(&points);
        let norm_dist = norm_dist(&points);
        Ok(RocCurve {
            points,
            auc,
            norm_dist,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn auc(&self) -> f64 {
        self.auc
    }

    pub fn norm_dist(&self) -> f64 {
        self.norm_dist
    }

    /// Detection probability at `pfa`, linearly interpolated. On a vertical
    /// segment the upper end is taken.
    pub fn pd_at(&self, pfa: f64) -> f64 {
        let pfa = pfa.clamp(0.0, 1.0);
        let k = self.points.partition_point(|&(x, _)| x <= pfa).saturating_sub(1);
        if k + 1 >= self.points.len() {
            return self.points[k].1;
        }
        let ((x0, y0), (x1, y1)) = (self.points[k], self.points[k + 1]);
        y0 + (y1 - y0) * (pfa - x0) / (x1 - x0)
    }

    /// Two-column `pfa pd` text.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# pfa pd\n");
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x:.10} {y:.10}");
        }
        s
    }
}

/// Sweeps the threshold over every distinct energy value; a pixel is
/// declared changed when its energy is at least the threshold.
pub fn roc(v: &ChangeEnergyMap, truth: &ChangeMask) -> Result<RocCurve> {
    if v.grid() != truth.grid() {
        return Err(Error::Shape(format!(
            "energy map on {} but truth on {}",
            v.grid(),
            truth.grid()
        )));
    }
    let positives = truth.count_ones();
    let negatives = truth.grid().len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidMask(
            "ground truth needs both changed and unchanged pixels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..v.grid().len()).collect();
    order.sort_by(|&a, &b| v.get(b).total_cmp(&v.get(a)));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (n, &p) in order.iter().enumerate() {
        if truth.get(p) {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(n + 1).is_none_or(|&q| v.get(q) != v.get(p));
        if last_of_tie {
            points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        }
    }
    RocCurve::from_points(points)
}

/// Trapezoidal area under the curve.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Distance from the no-detection point `(1, 0)` to the crossing of the
/// curve with `pd = 1 - pfa`, scaled so that an ideal detector scores 1.
pub fn norm_dist(points: &[(f64, f64)]) -> f64 {
    let h = |(x, y): (f64, f64)| x + y - 1.0;
    let mut cross = *points.last().unwrap_or(&(1.0, 1.0));
    for w in points.windows(2) {
        let (h0, h1) = (h(w[0]), h(w[1]));
        if h0 <= 0.0 && h1 >= 0.0 {
            let t = if h1 > h0 { -h0 / (h1 - h0) } else { 0.0 };
            cross = (
                w[0].0 + t * (w[1].0 - w[0].0),
                w[0].1 + t * (w[1].1 - w[0].1),
            );
            break;
        }
    }
    ((1.0 - cross.0).powi(2) + cross.1.powi(2)).sqrt() / 2f64.sqrt()
}

/// Vertical average: mean detection probability on `grid_len` equally
/// spaced false-alarm values in `[0, 1]`.
pub fn average_curves(curves: &[RocCurve], grid_len: usize) -> Result<RocCurve> {
    if curves.is_empty() {
        return Err(Error::InvalidParameter("no curves to average".into()));
    }
    if grid_len < 2 {
        return Err(Error::InvalidParameter(format!(
            "averaging grid needs at least 2 points, got {grid_len}"
        )));
    }
    let mut points: Vec<(f64, f64)> = (0..grid_len)
        .map(|g| {
            let pfa = g as f64 / (grid_len - 1) as f64;
            let pd = curves.iter().map(|c| c.pd_at(pfa)).sum::<f64>() / curves.len() as f64;
            (pfa, pd)
        })
        .collect();
    // the curve must still leave from the origin
    if points[0].1 > 0.0 {
        points.insert(0, (0.0, 0.0));
    }
    let last = points.len() - 1;
    points[last].1 = 1.0;
    RocCurve::from_points(points)
}

/// Which observations feed the HR image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationMode {
    /// Single band: mean of the first `bands` reference bands.
    Pan { bands: Option<usize> },
    /// Four LANDSAT-like bands.
    Ms,
}

impl ObservationMode {
    pub fn label(&self) -> &'static str {
        match self {
            ObservationMode::Pan { .. } => "pan",
            ObservationMode::Ms => "ms",
        }
    }

    /// Spectral response on a reference cube; PAN defaults to the first half
    /// of the bands.
    pub fn response(&self, x_ref: &ImageCube) -> Result<SpectralResponse> {
        match *self {
            ObservationMode::Pan { bands } => {
                make_pan_response(x_ref.bands(), bands.unwrap_or((x_ref.bands() / 2).max(1)))
            }
            ObservationMode::Ms => make_ms_response(
                x_ref.bands(),
                &landsat_like_groups(x_ref.bands(), x_ref.band_centers())?,
            ),
        }
    }
}

/// The four compared change maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapType {
    Hr,
    Lr,
    Alr,
    Wc,
}

impl MapType {
    pub const ALL: [MapType; 4] = [MapType::Hr, MapType::Lr, MapType::Alr, MapType::Wc];

    pub fn label(&self) -> &'static str {
        match self {
            MapType::Hr => "HR",
            MapType::Lr => "LR",
            MapType::Alr => "aLR",
            MapType::Wc => "WC",
        }
    }
}

impl std::fmt::Display for MapType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSource {
    Synthetic(SyntheticScene),
    File(PathBuf),
}

/// Everything an experiment run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub reference: ReferenceSource,
    /// `None` estimates the count from the reference.
    pub endmembers: Option<usize>,
    /// One trial per region; each trial is simulated under every config.
    pub regions: usize,
    pub region_sides: RangeInclusive<usize>,
    pub rules: Vec<ChangeRule>,
    pub configs: Vec<TemporalConfig>,
    pub mode: ObservationMode,
    pub kernel_size: usize,
    pub kernel_sigma: f64,
    pub factor: usize,
    pub lambda: f64,
    pub fusion: FusionConfig,
    pub detectors: Vec<Method>,
    pub irmad: IrMadConfig,
    pub pfa_grid: usize,
    /// Per-band SNR of the added noise; `None` is noiseless.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Manifest {
    /// Desk-scale defaults on a seeded 60×60×30 synthetic scene.
    pub fn synthetic_default(seed: u64) -> Self {
        Manifest {
            reference: ReferenceSource::Synthetic(SyntheticScene::new(60, 60, 30, 5, seed)),
            endmembers: Some(5),
            regions: 10,
            region_sides: 3..=15,
            rules: ChangeRule::ALL.to_vec(),
            configs: vec![TemporalConfig::One, TemporalConfig::Two],
            mode: ObservationMode::Ms,
            kernel_size: 5,
            kernel_sigma: 1.0,
            factor: 5,
            lambda: DEFAULT_LAMBDA,
            fusion: FusionConfig::default(),
            detectors: vec![Method::Cva, Method::Scva { window: 7 }, Method::Mad, Method::IrMad],
            irmad: IrMadConfig::default(),
            pfa_grid: DEFAULT_PFA_GRID,
            snr_db: None,
            seed,
        }
    }

    /// Reads a key=value manifest; relative reference paths are resolved
    /// against the manifest's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let entries = io::parse_key_values(std::io::BufReader::new(file))?;
        let mut m = Self::from_entries(&entries)?;
        if let ReferenceSource::File(p) = &m.reference {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                m.reference = ReferenceSource::File(base.join(p));
            }
        }
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&io::parse_key_values(text.as_bytes())?)
    }

    /// Unknown keys are rejected so typos do not silently fall back to
    /// defaults.
    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        let seed = match entries.iter().find(|(k, _)| k == "seed") {
            Some((_, v)) => parse_value::<u64>("seed", v)?,
            None => 0,
        };
        let mut m = Manifest::synthetic_default(seed);
        let mut synthetic = SyntheticScene::new(60, 60, 30, 5, seed);
        let mut reference_file = None;
        for (key, value) in entries {
            let v = value.as_str();
            match key.as_str() {
                "seed" => {}
                "reference" => {
                    reference_file = (v != "synthetic").then(|| PathBuf::from(v));
                }
                "synthetic_rows" => synthetic.rows = parse_value(key, v)?,
                "synthetic_cols" => synthetic.cols = parse_value(key, v)?,
                "synthetic_bands" => synthetic.bands = parse_value(key, v)?,
                "synthetic_endmembers" => synthetic.endmembers = parse_value(key, v)?,
                "synthetic_smoothness" => synthetic.smoothness = parse_value(key, v)?,
                "synthetic_sharpness" => synthetic.sharpness = parse_value(key, v)?,
                "synthetic_seed" => synthetic.seed = parse_value(key, v)?,
                "endmembers" => {
                    m.endmembers = if v == "auto" { None } else { Some(parse_value(key, v)?) }
                }
                "regions" => m.regions = parse_value(key, v)?,
                "region_min" => m.region_sides = parse_value(key, v)?..=*m.region_sides.end(),
                "region_max" => m.region_sides = *m.region_sides.start()..=parse_value(key, v)?,
                "rules" => m.rules = parse_list(v)?,
                "configs" => m.configs = parse_list(v)?,
                "mode" => {
                    m.mode = match v {
                        "ms" => ObservationMode::Ms,
                        "pan" => ObservationMode::Pan { bands: None },
                        other => {
                            return Err(Error::InvalidParameter(format!("unknown mode `{other}`")))
                        }
                    }
                }
                "pan_bands" => {}
                "kernel_size" => m.kernel_size = parse_value(key, v)?,
                "kernel_sigma" => m.kernel_sigma = parse_value(key, v)?,
                "factor" => m.factor = parse_value(key, v)?,
                "lambda" => m.lambda = parse_value(key, v)?,
                "fusion_max_iter" => m.fusion.max_iter = parse_value(key, v)?,
                "fusion_tol" => m.fusion.tol = parse_value(key, v)?,
                "detectors" => m.detectors = parse_list(v)?,
                "irmad_max_iter" => m.irmad.max_iter = parse_value(key, v)?,
                "irmad_tol" => m.irmad.tol = parse_value(key, v)?,
                "pfa_grid" => m.pfa_grid = parse_value(key, v)?,
                "snr_db" => m.snr_db = if v == "none" { None } else { Some(parse_value(key, v)?) },
                other => {
                    return Err(Error::Header(format!("unknown manifest key `{other}`")));
                }
            }
        }
        if let Some((_, v)) = entries.iter().find(|(k, _)| k == "pan_bands") {
            match &mut m.mode {
                ObservationMode::Pan { bands } => {
                    *bands = if v == "auto" { None } else { Some(parse_value("pan_bands", v)?) }
                }
                ObservationMode::Ms => {
                    return Err(Error::InvalidParameter("pan_bands given with mode = ms".into()))
                }
            }
        }
        m.reference = match reference_file {
            Some(p) => ReferenceSource::File(p),
            None => ReferenceSource::Synthetic(synthetic),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn to_entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| e.push((k.to_string(), v));
        put("seed", self.seed.to_string());
        match &self.reference {
            ReferenceSource::File(p) => put("reference", p.display().to_string()),
            ReferenceSource::Synthetic(s) => {
                put("reference", "synthetic".into());
                put("synthetic_rows", s.rows.to_string());
                put("synthetic_cols", s.cols.to_string());
                put("synthetic_bands", s.bands.to_string());
                put("synthetic_endmembers", s.endmembers.to_string());
                put("synthetic_smoothness", s.smoothness.to_string());
                put("synthetic_sharpness", s.sharpness.to_string());
                put("synthetic_seed", s.seed.to_string());
            }
        }
        put(
            "endmembers",
            self.endmembers.map_or("auto".into(), |k| k.to_string()),
        );
        put("regions", self.regions.to_string());
        put("region_min", self.region_sides.start().to_string());
        put("region_max", self.region_sides.end().to_string());
        put("rules", join(self.rules.iter().map(|r| r.label().to_string())));
        put("configs", join(self.configs.iter().map(|c| c.number().to_string())));
        put("mode", self.mode.label().into());
        if let ObservationMode::Pan { bands } = self.mode {
            put("pan_bands", bands.map_or("auto".into(), |b| b.to_string()));
        }
        put("kernel_size", self.kernel_size.to_string());
        put("kernel_sigma", self.kernel_sigma.to_string());
        put("factor", self.factor.to_string());
        put("lambda", self.lambda.to_string());
        put("fusion_max_iter", self.fusion.max_iter.to_string());
        put("fusion_tol", self.fusion.tol.to_string());
        put("detectors", join(self.detectors.iter().map(|d| d.label())));
        put("irmad_max_iter", self.irmad.max_iter.to_string());
        put("irmad_tol", self.irmad.tol.to_string());
        put("pfa_grid", self.pfa_grid.to_string());
        put("snr_db", self.snr_db.map_or("none".into(), |s| s.to_string()));
        e
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_key_values(path, &self.to_entries())
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidParameter(msg));
        if self.regions == 0 {
            return invalid("at least one region is needed".into());
        }
        if self.rules.is_empty() || self.configs.is_empty() || self.detectors.is_empty() {
            return invalid("rules, configs and detectors must be nonempty".into());
        }
        if *self.region_sides.start() == 0 || self.region_sides.start() > self.region_sides.end() {
            return invalid(format!("region sides {:?}", self.region_sides));
        }
        if self.factor == 0 || self.kernel_size.is_multiple_of(2) {
            return invalid(format!(
                "factor {} / kernel size {} invalid",
                self.factor, self.kernel_size
            ));
        }
        if !(self.lambda > 0.0) {
            return invalid(format!("regularization weight {} must be positive", self.lambda));
        }
        if let ObservationMode::Pan { .. } = self.mode {
            if let Some(d) = self.detectors.iter().find(|d| d.requires_multiband()) {
                return invalid(format!("detector {d} needs multi-band images; the HR image is PAN"));
            }
        }
        for d in &self.detectors {
            DetectorConfig::new(*d, Decision::Pfa(0.05))?;
        }
        Ok(())
    }

    pub fn spatial(&self) -> Result<SpatialDegradation> {
        SpatialDegradation::gaussian(self.kernel_size, self.kernel_sigma, self.factor)
    }

    pub fn load_reference(&self) -> Result<ImageCube> {
        match &self.reference {
            ReferenceSource::Synthetic(s) => s.generate(),
            ReferenceSource::File(p) => io::read_cube(p, io::CubeFormat::from_path(p)),
        }
    }

    /// Response and blur of the manifest, with noise variances matched to
    /// `snr_db` on `latent` (unit variances when noiseless).
    pub fn degradation_model(&self, latent: &ImageCube) -> Result<(DegradationModel, NoiseModel)> {
        let response = self.mode.response(latent)?;
        let spatial = self.spatial()?;
        let unit = DegradationModel::with_unit_variances(response.clone(), spatial.clone());
        match self.snr_db {
            None => Ok((
                unit,
                NoiseModel::noiseless(response.output_bands(), response.input_bands()),
            )),
            Some(snr) => {
                let lambda_hr = NoiseModel::variances_for_snr(&unit.spectral(latent)?, snr);
                let lambda_lr = NoiseModel::variances_for_snr(&unit.spatial(latent)?, snr);
                let model = DegradationModel::new(response, spatial, lambda_hr.clone(), lambda_lr.clone())?;
                Ok((model, NoiseModel::new(lambda_hr, lambda_lr, self.seed)?))
            }
        }
    }

    /// Change specification of trial `trial`: one rectangle with a rule drawn
    /// from the manifest's list.
    pub fn trial_spec(&self, grid: crate::image::Grid, trial: usize) -> Result<ChangeSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64 + 1);
        let region = simulate::random_rect_region(grid, self.region_sides.clone(), &mut rng)?;
        let rule = self.rules[rng.random_range(0..self.rules.len())];
        Ok(ChangeSpec {
            regions: vec![(region, rule)],
            seed: rng.random(),
        })
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Header(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect()
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub detector: Method,
    pub map: MapType,
    /// Scores of the averaged curve.
    pub auc: f64,
    pub norm_dist: f64,
    /// Pairs that contributed.
    pub pairs: usize,
    pub curve: RocCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub config: TemporalConfig,
    pub detector: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<TrialFailure>,
    pub pairs: usize,
    pub endmembers: usize,
}

impl ExperimentReport {
    pub fn row(&self, detector: Method, map: MapType) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.detector == detector && r.map == map)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("# HR maps scored against the HR ground truth; LR, aLR and WC maps against the LR ground truth\n");
        let _ = writeln!(s, "# pairs={} endmembers={}", self.pairs, self.endmembers);
        s.push_str("detector,map_type,auc,norm_dist,pairs\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.10},{:.10},{}",
                r.detector, r.map, r.auc, r.norm_dist, r.pairs
            );
        }
        for f in &self.failures {
            let det = f.detector.map_or("all".to_string(), |d| d.label());
            let _ = writeln!(
                s,
                "# failure trial={} config={} detector={}: {}",
                f.trial,
                f.config.number(),
                det,
                f.message.replace('\n', " ")
            );
        }
        s
    }

    /// One `<detector>_<map>.txt` file per row.
    pub fn write_curves(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &self.rows {
            let path = dir.join(format!("{}_{}.txt", r.detector, r.map));
            std::fs::write(&path, r.curve.to_text()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

type PairCurves = Vec<(Method, std::result::Result<[RocCurve; 4], String>)>;

/// Simulates every (trial, config) pair, fuses once per pair, scores every
/// detector on the four map types, and averages the curves.
pub fn run_experiment(manifest: &Manifest) -> Result<ExperimentReport> {
    manifest.validate()?;
    let x_ref = manifest.load_reference()?;
    let scene = LatentScene::from_reference(&x_ref, manifest.endmembers, manifest.seed)?;
    let (model, noise) = manifest.degradation_model(&scene.x_t1)?;
    let grid = scene.grid();
    model.spatial.lr_grid(grid)?;
    log::info!(
        "experiment: {} trials x {} configs on {} with {} endmembers",
        manifest.regions,
        manifest.configs.len(),
        grid,
        scene.unmixing.k()
    );

    let jobs: Vec<(usize, TemporalConfig)> = (0..manifest.regions)
        .flat_map(|t| manifest.configs.iter().map(move |&c| (t, c)))
        .collect();
    let outcomes: Vec<std::result::Result<PairCurves, String>> = jobs
        .par_iter()
        .map(|&(trial, config)| {
            run_pair(manifest, &scene, &model, &noise, trial, config).map_err(|e| e.to_string())
        })
        .collect();

    let mut failures = Vec::new();
    let mut per_row: Vec<Vec<RocCurve>> = vec![Vec::new(); manifest.detectors.len() * 4];
    for (&(trial, config), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Err(message) => failures.push(TrialFailure {
                trial,
                config,
                detector: None,
                message,
            }),
            Ok(curves) => {
                for (d, (method, result)) in curves.into_iter().enumerate() {
                    match result {
                        Ok(four) => {
                            for (m, c) in four.into_iter().enumerate() {
                                per_row[d * 4 + m].push(c);
                            }
                        }
                        Err(message) => failures.push(TrialFailure {
                            trial,
                            config,
                            detector: Some(method),
                            message,
                        }),
                    }
                }
            }
        }
    }
    for f in &failures {
        log::warn!("trial {} config {} failed: {}", f.trial, f.config.number(), f.message);
    }

    let mut rows = Vec::new();
    for (d, &detector) in manifest.detectors.iter().enumerate() {
        for (m, &map) in MapType::ALL.iter().enumerate() {
            let curves = &per_row[d * 4 + m];
            if curves.is_empty() {
                continue;
            }
            let curve = average_curves(curves, manifest.pfa_grid)?;
            rows.push(ReportRow {
                detector,
                map,
                auc: curve.auc(),
                norm_dist: curve.norm_dist(),
                pairs: curves.len(),
                curve,
            });
        }
    }
    Ok(ExperimentReport {
        rows,
        failures,
        pairs: jobs.len(),
        endmembers: scene.unmixing.k(),
    })
}

fn run_pair(
    manifest: &Manifest,
    scene: &LatentScene,
    model: &DegradationModel,
    noise: &NoiseModel,
    trial: usize,
    config: TemporalConfig,
) -> Result<PairCurves> {
    let spec = manifest.trial_spec(scene.grid(), trial)?;
    let noise = NoiseModel {
        seed: noise.seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ config.number() as u64,
        ..noise.clone()
    };
    let pair = simulate::simulate_from_scene(scene, &spec, model, config, &noise)
        .map_err(Error::in_stage("simulation"))?;
    let settings = FusionSettings {
        lambda: manifest.lambda,
        solver: manifest.fusion,
        prior_mean: None,
    };
    let fused = pipeline::fuse_observations(&pair.y_hr, &pair.y_lr, model, &settings)
        .map_err(Error::in_stage("fusion"))?;
    let (y_hr_hat, y_lr_hat) =
        pipeline::predict(&fused.x_hat, model).map_err(Error::in_stage("prediction"))?;
    let (wc_a, wc_b) = pipeline::worst_case_pair(&pair.y_hr, &pair.y_lr, model)?;

    Ok(manifest
        .detectors
        .iter()
        .map(|&method| {
            let detector = DetectorConfig {
                method,
                decision: Decision::Pfa(0.05),
                irmad: manifest.irmad,
            };
            let curves = (|| -> Result<[RocCurve; 4]> {
                let (v_hr, v_lr) =
                    pipeline::detect_pair(&pair.y_hr, &pair.y_lr, &y_hr_hat, &y_lr_hat, &detector)?;
                let v_alr = pipeline::alr_energy(&v_hr, model)?;
                let v_wc = detector.energy(&wc_a, &wc_b)?;
                Ok([
                    roc(&v_hr, &pair.d_hr)?,
                    roc(&v_lr, &pair.d_lr)?,
                    roc(&v_alr, &pair.d_lr)?,
                    roc(&v_wc, &pair.d_lr)?,
                ])
            })();
            (method, curves.map_err(|e| e.to_string()))
        })
        .collect())
}
