use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mrcd_core::detect::{Decision, DetectorConfig, Method};
use mrcd_core::evaluate::{run_experiment, Manifest, ObservationMode, ReferenceSource};
use mrcd_core::fusion::{FusionConfig, DEFAULT_LAMBDA};
use mrcd_core::io::{self, CubeFormat};
use mrcd_core::operators::{DegradationModel, Kernel, SpatialDegradation, SpectralResponse};
use mrcd_core::pipeline::{self, FusionSettings};
use mrcd_core::simulate::{self, LatentScene};
use mrcd_core::ImageCube;

#[derive(Parser)]
#[command(name = "mrcd", version, about = "Change detection between images of different spatial and spectral resolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse an HR and an LR observation into a latent image estimate.
    Fuse(FuseArgs),
    /// Compare two same-resolution images.
    Detect(DetectArgs),
    /// Simulate observed pairs with known changes from a reference cube.
    Simulate(SimulateArgs),
    /// Full fusion, prediction and detection on an observed pair.
    Run(RunArgs),
    /// Monte-Carlo ROC experiment described by a manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct KernelArgs {
    /// `gauss<N>` for an N×N Gaussian, or a text matrix file.
    #[arg(long, default_value = "gauss5")]
    kernel: String,
    /// Standard deviation of a `gauss<N>` kernel.
    #[arg(long, default_value_t = 1.0)]
    kernel_sigma: f64,
    /// Decimation factor in both directions.
    #[arg(long, default_value_t = 5)]
    factor: usize,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    hr: PathBuf,
    #[arg(long)]
    lr: PathBuf,
    /// Spectral response as a text matrix, one row per HR band.
    #[arg(long)]
    response: PathBuf,
    #[command(flatten)]
    spatial: KernelArgs,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = FusionConfig::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = FusionConfig::default().tol)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MethodArgs {
    /// cva, scva, mad or irmad (`scva7` also accepted).
    #[arg(long, default_value = "cva")]
    method: String,
    /// sCVA window side.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pfa: f64,
}

impl MethodArgs {
    fn detector(&self) -> Result<DetectorConfig> {
        let method = match (self.method.parse::<Method>(), self.window) {
            (_, Some(window)) if self.method.starts_with("scva") => Method::Scva { window },
            (_, Some(_)) => bail!("--window only applies to scva"),
            (Ok(m), None) => m,
            (Err(_), None) if self.method == "scva" => Method::Scva { window: 7 },
            (Err(e), None) => return Err(e.into()),
        };
        Ok(DetectorConfig::new(method, Decision::Pfa(self.pfa))?)
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
    /// Binary mask output (PGM).
    #[arg(long)]
    out_mask: PathBuf,
    /// Energy map output, as a one-band cube.
    #[arg(long)]
    out_energy: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pan,
    Ms,
}

#[derive(Args)]
struct SimulateArgs {
    /// Reference cube, or `synthetic` for the built-in 60×60×30 scene.
    #[arg(long = "ref")]
    reference: String,
    /// Number of simulated pairs, one random change region each.
    #[arg(long, default_value_t = 75)]
    regions: usize,
    #[command(flatten)]
    spatial: KernelArgs,
    #[arg(long, value_enum, default_value = "ms")]
    mode: Mode,
    /// Bands averaged into the PAN image (default: first half).
    #[arg(long)]
    pan_bands: Option<usize>,
    /// Temporal configuration(s): 1, 2, or both as `1,2`.
    #[arg(long, default_value = "1", value_delimiter = ',')]
    config: Vec<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of endmembers; estimated when omitted.
    #[arg(long)]
    endmembers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    region_min: usize,
    #[arg(long, default_value_t = 61)]
    region_max: usize,
    /// Per-band SNR of added Gaussian noise; noiseless when omitted.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    hr: PathBuf,
    #[arg(long)]
    lr: PathBuf,
    /// key=value file: `response` (text matrix path), `kernel`,
    /// `kernel_sigma`, `factor`, optional `lambda`, `var_hr`, `var_lr`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// CSV report.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    curves_dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Fuse(a) => fuse(a),
        Command::Detect(a) => detect(a),
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn read_cube(path: &Path) -> Result<ImageCube> {
    io::read_cube(path, CubeFormat::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn write_cube(cube: &ImageCube, path: &Path) -> Result<()> {
    io::write_cube(cube, path, CubeFormat::from_path(path)).with_context(|| format!("writing {}", path.display()))
}

fn parse_kernel(spec: &str, sigma: f64, base: &Path) -> Result<Kernel> {
    if let Some(size) = spec.strip_prefix("gauss") {
        let size: usize = size.parse().with_context(|| format!("bad kernel `{spec}`"))?;
        return Ok(Kernel::gaussian(size, sigma)?);
    }
    let path = base.join(spec);
    Ok(Kernel::from_matrix(&io::read_text_matrix(&path)?)?)
}

fn spatial_from(args: &KernelArgs) -> Result<SpatialDegradation> {
    let kernel = parse_kernel(&args.kernel, args.kernel_sigma, Path::new("."))?;
    Ok(SpatialDegradation::new(kernel, args.factor, args.factor)?)
}

fn fuse(a: FuseArgs) -> Result<()> {
    let y_hr = read_cube(&a.hr)?;
    let y_lr = read_cube(&a.lr)?;
    let response = SpectralResponse::new(io::read_text_matrix(&a.response)?)?;
    let model = DegradationModel::with_unit_variances(response, spatial_from(&a.spatial)?);
    let settings = FusionSettings {
        lambda: a.lambda,
        solver: FusionConfig {
            max_iter: a.max_iter,
            tol: a.tol,
        },
        prior_mean: None,
    };
    let result = pipeline::fuse_observations(&y_hr, &y_lr, &model, &settings)?;
    log::info!(
        "fusion: {} iterations, converged = {}, objective {:.6e}",
        result.iterations,
        result.converged,
        result.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    write_cube(&result.x_hat, &a.out)
}

fn detect(a: DetectArgs) -> Result<()> {
    let detector = a.method.detector()?;
    let (energy, mask) = detector.detect(&read_cube(&a.a)?, &read_cube(&a.b)?)?;
    log::info!("{} of {} pixels flagged", mask.count_ones(), mask.grid().len());
    io::write_mask(&mask, &a.out_mask)?;
    if let Some(p) = a.out_energy {
        write_cube(&energy.to_cube(), &p)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut manifest = Manifest::synthetic_default(a.seed);
    if a.reference != "synthetic" {
        manifest.reference = ReferenceSource::File(fs::canonicalize(&a.reference).with_context(|| a.reference.clone())?);
    }
    manifest.endmembers = a.endmembers;
    manifest.regions = a.regions;
    manifest.region_sides = a.region_min..=a.region_max;
    manifest.configs = a
        .config
        .iter()
        .map(|c| c.to_string().parse())
        .collect::<mrcd_core::Result<_>>()?;
    manifest.mode = match a.mode {
        Mode::Ms => ObservationMode::Ms,
        Mode::Pan => {
            manifest.detectors = vec![Method::Cva, Method::Scva { window: 3 }, Method::Scva { window: 5 }, Method::Scva { window: 7 }];
            ObservationMode::Pan { bands: a.pan_bands }
        }
    };
    if !a.spatial.kernel.starts_with("gauss") {
        bail!("simulate records the kernel in its manifest and accepts only gauss<N> kernels");
    }
    manifest.kernel_size = a.spatial.kernel[5..].parse().context("bad kernel size")?;
    manifest.kernel_sigma = a.spatial.kernel_sigma;
    manifest.factor = a.spatial.factor;
    manifest.snr_db = a.snr_db;
    manifest.validate()?;

    let x_ref = manifest.load_reference()?;
    let scene = LatentScene::from_reference(&x_ref, manifest.endmembers, manifest.seed)?;
    let (model, noise) = manifest.degradation_model(&scene.x_t1)?;
    fs::create_dir_all(&a.out_dir)?;
    manifest.write(&a.out_dir.join("manifest.txt"))?;
    io::write_text_matrix(&scene.unmixing.endmembers, &a.out_dir.join("endmembers.txt"))?;
    io::write_text_matrix(model.response.matrix(), &a.out_dir.join("response.txt"))?;
    io::write_text_matrix(&model.spatial.kernel().to_matrix(), &a.out_dir.join("kernel.txt"))?;
    let mut index = String::from("# trial config rule top left bottom right\n");
    for trial in 0..manifest.regions {
        let spec = manifest.trial_spec(scene.grid(), trial)?;
        for &config in &manifest.configs {
            let pair = simulate::simulate_from_scene(&scene, &spec, &model, config, &noise)?;
            let stem = format!("pair{trial:03}_c{}", config.number());
            write_cube(&pair.y_hr, &a.out_dir.join(format!("{stem}_hr.cube")))?;
            write_cube(&pair.y_lr, &a.out_dir.join(format!("{stem}_lr.cube")))?;
            io::write_mask(&pair.d_hr, &a.out_dir.join(format!("{stem}_dhr.pgm")))?;
            io::write_mask(&pair.d_lr, &a.out_dir.join(format!("{stem}_dlr.pgm")))?;
            for (region, rule) in &spec.regions {
                let (t, l, b, r) = region.bounds(scene.grid());
                index += &format!("{trial} {} {} {t} {l} {b} {r}\n", config.number(), rule.label());
            }
        }
    }
    fs::write(a.out_dir.join("pairs.txt"), index)?;
    log::info!(
        "wrote {} pairs ({} endmembers) to {}",
        manifest.regions * manifest.configs.len(),
        scene.unmixing.k(),
        a.out_dir.display()
    );
    Ok(())
}

fn parse_variances(v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad variance `{s}`")))
        .collect()
}

fn load_model(path: &Path) -> Result<(DegradationModel, f64)> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let (mut response, mut kernel, mut sigma, mut factor) = (None, "gauss5".to_string(), 1.0, 5usize);
    let (mut lambda, mut var_hr, mut var_lr) = (DEFAULT_LAMBDA, None, None);
    for (k, v) in io::parse_key_values(std::io::BufReader::new(file))? {
        match k.as_str() {
            "response" => response = Some(SpectralResponse::new(io::read_text_matrix(&base.join(&v))?)?),
            "kernel" => kernel = v,
            "kernel_sigma" => sigma = v.parse().context("kernel_sigma")?,
            "factor" => factor = v.parse().context("factor")?,
            "lambda" => lambda = v.parse().context("lambda")?,
            "var_hr" => var_hr = Some(parse_variances(&v)?),
            "var_lr" => var_lr = Some(parse_variances(&v)?),
            other => bail!("unknown model key `{other}`"),
        }
    }
    let response = response.context("model file needs a `response` entry")?;
    let spatial = SpatialDegradation::new(parse_kernel(&kernel, sigma, base)?, factor, factor)?;
    let var_hr = var_hr.unwrap_or_else(|| vec![1.0; response.output_bands()]);
    let var_lr = var_lr.unwrap_or_else(|| vec![1.0; response.input_bands()]);
    Ok((DegradationModel::new(response, spatial, var_hr, var_lr)?, lambda))
}

fn run(a: RunArgs) -> Result<()> {
    let y_hr = read_cube(&a.hr)?;
    let y_lr = read_cube(&a.lr)?;
    let (model, lambda) = load_model(&a.model)?;
    let detector = a.method.detector()?;
    let settings = FusionSettings {
        lambda,
        ..FusionSettings::default()
    };
    let out = pipeline::run_cd(&y_hr, &y_lr, &model, &settings, &detector)?;
    let d_wc = pipeline::run_worst_case(&y_hr, &y_lr, &model, &detector)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir)?;
    write_cube(&out.x_hat, &dir.join("x_hat.cube"))?;
    write_cube(&out.v_hr.to_cube(), &dir.join("v_hr.cube"))?;
    write_cube(&out.v_lr.to_cube(), &dir.join("v_lr.cube"))?;
    io::write_mask(&out.d_hr_hat, &dir.join("d_hr.pgm"))?;
    io::write_mask(&out.d_lr_hat, &dir.join("d_lr.pgm"))?;
    io::write_mask(&out.d_alr_hat, &dir.join("d_alr.pgm"))?;
    io::write_mask(&d_wc, &dir.join("d_wc.pgm"))?;
    log::info!(
        "fusion {} iterations; changed pixels HR {} LR {} aLR {} WC {}",
        out.fusion.iterations,
        out.d_hr_hat.count_ones(),
        out.d_lr_hat.count_ones(),
        out.d_alr_hat.count_ones(),
        d_wc.count_ones()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = Manifest::from_path(&a.manifest)?;
    let report = run_experiment(&manifest)?;
    fs::write(&a.out, report.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(dir) = a.curves_dir {
        report.write_curves(&dir)?;
    }
    if !report.failures.is_empty() {
        log::warn!("{} trial failures recorded in the report", report.failures.len());
    }
    print!("{}", report.to_csv());
    Ok(())
}
