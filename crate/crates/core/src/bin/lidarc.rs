use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lidar_codec::codec::{self, CodingMode, EncodeOptions};
use lidar_codec::container::Bitstream;
use lidar_codec::geometry::{
    bounding_box_diagonal, chamfer_distance, d1_psnr, d2_psnr, CartesianPoint, LaserCalibration, PointCloud,
    DEFAULT_NORMAL_K,
};
use lidar_codec::highrate::QpVector;
use lidar_codec::io::{read_cloud, write_atomic, write_cloud};
use lidar_codec::lowrate::RdConfig;
use lidar_codec::predictor::{load_weights, save_weights, train, DeltaPredictor, ElevationPredictor, LstmPredictor, TrainConfig};
use lidar_codec::predtree::DEFAULT_THRESHOLD_DEG;
use lidar_codec::qpselect::{convergence_csv, default_qp, run_de, DeConfig, DeOutcome, FitnessEvaluator, RatePoint};
use lidar_codec::synthetic::{generate, SceneConfig};
use lidar_codec::{Error, ErrorKind, Result};

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "lidarc", version, about = "Predictive geometry codec for spinning LiDAR point clouds")]
struct Cli {
    /// Worker threads for per-tree coding (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a .bin (KITTI) or .ply cloud into a bitstream.
    Encode(EncodeArgs),
    /// Reconstruct a cloud from a bitstream.
    Decode(DecodeArgs),
    /// Compare a decoded cloud against its reference.
    Eval(EvalArgs),
    /// Encode, decode and evaluate clouds at each rate point.
    RdCurve(RdCurveArgs),
    /// Search QPs under a rate constraint with differential evolution.
    OptimizeQp(OptimizeArgs),
    /// Train LSTM elevation-predictor weights.
    Train(TrainArgs),
    /// Write a synthetic scan and its laser calibration.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    High,
    Low,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Laser calibration table; without it trees are split by azimuth jumps.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Azimuth jump (degrees) that starts a new laser.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_DEG)]
    threshold: f64,
    /// Multiplier converting input coordinates to metres.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Args, Clone)]
struct QpArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Table rate point r01..r07 (default r03).
    #[arg(long, conflicts_with = "qp")]
    rate_point: Option<RatePoint>,
    /// Explicit QPs: qdelta,qphi,qtheta,qr (qr = 0 in low mode).
    #[arg(long, value_parser = parse_qp)]
    qp: Option<QpVector>,
    /// Low-mode radius step in metres.
    #[arg(long)]
    step: Option<f64>,
    /// Low-mode rate-distortion weight.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Azimuth resolution in degrees (estimated when absent).
    #[arg(long)]
    phi_ar: Option<f64>,
    /// Also code the per-point azimuth bias.
    #[arg(long)]
    with_bias: bool,
}

#[derive(Args)]
struct EncodeArgs {
    input: PathBuf,
    output: PathBuf,
    #[command(flatten)]
    source: InputArgs,
    #[command(flatten)]
    qp: QpArgs,
    /// LSTM weight file (high mode only).
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    reference: PathBuf,
    decoded: PathBuf,
    /// PSNR peak in metres (default: reference bounding-box diagonal).
    #[arg(long)]
    peak: Option<f64>,
    /// Bitstream whose size gives the bits per input point.
    #[arg(long)]
    bitstream: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct RdCurveArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated subset of r01..r07.
    #[arg(long, value_delimiter = ',')]
    rate_points: Option<Vec<RatePoint>>,
    #[command(flatten)]
    source: InputArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    peak: Option<f64>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Target rate in bits per input point.
    #[arg(long)]
    target_rate: f64,
    #[arg(long, value_enum, default_value = "high")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    #[arg(long)]
    phi_ar: Option<f64>,
    #[command(flatten)]
    source: InputArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    population: usize,
    #[arg(long, default_value_t = 0.4)]
    scale_factor: f64,
    #[arg(long, default_value_t = 0.9)]
    crossover: f64,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Convergence log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    source: InputArgs,
    #[command(flatten)]
    qp: QpArgs,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.99)]
    decay: f64,
    #[arg(long, default_value_t = 50)]
    window: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    output: PathBuf,
    #[arg(long, default_value_t = 64)]
    lasers: usize,
    #[arg(long, default_value_t = 0.2)]
    phi_ar: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the laser calibration table.
    #[arg(long)]
    calib_out: Option<PathBuf>,
}

fn parse_qp(s: &str) -> std::result::Result<QpVector, String> {
    let parts: Vec<u16> = s
        .split(',')
        .map(|p| p.trim().parse::<u16>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [d, p, t, r] => Ok(QpVector::new(d, p, t, r)),
        _ => Err("expected qdelta,qphi,qtheta,qr".into()),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::InvalidInput => 3,
        ErrorKind::Format => 4,
        ErrorKind::Config => 5,
        ErrorKind::Corrupt => 6,
        ErrorKind::Infeasible => 7,
        ErrorKind::Io => 8,
        ErrorKind::Numeric => 9,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(exit_code(ErrorKind::Config));
        }
    }
    let result = match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::RdCurve(a) => cmd_rd_curve(a),
        Command::OptimizeQp(a) => cmd_optimize_qp(a),
        Command::Train(a) => cmd_train(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn scaled(mut cloud: PointCloud, scale: f64) -> Result<PointCloud> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    if scale != 1.0 {
        for p in &mut cloud.points {
            *p = CartesianPoint::new(p.x * scale, p.y * scale, p.z * scale);
        }
    }
    Ok(cloud)
}

fn load_input(path: &Path, scale: f64) -> Result<PointCloud> {
    scaled(read_cloud(path)?, scale)
}

fn load_calib(path: &Option<PathBuf>) -> Result<Option<LaserCalibration>> {
    path.as_ref().map(LaserCalibration::load).transpose()
}

fn load_predictor(path: &Option<PathBuf>) -> Result<Box<dyn ElevationPredictor>> {
    Ok(match path {
        Some(p) => Box::new(LstmPredictor::new(load_weights(p)?)?),
        None => Box::new(DeltaPredictor),
    })
}

fn encode_options(a: &QpArgs, threshold: f64) -> Result<EncodeOptions> {
    let mut opts = match (a.qp, a.rate_point) {
        (Some(qp), _) => match a.mode.unwrap_or(ModeArg::High) {
            ModeArg::High => EncodeOptions::high(qp),
            ModeArg::Low => EncodeOptions::low(qp, RdConfig { lambda: a.lambda, step: a.step.unwrap_or(0.5) }),
        },
        (None, rp) => {
            let d = default_qp(rp.unwrap_or(RatePoint::R03));
            let mode = match d.mode {
                CodingMode::High => ModeArg::High,
                CodingMode::Low => ModeArg::Low,
            };
            if a.mode.is_some_and(|m| m != mode) {
                return Err(Error::Config("--mode contradicts the rate point's mode".into()));
            }
            let mut o = d.options();
            if let (Some(step), Some(rd)) = (a.step, o.rd.as_mut()) {
                rd.step = step;
            }
            o
        }
    };
    opts.phi_ar = a.phi_ar;
    opts.skip_bias = !a.with_bias;
    opts.threshold_deg = threshold;
    Ok(opts)
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let cloud = load_input(&a.input, a.source.scale)?;
    let calib = load_calib(&a.source.calib)?;
    let opts = encode_options(&a.qp, a.source.threshold)?;
    let predictor = load_predictor(&a.weights)?;
    let enc = codec::encode(&cloud, calib.as_ref(), &opts, predictor.as_ref())?;
    let bytes = enc.bitstream.to_bytes();
    write_atomic(&a.output, &bytes)?;

    let n = cloud.len().max(1) as f64;
    let s = enc.bitstream.stream_bits();
    let coded = (s.azimuth + s.elevation + s.radius).max(1) as f64;
    say!("points {}  bytes {}  bpip {:.4}", cloud.len(), bytes.len(), (bytes.len() * 8) as f64 / n);
    say!("stream      bits      bpip     share");
    for (name, bits) in [("phi", s.azimuth), ("theta", s.elevation), ("r", s.radius)] {
        say!("{name:<8} {bits:>9} {:>9.4} {:>8.1}%", bits as f64 / n, 100.0 * bits as f64 / coded);
    }
    say!("overhead {:>9} {:>9.4}", s.overhead, s.overhead as f64 / n);
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let bs = Bitstream::from_bytes(&fs::read(&a.input)?)?;
    let predictor = load_predictor(&a.weights)?;
    let cloud = codec::decode(&bs, predictor.as_ref())?;
    write_cloud(&cloud, &a.output)?;
    say!("points {}", cloud.len());
    Ok(())
}

#[derive(Serialize)]
struct RdPoint {
    cloud: String,
    rate: String,
    points: usize,
    bpip: Option<f64>,
    d1_psnr: f64,
    d2_psnr: Option<f64>,
    chamfer: f64,
    peak: f64,
    scale: f64,
    encode_ms: Option<f64>,
    decode_ms: Option<f64>,
}

const RD_HEADER: &str = "cloud,rate,points,bpip,d1_psnr,d2_psnr,chamfer,peak,scale,encode_ms,decode_ms";

impl RdPoint {
    fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.cloud,
            self.rate,
            self.points,
            opt(self.bpip),
            self.d1_psnr,
            opt(self.d2_psnr),
            self.chamfer,
            self.peak,
            self.scale,
            opt(self.encode_ms),
            opt(self.decode_ms)
        )
    }
}

fn measure(reference: &PointCloud, decoded: &PointCloud, peak: Option<f64>) -> Result<(f64, f64, Option<f64>, f64)> {
    let peak = peak.unwrap_or_else(|| bounding_box_diagonal(reference).max(1e-9));
    let d1 = d1_psnr(reference, decoded, peak)?;
    let d2 = if reference.len() >= DEFAULT_NORMAL_K && decoded.len() >= DEFAULT_NORMAL_K {
        Some(d2_psnr(reference, decoded, peak, DEFAULT_NORMAL_K)?)
    } else {
        None
    };
    Ok((peak, d1, d2, chamfer_distance(reference, decoded)?))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let reference = load_input(&a.reference, a.scale)?;
    let decoded = load_input(&a.decoded, a.scale)?;
    let (peak, d1, d2, cd) = measure(&reference, &decoded, a.peak)?;
    let bpip = match &a.bitstream {
        Some(p) => Some((fs::metadata(p)?.len() * 8) as f64 / reference.len().max(1) as f64),
        None => None,
    };
    let row = RdPoint {
        cloud: a.reference.display().to_string(),
        rate: "custom".into(),
        points: reference.len(),
        bpip,
        d1_psnr: d1,
        d2_psnr: d2,
        chamfer: cd,
        peak,
        scale: a.scale,
        encode_ms: None,
        decode_ms: None,
    };
    if a.csv {
        say!("{RD_HEADER}\n{}", row.csv());
    } else {
        say!("{}", serde_json::to_string(&row).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok(())
}

fn cmd_rd_curve(a: RdCurveArgs) -> Result<()> {
    let calib = load_calib(&a.source.calib)?;
    let predictor = load_predictor(&a.weights)?;
    let points = a.rate_points.clone().unwrap_or_else(|| RatePoint::ALL.to_vec());
    let mut out = format!("{RD_HEADER}\n");
    for input in &a.inputs {
        let cloud = load_input(input, a.source.scale)?;
        for &rp in &points {
            let mut opts = default_qp(rp).options();
            opts.threshold_deg = a.source.threshold;
            let lstm: &dyn ElevationPredictor = if opts.mode == CodingMode::High { predictor.as_ref() } else { &DeltaPredictor };
            let t0 = Instant::now();
            let bytes = codec::encode(&cloud, calib.as_ref(), &opts, lstm)?.bitstream.to_bytes();
            let t1 = Instant::now();
            let decoded = codec::decode(&Bitstream::from_bytes(&bytes)?, lstm)?;
            let t2 = Instant::now();
            let (peak, d1, d2, cd) = measure(&cloud, &decoded, a.peak)?;
            let row = RdPoint {
                cloud: input.display().to_string(),
                rate: rp.label().into(),
                points: cloud.len(),
                bpip: Some((bytes.len() * 8) as f64 / cloud.len().max(1) as f64),
                d1_psnr: d1,
                d2_psnr: d2,
                chamfer: cd,
                peak,
                scale: a.source.scale,
                encode_ms: Some((t1 - t0).as_secs_f64() * 1e3),
                decode_ms: Some((t2 - t1).as_secs_f64() * 1e3),
            };
            say!("{}", row.csv());
            out.push_str(&row.csv());
            out.push('\n');
        }
    }
    write_atomic(&a.output, out.as_bytes())
}

fn cmd_optimize_qp(a: OptimizeArgs) -> Result<()> {
    let calib = load_calib(&a.source.calib)?;
    let predictor = load_predictor(&a.weights)?;
    let clouds = a.inputs.iter().map(|p| load_input(p, a.source.scale)).collect::<Result<Vec<_>>>()?;
    let (mode, rd) = match a.mode {
        ModeArg::High => (CodingMode::High, None),
        ModeArg::Low => (CodingMode::Low, Some(RdConfig { lambda: 1.0, step: a.step })),
    };
    let ev = FitnessEvaluator::new(&clouds, calib.as_ref(), mode, predictor.as_ref(), a.phi_ar, rd)?;
    let cfg = DeConfig {
        population: a.population,
        scale: a.scale_factor,
        crossover: a.crossover,
        iterations: a.iterations,
        seed: a.seed,
        target_rate: a.target_rate,
    };
    let outcome = run_de(&ev, &cfg)?;
    if let Some(path) = &a.log {
        write_atomic(path, convergence_csv(outcome.log()).as_bytes())?;
    }
    match outcome {
        DeOutcome::Found { best, .. } => {
            let q = best.qp;
            say!("qp {},{},{},{}", q.q_delta, q.q_phi, q.q_theta, q.q_r);
            say!("fitness {}  rate {:.4} bpip", best.fitness, best.rate);
            Ok(())
        }
        DeOutcome::Infeasible { .. } => Err(Error::Infeasible),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let calib = load_calib(&a.source.calib)?;
    let opts = encode_options(&a.qp, a.source.threshold)?;
    if opts.mode != CodingMode::High {
        return Err(Error::Config("the LSTM predictor is only used in high mode".into()));
    }
    let mut samples = Vec::new();
    for input in &a.inputs {
        let cloud = load_input(input, a.source.scale)?;
        samples.extend(codec::cloud_training_samples(&cloud, calib.as_ref(), &opts, a.window)?);
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        decay: a.decay,
        window: a.window,
        hidden: a.hidden,
    };
    let (weights, report) = train(&samples, &cfg, a.seed)?;
    save_weights(&weights, &a.output)?;
    say!("samples {}  delta mse {:.6e}", samples.len(), report.delta_loss);
    if let Some(last) = report.epoch_losses.last() {
        say!("final epoch mse {last:.6e}  checksum {:#018x}", weights.checksum());
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SceneConfig { lasers: a.lasers, phi_ar_deg: a.phi_ar, seed: a.seed, ..SceneConfig::default() };
    let scene = generate(&cfg)?;
    write_cloud(&scene.cloud, &a.output)?;
    if let Some(p) = &a.calib_out {
        write_atomic(p, scene.calibration.to_text().as_bytes())?;
    }
    say!("points {}", scene.cloud.len());
    Ok(())
}
