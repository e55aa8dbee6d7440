use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;

use rigcal::eval::{classify_calibration, compare_rigs, validate_rig_reprojection, Quality, Regime, RigErrorReport};
use rigcal::geometry::CameraModel;
use rigcal::io::{self, CalibrationFile, GeneratorEcho, MembershipFile};
use rigcal::pipeline::{calibrate_timed, CalibrationConfig, CalibrationResult, StageTimings};
use rigcal::synth::{generate_session, DropoutPattern, NoiseSpec, RigPreset, SceneSpec};
use rigcal::{Error, Execution};

#[derive(Parser)]
#[command(name = "rigcal", version, about = "Multi-camera rig calibration against a sparse map")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a rig from a session of 2D-3D correspondences.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic session with ground truth.
    Simulate(SimulateArgs),
    /// Compare a calibration against a reference.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Radtan,
    Equidistant,
}

impl From<ModelArg> for CameraModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Radtan => CameraModel::RadTan,
            ModelArg::Equidistant => CameraModel::Equidistant,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Session file (JSON or binary).
    #[arg(long)]
    session: PathBuf,
    #[arg(long, value_enum)]
    camera_model: ModelArg,
    /// Calibration file to write.
    #[arg(long)]
    out: PathBuf,
    /// RNG seed for all randomized stages.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON configuration; command-line overrides take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Human-readable report to write.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Radial pose RANSAC threshold in pixels.
    #[arg(long)]
    threshold: Option<f64>,
    /// Final refinement gate in pixels.
    #[arg(long)]
    final_gate: Option<f64>,
    /// Rig initialization trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Also refine the map points in the final stage.
    #[arg(long)]
    optimize_points: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Run single-threaded.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Pentagonal,
    Helmet,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Random,
    NoCompleteFrameset,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "pentagonal")]
    preset: PresetArg,
    /// Number of framesets (rig positions).
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    framesets: u64,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Outlier fraction.
    #[arg(long, default_value_t = 0.1)]
    outliers: f64,
    /// Image dropout fraction.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, value_enum, default_value = "random")]
    dropout_pattern: PatternArg,
    /// Number of map points.
    #[arg(long)]
    points: Option<usize>,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write the session in the binary format.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Calibration file to assess.
    #[arg(long)]
    estimated: PathBuf,
    /// Reference calibration, e.g. a ground-truth file.
    #[arg(long)]
    reference: PathBuf,
    /// Held-out session for reprojection validation.
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Accuracy regime for the Good/Poor classification: indoor or outdoor.
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
    /// Machine-readable report to write.
    #[arg(long)]
    json_out: Option<PathBuf>,
    /// Metres per map unit.
    #[arg(long, default_value_t = 1.0)]
    map_scale: f64,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    Regime::parse(s).ok_or_else(|| format!("unknown regime `{s}` (expected indoor or outdoor)"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let outcome = match cli.command {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Evaluate(a) => run_evaluate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn path_error(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn load_config(args: &CalibrateArgs) -> Result<CalibrationConfig, Error> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(path_error(path))?;
            serde_json::from_str::<CalibrationConfig>(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        None => CalibrationConfig::default(),
    };
    config.camera_model = args.camera_model.into();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(t) = args.threshold {
        config.radial_pose.threshold = t;
    }
    if let Some(g) = args.final_gate {
        config.final_gate = g;
    }
    if let Some(k) = args.trials {
        config.rig_init.trials = k;
    }
    config.optimize_points |= args.optimize_points;
    if args.sequential {
        config.execution = Execution::Sequential;
    }
    config.validate()?;
    Ok(config)
}

fn run_calibrate(args: CalibrateArgs) -> Result<(), Error> {
    let config = load_config(&args)?;
    rigcal::par::configure_threads(args.threads).map_err(Error::Invalid)?;
    let session = io::read_session(&args.session)?;
    let (result, timings) = calibrate_timed(&session, &config)?;
    let file = CalibrationFile::from_result(&result);
    file.validate()?;
    io::write_calibration(&args.out, &file)?;
    let report = format_report(&result, &timings);
    eprint!("{report}");
    if let Some(path) = &args.report {
        std::fs::write(path, report).map_err(path_error(path))?;
    }
    Ok(())
}

fn format_report(r: &CalibrationResult, t: &StageTimings) -> String {
    let d = &r.diagnostics;
    let mut s = String::new();
    let _ = writeln!(s, "rig calibration report");
    let _ = writeln!(
        s,
        "cameras: {}  model: {}  seed: {}",
        r.num_cameras(),
        r.config.camera_model.name(),
        r.config.seed
    );
    let rp = &d.radial_poses;
    let _ = writeln!(
        s,
        "stage 1: {}/{} images registered ({} skipped), inlier ratio {:.3}",
        rp.images_registered, rp.images_attempted, rp.images_skipped, rp.inlier_ratio
    );
    let ri = &d.rig_init;
    let _ = writeln!(
        s,
        "stage 2: {} trials, {} closed, seed frameset {}, inlier ratio {:.3}, {} framesets placed",
        ri.trials_run, ri.trials_closed, ri.seed_frameset, ri.inlier_ratio, ri.framesets_placed
    );
    let rr = &d.radial_refinement;
    let _ = writeln!(
        s,
        "stage 3: {} observations, cost {:.6e} -> {:.6e} in {} iterations",
        rr.observations, rr.initial_cost, rr.final_cost, rr.report.iterations
    );
    for u in &d.upgrade {
        let _ = writeln!(
            s,
            "stage 4: camera {}: {}/{} inliers ({:.3}), focal {}, t_z {}",
            u.camera,
            u.inliers,
            u.observations,
            u.inlier_ratio,
            u.focal.map_or("-".into(), |f| format!("{f:.3}")),
            u.t_z.map_or("-".into(), |z| format!("{z:.6}")),
        );
    }
    let fr = &d.final_refinement;
    let _ = writeln!(
        s,
        "stage 5: {} observations, cost {:.6e} -> {:.6e} in {} iterations, rms {:.4} px",
        fr.observations, fr.initial_cost, fr.final_cost, fr.report.iterations, fr.rms
    );
    for (stage, dt) in &t.stages {
        let _ = writeln!(s, "time: {stage}: {:.3} s", dt.as_secs_f64());
    }
    let _ = writeln!(s, "time: total: {:.3} s", t.total().as_secs_f64());
    for w in &d.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn run_simulate(args: SimulateArgs) -> Result<(), Error> {
    let (preset, name) = match args.preset {
        PresetArg::Pentagonal => (RigPreset::pentagonal10(), "pentagonal"),
        PresetArg::Helmet => (RigPreset::helmet5(), "helmet"),
    };
    let mut scene = SceneSpec::with_framesets(args.framesets as usize);
    if let Some(p) = args.points {
        scene.points = p;
    }
    let noise = NoiseSpec {
        pixel_sigma: args.noise,
        outlier_ratio: args.outliers,
        dropout_ratio: args.dropout,
        dropout_pattern: match args.dropout_pattern {
            PatternArg::Random => DropoutPattern::Random,
            PatternArg::NoCompleteFrameset => DropoutPattern::NoCompleteFrameset,
        },
        seed: args.seed,
    };
    let (session, truth) = generate_session(&preset, &scene, &noise)?;
    std::fs::create_dir_all(&args.out).map_err(path_error(&args.out))?;
    if args.binary {
        io::write_session_binary(args.out.join("session.bin"), &session)?;
    } else {
        io::write_session(args.out.join("session.json"), &session)?;
    }
    let echo = GeneratorEcho {
        preset: name.into(),
        scene,
        noise,
    };
    io::write_calibration(
        args.out.join("ground_truth.json"),
        &CalibrationFile::from_ground_truth(&truth, &session, echo),
    )?;
    io::write_membership(
        args.out.join("membership.json"),
        &MembershipFile::from_ground_truth(&truth, &session),
    )?;
    eprintln!(
        "wrote {} framesets, {} correspondences to {}",
        session.framesets.len(),
        session.num_correspondences(),
        args.out.display()
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let estimated = io::read_calibration(&args.estimated)?;
    let reference = io::read_calibration(&args.reference)?;
    let mut report = compare_rigs(&estimated.extrinsics(), &reference.extrinsics(), args.map_scale)?;
    if let Some(path) = &args.holdout {
        let holdout = io::read_session(path)?;
        let v = validate_rig_reprojection(
            &estimated.intrinsics(),
            &estimated.extrinsics(),
            &estimated.effective_config(),
            &holdout,
        )?;
        report.holdout_rms = Some(v.rms);
    }
    let quality = args.regime.map(|g| classify_calibration(&report, g));
    print!("{}", format_rig_report(&report, quality));
    if let Some(path) = &args.json_out {
        write_json_report(path, &report, args.regime, quality)?;
    }
    Ok(())
}

fn format_rig_report(r: &RigErrorReport, quality: Option<Quality>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "camera  rotation [deg]  center [cm]");
    for (i, (a, c)) in r.rotation_errors_deg.iter().zip(&r.center_errors_cm).enumerate() {
        let _ = writeln!(s, "{i:>6}  {a:>14.3}  {c:>11.3}");
    }
    let _ = writeln!(s, "  mean  {:>14.3}  {:>11.3}", r.mean_rotation_deg, r.mean_center_cm);
    let _ = writeln!(s, "   max  {:>14.3}  {:>11.3}", r.max_rotation_deg, r.max_center_cm);
    if let Some(rms) = r.holdout_rms {
        let _ = writeln!(s, "holdout reprojection rms: {rms:.4} px");
    }
    if let Some(q) = quality {
        let label = match q {
            Quality::Good => "Good",
            Quality::Poor => "Poor",
        };
        let _ = writeln!(s, "classification: {label}");
    }
    s
}

#[derive(serde::Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    report: &'a RigErrorReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime: Option<Regime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classification: Option<Quality>,
}

fn write_json_report(path: &Path, report: &RigErrorReport, regime: Option<Regime>, quality: Option<Quality>) -> Result<(), Error> {
    let doc = JsonReport {
        report,
        regime,
        classification: quality,
    };
    std::fs::write(path, io::to_pretty_json(&doc)).map_err(path_error(path))?;
    Ok(())
}
