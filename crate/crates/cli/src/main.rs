use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use odmn::homogenizer::PhaseMode;
use odmn::io::{self, Checkpoint, Provenance};
use odmn::network::{ParameterSet, Topology};
use odmn::solver::{init_state, run_path, SolverConfig};
use odmn::texture::{self, OdfGrid, OrientationSample};
use odmn::trainer::{self, TrainConfig};
use odmn::Error;

#[derive(Parser)]
#[command(name = "odmn", version, about = "Orientation-aware deep material network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a teacher-labelled stiffness dataset (JSONL, GPa).
    GenData(GenDataArgs),
    /// Fit a network to a dataset.
    Train(TrainArgs),
    /// Drive a trained network along a load path with local material laws.
    Predict(PredictArgs),
    /// Pole figures, ODF grids, or a texture index from orientations.
    Texture(TextureArgs),
    /// Texture index of the difference ODF between two orientation sets.
    CompareOdf(CompareArgs),
    /// Compare tape gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    TwoPhase,
}

impl From<Mode> for PhaseMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Single => PhaseMode::Single,
            Mode::TwoPhase => PhaseMode::TwoPhase,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Teacher checkpoint used to label the samples.
    #[arg(long, conflicts_with = "teacher_depth")]
    teacher: Option<PathBuf>,
    /// Draw a random teacher of this depth from the seed instead.
    #[arg(long)]
    teacher_depth: Option<usize>,
    /// Where to save a randomly drawn teacher.
    #[arg(long, requires = "teacher_depth")]
    teacher_out: Option<PathBuf>,
    /// Re-weight the teacher so phase-1 nodes hold this volume fraction.
    #[arg(long)]
    phase1_fraction: Option<f64>,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "two-phase")]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Learning-curve CSV; defaults to the checkpoint path with `.curves.csv`.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Material file (JSON, MPa).
    #[arg(long)]
    material: PathBuf,
    #[arg(long)]
    load_path: PathBuf,
    /// History CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Per-step node orientation CSV.
    #[arg(long)]
    dump_orientations: Option<PathBuf>,
    /// Newton iterations per load increment.
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
    /// Load-increment bisection depth before giving up.
    #[arg(long, default_value_t = 12)]
    max_bisections: usize,
}

#[derive(Args)]
struct OdfArgs {
    /// Kernel halfwidth in degrees.
    #[arg(long, default_value_t = 10.0)]
    halfwidth: f64,
    /// ODF grid spacing in degrees.
    #[arg(long, default_value_t = 3.5)]
    resolution: f64,
}

#[derive(Args)]
struct TextureArgs {
    /// Checkpoint (reference orientations) or orientation CSV dump.
    #[arg(long)]
    input: PathBuf,
    /// Step of an orientation dump; the last step by default.
    #[arg(long)]
    step: Option<usize>,
    /// Miller family for a pole figure, e.g. `111`.
    #[arg(long)]
    pole: Option<String>,
    /// Second orientation set; prints the texture index against it.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    compare_step: Option<usize>,
    /// Write the ODF grid CSV here.
    #[arg(long)]
    odf_out: Option<PathBuf>,
    /// Pole-figure CSV output (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    odf: OdfArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Orientation set under test.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    a_step: Option<usize>,
    /// Reference orientation set.
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    b_step: Option<usize>,
    #[command(flatten)]
    odf: OdfArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Number of random parameter points.
    #[arg(long, default_value_t = 1)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "two-phase")]
    mode: Mode,
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("ODMN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| usage(format!("ODMN_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(usage("ODMN_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn gen_data(a: GenDataArgs) -> CliResult<()> {
    if a.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut teacher = match (&a.teacher, a.teacher_depth) {
        (Some(path), _) => io::load_checkpoint(path)?.params,
        (None, Some(depth)) => ParameterSet::random(&Topology::build(depth)?, &mut rng),
        (None, None) => return Err(usage("one of --teacher or --teacher-depth is required")),
    };
    if let Some(f) = a.phase1_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(usage("--phase1-fraction must lie in (0, 1)"));
        }
        trainer::encode_phase1_fraction(&mut teacher, f)?;
    }
    let topo = Topology::build(
        teacher
            .depth()
            .ok_or_else(|| Error::InvalidInput("teacher arrays do not match any depth".into()))?,
    )?;
    if let Some(path) = &a.teacher_out {
        io::save_checkpoint(
            path,
            &Checkpoint {
                params: teacher.clone(),
                provenance: Provenance {
                    seed: a.seed,
                    dataset_sha256: String::new(),
                    epochs: 0,
                },
            },
        )?;
    }
    let data = trainer::synthesize_teacher_dataset(&teacher, &topo, a.samples, a.mode.into(), &mut rng)?;
    io::write_dataset(&a.out, &data)?;
    let mode = match a.mode {
        Mode::Single => "single",
        Mode::TwoPhase => "two-phase",
    };
    println!("wrote {} samples (seed {}, mode {mode}) to {}", data.len(), a.seed, a.out.display());
    Ok(())
}

fn default_curves_path(out: &Path) -> PathBuf {
    out.with_extension("curves.csv")
}

fn train(a: TrainArgs) -> CliResult<()> {
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        weight_decay: a.weight_decay,
        seed: a.seed,
        validation_fraction: a.validation_fraction,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let topo = Topology::build(a.depth).map_err(|e| usage(e.to_string()))?;
    let data = io::read_dataset(&a.data)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()).into());
    }
    let outcome = trainer::train(&data, &topo, &config)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        provenance: Provenance {
            seed: a.seed,
            dataset_sha256: io::file_sha256(&a.data)?,
            epochs: a.epochs,
        },
    };
    io::save_checkpoint(&a.out, &ckpt)?;
    let curves_path = a.curves.unwrap_or_else(|| default_curves_path(&a.out));
    io::write_curves(&curves_path, &outcome.curves)?;
    let last = outcome.curves.last().expect("epoch 0 is always recorded");
    println!(
        "trained depth {} for {} epochs: train error {:.6e}, validation error {:.6e}",
        a.depth, a.epochs, last.train_error, last.val_error
    );
    println!("checkpoint: {}\ncurves: {}", a.out.display(), curves_path.display());
    Ok(())
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let ckpt = io::load_checkpoint(&a.checkpoint)?;
    let materials = io::read_material(&a.material)?.assignment()?;
    let steps = io::read_load_path(&a.load_path)?.to_steps()?;
    let topo = ckpt.topology()?;
    let (net, state) = init_state(&ckpt.params, &topo, materials)?;
    let initial = texture::orientations_from_rotations(&state.orientations, &net.weights);
    let config = SolverConfig {
        max_iterations: a.max_iterations,
        max_bisections: a.max_bisections,
        ..SolverConfig::default()
    };
    let (history, failure) = match run_path(&net, &state, &steps, &config) {
        Ok((_, h)) => (h, None),
        Err((e, h)) => (h, Some(e)),
    };
    io::write_history(&a.out, &history)?;
    if let Some(path) = &a.dump_orientations {
        let mut dump = vec![(0, initial)];
        for (k, h) in history.iter().enumerate() {
            let rots: Vec<_> = h.nodes.iter().map(|n| n.orientation).collect();
            dump.push((k + 1, texture::orientations_from_rotations(&rots, &net.weights)));
        }
        io::write_orientations(path, &dump)?;
    }
    if let Some(e) = failure {
        eprintln!("last converged step: {} of {}", history.len(), steps.len());
        return Err(e.into());
    }
    println!("{} steps written to {}", history.len(), a.out.display());
    Ok(())
}

fn load_orientations(path: &Path, step: Option<usize>) -> CliResult<Vec<OrientationSample>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let samples = if is_csv {
        io::read_orientations(path, step)?
    } else {
        texture::orientations_from_params(&io::load_checkpoint(path)?.params)
    };
    if !samples.iter().any(|s| s.weight > 0.0) {
        return Err(Error::ZeroWeights.into());
    }
    Ok(samples)
}

fn odf_grid(o: &OdfArgs) -> CliResult<(f64, OdfGrid)> {
    if !(o.halfwidth > 0.0 && o.halfwidth < 90.0) {
        return Err(usage("--halfwidth must lie in (0, 90) degrees"));
    }
    let grid = OdfGrid::new(o.resolution.to_radians()).map_err(|e| usage(e.to_string()))?;
    Ok((o.halfwidth.to_radians(), grid))
}

fn texture_index(a: &[OrientationSample], b: &[OrientationSample], o: &OdfArgs) -> CliResult<f64> {
    let (h, grid) = odf_grid(o)?;
    let fa = texture::odf_estimate_on(a, h, &grid)?;
    let fb = texture::odf_estimate_on(b, h, &grid)?;
    Ok(texture::texture_index_diff(&fa, &fb)?)
}

fn texture_cmd(a: TextureArgs) -> CliResult<()> {
    let samples = load_orientations(&a.input, a.step)?;
    if a.pole.is_none() && a.compare.is_none() && a.odf_out.is_none() {
        return Err(usage("nothing to do: give --pole, --compare or --odf-out"));
    }
    if let Some(pole) = &a.pole {
        let miller = texture::parse_miller(pole).map_err(|e| usage(e.to_string()))?;
        if miller == [0, 0, 0] {
            return Err(usage("Miller index must not be (0 0 0)"));
        }
        let bytes = io::pole_figure_csv(&texture::pole_figure(&samples, miller)?)?;
        match &a.out {
            Some(p) => io::write_csv_bytes(p, &bytes)?,
            None => print!("{}", String::from_utf8_lossy(&bytes)),
        }
    }
    if let Some(path) = &a.odf_out {
        let (h, grid) = odf_grid(&a.odf)?;
        io::write_csv_bytes(path, &io::odf_csv(&texture::odf_estimate_on(&samples, h, &grid)?)?)?;
    }
    if let Some(other) = &a.compare {
        let reference = load_orientations(other, a.compare_step)?;
        println!("{:?}", texture_index(&samples, &reference, &a.odf)?);
    }
    Ok(())
}

fn compare_odf(a: CompareArgs) -> CliResult<()> {
    let sa = load_orientations(&a.a, a.a_step)?;
    let sb = load_orientations(&a.b, a.b_step)?;
    println!("{:?}", texture_index(&sa, &sb, &a.odf)?);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    if a.samples == 0 || a.points == 0 {
        return Err(usage("--samples and --points must be at least 1"));
    }
    let topo = Topology::build(a.depth).map_err(|e| usage(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let teacher = ParameterSet::random(&topo, &mut rng);
    let data = trainer::synthesize_teacher_dataset(&teacher, &topo, a.samples, a.mode.into(), &mut rng)?;
    let mut worst = 0.0f64;
    for _ in 0..a.points {
        let params = ParameterSet::random(&topo, &mut rng);
        worst = worst.max(trainer::gradcheck(&params, &data.samples, &topo)?.max_relative_error);
    }
    println!("max relative error: {worst:e}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Texture(a) => texture_cmd(a),
        Command::CompareOdf(a) => compare_odf(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 4 } else { 3 })
        }
    }
}
