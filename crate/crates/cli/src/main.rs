use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod files;

use files::OutputGuard;

/// Interactive segmentation of voxel radiance fields, batch entry points.
#[derive(Parser, Debug)]
#[command(name = "isrf", version)]
struct Cli {
    /// Seed for every randomized step; overrides seeds stored in input files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene: dataset, ground-truth scene, masks, strokes and test cameras.
    Synth(SynthArgs),
    /// Train a scene from a posed dataset.
    Train(TrainArgs),
    /// Replay a stroke log headlessly and write the final mask.
    Segment(SegmentArgs),
    /// Apply an edit script and render the result.
    Edit(EditArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Render one or more views of a scene.
    Render(RenderArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene description (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    /// Built-in scene instead of a spec file.
    #[arg(long, value_parser = ["two_objects", "single_sphere", "two_material"])]
    preset: Option<String>,
    /// Override the grid resolution of the spec.
    #[arg(long)]
    resolution: Option<usize>,
    /// Override the rendered image size of the spec.
    #[arg(long)]
    image_size: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Full training configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Photometric-only iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Joint photometric and feature iterations.
    #[arg(long)]
    distill_iters: Option<usize>,
    /// Feature loss weight; 0 disables distillation.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_density: Option<f64>,
    /// Learning-rate schedule to start from.
    #[arg(long, default_value = "default", value_parser = ["default", "synthetic"], conflicts_with = "config")]
    schedule: String,
    /// Raw features wider than this are reduced with PCA at ingest.
    #[arg(long, default_value_t = isrf_core::io::DEFAULT_FEATURE_DIM)]
    feature_dim: usize,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Replay log (JSON).
    #[arg(long)]
    strokes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// K-Means clusters per stroke.
    #[arg(long, default_value_t = isrf_core::semantic::DEFAULT_K)]
    k: usize,
    /// Growth acceptance threshold.
    #[arg(long, default_value_t = isrf_core::grow::DEFAULT_TAU)]
    tau: f64,
    /// Bilateral bandwidth, feature and spatial.
    #[arg(long, default_value_t = isrf_core::grow::DEFAULT_SIGMA)]
    sigma: f64,
    /// Spatial bandwidth in voxels, when it should differ from --sigma.
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long, default_value_t = isrf_core::grow::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Seed percentile of nearest-exemplar distances.
    #[arg(long, default_value_t = isrf_core::semantic::DEFAULT_SEED_PERCENTILE)]
    seed_percentile: f64,
    /// Close enclosed holes in the grown mask.
    #[arg(long)]
    fill_cavities: bool,
}

#[derive(Args, Debug)]
struct EditArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Edit script (JSON).
    #[arg(long)]
    script: PathBuf,
    /// Camera or list of cameras (JSON).
    #[arg(long)]
    render: PathBuf,
    /// Output directory for the renders.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "rgb", value_parser = ["rgb", "feature", "depth"])]
    mode: String,
    /// Also bake the edited field into a new scene archive.
    #[arg(long)]
    bake: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted masks: gray PNGs (soft alpha) and/or .bits voxel masks.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth masks with matching file names.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Scene label of the report row (defaults to the ground-truth directory name).
    #[arg(long)]
    scene_name: Option<String>,
    #[arg(long, default_value = "stroke")]
    method: String,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Camera or list of cameras (JSON).
    #[arg(long)]
    cam: PathBuf,
    #[arg(long, default_value = "rgb", value_parser = ["rgb", "feature", "depth", "mask", "mask_overlay"])]
    mode: String,
    /// Mask stored in the scene, or a .bits file; required by the mask modes.
    #[arg(long)]
    mask: Option<String>,
    /// PNG path for one camera, directory for a list.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = isrf_server::DEFAULT_LISTEN)]
    listen: std::net::SocketAddr,
    /// Only scenes under this directory may be loaded (defaults to $ISRF_SCENE_ROOT).
    #[arg(long)]
    scene_root: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(isrf_core::Error),
}

impl From<isrf_core::Error> for CliError {
    fn from(e: isrf_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 3,
            CliError::Core(_) => 4,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => {
            let mut out = OutputGuard::new(&a.out);
            commands::synth(&a, seed)?;
            out.commit();
        }
        Command::Train(a) => {
            let mut out = OutputGuard::new(&a.out);
            commands::train(&a, seed)?;
            out.commit();
        }
        Command::Segment(a) => {
            let mut out = OutputGuard::new(&a.out);
            commands::segment(&a, seed)?;
            out.commit();
        }
        Command::Edit(a) => {
            let mut out = OutputGuard::new(&a.out);
            let mut bake = a.bake.as_deref().map(OutputGuard::new);
            commands::edit(&a)?;
            out.commit();
            if let Some(b) = bake.as_mut() {
                b.commit();
            }
        }
        Command::Eval(a) => {
            let mut out = OutputGuard::new(&a.report);
            commands::eval(&a)?;
            out.commit();
        }
        Command::Render(a) => {
            let mut out = OutputGuard::new(&a.out);
            commands::render(&a)?;
            out.commit();
        }
        Command::Serve(a) => commands::serve(&a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error[usage]: {m}"),
                CliError::Core(err) => eprintln!("error[{}]: {err}", err.kind()),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
