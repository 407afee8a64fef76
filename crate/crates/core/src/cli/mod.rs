//! The `quanvseg` command line: argument parsing, run configuration and one
//! function per subcommand.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags or
//! config, missing input file).

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, KEYS};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "QUANVSEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "quanvseg", version, about = "Quanvolutional pre-processing and Attention U-Net segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// key = value run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quanvolve a single-band raster into a feature stack.
    Quanvolve {
        /// PGM image, or QVT1 raster (H×W or 1×H×W).
        #[arg(long)]
        input: PathBuf,
        /// Output QVT1 feature stack.
        #[arg(long)]
        output: PathBuf,
        /// Reuse a saved circuit instead of building one from the config.
        #[arg(long)]
        circuit: Option<PathBuf>,
        /// Write the frozen circuit here.
        #[arg(long)]
        circuit_out: Option<PathBuf>,
        /// Input holds backscatter in dB; normalize with norm.lo_db/norm.hi_db.
        #[arg(long)]
        db: bool,
        /// Store 64-bit floats instead of 32-bit.
        #[arg(long)]
        f64: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic speckled scene and its building mask.
    SynthData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 20)]
        buildings: usize,
        /// Speckle looks; `inf` disables speckle.
        #[arg(long, default_value_t = 4.0)]
        looks: f64,
        /// Scene as 16-bit PGM, or QVT1 when the extension is `.qvt`.
        #[arg(long)]
        image: PathBuf,
        /// Mask as PGM.
        #[arg(long)]
        mask: PathBuf,
    },
    /// Cut scenes into patches and assign train/test splits.
    MakePatches {
        /// Scene raster or feature stack (repeatable, paired with --mask).
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
        /// Output patch directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train an Attention U-Net on a patch directory.
    Train {
        #[arg(long)]
        patches: PathBuf,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log (default: <out>/train_log.tsv).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a model, or saved prediction masks, on a split.
    Eval {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        model: Option<PathBuf>,
        /// Directory of `patch_NNNNN.pgm` masks as written by `predict`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the per-patch table here.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Write one predicted mask per patch.
    Predict {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `train`, `test` or `all`.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Count trainable parameters of a model configuration.
    ParamCount {
        /// Use a full-size reference configuration instead of the config file.
        #[arg(long, value_parser = ["baseline", "quantum"])]
        reference: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

/// Outcome of a command that did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(crate::Error),
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

fn thread_count() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Regular output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    let result = thread_count().and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Failure::Runtime(crate::Error::State(e.to_string())))?;
        pool.install(|| commands::dispatch(cli.command, out))
    });
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "{f}");
            f.exit_code()
        }
    }
}
