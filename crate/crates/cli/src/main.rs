use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reverbkit::harness::ReportFormat;
use reverbkit::roomsim::{Placement, RoomSet};
use reverbkit::ErrorClass;

mod commands;

/// Close-talking to distant speech adaptation toolkit.
#[derive(Debug, Parser)]
#[command(name = "reverbkit", version, propagate_version = true)]
pub struct Cli {
    /// Seed for every stochastic stage (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// One of error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate room impulse responses.
    Rir {
        #[command(subcommand)]
        action: RirCommand,
    },
    /// Reverberate (and optionally degrade) every utterance of a manifest.
    Augment(AugmentArgs),
    /// Compute log-Mel features.
    Features(FeaturesArgs),
    /// Write the synthetic labelled corpus.
    Synth(SynthArgs),
    /// Train a TDNN acoustic model.
    TrainAm(TrainAmArgs),
    /// Train a TDNN feature-mapping enhancer on parallel data.
    TrainEnhance(TrainEnhanceArgs),
    /// Train an FHVAE.
    TrainFhvae(TrainFhvaeArgs),
    /// Extract normalized z1 features with a trained FHVAE.
    ExtractZ1(ExtractZ1Args),
    /// Frame error rate of an acoustic model on a labelled manifest.
    Eval(EvalArgs),
    /// Run an experiment grid.
    Grid(GridArgs),
    /// Render a metrics report.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum RirCommand {
    /// Sample rooms from a set and write one WAV plus JSON sidecar per response.
    Sample {
        /// Room set: S1, S2 or S3.
        #[arg(long, value_parser = parse_room_set)]
        set: RoomSet,
        #[arg(long)]
        rooms: usize,
        #[arg(long)]
        per_room: usize,
        /// Response length in seconds.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Image order; derived from the reflection coefficient when absent.
        #[arg(long)]
        max_order: Option<usize>,
        /// Tap placement: nearest or sinc.
        #[arg(long, default_value = "nearest", value_parser = parse_placement)]
        placement: Placement,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the reverberation time of a stored response.
    T60 {
        #[arg(long)]
        rir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of RIR WAV files.
    #[arg(long)]
    pub rir_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip peak normalization after convolution.
    #[arg(long)]
    pub keep_gain: bool,
    /// Add white noise at this SNR.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Gain offset applied after normalization.
    #[arg(long)]
    pub gain_db: Option<f64>,
    /// Domain tag of the output manifest.
    #[arg(long, default_value = "reverb")]
    pub domain: String,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct FeatureInput {
    /// Manifest; writes `OUT/{id}.feat` and `OUT/features.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Single WAV; writes the FEAT1 file `OUT`.
    #[arg(long)]
    pub wav: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub input: FeatureInput,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub n_train: usize,
    #[arg(long, default_value_t = 10)]
    pub n_dev: usize,
    #[arg(long, default_value_t = 10)]
    pub n_test: usize,
    /// Mean frames per utterance.
    #[arg(long, default_value_t = 500)]
    pub frames: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Also write far-field copies through the default channel.
    #[arg(long)]
    pub distant: bool,
}

#[derive(Debug, Args)]
pub struct Z1Source {
    /// FHVAE checkpoint; models then train and run on z1 features.
    #[arg(long)]
    pub fhvae: Option<PathBuf>,
    /// Append the z1 log-variance to the z1 mean.
    #[arg(long, requires = "fhvae")]
    pub logvar: bool,
}

#[derive(Debug, Args)]
pub struct TrainAmArgs {
    /// Training manifests; more than one selects the multi-condition schedule.
    #[arg(long, required = true)]
    pub train: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub dev: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20)]
    pub phase1_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub phase2_epochs: usize,
    #[command(flatten)]
    pub z1: Z1Source,
}

#[derive(Debug, Args)]
pub struct TrainEnhanceArgs {
    /// Degraded training audio.
    #[arg(long)]
    pub noisy: PathBuf,
    /// Clean partners, matched by utterance id.
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub dev_noisy: PathBuf,
    #[arg(long)]
    pub dev_clean: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20)]
    pub phase1_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub phase2_epochs: usize,
}

#[derive(Debug, Args)]
pub struct TrainFhvaeArgs {
    #[arg(long, required = true)]
    pub train: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub dev: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON model configuration; defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractZ1Args {
    /// FHVAE checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub logvar: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Acoustic model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Enhancer applied to the features first.
    #[arg(long, conflicts_with = "fhvae")]
    pub enhancer: Option<PathBuf>,
    #[command(flatten)]
    pub z1: Z1Source,
    /// Also write the result JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seeds concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `metrics.json` written by `grid`.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of csv, svg, text.
    #[arg(long, value_delimiter = ',', default_value = "csv,svg,text")]
    pub format: Vec<ReportFormat>,
}

fn parse_room_set(s: &str) -> Result<RoomSet, String> {
    match s.to_ascii_uppercase().as_str() {
        "S1" => Ok(RoomSet::S1),
        "S2" => Ok(RoomSet::S2),
        "S3" => Ok(RoomSet::S3),
        _ => Err(format!("unknown room set {s:?}, expected S1, S2 or S3")),
    }
}

fn parse_placement(s: &str) -> Result<Placement, String> {
    match s {
        "nearest" => Ok(Placement::Nearest),
        "sinc" => Ok(Placement::Sinc),
        _ => Err(format!("unknown placement {s:?}, expected nearest or sinc")),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn report_error(code: &str, message: &str, context: serde_json::Value) {
    let line = serde_json::json!({"code": code, "message": message, "context": context});
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            let message = rendered.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            report_error("usage", message, serde_json::json!({"kind": e.kind().to_string()}));
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp_secs()
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.code(), &e.to_string(), commands::context(&cli, &e));
            ExitCode::from(exit_code(e.class()))
        }
    }
}
