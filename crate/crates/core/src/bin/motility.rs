use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use motility::classical::{ClassicalMethod, ElasticNetParams};
use motility::cli::*;
use motility::dataio::{load_manifest, ParticipantFeatures};
use motility::imgproc::NormalizeMode;
use motility::represent::{FlowKind, RepresentationKind};
use motility::synthetic::DotVideoSpec;
use motility::{Error, Result};

#[derive(Parser)]
#[command(name = "motility", version, about = "Sperm motility regression from microscopy video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the manifest and frame sources (optionally writing a synthetic dataset first).
    Prepare {
        #[command(flatten)]
        run: RunArgs,
        /// Write this many drifting-dot videos next to the manifest before validating.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 70)]
        synthetic_frames: usize,
    },
    /// Build and cache the representation for every video.
    Extract {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit the model on all participants and save it.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cross-validate the model next to ZeroR.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        emit_plots: bool,
    },
    /// Score videos with a saved model.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        /// A single frame source; without it every manifest video is scored.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long, default_value_t = 50.0)]
        fps: f64,
        #[arg(long, default_value = "input")]
        participant_id: String,
        #[arg(long)]
        age: Option<f64>,
        #[arg(long)]
        bmi: Option<f64>,
        #[arg(long)]
        abstinence: Option<f64>,
        #[arg(long)]
        concentration: Option<f64>,
    },
    /// Rewrite the report files of a finished evaluation.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_plots: bool,
    },
    /// Check the config hash of an output directory, optionally replaying the evaluation.
    Verify {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        replay: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rep {
    Single,
    Greystack,
    Vmatrix,
    Sparse,
    Dense,
    TwoStreamSparse,
    TwoStreamDense,
    TwoStreamBoth,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Resnet,
    Zeror,
    SimpleLinear,
    ElasticNet,
    RandomTree,
    RandomForest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Tamura,
    Participant,
}

#[derive(Args)]
struct RunArgs {
    /// A saved run_config.json; overrides every other run flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "manifest.csv")]
    manifest: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Defaults to `<out>/cache`.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "single")]
    rep: Rep,
    #[arg(long, default_value_t = 1, value_parser = parse_stride)]
    stride: usize,
    #[arg(long, value_enum, default_value = "resnet")]
    method: Method,
    #[arg(long, value_enum, default_value = "tamura")]
    features: Features,
    #[arg(long)]
    with_participant_data: bool,
    #[arg(long)]
    with_concentration: bool,
    #[arg(long, default_value_t = 250)]
    samples_per_video: usize,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    unit_range: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            return RunConfig::load(path);
        }
        let model = match self.method {
            Method::Resnet => {
                let mut s = NeuralSettings::default();
                s.train.seed = self.seed;
                if let Some(e) = self.epochs {
                    s.train.max_epochs = e;
                }
                if let Some(p) = self.patience {
                    s.train.patience = p;
                }
                if let Some(b) = self.batch_size {
                    s.train.batch_size = b;
                }
                ModelFamily::Neural(s)
            }
            m => {
                let method = match m {
                    Method::Zeror => ClassicalMethod::Zeror,
                    Method::SimpleLinear => ClassicalMethod::SimpleLinear,
                    Method::ElasticNet => ClassicalMethod::ElasticNet(ElasticNetParams::default()),
                    Method::RandomTree => ClassicalMethod::RandomTree { max_depth: None, min_leaf: 5 },
                    _ => ClassicalMethod::RandomForest { n_trees: 100, max_depth: None, min_leaf: 5 },
                };
                let features = match self.features {
                    Features::Tamura => FeatureSet::Tamura,
                    Features::Participant => FeatureSet::Participant,
                };
                ModelFamily::Classical { method, features }
            }
        };
        let stride = self.stride;
        let mut cfg = RunConfig::new(&self.manifest, &self.out, model);
        if let Some(c) = &self.cache {
            cfg.cache_dir = c.clone();
        }
        cfg.representation = match self.rep {
            Rep::Single => RepresentationKind::SingleFrame,
            Rep::Greystack => RepresentationKind::GreyStack30,
            Rep::Vmatrix => RepresentationKind::VerticalMatrix,
            Rep::Sparse => RepresentationKind::SparseFlow,
            Rep::Dense => RepresentationKind::DenseFlow { stride },
            Rep::TwoStreamSparse => RepresentationKind::TwoStream { flow: FlowKind::Sparse, stride },
            Rep::TwoStreamDense => RepresentationKind::TwoStream { flow: FlowKind::Dense, stride },
            Rep::TwoStreamBoth => RepresentationKind::TwoStream { flow: FlowKind::Both, stride },
        };
        if self.unit_range {
            cfg.normalize = NormalizeMode::Unit;
        }
        cfg.with_participant_data = self.with_participant_data;
        cfg.with_concentration = self.with_concentration;
        cfg.samples_per_video = self.samples_per_video;
        cfg.folds = self.folds;
        cfg.seed = self.seed;
        cfg.workers = self.workers;
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare { run, synthetic, synthetic_frames } => {
            let cfg = run.config()?;
            if let Some(n) = synthetic {
                let dir = cfg.manifest.parent().map(PathBuf::from).unwrap_or_default();
                let spec = DotVideoSpec { frames: synthetic_frames, ..DotVideoSpec::default() };
                cmd_generate(&dir, n, &spec, cfg.seed)?;
            }
            print!("{}", cmd_prepare(&cfg)?);
        }
        Command::Extract { run } => {
            let cfg = run.config()?;
            println!("{}", with_workers(cfg.workers, || cmd_extract(&cfg))??);
        }
        Command::Train { run } => {
            let cfg = run.config()?;
            let path = with_workers(cfg.workers, || cmd_train(&cfg))??;
            println!("model written to {}", path.display());
        }
        Command::Evaluate { run, emit_plots } => {
            let cfg = run.config()?;
            let set = with_workers(cfg.workers, || cmd_evaluate(&cfg, emit_plots))??;
            print!("{}", set.text_table());
        }
        Command::Predict { run, model, frames, fps, participant_id, age, bmi, abstinence, concentration } => {
            let cfg = run.config()?;
            let inputs = match frames {
                Some(frames) => {
                    let features = match (age, bmi, abstinence) {
                        (Some(age), Some(bmi), Some(abstinence)) => {
                            Some(ParticipantFeatures { age, bmi, abstinence, concentration })
                        }
                        _ => None,
                    };
                    vec![PredictInput { participant_id, frames, fps, features }]
                }
                None => load_manifest(&cfg.manifest)?.iter().map(PredictInput::from_record).collect(),
            };
            with_workers(cfg.workers, || -> Result<()> {
                for input in &inputs {
                    println!("{}: {}", input.participant_id, cmd_predict(&cfg, &model, input)?);
                }
                Ok(())
            })??;
        }
        Command::Report { out, emit_plots } => print!("{}", cmd_report(&out, emit_plots)?),
        Command::Verify { out, replay } => {
            let outcome = cmd_verify(&out, replay)?;
            println!("config hash: {}", if outcome.hash_matches { "match" } else { "MISMATCH" });
            if let Some(m) = outcome.replay_matches {
                println!("replayed report: {}", if m { "identical" } else { "DIFFERENT" });
            }
            if !outcome.ok() {
                return Err(Error::Config("verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn parse_stride(s: &str) -> std::result::Result<usize, String> {
    match s {
        "1" => Ok(1),
        "10" => Ok(10),
        _ => Err("stride must be 1 or 10".into()),
    }
}
