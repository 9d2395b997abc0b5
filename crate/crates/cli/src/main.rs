use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spkx_cli::pipeline::{self, Tse};
use spkx_cli::{CliError, CliResult, PipelineConfig};
use spkx_core::eval::{DcfParams, DCF08, DCF10};
use spkx_core::extractor::Variant;
use spkx_core::mixsim::Split;

/// Overlapped two-talker speaker verification with target speaker extraction.
#[derive(Parser)]
#[command(name = "spkx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus.
    SynthCorpus {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Output directory for WAVs and corpus.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of speakers [default: corpus.speakers].
        #[arg(long)]
        speakers: Option<usize>,
        /// Utterances per speaker [default: corpus.utts_per_speaker].
        #[arg(long)]
        utts_per_speaker: Option<usize>,
        /// Seed [default: corpus.seed].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate two-speaker mixtures and write the trial lists.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Corpus manifest (corpus.jsonl).
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for mixtures, mixtures.jsonl and trial lists.
        #[arg(long)]
        out_dir: PathBuf,
        /// Training mixtures [default: mixtures.train].
        #[arg(long)]
        train: Option<usize>,
        /// Development mixtures [default: mixtures.dev].
        #[arg(long)]
        dev: Option<usize>,
        /// Test mixtures [default: mixtures.test].
        #[arg(long)]
        test: Option<usize>,
        /// Seed [default: mixtures.seed].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a target speaker extraction network.
    TrainExtractor {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        /// Mixture manifest with train and dev rows.
        #[arg(long)]
        mixtures: PathBuf,
        /// Output directory for extractor.bin and train_log.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        /// sbf-mtsal | sbf-mtsal-concat [default: extractor.variant].
        #[arg(long)]
        variant: Option<Variant>,
        /// Maximum epochs [default: extractor.max_epochs].
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Seed [default: extractor.seed].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract target speech from every mixture of one split.
    Extract {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Extractor model file.
        #[arg(long)]
        model: PathBuf,
        /// Fail unless the model is this variant.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        mixtures: PathBuf,
        /// train | dev | test.
        #[arg(long, default_value = "test")]
        split: Split,
        /// Output directory for WAVs and extracted.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the UBM, T-matrix, LDA and PLDA back-end.
    TrainBackend {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        /// Extracted manifests pooled with the clean training set (repeatable).
        #[arg(long)]
        extracted: Vec<PathBuf>,
        /// Output directory for backend.bin and backend_log.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Seed [default: backend.seed].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a trial list with PLDA.
    Score {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Back-end model file.
        #[arg(long)]
        backend: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        mixtures: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// `none`, or an extractor model applied to mixture test audio.
        #[arg(long, default_value = "none")]
        tse: Tse,
        /// Output directory for scores.txt.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compute EER, DCF08 and DCF10 and export DET points.
    Report {
        /// Score file.
        #[arg(long)]
        scores: PathBuf,
        /// Output directory for report.json and det.csv.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DCF08.p_target)]
        dcf08_p_target: f64,
        #[arg(long, default_value_t = DCF08.c_miss)]
        dcf08_c_miss: f64,
        #[arg(long, default_value_t = DCF08.c_fa)]
        dcf08_c_fa: f64,
        #[arg(long, default_value_t = DCF10.p_target)]
        dcf10_p_target: f64,
        #[arg(long, default_value_t = DCF10.c_miss)]
        dcf10_c_miss: f64,
        #[arg(long, default_value_t = DCF10.c_fa)]
        dcf10_c_fa: f64,
    },
}

fn load(c: &ConfigArg) -> CliResult<PipelineConfig> {
    PipelineConfig::load(&c.config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthCorpus {
            cfg,
            out_dir,
            speakers,
            utts_per_speaker,
            seed,
        } => {
            let mut c = load(&cfg)?;
            c.corpus.speakers = speakers.unwrap_or(c.corpus.speakers);
            c.corpus.utts_per_speaker = utts_per_speaker.unwrap_or(c.corpus.utts_per_speaker);
            c.corpus.seed = seed.unwrap_or(c.corpus.seed);
            let p = pipeline::synth_corpus(&c, &out_dir)?;
            println!("{}", p.display());
        }
        Command::Simulate {
            cfg,
            corpus,
            out_dir,
            train,
            dev,
            test,
            seed,
        } => {
            let mut c = load(&cfg)?;
            let m = &mut c.mixtures;
            m.train = train.unwrap_or(m.train);
            m.dev = dev.unwrap_or(m.dev);
            m.test = test.unwrap_or(m.test);
            m.seed = seed.unwrap_or(m.seed);
            let out = pipeline::simulate(&c, &corpus, &out_dir)?;
            println!("{}", out.mixtures.display());
        }
        Command::TrainExtractor {
            cfg,
            corpus,
            mixtures,
            out_dir,
            variant,
            max_epochs,
            seed,
        } => {
            let mut c = load(&cfg)?;
            let e = &mut c.extractor;
            e.variant = variant.unwrap_or(e.variant);
            e.max_epochs = max_epochs.unwrap_or(e.max_epochs);
            e.min_epochs = e.min_epochs.min(e.max_epochs);
            e.seed = seed.unwrap_or(e.seed);
            c.validate()?;
            let p = pipeline::train_extractor(&c, &corpus, &mixtures, &out_dir)?;
            println!("{}", p.display());
        }
        Command::Extract {
            cfg,
            model,
            variant,
            corpus,
            mixtures,
            split,
            out_dir,
        } => {
            let c = load(&cfg)?;
            let corpus = pipeline::load_corpus(&corpus, &c)?;
            let p = pipeline::extract(&model, variant, &corpus, &mixtures, split, &out_dir)?;
            println!("{}", p.display());
        }
        Command::TrainBackend {
            cfg,
            corpus,
            extracted,
            out_dir,
            seed,
        } => {
            let mut c = load(&cfg)?;
            c.backend.seed = seed.unwrap_or(c.backend.seed);
            let p = pipeline::train_backend(&c, &corpus, &extracted, &out_dir)?;
            println!("{}", p.display());
        }
        Command::Score {
            cfg,
            backend,
            corpus,
            mixtures,
            trials,
            tse,
            out_dir,
        } => {
            let c = load(&cfg)?;
            let p = pipeline::score(&c, &backend, &corpus, &mixtures, &trials, &tse, &out_dir)?;
            println!("{}", p.display());
        }
        Command::Report {
            scores,
            out_dir,
            dcf08_p_target,
            dcf08_c_miss,
            dcf08_c_fa,
            dcf10_p_target,
            dcf10_c_miss,
            dcf10_c_fa,
        } => {
            let d08 = DcfParams {
                p_target: dcf08_p_target,
                c_miss: dcf08_c_miss,
                c_fa: dcf08_c_fa,
            };
            let d10 = DcfParams {
                p_target: dcf10_p_target,
                c_miss: dcf10_c_miss,
                c_fa: dcf10_c_fa,
            };
            let r = pipeline::report(&scores, d08, d10, &out_dir)?;
            let text = serde_json::to_string(&r).map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
