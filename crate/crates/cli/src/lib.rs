//! `connectome` command line: argument parsing, configuration and dispatch
//! to the stage implementations in [`pipeline`].

pub mod config;
pub mod error;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use connectome_core::models::Family;
use connectome_core::verify::Fault;

use config::{Precision, RunConfig};
use error::{CliError, Result};
use pipeline::{Ctx, Stage};

#[derive(Debug, Parser)]
#[command(name = "connectome", version, about = "Functional connectivity fingerprints and classifiers")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Output root; overrides the config. Defaults to `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).ok_or_else(|| format!("unknown family {s:?}; expected cnn, fcn, ridge, svm_l2 or svm_l1"))
}

#[derive(Debug, Clone, clap::Args)]
pub struct Selection {
    /// Model families to run (repeatable); defaults to the config list.
    #[arg(long = "family", value_parser = parse_family)]
    pub families: Vec<Family>,
    /// Atlas ids to run (repeatable); defaults to every fingerprinted atlas.
    #[arg(long = "atlas-id")]
    pub atlas_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FaultArg {
    SignFlip,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-group dataset.
    Synth,
    /// Scrub, QC, band-pass and GSR every subject of a manifest.
    Preprocess {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Atlas CVOL (repeatable).
        #[arg(long = "atlas")]
        atlases: Vec<PathBuf>,
    },
    /// Fingerprint volumes and ROI matrices per subject and atlas.
    Fingerprint {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "atlas")]
        atlases: Vec<PathBuf>,
    },
    /// Fit models on all subjects and write checkpoints.
    Train {
        #[command(flatten)]
        sel: Selection,
    },
    /// Stratified k-fold cross-validation.
    Cv {
        #[command(flatten)]
        sel: Selection,
    },
    /// Score a held-out dataset with trained checkpoints.
    Test {
        /// Output root of the held-out dataset's fingerprint stage.
        #[arg(long)]
        test_dir: Option<PathBuf>,
        #[command(flatten)]
        sel: Selection,
    },
    /// Majority vote across atlases.
    Ensemble {
        #[arg(long, value_enum, default_value = "cv")]
        stage: Stage,
        #[command(flatten)]
        sel: Selection,
    },
    /// Input-gradient saliency maps from the trained CNNs.
    Saliency {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "atlas-id")]
        atlas_ids: Vec<String>,
    },
    /// Gradient checks and oracle comparisons.
    Verify {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

/// Config file plus command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(p) = cli.precision {
        cfg.precision = p;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

macro_rules! by_precision {
    ($ctx:expr, $f:ident ( $($arg:expr),* )) => {
        match $ctx.cfg.precision {
            Precision::F32 => pipeline::$f::<f32>($ctx, $($arg),*).map(|_| ()),
            Precision::F64 => pipeline::$f::<f64>($ctx, $($arg),*).map(|_| ()),
        }
    };
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let ctx = Ctx { cfg, out };
    let ctx = &ctx;
    pool.install(|| match &cli.command {
        Command::Synth => pipeline::cmd_synth(ctx).map(|_| ()),
        Command::Preprocess { manifest, atlases } => by_precision!(ctx, cmd_preprocess(manifest.as_deref(), atlases)),
        Command::Fingerprint { manifest, atlases } => by_precision!(ctx, cmd_fingerprint(manifest.as_deref(), atlases)),
        Command::Train { sel } => by_precision!(ctx, cmd_train(&sel.families, &sel.atlas_ids)),
        Command::Cv { sel } => by_precision!(ctx, cmd_cv(&sel.families, &sel.atlas_ids)),
        Command::Test { test_dir, sel } => {
            let dir = test_dir
                .clone()
                .or_else(|| ctx.cfg.inputs.test_dir.clone())
                .ok_or_else(|| CliError::Validation("test needs --test-dir or inputs.test_dir".into()))?;
            by_precision!(ctx, cmd_test(&dir, &sel.families, &sel.atlas_ids))
        }
        Command::Ensemble { stage, sel } => pipeline::cmd_ensemble(ctx, *stage, &sel.families, &sel.atlas_ids).map(|_| ()),
        Command::Saliency { manifest, atlas_ids } => by_precision!(ctx, cmd_saliency(manifest.as_deref(), atlas_ids)),
        Command::Verify { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::SignFlip| Fault::SignFlip);
            pipeline::cmd_verify(ctx, fault).map(|_| ())
        }
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Failures are printed to stderr as one JSON line.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::Validation(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
