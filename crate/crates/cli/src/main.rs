//! `arscene`: pipeline stages, benchmark, synthetic fixtures, the authoring
//! REPL and the HTTP service behind one binary.

mod commands;
mod error;
mod repl;

use std::path::PathBuf;
use std::process::ExitCode;

use arscene_core::agents::Mode;
use arscene_core::config::Config;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{AuthorArgs, BenchmarkArgs, SceneGraphArgs, ServeArgs, SynthArgs};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "arscene", version, about = "Scene understanding, benchmarking and AR scene authoring")]
struct Cli {
    /// TOML file with module defaults; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Write errors to stderr as JSON.
    #[arg(long, global = true)]
    json_errors: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scale monocular depth to sensor depth and fill missing pixels.
    DepthEnhance {
        #[arg(long)]
        scan: PathBuf,
        /// Directory for `<frame>.metric.f32` maps (default: the scan's frames/).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_range: Option<f64>,
        #[arg(long)]
        scale_only: bool,
    },
    /// Drop small masks and merge duplicates (S_I to S_M).
    RefineMasks {
        #[arg(long)]
        scan: PathBuf,
        /// Mask file to refine instead of the scan's masks.json.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        thresholds: MaskFlags,
    },
    /// Classify masks with a labeler.
    Label {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// `mock`, `http:<url>`, or a JSON file of mask id to label.
        #[arg(long, default_value = "mock")]
        labels: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: scan in, labeled scene graph out.
    SceneGraph {
        /// Scan directory; omit or `-` to read a handoff from stdin.
        #[arg(long)]
        scan: Option<PathBuf>,
        /// `mock`, `http:<url>`, or a JSON file of mask id to label.
        #[arg(long, default_value = "mock")]
        labels: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_filtering: bool,
        #[arg(long)]
        no_mono_depth: bool,
        #[arg(long)]
        no_clustering: bool,
        #[arg(long)]
        min_cluster_size: Option<usize>,
        #[arg(long)]
        min_samples: Option<usize>,
        #[command(flatten)]
        thresholds: MaskFlags,
    },
    /// Score predicted scene graphs against ground truth.
    Benchmark {
        /// Ground-truth file or directory; `-` reads a handoff from stdin.
        #[arg(long)]
        gt: PathBuf,
        /// Prediction file or directory (files paired by name).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// `trigram` or `http:<url>`.
        #[arg(long)]
        embedder: Option<String>,
        /// Report file, `.json` or `.md`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Row name in the Markdown table.
        #[arg(long, default_value = "Ours")]
        method: String,
        #[arg(long)]
        iou_threshold: Option<f64>,
    },
    /// Write a seeded synthetic garden scan plus ground truth.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        objects: usize,
        /// Output root (default: a directory under the system temp dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interactive authoring loop.
    Author {
        /// Starting scene graph (default: the synthetic garden).
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Scene file written after every commit and on exit.
        #[arg(long, default_value = "scene.json")]
        save: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Decided)]
        mode: ModeArg,
        #[command(flatten)]
        session: SessionFlags,
    },
    /// HTTP service for the authoring loop.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        /// Starting scene graph (default: the synthetic garden).
        #[arg(long)]
        load: Option<PathBuf>,
        /// Scene file rewritten after every commit.
        #[arg(long)]
        save: Option<PathBuf>,
        /// Also serve the viewer's static files from DIR.
        #[arg(long, value_name = "DIR", num_args = 0..=1, default_missing_value = "viewer/dist")]
        with_viewer: Option<PathBuf>,
        #[command(flatten)]
        session: SessionFlags,
    },
}

#[derive(Args)]
struct MaskFlags {
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    duplicate_iou: Option<f64>,
    #[arg(long)]
    merge_overlap: Option<f64>,
}

#[derive(Args)]
struct SessionFlags {
    /// Candidates per assisted command.
    #[arg(long)]
    candidates: Option<usize>,
    /// Asset store directory.
    #[arg(long)]
    assets: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Manual,
    Assisted,
    Decided,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Manual => Mode::Manual,
            ModeArg::Assisted => Mode::Assisted,
            ModeArg::Decided => Mode::Decided,
        }
    }
}

fn apply_mask_flags(cfg: &mut Config, f: &MaskFlags) {
    let m = &mut cfg.pipeline.masks;
    if let Some(v) = f.min_points {
        m.min_points = v;
    }
    if let Some(v) = f.duplicate_iou {
        m.duplicate_iou = v;
    }
    if let Some(v) = f.merge_overlap {
        m.merge_overlap = v;
    }
}

fn apply_session_flags(cfg: &mut Config, f: &SessionFlags) {
    if let Some(k) = f.candidates {
        cfg.agents.candidates = k;
    }
    if let Some(d) = &f.assets {
        cfg.assets.store_dir = d.clone();
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::DepthEnhance {
            scan,
            out,
            max_range,
            scale_only,
        } => {
            if let Some(r) = max_range {
                cfg.pipeline.depth.max_range = r;
            }
            cfg.pipeline.depth.scale_only |= scale_only;
            commands::depth_enhance(&scan, out, &cfg)
        }
        Command::RefineMasks {
            scan,
            masks,
            out,
            thresholds,
        } => {
            apply_mask_flags(&mut cfg, &thresholds);
            commands::refine(&scan, masks.as_deref(), out, &cfg)
        }
        Command::Label { scan, masks, labels, out } => commands::label(&scan, masks.as_deref(), &labels, out, &cfg),
        Command::SceneGraph {
            scan,
            labels,
            out,
            no_filtering,
            no_mono_depth,
            no_clustering,
            min_cluster_size,
            min_samples,
            thresholds,
        } => {
            apply_mask_flags(&mut cfg, &thresholds);
            let st = &mut cfg.pipeline.stages;
            st.filtering &= !no_filtering;
            st.monocular_depth &= !no_mono_depth;
            st.clustering &= !no_clustering;
            let h = &mut cfg.pipeline.cluster.hdbscan;
            if let Some(v) = min_cluster_size {
                h.min_cluster_size = v;
            }
            if let Some(v) = min_samples {
                h.min_samples = v;
            }
            commands::scene_graph(SceneGraphArgs { scan, labels, out }, &cfg)
        }
        Command::Benchmark {
            gt,
            pred,
            embedder,
            out,
            method,
            iou_threshold,
        } => {
            if let Some(t) = iou_threshold {
                if !(0.0..=1.0).contains(&t) {
                    return Err(CliError::Validation("--iou-threshold must be in [0, 1]".into()));
                }
                cfg.eval.iou_threshold = t;
            }
            commands::benchmark(
                BenchmarkArgs {
                    gt,
                    pred,
                    embedder,
                    out,
                    method,
                },
                &cfg,
            )
        }
        Command::Synth { seed, objects, out } => commands::synth(SynthArgs { seed, objects, out }),
        Command::Author {
            scene,
            save,
            mode,
            session,
        } => {
            apply_session_flags(&mut cfg, &session);
            commands::author(
                AuthorArgs {
                    scene,
                    save,
                    mode: mode.into(),
                },
                &cfg,
            )
        }
        Command::Serve {
            bind,
            port,
            load,
            save,
            with_viewer,
            session,
        } => {
            apply_session_flags(&mut cfg, &session);
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            if let Some(p) = port {
                cfg.service.port = p;
            }
            commands::serve(
                ServeArgs {
                    load,
                    save,
                    viewer: with_viewer,
                },
                &cfg,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json_errors {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
