use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use roadvis::config::PipelineConfig;
use roadvis::experiment::pipeline::{feature_origin, search_objective, Labels};
use roadvis::experiment::{
    hyperparameter_search, run_pipeline, train_variant, ModelBundle, SplitAudit, TrainingMode,
    Variant,
};
use roadvis::features::{build_features, load_features, save_features};
use roadvis::graph::{load_graph, save_dual, save_graph, to_dual};
use roadvis::raster::load_manifest;
use roadvis::segmentation::segment_pipeline;
use roadvis::synth::{generate_synthetic, load_labels, write_synthetic, SynthConfig};
use roadvis::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "roadvis",
    version,
    about = "Road-type classification on segmented road graphs"
)]
struct Cli {
    /// Override the config seeds (replicates become SEED, SEED+1, ...).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city: graph, labels, rasters and manifest.
    Synth {
        /// Synth settings, or a pipeline config with a `synth` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split edges by travel time, then by length.
    Segment {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the dual (line) graph.
    Dualize {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build per-edge feature vectors.
    Features {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Raster manifest; enables the histogram features.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Graph whose bounding-box centre anchors the position features
        /// (defaults to `--graph`).
        #[arg(long)]
        origin_graph: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one variant and write a model bundle.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value = "supervised")]
        mode: TrainingMode,
        /// Original (unsegmented) graph, which defines the split.
        #[arg(long)]
        orn: PathBuf,
        /// Graph the features belong to (defaults to `--orn`).
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write node embeddings of a trained model.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on the test edges of its split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random hyperparameter search on the configured data.
    Search {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write results.json.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Errors from reading the config itself count as configuration errors.
fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, Error> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p).map_err(as_config)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn load_synth_config(path: Option<&Path>, seed: Option<u64>) -> Result<SynthConfig, Error> {
    let mut cfg = match path {
        None => SynthConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| as_config(Error::io(p, e)))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| as_config(e.into()))?;
            if value.get("synth").is_some() {
                PipelineConfig::load(p).map_err(as_config)?.synth
            } else {
                serde_json::from_value(value).map_err(|e| as_config(e.into()))?
            }
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_json(value: &serde_json::Value, path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_synth_config(config.as_deref(), cli.seed)?;
            let city = generate_synthetic(&cfg)?;
            write_synthetic(&city, &out)?;
            info!(
                "wrote {} edges to {}",
                city.graph.edges().len(),
                out.display()
            );
        }
        Command::Segment { graph, out, config } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            cfg.segmentation.validate()?;
            save_graph(
                &segment_pipeline(&load_graph(&graph)?, &cfg.segmentation)?,
                &out,
            )?;
        }
        Command::Dualize { graph, out } => save_dual(&to_dual(&load_graph(&graph)?), &out)?,
        Command::Features {
            graph,
            out,
            manifest,
            origin_graph,
            config,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let g = load_graph(&graph)?;
            let origin = match origin_graph {
                Some(p) => feature_origin(&load_graph(&p)?),
                None => feature_origin(&g),
            };
            let channels = manifest.as_deref().map(load_manifest).transpose()?;
            let spec = cfg.features.clone().with_vision(channels.is_some());
            save_features(
                &build_features(&g, &spec, channels.as_deref(), Some(origin))?,
                &out,
            )?;
        }
        Command::Train {
            config,
            variant,
            mode,
            orn,
            graph,
            features,
            labels,
            out,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            cfg.validate()?;
            let seed = cli.seed.unwrap_or(cfg.seeds[0]);
            let orn = load_graph(&orn)?;
            let g = graph.as_deref().map(load_graph).transpose()?;
            let table = load_features(&features)?;
            let labels = load_labels(&labels)?;
            let mut audit = SplitAudit::default();
            let hash = cfg.hash();
            let g = g.as_ref().unwrap_or(&orn);
            let t = train_variant(
                &cfg, &hash, &orn, g, &table, &labels, variant, mode, seed, &mut audit,
            )?;
            if !audit.leaked.is_empty() {
                return Err(Error::Validation(
                    "held-out nodes reached a training batch".into(),
                ));
            }
            t.bundle.save(&out)?;
        }
        Command::Embed {
            model,
            graph,
            features,
            out,
        } => {
            let bundle = ModelBundle::load(&model)?;
            let data = bundle.dataset(
                &load_graph(&graph)?,
                &load_features(&features)?,
                &Labels::new(),
            )?;
            let z = bundle.embed(&data)?;
            let rows: BTreeMap<&str, Vec<f64>> = data
                .dual
                .ids()
                .iter()
                .map(String::as_str)
                .zip(z.rows().into_iter().map(|r| r.to_vec()))
                .collect();
            write_json(
                &json!({
                    "config_hash": bundle.config_hash,
                    "seed": bundle.seed,
                    "variant": bundle.variant,
                    "dimension": z.ncols(),
                    "embeddings": rows,
                }),
                &out,
            )?;
        }
        Command::Evaluate {
            model,
            graph,
            features,
            labels,
            out,
        } => {
            let bundle = ModelBundle::load(&model)?;
            let eval = bundle.evaluate(
                &load_graph(&graph)?,
                &load_features(&features)?,
                &load_labels(&labels)?,
            )?;
            let report = json!({
                "config_hash": bundle.config_hash,
                "seed": bundle.seed,
                "variant": bundle.variant,
                "mode": bundle.mode,
                "test": eval,
            });
            match out {
                Some(p) => write_json(&report, &p)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Search {
            config,
            budget,
            out,
        } => {
            let mut cfg = load_config(config.as_deref(), cli.seed)?;
            cfg.search.budget = budget.unwrap_or(cfg.search.budget.max(1));
            cfg.validate()?;
            let work = search_dir(&cfg.output_dir)?;
            let inputs = roadvis::experiment::pipeline::prepare_inputs(&cfg, &work)?;
            let orn = load_graph(&inputs.graph)?;
            let labels = load_labels(&inputs.labels)?;
            let variant = cfg.search.variant;
            let g = if variant.segmented() {
                segment_pipeline(&orn, &cfg.segmentation)?
            } else {
                orn.clone()
            };
            let channels = match (&inputs.manifest, variant.vision()) {
                (Some(m), true) => Some(load_manifest(m)?),
                _ => None,
            };
            let spec = cfg.features.clone().with_vision(variant.vision());
            let table = build_features(&g, &spec, channels.as_deref(), Some(feature_origin(&orn)))?;
            let objective = search_objective(&cfg, &orn, &g, &table, &labels);
            let result = hyperparameter_search(
                &cfg.search.space,
                cfg.search.budget,
                cfg.search.seed,
                objective,
            )?;
            let report =
                json!({ "config_hash": cfg.hash(), "seed": cfg.search.seed, "search": result });
            match out {
                Some(p) => write_json(&report, &p)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Pipeline { config, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let results = run_pipeline(&cfg, &out)?;
            for (mode, row) in &results.cells {
                for (variant, cell) in row {
                    info!(
                        "{mode} {variant}: 8-class {:.4} binary {:.4}",
                        cell.f1_8class, cell.f1_binary
                    );
                }
            }
            println!("{}", out.join("results.json").display());
        }
    }
    Ok(())
}

/// Scratch directory for the search's intermediate files.
fn search_dir(output_dir: &Path) -> Result<PathBuf, Error> {
    let dir = output_dir.join("search");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
