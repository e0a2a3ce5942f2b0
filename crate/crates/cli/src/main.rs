use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selfdense::dataset::{load_manifest, FoldPlan};
use selfdense::enhance::io::{read_planar, IM3F_MAGIC};
use selfdense::enhance::EnhancementVariant;
use selfdense::metrics::report_to_text;
use selfdense::pipeline::{self as pl, PipelineError, RunConfig, Workdir};

#[derive(Parser, Debug)]
#[command(name = "selfdense", version, about = "Self-ONN lung-nodule classification pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key=value config file; flags below override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.q=2` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Start from the scaled-down single-core network instead of the defaults
    #[arg(long, global = true)]
    desk: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Worker threads; 1 gives bitwise reproducible artifacts
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic blob dataset and its manifest
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Output directory for images/ and manifest.csv
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Preprocess manifest images into every enhancement variant
    Enhance,
    /// Write the stratified fold plan
    Split,
    /// Train one network per (variant, fold)
    Train {
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Test-fold probabilities of every trained network
    Predict,
    /// Assemble the out-of-fold probability table
    Table,
    /// Rank the eight learners and fit the meta random forest
    Stack,
    /// Per-fold metric reports, or a report for one prediction CSV
    Eval {
        /// CSV with id, label and a pred or p column
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// ScoreCAM overlays
    Cam {
        #[arg(long, default_value = "gray")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Comma-separated ids; defaults to the first 4 test ids of the fold
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// Single-image inference latency
    Bench {
        #[arg(long, default_value = "gray")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
}

fn variant(tag: &str) -> Result<EnhancementVariant, PipelineError> {
    EnhancementVariant::from_tag(tag)
        .ok_or_else(|| PipelineError::Config(format!("unknown variant `{tag}` (expected gray, gamma, invert or chan3)")))
}

fn load_config(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = if c.desk { RunConfig::desk() } else { RunConfig::default() };
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
    }
    for kv in &c.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| PipelineError::Config(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = &c.workdir {
        cfg.workdir = w.clone();
    }
    if let Some(m) = &c.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fold_plan(wd: &Workdir) -> Result<FoldPlan, PipelineError> {
    let path = wd.fold_plan();
    if !path.exists() {
        return Err(PipelineError::Missing { path, hint: "run `split` first".into() });
    }
    let text = std::fs::read_to_string(&path).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
    Ok(FoldPlan::from_text(&text)?)
}

fn percent(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli.common)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| PipelineError::Config(format!("threads: {e}")))?;
    let wd = Workdir::new(&cfg.workdir);
    match cli.command {
        Command::Synth { n, size, out } => {
            let path = pl::stage_synth(&out, n, size, cfg.seed)?;
            println!("wrote {}", path.display());
        }
        Command::Enhance => {
            pl::stage_enhance(&cfg)?;
            println!("wrote {}", wd.root.join("images").display());
        }
        Command::Split => {
            let plan = pl::stage_split(&cfg)?;
            for (f, fold) in plan.folds.iter().enumerate() {
                println!("fold {f}: train {} val {} test {}", fold.train.len(), fold.val.len(), fold.test.len());
            }
        }
        Command::Train { variant: v, fold } => {
            let plan = fold_plan(&wd)?;
            let vs = match &v {
                Some(tag) => vec![variant(tag)?],
                None => cfg.variants.clone(),
            };
            let fs: Vec<usize> = match fold {
                Some(f) if f >= plan.k() => return Err(PipelineError::Config(format!("fold {f} out of range (k={})", plan.k()))),
                Some(f) => vec![f],
                None => (0..plan.k()).collect(),
            };
            let only: Vec<_> = vs.iter().flat_map(|v| fs.iter().map(move |f| (*v, *f))).collect();
            pl::stage_train(&cfg, Some(&only))?;
            for (v, f) in only {
                println!("wrote {}", wd.checkpoint(v, f).display());
            }
        }
        Command::Predict => {
            pl::stage_predict(&cfg)?;
            println!("wrote {}", wd.root.join("tables").display());
        }
        Command::Table => {
            let t = pl::stage_table(&cfg)?;
            println!("wrote {} ({} rows)", wd.table().display(), t.len());
        }
        Command::Stack => {
            let stack = pl::stage_stack(&cfg)?;
            for (k, a) in pl::read_learner_accuracies(&wd)? {
                println!("{k:>4} {}", percent(a));
            }
            let names: Vec<String> = stack.kinds().iter().map(|k| k.to_string()).collect();
            println!("meta random forest over {}", names.join(" + "));
        }
        Command::Eval { predictions: Some(path) } => {
            let r = pl::eval_prediction_csv(&path)?;
            print!("{}", report_to_text(&r));
            println!("overall accuracy {}", percent(r.overall_accuracy));
        }
        Command::Eval { predictions: None } => {
            let s = pl::stage_eval(&cfg)?;
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            for (v, accs) in &s.variant_accuracy {
                println!("{:>6} {}", v.tag(), percent(mean(accs)));
            }
            println!("{:>6} {}", "stack", percent(mean(&s.stack_accuracy)));
            println!("reports in {}", wd.reports().display());
        }
        Command::Cam { variant: v, fold, ids } => {
            let v = variant(&v)?;
            let ids = if ids.is_empty() {
                let plan = fold_plan(&wd)?;
                let fold_ids = plan.folds.get(fold).ok_or_else(|| PipelineError::Config(format!("fold {fold} out of range")))?;
                fold_ids.test.iter().take(4).cloned().collect()
            } else {
                ids
            };
            for p in pl::stage_cam(&cfg, v, fold, &ids)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Bench { variant: v, fold, warmup, runs } => {
            let v = variant(&v)?;
            if !cfg.manifest.exists() {
                return Err(PipelineError::Missing { path: cfg.manifest.clone(), hint: "run `synth` first".into() });
            }
            let m = load_manifest(&cfg.manifest)?;
            let id = &m.records.first().ok_or_else(|| PipelineError::Input("manifest is empty".into()))?.id;
            let img_path = wd.image(v, id);
            if !img_path.exists() {
                return Err(PipelineError::Missing { path: img_path, hint: "run `enhance` first".into() });
            }
            let img = read_planar(&img_path, IM3F_MAGIC)?;
            let b = pl::bench(&wd.checkpoint(v, fold), &img, warmup, runs.max(1))?;
            println!("{:.3} ± {:.3} ms ({} runs)", b.mean_ms, b.std_ms, b.runs);
        }
    }
    Ok(())
}

fn exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Missing { .. } => 3,
        PipelineError::Checkpoint { path, .. } | PipelineError::Io { path, .. } if !Path::new(path).exists() => 3,
        PipelineError::Config(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
