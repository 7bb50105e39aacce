use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use comprint_core::dataset::codec::read_gray;
use comprint_core::dataset::forge::{self, load_mask, SOURCES_MANIFEST};
use comprint_core::dataset::{synth, DatasetManifest, EntryKind, IngestOptions, RecipeName, SourceImage, TrainingRecipe};
use comprint_core::localization::{localize, Heatmap};
use comprint_core::metrics::{aggregate_grid, max_mcc, read_results_csv, write_results_csv, EvalRecord, Pooling, ThresholdMode};
use comprint_core::net::{checkpoint, extract_comprint, Comprint};
use comprint_core::runner::{
    compare_trends, finetune_recipe, plot_qf_curves, plot_recompression_matrix, pretrain_recipe, run_pipeline,
    ExperimentConfig, Profile, RunOptions, RunRecord, Stage, RUN_MANIFEST,
};
use comprint_core::{io, seed, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "comprint-lab", version, about = "Compression-fingerprint forgery localization experiments")]
struct Cli {
    /// TOML file merged over the profile preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run or output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute stages whose cached hash differs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build source splits, training sets and the composite test suite.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train a fingerprint network for one recipe.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Extract comprints from images with a trained checkpoint.
    Extract(ExtractArgs),
    /// Turn comprints into heatmaps.
    Localize(LocalizeArgs),
    /// Score heatmaps against composite masks.
    Evaluate(EvaluateArgs),
    /// Draw the QF-pair curves and recompression matrices from a results table.
    Plot(PlotArgs),
    /// Run pipeline stages inside a run directory.
    Run(RunArgs),
    /// Summarize a run directory.
    Report,
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    Build {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Recipes to build; defaults to the configured ones.
        #[arg(long)]
        recipe: Vec<RecipeName>,
    },
    TestSuite,
    /// Write a procedural corpus.
    Synth {
        #[arg(long, default_value_t = 115)]
        count: usize,
        #[arg(long, default_value_t = 400)]
        size: usize,
    },
}

#[derive(Args, Debug)]
struct RecipeArgs {
    #[arg(long)]
    recipe: RecipeName,
    /// Dataset root holding `<recipe>/manifest.json`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum TrainCmd {
    Pretrain(RecipeArgs),
    Siamese {
        #[command(flatten)]
        recipe: RecipeArgs,
        /// Starting weights; defaults to `<out>/<recipe>.pretrain.ckpt`.
        #[arg(long)]
        init: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    #[arg(long)]
    comprint: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Directory of `<entry id>.npy` heatmaps.
    #[arg(long)]
    heatmaps: PathBuf,
    /// Test-suite manifest; masks resolve against its dataset root.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    thresholds: Option<usize>,
    #[arg(long)]
    pooling: Option<Pooling>,
    /// Model name for the results table; defaults to the heatmap directory name.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Comma-separated stages; all when omitted.
    #[arg(long, value_delimiter = ',')]
    stages: Vec<Stage>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, cli.profile)?,
        None => ExperimentConfig::resolve(None, cli.profile)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn files_with_ext(path: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| exts.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("item").to_string()
}

fn dataset(cli: &Cli, cmd: &DatasetCmd) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    match cmd {
        DatasetCmd::Synth { count, size } => {
            let files = synth::synthesize_corpus(&out, *count, (*size, *size), seed::derive(cfg.seed, "corpus"))?;
            println!("wrote {} images to {}", files.len(), out.display());
        }
        DatasetCmd::Build { corpus, recipe } => {
            let sources_path = out.join(SOURCES_MANIFEST);
            let sources = if sources_path.exists() && !cli.force {
                DatasetManifest::load(&sources_path)?
            } else {
                let corpus = match corpus.clone().or(cfg.dataset.corpus.clone()) {
                    Some(c) => c,
                    None => {
                        let dir = out.join("corpus");
                        let side = cfg.dataset.synthetic_size;
                        synth::synthesize_corpus(&dir, cfg.dataset.splits.total(), (side, side), seed::derive(cfg.seed, "corpus"))?;
                        dir
                    }
                };
                let d = &cfg.dataset;
                let opts = IngestOptions {
                    splits: d.splits,
                    seed: seed::derive(cfg.seed, "splits"),
                    train_size: (d.train_size[0], d.train_size[1]),
                    test_size: (d.test_size[0], d.test_size[1]),
                };
                forge::ingest_corpus(&corpus, &out, &opts)?
            };
            let names = if recipe.is_empty() { cfg.dataset.recipes.clone() } else { recipe.clone() };
            for name in names {
                let m = forge::build_training_set(&out, &sources, &TrainingRecipe::preset(name), seed::derive(cfg.seed, name.slug()))?;
                println!("{}: {} training entries", name.display_name(), m.entries.len());
            }
        }
        DatasetCmd::TestSuite => {
            let sources_path = out.join(SOURCES_MANIFEST);
            if !sources_path.exists() {
                return Err(Error::MissingStage {
                    needed: "dataset build".into(),
                });
            }
            let m = forge::build_test_suite(&out, &DatasetManifest::load(&sources_path)?)?;
            println!("{} composite entries", m.entries.len());
        }
    }
    Ok(())
}

fn train(cli: &Cli, cmd: &TrainCmd) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    mkdir(&out)?;
    match cmd {
        TrainCmd::Pretrain(a) => {
            let (model, state) = pretrain_recipe(&cfg, &a.data, a.recipe)?;
            let path = out.join(format!("{}.pretrain.ckpt", a.recipe.slug()));
            checkpoint::save(&model, a.recipe.display_name(), &path)?;
            println!(
                "{}: validation MSE {:.4e} -> {:.4e}, saved {}",
                a.recipe.display_name(),
                state.initial_val.unwrap_or(f64::NAN),
                state.pretrain_loss.unwrap_or(f64::NAN),
                path.display()
            );
        }
        TrainCmd::Siamese { recipe: a, init } => {
            let init = init.clone().unwrap_or_else(|| out.join(format!("{}.pretrain.ckpt", a.recipe.slug())));
            if !init.exists() {
                return Err(Error::MissingStage {
                    needed: "train pretrain".into(),
                });
            }
            let (mut model, _) = checkpoint::load(&init)?;
            let path = out.join(format!("{}.ckpt", a.recipe.slug()));
            let state = finetune_recipe(&cfg, &a.data, a.recipe, &mut model, &path)?;
            println!(
                "{}: separation {:.4} -> {:.4}, saved {}",
                a.recipe.display_name(),
                state.initial_val.unwrap_or(f64::NAN),
                state.val_history.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                path.display()
            );
        }
    }
    Ok(())
}

fn extract(cli: &Cli, a: &ExtractArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    mkdir(&out)?;
    let (model, tag) = checkpoint::load(&a.model)?;
    for path in files_with_ext(&a.input, &["png", "jpg", "jpeg"])? {
        // test-suite directories keep their ground-truth mask next to the images
        if a.input.is_dir() && stem(&path) == "mask" {
            continue;
        }
        let pixels = read_gray(&path)?;
        let (h, w) = pixels.dim();
        let img = SourceImage::new(stem(&path), pixels, path.to_string_lossy());
        let tile = cfg.model.tile.min(h).min(w);
        let c = extract_comprint(&model, &img, tile, cfg.model.overlap.min(tile - 1))?;
        io::write_npy(&out.join(format!("{}.npy", img.id)), &c.values)?;
        io::write_minmax_png(&out.join(format!("{}.png", img.id)), &c.values)?;
        println!("{} ({tag})", img.id);
    }
    Ok(())
}

fn localize_cmd(cli: &Cli, a: &LocalizeArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    mkdir(&out)?;
    let mut params = cfg.localization.clone();
    if let Some(w) = a.window {
        params.window = w;
    }
    if let Some(s) = a.stride {
        params.stride = s;
    }
    if let Some(d) = a.dim {
        params.dim = d;
    }
    let base_seed = cli.seed.unwrap_or(params.em.seed);
    for path in files_with_ext(&a.comprint, &["npy"])? {
        let id = stem(&path);
        let comprint = Comprint::new(io::read_npy(&path)?, id.clone(), "cli")?;
        params.em.seed = seed::derive(base_seed, &id);
        let (heatmap, rec) = localize(&comprint, &params)?;
        io::write_npy(&out.join(format!("{id}.npy")), &heatmap.values)?;
        io::write_diverging_png(&out.join(format!("{id}.png")), &heatmap.values)?;
        std::fs::write(out.join(format!("{id}.json")), serde_json::to_string_pretty(&rec)? + "\n").map_err(|e| Error::Io {
            path: out.join(format!("{id}.json")),
            source: e,
        })?;
        println!("{id}: {} EM iterations", rec.state.iterations);
    }
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    mkdir(&out)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let root = a
        .manifest
        .parent()
        .and_then(|p| p.parent())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let model = a.model.clone().unwrap_or_else(|| stem(&a.heatmaps));
    let mode = if cfg.evaluation.exhaustive {
        ThresholdMode::Exhaustive
    } else {
        ThresholdMode::Quantile(a.thresholds.unwrap_or(cfg.evaluation.thresholds))
    };
    if a.pooling.unwrap_or(cfg.evaluation.pooling) == Pooling::Pooled {
        return Err(Error::Config("pooled scoring is available through `run`".into()));
    }
    let mut records = Vec::new();
    for e in &manifest.entries {
        let EntryKind::Composite { spec, mask } = &e.kind else { continue };
        let hpath = a.heatmaps.join(format!("{}.npy", e.id));
        if !hpath.exists() {
            return Err(Error::MissingStage {
                needed: "localize".into(),
            });
        }
        let h = Heatmap::new(io::read_npy(&hpath)?, e.id.clone(), model.clone())?;
        let curve = max_mcc(&h.values, &load_mask(&root, mask)?, mode)?;
        records.push(EvalRecord {
            model: model.clone(),
            source_id: e.source_id.clone(),
            left_qf: spec.left_qf,
            right_qf: spec.right_qf,
            variant: spec.variant(),
            best_mcc: curve.best_mcc,
            best_threshold: curve.best_threshold,
            polarity: curve.polarity,
        });
    }
    write_results_csv(&out.join("results.csv"), &records)?;
    aggregate_grid(&records)?.write_csv(&out.join("grid.csv"))?;
    println!("scored {} heatmaps", records.len());
    Ok(())
}

fn plot(cli: &Cli, a: &PlotArgs) -> Result<()> {
    let out = out_dir(cli)?;
    mkdir(&out)?;
    let grid = aggregate_grid(&read_results_csv(&a.results)?)?;
    plot_qf_curves(&grid, comprint_core::dataset::Variant::Lossless, &out.join("qf_curves.svg"))?;
    for m in grid.models() {
        let file = format!("recompression_{}.svg", m.to_ascii_lowercase());
        plot_recompression_matrix(&grid, &m, &out.join(file))?;
    }
    print!("{}", compare_trends(&grid));
    Ok(())
}

fn run(cli: &Cli, a: &RunArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let stages = if a.stages.is_empty() { Stage::ALL.to_vec() } else { a.stages.clone() };
    let record = run_pipeline(
        &cfg,
        &stages,
        &RunOptions {
            out: cli.out.clone(),
            force: cli.force,
        },
    )?;
    print_record(&record);
    Ok(())
}

fn print_record(r: &RunRecord) {
    println!("run {} in {}", r.run_id, r.out.display());
    for s in &r.stages {
        println!("  {:<9} {:<7} {:>8.1}s  {}", s.stage.name(), format!("{:?}", s.status).to_lowercase(), s.seconds, &s.hash[..12]);
    }
}

fn report(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = match &cli.out {
        Some(o) => o.clone(),
        None => comprint_core::runner::default_out(&cfg)?,
    };
    let path = out.join(RUN_MANIFEST);
    if !path.exists() {
        return Err(Error::MissingStage { needed: "run".into() });
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    let record: RunRecord = serde_json::from_str(&text)?;
    print_record(&record);
    match comprint_core::runner::load_grid(&out) {
        Ok(grid) => print!("{}", compare_trends(&grid)),
        Err(_) => println!("no evaluation results yet"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Dataset(c) => dataset(cli, c),
        Command::Train(c) => train(cli, c),
        Command::Extract(a) => extract(cli, a),
        Command::Localize(a) => localize_cmd(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Plot(a) => plot(cli, a),
        Command::Run(a) => run(cli, a),
        Command::Report => report(cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
