use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::plot::{plot_qf_curves, plot_recompression_matrix};
use super::stage::{Stage, StageMarker};
use super::trends::compare_trends;
use crate::dataset::codec::read_gray;
use crate::dataset::forge::{self, load_mask, SOURCES_MANIFEST, TEST_MANIFEST};
use crate::dataset::{
    synth, CompositeSpec, DatasetManifest, EntryKind, IngestOptions, ManifestEntry, RecipeName, Role, SourceImage,
    TrainingRecipe, Variant,
};
use crate::error::{Error, Result};
use crate::localization::{localize, Heatmap};
use crate::metrics::{aggregate_grid, max_mcc, max_mcc_pooled, write_results_csv, EvalRecord, Pooling, ResultGrid, ThresholdMode};
use crate::net::{
    checkpoint, extract_comprint, make_model, pretrain_artifact_estimator, siamese_finetune, ArtifactSample,
    BatchSpec, Comprint, FingerprintNet, LabeledImage, PairSampler, PretrainOptions, SiameseOptions, TrainState,
};
use crate::{io, par, seed};

/// Environment variable overriding the default runs root.
pub const RUNS_ENV: &str = "COMPRINT_LAB_RUNS";
pub const RUN_MANIFEST: &str = "MANIFEST.json";
pub const RUN_LOG: &str = "run.log";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const RESULTS_TABLE: &str = "evaluate/results.csv";
pub const GRID_TABLE: &str = "evaluate/grid.csv";
pub const GRID_JSON: &str = "evaluate/grid.json";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Run directory; defaults to `<runs root>/<profile>-<config hash>`.
    pub out: Option<PathBuf>,
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
    /// Not requested; its completed artifacts were found upstream.
    Reused,
    Pending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub hash: String,
    pub status: StageStatus,
    pub dir: PathBuf,
    pub seconds: f64,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub out: PathBuf,
    pub stages: Vec<StageRecord>,
    pub log: PathBuf,
}

impl RunRecord {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn results_table(&self) -> PathBuf {
        self.out.join(RESULTS_TABLE)
    }
}

fn hash_json(parts: &[&serde_json::Value]) -> String {
    let mut bytes = Vec::new();
    for p in parts {
        bytes.extend(serde_json::to_vec(p).expect("json values serialize"));
        bytes.push(0);
    }
    seed::sha256_hex(&bytes)
}

/// Content hash per stage, chained so a change upstream dirties everything
/// downstream.
pub fn stage_hashes(cfg: &ExperimentConfig) -> BTreeMap<Stage, String> {
    let m = &cfg.model;
    let sections: [(Stage, serde_json::Value); 6] = [
        (Stage::Dataset, json!({"seed": cfg.seed, "dataset": cfg.dataset})),
        (Stage::Train, json!({"net": m.net, "pretrain": m.pretrain, "siamese": m.siamese})),
        (Stage::Extract, json!({"tile": m.tile, "overlap": m.overlap})),
        (Stage::Localize, json!(cfg.localization)),
        (Stage::Evaluate, json!(cfg.evaluation)),
        (Stage::Plot, json!({})),
    ];
    let mut out = BTreeMap::new();
    let mut prev = serde_json::Value::String(String::new());
    for (stage, section) in sections {
        let h = hash_json(&[&prev, &json!(stage.name()), &section]);
        prev = serde_json::Value::String(h.clone());
        out.insert(stage, h);
    }
    out
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(seed::sha256_hex(cfg.to_toml()?.as_bytes()))
}

pub fn default_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let profile = match cfg.profile {
        super::config::Profile::Paper => "paper",
        super::config::Profile::Desk => "desk",
    };
    Ok(runs_root().join(format!("{profile}-{}", &config_hash(cfg)?[..12])))
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn digest_file(path: &Path) -> Result<String> {
    Ok(seed::sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs `stages` (and nothing else) in dependency order inside the run
/// directory. Completed stages with a matching hash are reused; a stage
/// directory holding a different hash is refused unless `force`.
pub fn run_pipeline(cfg: &ExperimentConfig, stages: &[Stage], opts: &RunOptions) -> Result<RunRecord> {
    cfg.validate()?;
    let hashes = stage_hashes(cfg);
    let config_hash = config_hash(cfg)?;
    let out = match &opts.out {
        Some(p) => p.clone(),
        None => default_out(cfg)?,
    };
    ensure_dir(&out)?;
    std::fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml()?).map_err(|e| Error::io(out.join(RESOLVED_CONFIG), e))?;
    let run_id = format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), &config_hash[..12]);
    let log_path = out.join(RUN_LOG);

    let mut requested: Vec<Stage> = stages.to_vec();
    requested.sort();
    requested.dedup();

    // the nearest upstream of the first requested stage must be complete
    if let Some(first) = requested.first() {
        if let Some(up) = first.upstream() {
            check_complete(&out, up, &hashes[&up])?;
        }
    }
    for w in requested.windows(2) {
        // gaps in the request need the skipped stages on disk
        let mut s = w[1].upstream();
        while let Some(st) = s {
            if st == w[0] {
                break;
            }
            check_complete(&out, st, &hashes[&st])?;
            s = st.upstream();
        }
    }

    let mut records = Vec::new();
    for stage in Stage::ALL {
        let dir = out.join(stage.name());
        let hash = hashes[&stage].clone();
        let marker = StageMarker::load(&dir)?;
        if !requested.contains(&stage) {
            let status = match &marker {
                Some(m) if m.hash == hash => StageStatus::Reused,
                _ => StageStatus::Pending,
            };
            records.push(StageRecord {
                stage,
                artifacts: marker.map(|m| m.artifacts).unwrap_or_default(),
                hash,
                status,
                dir,
                seconds: 0.0,
            });
            continue;
        }
        if let Some(m) = &marker {
            if m.hash == hash && !opts.force {
                log_line(&log_path, &json!({"run": run_id, "stage": stage.name(), "status": "cached", "hash": hash}))?;
                records.push(StageRecord {
                    stage,
                    hash,
                    status: StageStatus::Cached,
                    dir,
                    seconds: 0.0,
                    artifacts: m.artifacts.clone(),
                });
                continue;
            }
            if m.hash != hash && !opts.force {
                return Err(Error::CacheMismatch {
                    path: dir,
                    found: m.hash.clone(),
                    expected: hash,
                });
            }
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        ensure_dir(&dir)?;
        let started = Instant::now();
        let artifacts = run_stage(stage, cfg, &out)?;
        let seconds = started.elapsed().as_secs_f64();
        StageMarker {
            stage,
            hash: hash.clone(),
            artifacts: artifacts.clone(),
        }
        .save(&dir)?;
        log_line(
            &log_path,
            &json!({
                "run": run_id,
                "stage": stage.name(),
                "status": "ran",
                "wall_s": seconds,
                "seed": cfg.seed,
                "hash": hash,
                "artifacts": artifacts,
            }),
        )?;
        log::info!("stage {stage} finished in {seconds:.1}s");
        records.push(StageRecord {
            stage,
            hash,
            status: StageStatus::Ran,
            dir,
            seconds,
            artifacts,
        });
    }

    let record = RunRecord {
        run_id,
        config_hash,
        out: out.clone(),
        stages: records,
        log: log_path,
    };
    write_json(&out.join(RUN_MANIFEST), &record)?;
    Ok(record)
}

fn check_complete(out: &Path, stage: Stage, hash: &str) -> Result<()> {
    let dir = out.join(stage.name());
    match StageMarker::load(&dir)? {
        None => Err(Error::MissingStage {
            needed: stage.name().to_string(),
        }),
        Some(m) if m.hash != hash => Err(Error::CacheMismatch {
            path: dir,
            found: m.hash,
            expected: hash.to_string(),
        }),
        Some(_) => Ok(()),
    }
}

fn log_line(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{value}").map_err(|e| Error::io(path, e))
}

type Artifacts = BTreeMap<String, String>;

fn run_stage(stage: Stage, cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    match stage {
        Stage::Dataset => stage_dataset(cfg, out),
        Stage::Train => stage_train(cfg, out),
        Stage::Extract => stage_extract(cfg, out),
        Stage::Localize => stage_localize(cfg, out),
        Stage::Evaluate => stage_evaluate(cfg, out),
        Stage::Plot => stage_plot(cfg, out),
    }
}

fn recipes(cfg: &ExperimentConfig) -> Vec<(RecipeName, TrainingRecipe)> {
    cfg.dataset
        .recipes
        .iter()
        .map(|&r| (r, TrainingRecipe::preset(r)))
        .collect()
}

fn record(artifacts: &mut Artifacts, base: &Path, rel: &str) -> Result<()> {
    artifacts.insert(rel.to_string(), digest_file(&base.join(rel))?);
    Ok(())
}

fn stage_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let root = out.join(Stage::Dataset.name());
    let d = &cfg.dataset;
    let corpus = match &d.corpus {
        Some(p) => p.clone(),
        None => {
            let dir = root.join("corpus");
            let side = d.synthetic_size;
            synth::synthesize_corpus(&dir, d.splits.total(), (side, side), seed::derive(cfg.seed, "corpus"))?;
            dir
        }
    };
    let opts = IngestOptions {
        splits: d.splits,
        seed: seed::derive(cfg.seed, "splits"),
        train_size: (d.train_size[0], d.train_size[1]),
        test_size: (d.test_size[0], d.test_size[1]),
    };
    let sources = forge::ingest_corpus(&corpus, &root, &opts)?;
    let mut artifacts = Artifacts::new();
    record(&mut artifacts, &root, SOURCES_MANIFEST)?;
    for (name, recipe) in recipes(cfg) {
        forge::build_training_set(&root, &sources, &recipe, seed::derive(cfg.seed, name.slug()))?;
        record(&mut artifacts, &root, &format!("{}/manifest.json", forge::recipe_slug(&recipe)))?;
    }
    forge::build_test_suite(&root, &sources)?;
    record(&mut artifacts, &root, TEST_MANIFEST)?;
    Ok(artifacts)
}

fn load_training(root: &Path, manifest: &DatasetManifest, role: Role) -> Result<(Vec<ArtifactSample>, Vec<LabeledImage>)> {
    let entries: Vec<&ManifestEntry> = manifest.role(role).collect();
    let loaded = par::try_map(&entries, |e| {
        let EntryKind::Chain { chain, original } = &e.kind else {
            return Err(Error::Data(format!("{} is not a training entry", e.id)));
        };
        let compressed = read_gray(&root.join(&e.path))?;
        let original = read_gray(&root.join(original))?;
        let sample = ArtifactSample::new(e.id.clone(), compressed.clone(), original)?;
        let labeled = LabeledImage {
            id: e.id.clone(),
            pixels: compressed,
            chain: chain.clone(),
        };
        Ok((sample, labeled))
    })?;
    Ok(loaded.into_iter().unzip())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainSummary {
    model: String,
    pretrain: TrainState,
    siamese: TrainState,
}

/// Artifact pretraining for one recipe from a dataset root.
pub fn pretrain_recipe(cfg: &ExperimentConfig, data: &Path, name: RecipeName) -> Result<(FingerprintNet, TrainState)> {
    let recipe = TrainingRecipe::preset(name);
    let slug = forge::recipe_slug(&recipe);
    let m = &cfg.model;
    let manifest = DatasetManifest::load(&data.join(&slug).join("manifest.json"))?;
    let (train, _) = load_training(data, &manifest, Role::Train)?;
    let (val, _) = load_training(data, &manifest, Role::Val)?;
    // identical initial weights for every recipe
    let mut model = make_model(m.net.clone(), seed::derive(cfg.seed, "init"))?;
    let pre = PretrainOptions {
        epochs: m.pretrain.epochs,
        batch_size: m.pretrain.batch_size,
        patch: m.pretrain.patch,
        patches_per_image: m.pretrain.patches_per_image,
        lr: m.pretrain.lr,
        patience: m.pretrain.patience,
        seed: seed::derive(cfg.seed, &format!("pretrain-{slug}")),
        checkpoint: None,
    };
    let state = pretrain_artifact_estimator(&mut model, &train, &val, &pre, name.display_name())?;
    Ok((model, state))
}

/// Siamese fine-tuning for one recipe; saves the result to `ckpt`.
pub fn finetune_recipe(
    cfg: &ExperimentConfig,
    data: &Path,
    name: RecipeName,
    model: &mut FingerprintNet,
    ckpt: &Path,
) -> Result<TrainState> {
    let recipe = TrainingRecipe::preset(name);
    let slug = forge::recipe_slug(&recipe);
    let tag = name.display_name();
    let m = &cfg.model;
    let manifest = DatasetManifest::load(&data.join(&slug).join("manifest.json"))?;
    let (_, train_labeled) = load_training(data, &manifest, Role::Train)?;
    let (_, val_labeled) = load_training(data, &manifest, Role::Val)?;
    let spec = BatchSpec {
        pairs_per_batch: m.siamese.pairs_per_batch,
        positive_fraction: m.siamese.positive_fraction,
        patch: m.siamese.patch,
    };
    let mut sampler = PairSampler::new(&train_labeled, spec, seed::derive(cfg.seed, &format!("pairs-{slug}")))?;
    let val_pairs: Vec<_> = match PairSampler::new(&val_labeled, spec, seed::derive(cfg.seed, &format!("val-pairs-{slug}"))) {
        Ok(s) => s.take(m.siamese.val_pairs).collect(),
        Err(e) => {
            log::warn!("{tag}: no validation pairs ({e}); keeping the final weights");
            Vec::new()
        }
    };
    let sia = SiameseOptions {
        steps: m.siamese.steps,
        margin: m.siamese.margin,
        lr: m.siamese.lr,
        pairs_per_batch: m.siamese.pairs_per_batch,
        eval_every: m.siamese.eval_every,
        seed: seed::derive(cfg.seed, &format!("siamese-{slug}")),
        checkpoint: Some(ckpt.to_path_buf()),
    };
    let state = siamese_finetune(model, &mut sampler, &val_pairs, &sia, tag)?;
    if state.checkpoint_path.is_none() {
        checkpoint::save(model, tag, ckpt)?;
    }
    Ok(state)
}

fn stage_train(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let data = out.join(Stage::Dataset.name());
    let dir = out.join(Stage::Train.name());
    let mut artifacts = Artifacts::new();
    for (name, recipe) in recipes(cfg) {
        let slug = forge::recipe_slug(&recipe);
        let (mut model, pretrain) = pretrain_recipe(cfg, &data, name)?;
        let siamese = finetune_recipe(cfg, &data, name, &mut model, &dir.join(format!("{slug}.ckpt")))?;
        write_json(
            &dir.join(format!("{slug}.state.json")),
            &TrainSummary {
                model: name.display_name().to_string(),
                pretrain,
                siamese,
            },
        )?;
        record(&mut artifacts, &dir, &format!("{slug}.ckpt"))?;
    }
    Ok(artifacts)
}

fn test_entries(out: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(&out.join(Stage::Dataset.name()).join(TEST_MANIFEST))
}

fn stage_extract(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let data = out.join(Stage::Dataset.name());
    let dir = out.join(Stage::Extract.name());
    let suite = test_entries(out)?;
    let mut artifacts = Artifacts::new();
    for (_, recipe) in recipes(cfg) {
        let slug = forge::recipe_slug(&recipe);
        let (model, tag) = checkpoint::load(&out.join(Stage::Train.name()).join(format!("{slug}.ckpt")))?;
        let index: Vec<String> = par::try_map(&suite.entries, |e| {
            let pixels = read_gray(&data.join(&e.path))?;
            let (h, w) = pixels.dim();
            let img = SourceImage::new(e.id.clone(), pixels, e.path.clone());
            let tile = cfg.model.tile.min(h).min(w);
            let overlap = cfg.model.overlap.min(tile - 1);
            let mut c = extract_comprint(&model, &img, tile, overlap)?;
            c.model_tag = tag.clone();
            let rel = format!("{slug}/{}.npy", e.id);
            io::write_npy(&dir.join(&rel), &c.values)?;
            Ok::<_, Error>(format!("{rel} {}", digest_file(&dir.join(&rel))?))
        })?;
        let rel = format!("{slug}/index.txt");
        std::fs::write(dir.join(&rel), index.join("\n") + "\n").map_err(|e| Error::io(dir.join(&rel), e))?;
        record(&mut artifacts, &dir, &rel)?;
    }
    Ok(artifacts)
}

fn stage_localize(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let src = out.join(Stage::Extract.name());
    let dir = out.join(Stage::Localize.name());
    let suite = test_entries(out)?;
    let mut artifacts = Artifacts::new();
    for (name, recipe) in recipes(cfg) {
        let slug = forge::recipe_slug(&recipe);
        let tag = name.display_name();
        let index: Vec<String> = par::try_map(&suite.entries, |e| {
            let values = io::read_npy(&src.join(format!("{slug}/{}.npy", e.id)))?;
            let comprint = Comprint::new(values, e.id.clone(), tag)?;
            let mut params = cfg.localization.clone();
            params.em.seed = seed::derive(cfg.localization.em.seed, &e.id);
            let (heatmap, rec) = localize(&comprint, &params)?;
            let rel = format!("{slug}/{}.npy", e.id);
            io::write_npy(&dir.join(&rel), &heatmap.values)?;
            io::write_diverging_png(&dir.join(format!("{slug}/{}.png", e.id)), &heatmap.values)?;
            write_json(&dir.join(format!("{slug}/{}.json", e.id)), &rec)?;
            Ok::<_, Error>(format!("{rel} {}", digest_file(&dir.join(&rel))?))
        })?;
        let rel = format!("{slug}/index.txt");
        std::fs::write(dir.join(&rel), index.join("\n") + "\n").map_err(|e| Error::io(dir.join(&rel), e))?;
        record(&mut artifacts, &dir, &rel)?;
    }
    Ok(artifacts)
}

/// Loads the heatmap written by the localize stage for one model and entry.
pub fn load_heatmap(out: &Path, slug: &str, entry_id: &str, model_tag: &str) -> Result<Heatmap> {
    let values = io::read_npy(&out.join(Stage::Localize.name()).join(format!("{slug}/{entry_id}.npy")))?;
    Heatmap::new(values, entry_id, model_tag)
}

fn threshold_mode(cfg: &ExperimentConfig) -> ThresholdMode {
    if cfg.evaluation.exhaustive {
        ThresholdMode::Exhaustive
    } else {
        ThresholdMode::Quantile(cfg.evaluation.thresholds)
    }
}

fn composite_of(e: &ManifestEntry) -> Result<(&CompositeSpec, &str)> {
    match &e.kind {
        EntryKind::Composite { spec, mask } => Ok((spec, mask.as_str())),
        _ => Err(Error::Data(format!("{} is not a composite entry", e.id))),
    }
}

fn stage_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let data = out.join(Stage::Dataset.name());
    let dir = out.join(Stage::Evaluate.name());
    let suite = test_entries(out)?;
    let mode = threshold_mode(cfg);
    let mut records = Vec::new();
    for (name, recipe) in recipes(cfg) {
        let slug = forge::recipe_slug(&recipe);
        let tag = name.display_name();
        match cfg.evaluation.pooling {
            Pooling::PerImage => {
                let rs = par::try_map(&suite.entries, |e| {
                    let (spec, mask_rel) = composite_of(e)?;
                    let mask = load_mask(&data, mask_rel)?;
                    let h = load_heatmap(out, &slug, &e.id, tag)?;
                    let curve = max_mcc(&h.values, &mask, mode)?;
                    Ok::<_, Error>(EvalRecord {
                        model: tag.to_string(),
                        source_id: e.source_id.clone(),
                        left_qf: spec.left_qf,
                        right_qf: spec.right_qf,
                        variant: spec.variant(),
                        best_mcc: curve.best_mcc,
                        best_threshold: curve.best_threshold,
                        polarity: curve.polarity,
                    })
                })?;
                records.extend(rs);
            }
            Pooling::Pooled => {
                let mut cells: BTreeMap<(u8, Variant), Vec<&ManifestEntry>> = BTreeMap::new();
                for e in &suite.entries {
                    let (spec, _) = composite_of(e)?;
                    cells.entry((spec.left_qf, spec.variant())).or_default().push(e);
                }
                let cells: Vec<_> = cells.into_iter().collect();
                let rs = par::try_map(&cells, |((left_qf, variant), entries)| {
                    let mut loaded = Vec::new();
                    for e in entries {
                        let (_, mask_rel) = composite_of(e)?;
                        loaded.push((load_heatmap(out, &slug, &e.id, tag)?.values, load_mask(&data, mask_rel)?));
                    }
                    let refs: Vec<_> = loaded.iter().map(|(h, m)| (h, m)).collect();
                    let curve = max_mcc_pooled(&refs, mode)?;
                    Ok::<_, Error>(EvalRecord {
                        model: tag.to_string(),
                        source_id: "pooled".into(),
                        left_qf: *left_qf,
                        right_qf: left_qf + crate::dataset::QF_PAIR_GAP,
                        variant: *variant,
                        best_mcc: curve.best_mcc,
                        best_threshold: curve.best_threshold,
                        polarity: curve.polarity,
                    })
                })?;
                records.extend(rs);
            }
        }
    }
    write_results_csv(&out.join(RESULTS_TABLE), &records)?;
    let grid = aggregate_grid(&records)?;
    grid.write_csv(&out.join(GRID_TABLE))?;
    write_json(&out.join(GRID_JSON), &grid_to_rows(&grid))?;
    let mut artifacts = Artifacts::new();
    for rel in ["results.csv", "grid.csv", "grid.json"] {
        record(&mut artifacts, &dir, rel)?;
    }
    Ok(artifacts)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridRow {
    #[serde(flatten)]
    key: crate::metrics::CellKey,
    #[serde(flatten)]
    stats: crate::metrics::CellStats,
}

fn grid_to_rows(grid: &ResultGrid) -> Vec<GridRow> {
    grid.cells
        .iter()
        .map(|(k, s)| GridRow {
            key: k.clone(),
            stats: *s,
        })
        .collect()
}

/// Reads the aggregated grid written by the evaluate stage.
pub fn load_grid(out: &Path) -> Result<ResultGrid> {
    let rows: Vec<GridRow> = read_json(&out.join(GRID_JSON))?;
    Ok(ResultGrid {
        cells: rows.into_iter().map(|r| (r.key, r.stats)).collect(),
    })
}

fn stage_plot(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let dir = out.join(Stage::Plot.name());
    let grid = load_grid(out)?;
    let mut artifacts = Artifacts::new();
    plot_qf_curves(&grid, Variant::Lossless, &dir.join("qf_curves.svg"))?;
    record(&mut artifacts, &dir, "qf_curves.svg")?;
    record(&mut artifacts, &dir, "qf_curves.csv")?;
    for (name, recipe) in recipes(cfg) {
        let slug = forge::recipe_slug(&recipe);
        plot_recompression_matrix(&grid, name.display_name(), &dir.join(format!("recompression_{slug}.svg")))?;
        record(&mut artifacts, &dir, &format!("recompression_{slug}.svg"))?;
        record(&mut artifacts, &dir, &format!("recompression_{slug}.csv"))?;
    }
    let report = compare_trends(&grid);
    write_json(&dir.join("trends.json"), &report)?;
    std::fs::write(dir.join("trends.txt"), report.to_string()).map_err(|e| Error::io(dir.join("trends.txt"), e))?;
    record(&mut artifacts, &dir, "trends.json")?;
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_change_only_downstream() {
        let base = ExperimentConfig::desk();
        let h0 = stage_hashes(&base);
        let mut c = base.clone();
        c.localization.window = 96;
        let h1 = stage_hashes(&c);
        for s in [Stage::Dataset, Stage::Train, Stage::Extract] {
            assert_eq!(h0[&s], h1[&s]);
        }
        for s in [Stage::Localize, Stage::Evaluate, Stage::Plot] {
            assert_ne!(h0[&s], h1[&s]);
        }
        let mut c = base.clone();
        c.seed = 9;
        let h2 = stage_hashes(&c);
        assert!(Stage::ALL.iter().all(|s| h0[s] != h2[s]));
        let mut c = base;
        c.evaluation.thresholds = 64;
        let h3 = stage_hashes(&c);
        assert_eq!(h0[&Stage::Localize], h3[&Stage::Localize]);
        assert_ne!(h0[&Stage::Evaluate], h3[&Stage::Evaluate]);
    }

    #[test]
    fn missing_upstream_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out: Some(dir.path().to_path_buf()),
            force: false,
        };
        let e = run_pipeline(&ExperimentConfig::desk(), &[Stage::Evaluate], &opts).unwrap_err();
        assert_eq!(e.to_string(), "missing artifact for stage 'localize': run 'localize' first");
        assert_eq!(e.exit_code(), 2);
    }
}
