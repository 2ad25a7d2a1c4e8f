//! The `smcl` command line.
//!
//! Exit codes: 0 on success, 2 for invalid or missing input, 3 when training
//! stopped on a non-finite loss, 1 for anything else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::DType;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use smcl_core::config::PRESETS;
use smcl_core::{ClassHistogram, EvalReport, LongTailSpec, MaskMode, TrainConfig};

use crate::checkpoint;
use crate::dataset::{CifarVariant, ImageSet, Split};
use crate::error::{Error, IoContext, Result};
use crate::eval::{cam, evaluate, format_table, save_overlay};
use crate::record::{
    code_revision, config_fingerprint, run_id, ExperimentRecord, RunStatus, CHECKPOINT_FILE,
    METRICS_FILE, RECORD_FILE,
};
use crate::report::{grid_table, render, single_row_table};
use crate::saliency::spectral_residual;
use crate::trainer::{RunFiles, Trainer};

pub const TRAIN_FILE: &str = "train.smcl";
pub const TEST_FILE: &str = "test.smcl";
pub const HISTOGRAM_FILE: &str = "histogram.json";

#[derive(Parser, Debug)]
#[command(name = "smcl", version, about = "Saliency-masked contrastive learning for long-tailed classification")]
pub struct Cli {
    /// Root for raw datasets; CIFAR sources default to sub-directories of it.
    #[arg(long, global = true, env = "SMCL_DATA_ROOT", default_value = "data")]
    pub data_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a long-tailed training set and a balanced test set.
    BuildData(BuildDataArgs),
    /// Train one configuration into a run directory named by its fingerprint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Evaluate(EvaluateArgs),
    /// Train every variant along one ablation axis and tabulate the results.
    Ablate(AblateArgs),
    /// Render tables and loss curves from experiment records.
    Report(ReportArgs),
    /// Save a class activation map overlay for one image.
    Cam(CamArgs),
    /// Save the spectral-residual saliency map of one image.
    Saliency(SaliencyArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    /// One sub-directory of images per class.
    Dir,
    /// Procedural colored squares.
    Synthetic,
}

#[derive(Args, Debug)]
pub struct BuildDataArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Raw data location; CIFAR defaults to `<data-root>/cifar-10-batches-bin`
    /// or `<data-root>/cifar-100-binary`.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Test-split directory for `--dataset dir`.
    #[arg(long)]
    pub test_source: Option<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    pub rho: f64,
    /// Head-class count; defaults to the smallest class of the source.
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub image_size: usize,
    /// Synthetic training images per class before imbalancing.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Named preset; see `--list-presets`.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Flat TOML or JSON file of config keys; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=10 --set mask_mode=center`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the preset names and exit.
    #[arg(long)]
    pub list_presets: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory written by `build-data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Replace an existing run with the same fingerprint.
    #[arg(long)]
    pub force: bool,
    /// Continue an existing run directory from its checkpoint.
    #[arg(long, conflicts_with = "force")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    /// Train in double precision.
    #[arg(long)]
    pub f64: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Random, center and saliency mask placement.
    MaskMode,
    /// Cross-entropy only against the contrastive term, with and without DRW.
    Contrastive,
    /// ERM, DRW with mixed cross-entropy only, and DRW with the full objective.
    Methods,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Seeds shared by every variant; defaults to the config's seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Retrain variants that already have a completed run.
    #[arg(long)]
    pub force: bool,
    /// Directory for `ablation.txt` and `ablation.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub f64: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Record files or run directories.
    #[arg(long = "record", required = true)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitArg {
    Train,
    #[default]
    Test,
}

#[derive(Args, Debug)]
pub struct CamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub split: SplitArg,
    #[arg(long)]
    pub index: usize,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub split: SplitArg,
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFiniteLoss { .. } => 3,
        Error::Core(_)
        | Error::Io { .. }
        | Error::Image(_)
        | Error::Json(_)
        | Error::Format { .. }
        | Error::Contract(_)
        | Error::Usage(_) => 2,
        Error::Tensor(_) | Error::DegenerateBatch(_) => 1,
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildData(args) => build_data(&cli.data_root, &args),
        Command::Train(args) => train(&args),
        Command::Evaluate(args) => evaluate_cmd(&args),
        Command::Ablate(args) => ablate(&args),
        Command::Report(args) => report(&args),
        Command::Cam(args) => cam_cmd(&args),
        Command::Saliency(args) => saliency_cmd(&args),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).at(path)
}

#[derive(Serialize)]
struct DatasetInfo {
    dataset: String,
    rho: f64,
    n_max: usize,
    seed: u64,
    train_fingerprint: String,
    test_fingerprint: String,
}

fn build_data(data_root: &Path, args: &BuildDataArgs) -> Result<()> {
    let (balanced, test) = match args.dataset {
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let (variant, default_dir) = if args.dataset == DatasetKind::Cifar10 {
                (CifarVariant::Cifar10, "cifar-10-batches-bin")
            } else {
                (CifarVariant::Cifar100, "cifar-100-binary")
            };
            let dir = args.source.clone().unwrap_or_else(|| data_root.join(default_dir));
            (
                ImageSet::load_cifar(&dir, variant, Split::Train)?,
                ImageSet::load_cifar(&dir, variant, Split::Test)?,
            )
        }
        DatasetKind::Dir => {
            let train_dir = args.source.as_ref().ok_or_else(|| usage("--dataset dir needs --source"))?;
            let test_dir = args
                .test_source
                .as_ref()
                .ok_or_else(|| usage("--dataset dir needs --test-source"))?;
            let (train, names) = ImageSet::load_class_dirs(train_dir)?;
            let (test, test_names) = ImageSet::load_class_dirs(test_dir)?;
            if names != test_names {
                return Err(usage("train and test directories list different classes"));
            }
            (train, test)
        }
        DatasetKind::Synthetic => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x5eed_da7a);
            let train = ImageSet::synthetic(
                args.classes,
                &vec![args.per_class; args.classes],
                args.image_size,
                &mut rng,
            )?;
            let test = ImageSet::synthetic(
                args.classes,
                &vec![args.test_per_class; args.classes],
                args.image_size,
                &mut rng,
            )?;
            (train, test)
        }
    };
    let n_max = match args.n_max {
        Some(n) => n,
        None => balanced.histogram()?.counts().iter().copied().min().unwrap_or(0),
    };
    let spec = LongTailSpec::new(balanced.num_classes(), args.rho, n_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (train, hist) = balanced.longtail(&spec, &mut rng)?;
    fs::create_dir_all(&args.out).at(&args.out)?;
    train.save(&args.out.join(TRAIN_FILE))?;
    test.save(&args.out.join(TEST_FILE))?;
    write_json(&args.out.join(HISTOGRAM_FILE), &ImageSet::histogram_report(&hist))?;
    write_json(
        &args.out.join("dataset.json"),
        &DatasetInfo {
            dataset: format!("{:?}", args.dataset).to_lowercase(),
            rho: args.rho,
            n_max,
            seed: args.seed,
            train_fingerprint: train.fingerprint(),
            test_fingerprint: test.fingerprint(),
        },
    )?;
    let counts = hist.counts();
    log::info!(
        "{} training images, class counts {} .. {}; {} test images",
        train.len(),
        counts.first().copied().unwrap_or(0),
        counts.last().copied().unwrap_or(0),
        test.len()
    );
    Ok(())
}

/// Resolves `--preset` / `--config` / `--set` into a validated config.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => TrainConfig::preset(name)
            .ok_or_else(|| usage(format!("unknown preset `{name}`; known: {}", PRESETS.join(", "))))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).at(path)?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
            } else {
                toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
        }
        (None, None) => return Err(usage("one of --preset or --config is required")),
    };
    if !args.overrides.is_empty() {
        cfg = apply_overrides(&cfg, &args.overrides)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Applies `key=value` pairs. Values parse as TOML; bare words are strings.
pub fn apply_overrides(cfg: &TrainConfig, pairs: &[String]) -> Result<TrainConfig> {
    let mut table = toml::Table::try_from(cfg).map_err(|e| usage(e.to_string()))?;
    for pair in pairs {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("override `{pair}` is not KEY=VALUE")))?;
        let key = key.trim();
        if !table.contains_key(key) {
            return Err(usage(format!("unknown config key `{key}`")));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        table.insert(key.to_string(), value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| usage(format!("invalid override: {e}")))
}

struct DataDir {
    train: ImageSet,
    test: Option<ImageSet>,
}

fn load_data(dir: &Path) -> Result<DataDir> {
    let train = ImageSet::load(&dir.join(TRAIN_FILE))?;
    let test_path = dir.join(TEST_FILE);
    let test = if test_path.exists() { Some(ImageSet::load(&test_path)?) } else { None };
    Ok(DataDir { train, test })
}

fn dtype(f64: bool) -> DType {
    if f64 {
        DType::F64
    } else {
        DType::F32
    }
}

/// What to do when the run directory already holds a record.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Existing {
    Refuse,
    Replace,
    /// Return a completed record as is; resume anything else.
    Reuse,
}

fn train_run(
    cfg: TrainConfig,
    label: &str,
    data: &DataDir,
    runs_dir: &Path,
    existing: Existing,
    dtype: DType,
) -> Result<ExperimentRecord> {
    let config_fp = config_fingerprint(&cfg);
    let dataset_fp = data.train.fingerprint();
    let id = run_id(&config_fp, &dataset_fp);
    let dir = runs_dir.join(&id);
    if dir.join(RECORD_FILE).exists() {
        match existing {
            Existing::Refuse => {
                return Err(usage(format!(
                    "run {} already exists; pass --force to overwrite or --resume to continue",
                    dir.display()
                )))
            }
            Existing::Replace => fs::remove_dir_all(&dir).at(&dir)?,
            Existing::Reuse => {
                let record = ExperimentRecord::load(&dir)?;
                if record.status == RunStatus::Completed {
                    log::info!("{label}: reusing completed run {id}");
                    return Ok(record);
                }
                if dir.join(CHECKPOINT_FILE).exists() {
                    return resume_run(&dir, data);
                }
                fs::remove_dir_all(&dir).at(&dir)?;
            }
        }
    }
    fs::create_dir_all(&dir).at(&dir)?;
    let record = ExperimentRecord {
        run_id: id,
        label: label.to_string(),
        config_fingerprint: config_fp,
        dataset_fingerprint: dataset_fp,
        revision: code_revision(),
        metrics_path: dir.join(METRICS_FILE),
        checkpoint_path: dir.join(CHECKPOINT_FILE),
        train_histogram: data.train.histogram()?.counts().to_vec(),
        final_report: None,
        status: RunStatus::Running,
        config: cfg.clone(),
    };
    record.save(&dir)?;
    log::info!("{label}: training run {}", dir.display());
    let trainer = Trainer::new(cfg, data.train.clone(), data.test.clone(), dtype, Some(RunFiles::in_dir(&dir)))?;
    finish(trainer, record, &dir)
}

fn resume_run(dir: &Path, data: &DataDir) -> Result<ExperimentRecord> {
    let record = ExperimentRecord::load(dir)?;
    if record.dataset_fingerprint != data.train.fingerprint() {
        return Err(usage(format!(
            "{} was trained on a different dataset",
            dir.display()
        )));
    }
    let trainer = Trainer::resume(data.train.clone(), data.test.clone(), RunFiles::in_dir(dir))?;
    log::info!("{}: resuming {} at epoch {}", record.label, dir.display(), trainer.start_epoch());
    finish(trainer, record, dir)
}

fn finish(mut trainer: Trainer, mut record: ExperimentRecord, dir: &Path) -> Result<ExperimentRecord> {
    match trainer.run() {
        Ok(summary) => {
            record.final_report = summary.final_report;
            record.status = RunStatus::Completed;
            record.save(dir)?;
            Ok(record)
        }
        Err(Error::NonFiniteLoss { epoch, step }) => {
            record.status = RunStatus::Aborted { epoch, step };
            record.save(dir)?;
            Err(Error::NonFiniteLoss { epoch, step })
        }
        Err(e) => Err(e),
    }
}

fn print_presets() {
    for name in PRESETS {
        println!("{name}");
    }
}

fn train(args: &TrainArgs) -> Result<()> {
    if args.config.list_presets {
        print_presets();
        return Ok(());
    }
    let data_dir = args.data.as_ref().ok_or_else(|| usage("--data is required"))?;
    let data = load_data(data_dir)?;
    let record = match &args.resume {
        Some(dir) => resume_run(dir, &data)?,
        None => {
            let cfg = resolve_config(&args.config)?;
            let label = args
                .label
                .clone()
                .or_else(|| args.config.preset.clone())
                .or_else(|| {
                    args.config
                        .config
                        .as_ref()
                        .and_then(|p| p.file_stem())
                        .map(|s| s.to_string_lossy().into_owned())
                })
                .unwrap_or_else(|| "run".into());
            let existing = if args.force { Existing::Replace } else { Existing::Refuse };
            train_run(cfg, &label, &data, &args.runs_dir, existing, dtype(args.f64))?
        }
    };
    if let Some(report) = &record.final_report {
        print!("{}", format_table(&[(record.label.clone(), report)]));
    }
    println!("{}", args.runs_dir.join(&record.run_id).display());
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let loaded = checkpoint::load(&args.checkpoint)?;
    let test = ImageSet::load(&args.data.join(TEST_FILE))?;
    let hist = match &loaded.meta.train_histogram {
        Some(counts) => ClassHistogram::new(counts.clone())?,
        None => ImageSet::load(&args.data.join(TRAIN_FILE))?.histogram()?,
    };
    let report = evaluate(&loaded.model, &test, &loaded.meta.normalization, &hist)?;
    let name = args
        .checkpoint
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    print!("{}", format_table(&[(name, &report)]));
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}

/// One column of an ablation table.
struct Variant {
    row: &'static str,
    column: &'static str,
    cfg: TrainConfig,
}

fn no_drw(mut cfg: TrainConfig) -> TrainConfig {
    cfg.drw_start_epoch = cfg.epochs;
    cfg
}

fn no_mask(mut cfg: TrainConfig) -> TrainConfig {
    cfg.mask_probability = 0.0;
    cfg.mask_start_epoch = cfg.epochs;
    cfg
}

fn ce_only(mut cfg: TrainConfig) -> TrainConfig {
    cfg.mu = 0.0;
    cfg
}

const ACC_ROW: &str = "Acc. (%)";
const CE_ROW: &str = "Cross Entropy";
const SCL_ROW: &str = "Supervised Contrastive Learning";

fn variants(axis: Axis, base: &TrainConfig) -> Result<Vec<Variant>> {
    let drw_on = base.drw_start_epoch < base.epochs;
    match axis {
        Axis::MaskMode => Ok([
            ("Random", MaskMode::Random),
            ("Center", MaskMode::Center),
            ("Saliency", MaskMode::Saliency),
        ]
        .into_iter()
        .map(|(column, mode)| Variant {
            row: ACC_ROW,
            column,
            cfg: TrainConfig { mask_mode: mode, ..base.clone() },
        })
        .collect()),
        Axis::Contrastive => {
            if !drw_on || base.mu <= 0.0 {
                return Err(usage("the contrastive axis needs a base config with DRW and mu > 0"));
            }
            Ok(vec![
                Variant { row: CE_ROW, column: "SMCL", cfg: ce_only(no_drw(base.clone())) },
                Variant { row: CE_ROW, column: "DRW+SMCL", cfg: ce_only(base.clone()) },
                Variant { row: SCL_ROW, column: "SMCL", cfg: no_drw(base.clone()) },
                Variant { row: SCL_ROW, column: "DRW+SMCL", cfg: base.clone() },
            ])
        }
        Axis::Methods => {
            if !drw_on || base.mu <= 0.0 {
                return Err(usage("the methods axis needs a base config with DRW and mu > 0"));
            }
            Ok(vec![
                Variant { row: ACC_ROW, column: "ERM", cfg: ce_only(no_mask(no_drw(base.clone()))) },
                Variant { row: ACC_ROW, column: "DRW+CE", cfg: ce_only(base.clone()) },
                Variant { row: ACC_ROW, column: "DRW+SMCL", cfg: base.clone() },
            ])
        }
    }
}

#[derive(Serialize)]
struct AblationCell {
    row: String,
    column: String,
    seeds: Vec<u64>,
    run_ids: Vec<String>,
    accuracies: Vec<f64>,
    mean_acc: Option<f64>,
}

#[derive(Serialize)]
struct AblationJson {
    axis: String,
    cells: Vec<AblationCell>,
}

fn ablate(args: &AblateArgs) -> Result<()> {
    if args.config.list_presets {
        print_presets();
        return Ok(());
    }
    let base = resolve_config(&args.config)?;
    let data = load_data(&args.data)?;
    if data.test.is_none() {
        return Err(usage(format!("{} has no {TEST_FILE}", args.data.display())));
    }
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let existing = if args.force { Existing::Replace } else { Existing::Reuse };
    let mut cells = Vec::new();
    let mut records = Vec::new();
    for variant in variants(args.axis, &base)? {
        let mut cell = AblationCell {
            row: variant.row.into(),
            column: variant.column.into(),
            seeds: seeds.clone(),
            run_ids: Vec::new(),
            accuracies: Vec::new(),
            mean_acc: None,
        };
        for &seed in &seeds {
            let cfg = TrainConfig { seed, ..variant.cfg.clone() };
            let label = format!("{} / {} / seed {seed}", variant.row, variant.column);
            let record = train_run(cfg, &label, &data, &args.runs_dir, existing, dtype(args.f64))?;
            cell.run_ids.push(record.run_id.clone());
            if let Some(report) = &record.final_report {
                cell.accuracies.push(report.overall_acc);
            }
            records.push(record);
        }
        if cell.accuracies.len() == seeds.len() {
            cell.mean_acc = Some(cell.accuracies.iter().sum::<f64>() / seeds.len() as f64);
        }
        cells.push(cell);
    }
    let table = ablation_table(&cells);
    print!("{table}");
    let runs: Vec<(String, &EvalReport)> = records
        .iter()
        .filter_map(|r| r.final_report.as_ref().map(|rep| (r.label.clone(), rep)))
        .collect();
    let detail = format_table(&runs);
    if let Some(out) = &args.out {
        fs::create_dir_all(out).at(out)?;
        let path = out.join("ablation.txt");
        fs::write(&path, format!("{table}\n{detail}")).at(&path)?;
        write_json(
            &out.join("ablation.json"),
            &AblationJson { axis: format!("{:?}", args.axis), cells },
        )?;
    }
    Ok(())
}

fn ablation_table(cells: &[AblationCell]) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<(String, BTreeMap<String, Option<f64>>)> = Vec::new();
    for cell in cells {
        if !columns.contains(&cell.column) {
            columns.push(cell.column.clone());
        }
        match rows.iter_mut().find(|(name, _)| *name == cell.row) {
            Some((_, values)) => {
                values.insert(cell.column.clone(), cell.mean_acc);
            }
            None => rows.push((cell.row.clone(), BTreeMap::from([(cell.column.clone(), cell.mean_acc)]))),
        }
    }
    if rows.len() == 1 {
        let (name, values) = &rows[0];
        let cols: Vec<(String, Option<f64>)> =
            columns.iter().map(|c| (c.clone(), values.get(c).copied().flatten())).collect();
        return single_row_table(name, &cols);
    }
    let grid: Vec<(String, Vec<Option<f64>>)> = rows
        .into_iter()
        .map(|(name, values)| {
            let v = columns.iter().map(|c| values.get(c).copied().flatten()).collect();
            (name, v)
        })
        .collect();
    grid_table(&columns, &grid)
}

fn report(args: &ReportArgs) -> Result<()> {
    let records = args
        .records
        .iter()
        .map(|p| ExperimentRecord::load(p))
        .collect::<Result<Vec<_>>>()?;
    render(&records, &args.out)?;
    print!("{}", crate::report::records_table(&records));
    Ok(())
}

fn pick_image(data: &Path, split: SplitArg, index: usize) -> Result<crate::dataset::Image> {
    let file = match split {
        SplitArg::Train => TRAIN_FILE,
        SplitArg::Test => TEST_FILE,
    };
    let set = ImageSet::load(&data.join(file))?;
    if index >= set.len() {
        return Err(usage(format!("index {index} out of range for {} images", set.len())));
    }
    Ok(set.image(index))
}

fn cam_cmd(args: &CamArgs) -> Result<()> {
    let loaded = checkpoint::load(&args.checkpoint)?;
    let image = pick_image(&args.data, args.split, args.index)?;
    let norm = &loaded.meta.normalization;
    let class = match args.class {
        Some(c) => c,
        None => {
            let x = loaded.model.input(&norm.apply(&image), 1, image.height, image.width)?;
            loaded.model.predict(&x)?[0].0
        }
    };
    let heat = cam(&loaded.model, &image, norm, class)?;
    save_overlay(&image, &heat, &args.out)?;
    log::info!("class {class} activation map written to {}", args.out.display());
    Ok(())
}

fn saliency_cmd(args: &SaliencyArgs) -> Result<()> {
    let image = pick_image(&args.data, args.split, args.index)?;
    let map = spectral_residual(&image);
    map.save_png(&args.out)?;
    let (row, col) = map.argmax();
    println!("peak {row} {col}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_typed_values_and_reject_unknown_keys() {
        let base = TrainConfig::preset("cifar100lt-smcl-drw").unwrap();
        let cfg = apply_overrides(
            &base,
            &["epochs=10".into(), "mask_mode=center".into(), "lr_milestones=[4, 8]".into(), "mu=0".into()],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.mask_mode, MaskMode::Center);
        assert_eq!(cfg.lr_milestones, vec![4, 8]);
        assert_eq!(cfg.mu, 0.0);
        let err = apply_overrides(&base, &["learning_rate=1".into()]).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn method_variants_reduce_the_base() {
        let base = TrainConfig::preset("desk-cifar10lt-drw-smcl").unwrap();
        let v = variants(Axis::Methods, &base).unwrap();
        assert_eq!(v[0].cfg, TrainConfig::preset("desk-cifar10lt-erm").unwrap());
        assert_eq!(v[1].cfg, TrainConfig::preset("desk-cifar10lt-drw-ce").unwrap());
        assert_eq!(v[2].cfg, base);
    }

    #[test]
    fn contrastive_table_has_two_rows_two_columns() {
        let cell = |row: &str, column: &str, acc| AblationCell {
            row: row.into(),
            column: column.into(),
            seeds: vec![0],
            run_ids: vec![],
            accuracies: vec![],
            mean_acc: acc,
        };
        let t = ablation_table(&[
            cell(CE_ROW, "SMCL", Some(43.57)),
            cell(CE_ROW, "DRW+SMCL", Some(49.12)),
            cell(SCL_ROW, "SMCL", Some(44.49)),
            cell(SCL_ROW, "DRW+SMCL", None),
        ]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("SMCL") && lines[0].contains("DRW+SMCL"));
        assert!(lines[1].starts_with(CE_ROW) && lines[1].contains("49.12"));
        assert!(lines[2].trim_end().ends_with('-'));
    }
}
