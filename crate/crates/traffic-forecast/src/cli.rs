//! Command-line workflow: synthesize data, map antennas, train, evaluate,
//! compare and forecast. Every subcommand is deterministic given its flags
//! and inputs, and every artifact records the seed and input hashes it was
//! produced from.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/contract error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::BaselineConfig;
use crate::checkpoint::{sha256_hex, Checkpoint};
use crate::convlstm::S2SConfig;
use crate::error::{Error, Result};
use crate::grid::{choose_grid_dims, map_antennas_to_grid, project_lonlat, AntennaGrid};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{AnyModel, ModelConfig, ModelKind};
use crate::pipeline::{
    chronological_split, filter_active_antennas, ingest_csv, load_catalog, synthesize_traffic,
    window_dataset, write_catalog_csv, write_series_csv, NormalizationStats,
    SyntheticConfig, TrafficSeries,
};
use crate::train::{train, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "traffic-forecast",
    about = "Multi-service mobile traffic forecasting on antenna grids",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a traffic dataset and its service catalog
    Generate(GenerateArgs),
    /// Assign antennas to grid cells by minimum total displacement
    MapGrid(MapGridArgs),
    /// Train a model and write the best-validation checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out test split
    Evaluate(EvaluateArgs),
    /// Compare several checkpoints (and optionally persistence) on one test split
    Compare(CompareArgs),
    /// Forecast the next K snapshots from the dataset tail
    Predict(PredictArgs),
    /// Chain generate, map-grid, training of every model, and compare
    RunPaperPipeline(PipelineArgs),
}

/// Flag parser for counts that must be at least 1, so zero values are
/// usage errors rather than runtime failures.
fn positive_count(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("TRAFFIC_FORECAST_OUT").map_or_else(|| PathBuf::from("."), PathBuf::from)
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output directory for traffic.csv, catalog.csv and manifest.json
    #[arg(long, default_value_os_t = default_out_dir())]
    out: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = positive_count)]
    services: usize,
    #[arg(long, default_value_t = 14, value_parser = positive_count)]
    days: usize,
    /// Grid dimensions HxW; one antenna is placed per cell
    #[arg(long, default_value = "6x6")]
    grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Popularity decay exponent of the rank^-alpha service shares
    #[arg(long, default_value_t = 1.2)]
    alpha: f64,
    /// Relative swing of the daily cycle, in [0,1)
    #[arg(long, default_value_t = 0.8)]
    diurnal_amplitude: f64,
    /// Sigma of the multiplicative log-normal noise (0 disables)
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Sigma of the autocorrelated demand drift (0 disables)
    #[arg(long, default_value_t = 0.15)]
    drift: f64,
    /// Correlation time of the drift, in 5-minute bins
    #[arg(long, default_value_t = 24.0)]
    drift_corr: f64,
    #[arg(long, default_value_t = 3)]
    hotspots: usize,
}

#[derive(Args, Debug)]
struct MapGridArgs {
    /// Traffic CSV with antenna coordinates
    #[arg(long)]
    data: PathBuf,
    /// Grid dimensions HxW; chosen automatically when omitted
    #[arg(long)]
    grid: Option<String>,
    /// Output mapping table path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Traffic CSV
    #[arg(long)]
    data: PathBuf,
    /// Antenna-to-grid mapping table (from map-grid)
    #[arg(long)]
    mapping: PathBuf,
    /// Fraction of bins with traffic an antenna needs to be kept
    #[arg(long, default_value_t = 0.9)]
    active_threshold: f64,
    /// Chronological train fraction; the rest is the test split
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model kind: convlstm, mlp, cnn, cnn3d, lstm
    #[arg(long)]
    model: ModelKindArg,
    /// Architecture preset: desk or paper
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 12)]
    t_in: usize,
    #[arg(long, default_value_t = 12)]
    horizon: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    tf_prob: f64,
    /// Window stride over the training split
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for checkpoint, loss history and config snapshot
    #[arg(long, default_value_os_t = default_out_dir())]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Service catalog CSV
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Window stride over the test split
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_os_t = default_out_dir())]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    catalog: PathBuf,
    /// Checkpoints to compare; repeat the flag per model
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Also include the parameter-free persistence reference
    #[arg(long, default_value_t = false)]
    include_persistence: bool,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output comparison table path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output forecast CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Working directory for every produced artifact
    #[arg(long, default_value_os_t = default_out_dir())]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    services: usize,
    #[arg(long, default_value_t = 28)]
    days: usize,
    #[arg(long, default_value = "6x6")]
    grid: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 12)]
    t_in: usize,
    #[arg(long, default_value_t = 12)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1)]
    eval_stride: usize,
}

/// Wrapper so clap reports unknown kinds as usage errors.
#[derive(Clone, Debug)]
struct ModelKindArg(ModelKind);

impl std::str::FromStr for ModelKindArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<ModelKind>().map(ModelKindArg).map_err(|e| e.to_string())
    }
}

/// Parse, dispatch, and map failures to the documented exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code scheme differs; print its message and
            // fold every usage problem (including --help) into the
            // documented codes
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 1 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::MapGrid(a) => cmd_map_grid(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Compare(a) => cmd_compare(&a).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a),
        Command::RunPaperPipeline(a) => cmd_run_paper_pipeline(&a),
    }
}

fn parse_grid_dims(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split('x').collect();
    let bad = || Error::contract(format!("grid must look like 6x6, got {text:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let h: usize = parts[0].parse().map_err(|_| bad())?;
    let w: usize = parts[1].parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let (h, w) = parse_grid_dims(&args.grid)?;
    let mut config = SyntheticConfig::new(args.services, args.days, h, w, args.seed);
    config.power_law_alpha = args.alpha;
    config.diurnal_amplitude = args.diurnal_amplitude;
    config.noise_scale = args.noise;
    config.drift_scale = args.drift;
    config.drift_corr_bins = args.drift_corr;
    config.hotspots = args.hotspots;
    let series = synthesize_traffic(&config)?;
    std::fs::create_dir_all(&args.out)?;
    let traffic_path = args.out.join("traffic.csv");
    let catalog_path = args.out.join("catalog.csv");
    write_series_csv(&series, &traffic_path, &[format!("seed={}", args.seed)])?;
    write_catalog_csv(&series.services, &catalog_path)?;
    let manifest = serde_json::json!({
        "seed": args.seed,
        "generator": config,
        "outputs": {
            "traffic.csv": file_hash(&traffic_path)?,
            "catalog.csv": file_hash(&catalog_path)?,
        },
    });
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    println!(
        "generated {} bins x {} services x {} antennas at {}",
        series.bins(),
        series.services.len(),
        series.antennas.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_map_grid(args: &MapGridArgs) -> Result<()> {
    let series = ingest_csv(&args.data)?;
    let sites = project_lonlat(
        &series.antennas.iter().map(|a| (a.id.clone(), a.lon, a.lat)).collect::<Vec<_>>(),
    )?;
    let (h, w) = match &args.grid {
        Some(text) => {
            let (h, w) = parse_grid_dims(text)?;
            if h * w < sites.len() {
                let span_y = sites.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max)
                    - sites.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
                let span_x = sites.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max)
                    - sites.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
                let (sh, sw) = choose_grid_dims(sites.len(), span_y / span_x.max(1e-9));
                return Err(Error::contract(format!(
                    "grid {h}x{w} has {} cells for {} antennas; try --grid {sh}x{sw}",
                    h * w,
                    sites.len()
                )));
            }
            (h, w)
        }
        None => {
            let span_y = sites.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max)
                - sites.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
            let span_x = sites.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max)
                - sites.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
            choose_grid_dims(sites.len(), span_y / span_x.max(1e-9))
        }
    };
    let grid = map_antennas_to_grid(&sites, h, w)?;
    let mut table = grid.to_table();
    let header_end = table.find('\n').map_or(table.len(), |i| i + 1);
    table.insert_str(header_end, &format!("# input_hash={}\n", file_hash(&args.data)?));
    std::fs::write(&args.out, table)?;
    println!(
        "mapped {} antennas onto {h}x{w} ({} masked cells), mean displacement {:.1} m",
        grid.assignments.len(),
        grid.masked_cell_count(),
        grid.mean_displacement()
    );
    Ok(())
}

/// Shared ingest/filter/split/window preparation for train and evaluate.
struct PreparedData {
    train: TrafficSeries,
    test: TrafficSeries,
    grid: AntennaGrid,
    stats: NormalizationStats,
    data_hash: String,
}

fn prepare(data: &DataArgs, t_in: usize, horizon: usize) -> Result<PreparedData> {
    let data_hash = file_hash(&data.data)?;
    let series = ingest_csv(&data.data)?;
    let series = filter_active_antennas(&series, data.active_threshold)?;
    let grid = AntennaGrid::from_table(&std::fs::read_to_string(&data.mapping)?)?;
    let (train, test) = chronological_split(&series, data.train_frac, t_in + horizon)?;
    let stats = NormalizationStats::compute(&train);
    Ok(PreparedData { train, test, grid, stats, data_hash })
}

fn build_model_config(args: &TrainArgs, grid: &AntennaGrid, services: usize) -> Result<ModelConfig> {
    let kind = args.model.0;
    Ok(match kind {
        ModelKind::ConvLstm => {
            let mut c = S2SConfig::desk(grid.height, grid.width, services, args.seed);
            if args.preset != "desk" {
                return Err(Error::contract(format!(
                    "preset {:?} is not defined for convlstm (only desk)",
                    args.preset
                )));
            }
            c.t_in = args.t_in;
            c.horizon = args.horizon;
            c.teacher_forcing = args.tf_prob;
            ModelConfig::ConvLstm(c)
        }
        ModelKind::Persistence => {
            return Err(Error::contract("persistence has no parameters to train"));
        }
        _ => {
            let mut c = match args.preset.as_str() {
                "desk" => BaselineConfig::desk(
                    kind,
                    grid.height,
                    grid.width,
                    services,
                    args.t_in,
                    args.horizon,
                    args.seed,
                ),
                "paper" => BaselineConfig::paper(
                    kind,
                    grid.height,
                    grid.width,
                    services,
                    args.t_in,
                    args.horizon,
                    args.seed,
                ),
                other => return Err(Error::contract(format!("unknown preset {other:?}"))),
            };
            c.teacher_forcing = args.tf_prob;
            ModelConfig::Baseline(c)
        }
    })
}

fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let prepared = prepare(&args.data, args.t_in, args.horizon)?;
    let windows = window_dataset(
        &prepared.train,
        &prepared.grid,
        &prepared.stats,
        args.t_in,
        args.horizon,
        args.stride,
    )?;
    let model_config =
        build_model_config(args, &prepared.grid, prepared.train.services.len())?;
    let mut model = AnyModel::init(&model_config)?;
    std::fs::create_dir_all(&args.out)?;
    let checkpoint_path = args.out.join(format!("{}.ckpt", model.kind()));
    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        tf_prob: args.tf_prob,
        seed: args.seed,
        patience: args.patience,
        checkpoint_path: Some(checkpoint_path.clone()),
        data_hash: prepared.data_hash.clone(),
        ..TrainConfig::default()
    };
    let report = train(&mut model, &windows, &train_config)?;

    let mut loss_csv = format!(
        "# seed={} data_hash={}\nepoch,train_loss,val_loss\n",
        args.seed, prepared.data_hash
    );
    for (i, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        loss_csv.push_str(&format!("{},{t},{v}\n", i + 1));
    }
    std::fs::write(args.out.join(format!("{}_loss.csv", model.kind())), loss_csv)?;
    let snapshot = serde_json::json!({
        "seed": args.seed,
        "data_hash": prepared.data_hash,
        "model": model_config,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "tf_prob": args.tf_prob,
        "stride": args.stride,
        "best_epoch": report.best_epoch + 1,
        "best_val_loss": report.best_val,
    });
    std::fs::write(
        args.out.join(format!("{}_config.json", model.kind())),
        serde_json::to_string_pretty(&snapshot).expect("snapshot serializes") + "\n",
    )?;
    println!(
        "trained {} for {} epochs ({} windows); best val loss {:.6} at epoch {}",
        model.kind(),
        report.train_loss.len(),
        windows.len(),
        report.best_val,
        report.best_epoch + 1
    );
    Ok(checkpoint_path)
}

fn load_model(path: &Path, expected_data_hash: &str) -> Result<(AnyModel, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    if !ckpt.data_hash.is_empty() && ckpt.data_hash != expected_data_hash {
        return Err(Error::contract(format!(
            "checkpoint {} was trained on different data (hash {} vs {})",
            path.display(),
            ckpt.data_hash,
            expected_data_hash
        )));
    }
    let mut model = AnyModel::init(&ckpt.config)?;
    for (name, value) in ckpt.params.iter() {
        let slot = model.params_mut().get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Checkpoint(format!("parameter {name} has the wrong shape")));
        }
        *slot = value.clone();
    }
    model.set_buffers(&ckpt.buffers)?;
    Ok((model, ckpt))
}

fn eval_checkpoint(
    args: &DataArgs,
    catalog: &Path,
    checkpoint: &Path,
    stride: usize,
) -> Result<EvalReport> {
    let peek = Checkpoint::load(checkpoint)?;
    let (t_in, horizon) = (peek.config.t_in(), peek.config.horizon());
    let mut prepared = prepare(args, t_in, horizon)?;
    let (model, _) = load_model(checkpoint, &prepared.data_hash)?;
    let catalog = load_catalog(catalog)?;
    prepared.test.apply_catalog(&catalog)?;
    let windows =
        window_dataset(&prepared.test, &prepared.grid, &prepared.stats, t_in, horizon, stride)?;
    evaluate(
        &model,
        &windows,
        &prepared.stats,
        &prepared.grid,
        &prepared.test.services,
        &prepared.data_hash,
    )
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let report = eval_checkpoint(&args.data, &args.catalog, &args.checkpoint, args.stride)?;
    std::fs::create_dir_all(&args.out)?;
    let kind = report.model_kind;
    let provenance = format!(
        "# model={kind} config_hash={} data_hash={}\n",
        report.config_hash, report.data_hash
    );
    std::fs::write(args.out.join(format!("{kind}_report.txt")), report.to_text())?;
    std::fs::write(
        args.out.join(format!("{kind}_metrics.csv")),
        format!("{provenance}{}", report.to_csv()),
    )?;
    let mut per_step = format!("{provenance}step,mae\n");
    for (k, v) in report.mae_per_step.iter().enumerate() {
        per_step.push_str(&format!("{},{v}\n", k + 1));
    }
    std::fs::write(args.out.join(format!("{kind}_mae_per_step.csv")), per_step)?;
    let mut by_service = format!("{provenance}service_id,nmae,excluded_terms\n");
    for (id, v, ex) in &report.nmae_per_service {
        by_service.push_str(&format!("{id},{v},{ex}\n"));
    }
    std::fs::write(args.out.join(format!("{kind}_nmae_service.csv")), by_service)?;
    let mut by_category = format!("{provenance}category,nmae,excluded_terms\n");
    for (cat, v, ex) in &report.nmae_per_category {
        by_category.push_str(&format!("{cat},{v},{ex}\n"));
    }
    std::fs::write(args.out.join(format!("{kind}_nmae_category.csv")), by_category)?;
    print!("{}", report.to_text());
    Ok(report)
}

fn cmd_compare(args: &CompareArgs) -> Result<Vec<(String, EvalReport)>> {
    if args.checkpoints.len() + usize::from(args.include_persistence) < 2 {
        return Err(Error::contract("compare needs at least two models"));
    }
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for path in &args.checkpoints {
        let report = eval_checkpoint(&args.data, &args.catalog, path, args.stride)?;
        reports.push((report.model_kind.to_string(), report));
    }
    if args.include_persistence {
        let first = Checkpoint::load(&args.checkpoints[0])?;
        let (t_in, horizon) = (first.config.t_in(), first.config.horizon());
        let mut prepared = prepare(&args.data, t_in, horizon)?;
        let catalog = load_catalog(&args.catalog)?;
        prepared.test.apply_catalog(&catalog)?;
        let config = ModelConfig::Baseline(BaselineConfig::desk(
            ModelKind::Persistence,
            prepared.grid.height,
            prepared.grid.width,
            prepared.test.services.len(),
            t_in,
            horizon,
            0,
        ));
        let model = AnyModel::init(&config)?;
        let windows = window_dataset(
            &prepared.test,
            &prepared.grid,
            &prepared.stats,
            t_in,
            horizon,
            args.stride,
        )?;
        let report = evaluate(
            &model,
            &windows,
            &prepared.stats,
            &prepared.grid,
            &prepared.test.services,
            &prepared.data_hash,
        )?;
        reports.push((report.model_kind.to_string(), report));
    }
    let hashes: Vec<&str> = reports.iter().map(|(_, r)| r.data_hash.as_str()).collect();
    if hashes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::contract("checkpoints were evaluated against different data"));
    }
    let best = reports
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.1.mae.total_cmp(&b.1.mae))
        .map(|(i, _)| i)
        .expect("non-empty");
    let mut table = format!("# data_hash={}\nmodel,mae,psnr_db,ssim,best\n", hashes[0]);
    for (i, (name, r)) in reports.iter().enumerate() {
        table.push_str(&format!(
            "{name},{},{},{},{}\n",
            r.mae,
            r.psnr_db,
            r.ssim,
            if i == best { "yes" } else { "no" }
        ));
    }
    std::fs::write(&args.out, &table)?;
    print!("{table}");
    Ok(reports)
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let peek = Checkpoint::load(&args.checkpoint)?;
    let (t_in, horizon) = (peek.config.t_in(), peek.config.horizon());
    let data_hash = file_hash(&args.data.data)?;
    let series = ingest_csv(&args.data.data)?;
    let series = filter_active_antennas(&series, args.data.active_threshold)?;
    if series.bins() < t_in {
        return Err(Error::contract(format!(
            "need at least {t_in} bins of history, dataset has {}",
            series.bins()
        )));
    }
    let grid = AntennaGrid::from_table(&std::fs::read_to_string(&args.data.mapping)?)?;
    let (model, _) = load_model(&args.checkpoint, &data_hash)?;
    // normalization statistics must match training: same chronological split
    let (train, _) = chronological_split(&series, args.data.train_frac, t_in + horizon)?;
    let stats = NormalizationStats::compute(&train);
    let start = series.bins() - t_in;
    let mut snapshots = Vec::with_capacity(t_in);
    for t in start..series.bins() {
        let raw = crate::pipeline::scatter_snapshot(&series, &grid, t)?;
        snapshots.push(stats.normalize(&raw)?);
    }
    let input = crate::tensor::Tensor::stack(&snapshots)?;
    let forecast = stats.denormalize(&model.forecast(&input)?)?;

    let mut out = format!(
        "# model={} config_hash={} data_hash={data_hash}\n",
        model.kind(),
        crate::checkpoint::config_hash(&model.config())
    );
    out.push_str("timestamp,antenna_id,service_id,volume\n");
    let plane = grid.height * grid.width;
    let n_s = series.services.len();
    for k in 0..horizon {
        let stamp = series
            .timestamp(series.bins() + k)
            .format("%Y-%m-%dT%H:%M:%SZ")
            .to_string();
        for cell in &grid.assignments {
            let pos = cell.row * grid.width + cell.col;
            for (s, svc) in series.services.iter().enumerate() {
                let v = forecast.data()[(k * n_s + s) * plane + pos].max(0.0);
                out.push_str(&format!("{stamp},{},{},{v}\n", cell.antenna_id, svc.id));
            }
        }
    }
    std::fs::write(&args.out, out)?;
    println!(
        "wrote {} forecast rows to {}",
        horizon * n_s * grid.assignments.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_run_paper_pipeline(args: &PipelineArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    cmd_generate(&GenerateArgs {
        out: args.out.clone(),
        services: args.services,
        days: args.days,
        grid: args.grid.clone(),
        seed: args.seed,
        alpha: 1.2,
        diurnal_amplitude: 0.8,
        noise: 0.2,
        drift: 0.15,
        drift_corr: 24.0,
        hotspots: 3,
    })?;
    let data = args.out.join("traffic.csv");
    let catalog = args.out.join("catalog.csv");
    let mapping = args.out.join("mapping.txt");
    cmd_map_grid(&MapGridArgs {
        data: data.clone(),
        grid: Some(args.grid.clone()),
        out: mapping.clone(),
    })?;
    let data_args = || DataArgs {
        data: data.clone(),
        mapping: mapping.clone(),
        active_threshold: 0.9,
        train_frac: 0.8,
    };
    let mut checkpoints = Vec::new();
    for kind in [ModelKind::ConvLstm, ModelKind::Mlp, ModelKind::Cnn, ModelKind::Cnn3d, ModelKind::Lstm]
    {
        let ckpt = cmd_train(&TrainArgs {
            data: data_args(),
            model: ModelKindArg(kind),
            preset: "desk".into(),
            t_in: args.t_in,
            horizon: args.horizon,
            epochs: args.epochs,
            batch_size: 4,
            lr: args.lr,
            tf_prob: 0.5,
            stride: args.stride,
            patience: None,
            seed: args.seed,
            out: args.out.clone(),
        })?;
        checkpoints.push(ckpt);
    }
    cmd_compare(&CompareArgs {
        data: data_args(),
        catalog,
        checkpoints,
        include_persistence: true,
        stride: args.eval_stride,
        out: args.out.join("comparison.csv"),
    })?;
    Ok(())
}
