//! Implementations of the CLI subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ebdoa::dataset::{
    DatasetRecord, GenConfig, covariance_from_feature, generate_dataset, read_records,
};
use ebdoa::dcnn::{
    Model, ModelConfig, TrainConfig, TrainExample, TrainHistory, build_model, load_model,
    model_forward, save_model, train,
};
use ebdoa::ebdsp::{default_music_dimension, eb_music_spectrum, eb_mvdr_spectrum};
use ebdoa::eval::{
    EvalMethod, EvalOptions, HeatmapFormat, emit_heatmap, order_for_feature, run_eval,
};
use ebdoa::roomsim::DoaSet;
use ebdoa::sps::{DEFAULT_PEAK_THRESHOLD, SpsGrid, extract_peaks, normalize_map};
use ebdoa::{Error, GridSpec, Result, build_grid};

use crate::{BaselineArg, Command, MethodArg, OutputFormat};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { config, seed, out } => gen_cmd(config.as_deref(), seed, &out),
        Command::Train { data, config, seed, out } => {
            train_cmd(&data, config.as_deref(), seed, &out)
        }
        Command::Infer { model, data, index, heatmap, format } => {
            infer(&model, &data, index, &heatmap, format)
        }
        Command::Eval { method, model, data, by_t60, report } => {
            eval(method, model.as_deref(), &data, by_t60, report.as_deref())
        }
        Command::BaselineSps { method, data, index, heatmap, format } => {
            baseline_sps(method, &data, index, &heatmap, format)
        }
        Command::Selftest => crate::selftest::run(),
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::format(path, format!("cannot read config: {e}"))
    })?;
    toml::from_str(&text).map_err(|e| Error::format(path, e.message().to_string()))
}

fn gen_cmd(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: GenConfig = match config {
        Some(path) => load_toml(path)?,
        None => GenConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    generate_dataset(&cfg, out)?;
    println!("wrote {} records to {}", cfg.count, out.display());
    Ok(())
}

#[derive(serde::Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
}

fn render_history(history: &TrainHistory) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
    let mut out = String::new();
    for e in 0..history.train_loss.len() {
        let _ = writeln!(
            out,
            "epoch={} train_loss={} val_loss={} val_recall={} val_precision={}",
            e + 1,
            history.train_loss[e],
            history.val_loss[e],
            opt(history.val_recall[e]),
            opt(history.val_precision[e]),
        );
    }
    out
}

fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

fn train_cmd(data: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let file: TrainFile = match config {
        Some(path) => load_toml(path)?,
        None => TrainFile::default(),
    };
    let mut tcfg = file.train;
    if let Some(seed) = seed {
        tcfg.seed = seed;
    }
    file.model.validate()?;
    tcfg.validate()?;

    let records = read_records(data)?;
    let examples: Vec<TrainExample> = records.iter().map(DatasetRecord::to_train_example).collect();
    let model = build_model(&file.model, tcfg.seed)?;
    println!(
        "training on {} records: {} parameters, {} epochs, batch {}",
        examples.len(),
        model.param_count(),
        tcfg.epochs,
        tcfg.batch_size
    );
    let (model, history) = train(model, &examples, &tcfg)?;

    let rendered = render_history(&history);
    print!("{rendered}");
    save_model(&model, out)?;
    let history_path = sibling_path(out, ".history");
    std::fs::write(&history_path, rendered)?;
    println!("saved model to {}", out.display());
    println!("saved loss history to {}", history_path.display());
    Ok(())
}

fn record_at(records: &[DatasetRecord], index: usize) -> Result<&DatasetRecord> {
    records.get(index).ok_or_else(|| {
        Error::invalid(format!(
            "record index {index} out of range: dataset has {} records",
            records.len()
        ))
    })
}

fn print_arrivals(truth: &DoaSet, peaks: &DoaSet) {
    println!("truth ({} arrivals):", truth.entries().len());
    for e in truth.entries() {
        println!(
            "  az {:8.2}  el {:7.2}  source {}",
            e.direction.azimuth(),
            e.direction.elevation(),
            e.source_id
        );
    }
    let shown = peaks.entries().len().min(20);
    println!("peaks ({} found):", peaks.entries().len());
    for e in &peaks.entries()[..shown] {
        println!("  az {:8.2}  el {:7.2}", e.direction.azimuth(), e.direction.elevation());
    }
    if shown < peaks.entries().len() {
        println!("  ... and {} more", peaks.entries().len() - shown);
    }
}

fn write_heatmap(sps: &SpsGrid, path: &Path, format: OutputFormat) -> Result<()> {
    let format = match format {
        OutputFormat::Csv => HeatmapFormat::Csv,
        OutputFormat::Pgm => HeatmapFormat::Pgm,
    };
    emit_heatmap(sps, path, format)
}

fn infer(
    model_path: &Path,
    data: &Path,
    index: usize,
    heatmap: &Path,
    format: OutputFormat,
) -> Result<()> {
    let model = load_model(model_path)?;
    let records = read_records(data)?;
    let record = record_at(&records, index)?;
    let feature = record.feature_f64();
    model.check_feature_len(feature.len())?;
    let sps = model_forward(&model, &feature)?;
    write_heatmap(&sps, heatmap, format)?;
    let peaks = extract_peaks(&normalize_map(&sps), DEFAULT_PEAK_THRESHOLD);
    println!("record {index} (seed {})", record.seed);
    print_arrivals(&record.truth, &peaks);
    println!("wrote {}", heatmap.display());
    Ok(())
}

fn load_eval_model(method: MethodArg, model: Option<&Path>) -> Result<Option<Model>> {
    match (method, model) {
        (MethodArg::Dcnn, Some(path)) => Ok(Some(load_model(path)?)),
        (MethodArg::Dcnn, None) => {
            Err(Error::invalid("--method dcnn requires --model <file>"))
        }
        _ => Ok(None),
    }
}

fn eval(
    method: MethodArg,
    model: Option<&Path>,
    data: &Path,
    by_t60: bool,
    report_path: Option<&Path>,
) -> Result<()> {
    let model = load_eval_model(method, model)?;
    let records = read_records(data)?;
    let options = EvalOptions { by_t60, ..EvalOptions::default() };
    let method = match (method, &model) {
        (MethodArg::Dcnn, Some(m)) => EvalMethod::Dcnn(m),
        (MethodArg::EbMvdr, _) => EvalMethod::EbMvdr,
        (MethodArg::EbMusic, _) => EvalMethod::EbMusic,
        (MethodArg::Dcnn, None) => unreachable!(),
    };
    let report = run_eval(method, &records, &options)?;
    print!("{}", report.render_text(method.name()));
    if let Some(path) = report_path {
        std::fs::write(path, report.render_kv(method.name()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn baseline_sps(
    method: BaselineArg,
    data: &Path,
    index: usize,
    heatmap: &Path,
    format: OutputFormat,
) -> Result<()> {
    let records = read_records(data)?;
    let record = record_at(&records, index)?;
    let feature = record.feature_f64();
    let order = order_for_feature(feature.len())?;
    let cov = covariance_from_feature(&feature, order)?;
    let grid = build_grid(GridSpec::default());
    let sps = match method {
        BaselineArg::EbMvdr => eb_mvdr_spectrum(&cov, &grid)?,
        BaselineArg::EbMusic => {
            let d = default_music_dimension(record.sources.len(), cov.dim());
            eb_music_spectrum(&cov, &grid, d)?
        }
    };
    write_heatmap(&sps, heatmap, format)?;
    let peaks = extract_peaks(&normalize_map(&sps), DEFAULT_PEAK_THRESHOLD);
    println!("record {index} (seed {})", record.seed);
    print_arrivals(&record.truth, &peaks);
    println!("wrote {}", heatmap.display());
    Ok(())
}
