//! The verbs behind the CLI: dataset loading, train, eval, feature
//! extraction, and score distributions.

use std::path::{Path, PathBuf};

use cosmos_core::data::{self, DataBatch};
use cosmos_core::pipeline::{
    score_distributions, train_pipeline, PatchSpec, PipelineConfig, StreamEnsemble,
};

use crate::archive::{archive_ensemble, restore_ensemble, ModelArchive};
use crate::config::{DatasetKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::metrics::{evaluate, EvalReport};

pub struct LoadedData {
    pub train: DataBatch,
    pub val: DataBatch,
    pub test: DataBatch,
}

fn stratified_limit(batch: &DataBatch, limit: usize, seed: u64) -> CliResult<DataBatch> {
    if limit == 0 || limit >= batch.len() {
        return Ok(batch.clone());
    }
    let fraction = limit as f64 / batch.len() as f64;
    let (subset, _, _) =
        data::split(batch, &[fraction], seed).map_err(CliError::from_core)?;
    Ok(subset)
}

/// Load, limit, and split the configured dataset deterministically.
pub fn load_dataset(config: &RunConfig) -> CliResult<LoadedData> {
    let (source, test) = match &config.dataset {
        DatasetKind::Synthetic {
            n_per_class,
            dim,
            classes,
            separation,
        } => {
            let all = data::synth_gaussian_classes(
                *n_per_class,
                *dim,
                *classes,
                *separation,
                config.seed,
            )
            .map_err(CliError::from_core)?;
            // carve a fixed quarter for test when the split leaves no room
            let leftover = 1.0 - config.train_fraction - config.val_fraction;
            if leftover > 1e-9 {
                (all, None)
            } else {
                let (rest, test, _) = data::split(&all, &[0.75, 0.25], config.seed ^ 0x7e57)
                    .map_err(CliError::from_core)?;
                (rest, test)
            }
        }
        DatasetKind::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = data::load_idx(
                &RunConfig::resolve_data_path(train_images),
                &RunConfig::resolve_data_path(train_labels),
            )
            .map_err(CliError::from_core)?;
            let test = data::load_idx(
                &RunConfig::resolve_data_path(test_images),
                &RunConfig::resolve_data_path(test_labels),
            )
            .map_err(CliError::from_core)?;
            (train, Some(test))
        }
        DatasetKind::Cifar10 {
            train_batches,
            test_batches,
        } => {
            let train_paths: Vec<PathBuf> = train_batches
                .iter()
                .map(|p| RunConfig::resolve_data_path(p))
                .collect();
            let train = data::load_cifar10(
                &train_paths.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
            )
            .map_err(CliError::from_core)?;
            let test_paths: Vec<PathBuf> = test_batches
                .iter()
                .map(|p| RunConfig::resolve_data_path(p))
                .collect();
            let test = data::load_cifar10(
                &test_paths.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
            )
            .map_err(CliError::from_core)?;
            (train, Some(test))
        }
    };

    let source = stratified_limit(&source, config.limit_train, config.seed ^ 0x11)?;
    let (train, val, test_split) = data::split(
        &source,
        &[config.train_fraction, config.val_fraction],
        config.seed ^ 0x22,
    )
    .map_err(CliError::from_core)?;
    let val = val.ok_or_else(|| CliError::Data("validation split is empty".into()))?;
    let test = match (test, test_split) {
        (Some(t), _) => stratified_limit(&t, config.limit_test, config.seed ^ 0x33)?,
        (None, Some(t)) => t,
        (None, None) => {
            return Err(CliError::Data(
                "no test data: leave room in the split fractions or provide test files".into(),
            ))
        }
    };
    Ok(LoadedData { train, val, test })
}

pub fn pipeline_config(config: &RunConfig) -> PipelineConfig {
    PipelineConfig {
        patch_arch: config.patch_arch.clone(),
        whole_arch: config.whole_arch.clone(),
        tessellate: config.patches.enabled,
        include_whole: !config.patches.enabled || config.patches.include_whole,
        n_classes: config.classes,
        use_skips: config.skip_connections,
        hyper: config.hyper.clone(),
        classifier_epochs: config.classifier_epochs,
        classifier_lr: config.classifier_lr,
        classifier_batch: config.classifier_batch,
    }
}

pub fn patch_spec(config: &RunConfig) -> CliResult<Option<PatchSpec>> {
    if !config.patches.enabled {
        return Ok(None);
    }
    PatchSpec::new(
        (
            config.patches.image_height,
            config.patches.image_width,
            config.patches.channels,
        ),
        (config.patches.patch_height, config.patches.patch_width),
    )
    .map(Some)
    .map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub archive_path: PathBuf,
    pub ensemble: StreamEnsemble,
    pub val_accuracy: f64,
    pub test_report: EvalReport,
}

/// Train per config, then write the archive, per-stream logs, and a metrics
/// summary under `out_dir`.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> CliResult<TrainOutputs> {
    let loaded = load_dataset(config)?;
    let spec = patch_spec(config)?;
    let pc = pipeline_config(config);
    if loaded.train.feature_dim() != expected_input_dim(config, &loaded) {
        return Err(CliError::Config(format!(
            "architecture expects input dim {} but data has {}",
            expected_input_dim(config, &loaded),
            loaded.train.feature_dim()
        )));
    }
    let (ensemble, reports) = train_pipeline(&loaded.train, &loaded.val, spec.as_ref(), &pc)
        .map_err(CliError::from_core)?;
    let val_accuracy = ensemble
        .accuracy(&loaded.val)
        .map_err(CliError::from_core)?;

    std::fs::create_dir_all(out_dir)?;
    let archive = archive_ensemble(&ensemble, config.to_canonical_string(), val_accuracy);
    let archive_path = out_dir.join("model.cosmos");
    archive.save(&archive_path)?;

    for report in &reports {
        let path = out_dir.join(format!("train_{}.log", report.stream));
        std::fs::write(&path, report.report.log_lines())?;
    }

    let test_report = evaluate(&ensemble, &loaded.test, config.rank_k)?;
    std::fs::write(out_dir.join("metrics.txt"), test_report.human_table())?;
    std::fs::write(out_dir.join("metrics.csv"), test_report.to_csv())?;

    Ok(TrainOutputs {
        archive_path,
        ensemble,
        val_accuracy,
        test_report,
    })
}

fn expected_input_dim(config: &RunConfig, loaded: &LoadedData) -> usize {
    if config.patches.enabled {
        config.patches.image_height * config.patches.image_width * config.patches.channels
    } else if let Some(whole) = &config.whole_arch {
        whole[0]
    } else {
        loaded.train.feature_dim()
    }
}

/// Evaluate an archived model on its configured test data (or an override
/// config's test data).
pub fn cmd_eval(
    archive_path: &Path,
    config_override: Option<&RunConfig>,
    rank_k: Option<usize>,
    out_dir: Option<&Path>,
) -> CliResult<EvalReport> {
    let archive = ModelArchive::load(archive_path)?;
    let config = match config_override {
        Some(c) => c.clone(),
        None => RunConfig::parse(&archive.config_snapshot)?,
    };
    let ensemble = restore_ensemble(&archive)?;
    let loaded = load_dataset(&config)?;
    if loaded.test.feature_dim() != ensemble.input_dim() {
        return Err(CliError::Data(format!(
            "archive expects input dim {} but data has {}",
            ensemble.input_dim(),
            loaded.test.feature_dim()
        )));
    }
    let report = evaluate(&ensemble, &loaded.test, rank_k.unwrap_or(config.rank_k))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.txt"), report.human_table())?;
        std::fs::write(dir.join("metrics.csv"), report.to_csv())?;
    }
    Ok(report)
}

/// Extract per-stream code vectors for the configured test set into one CSV
/// (columns grouped by stream).
pub fn cmd_extract_features(archive_path: &Path, out_dir: &Path) -> CliResult<PathBuf> {
    let archive = ModelArchive::load(archive_path)?;
    let config = RunConfig::parse(&archive.config_snapshot)?;
    let ensemble = restore_ensemble(&archive)?;
    let loaded = load_dataset(&config)?;
    let x = &loaded.test.x;
    if x.cols() != ensemble.input_dim() {
        return Err(CliError::Data(format!(
            "archive expects input dim {} but data has {}",
            ensemble.input_dim(),
            x.cols()
        )));
    }

    let mut blocks = Vec::new();
    let mut header = Vec::new();
    for (p, model) in ensemble.patch_models().iter().enumerate() {
        let spec = ensemble.spec().expect("patch models imply a spec");
        let xs = cosmos_core::pipeline::patch_columns(x, spec, p).map_err(CliError::from_core)?;
        let f = model.extract_features(&xs).map_err(CliError::from_core)?;
        for c in 0..f.cols() {
            header.push(format!("patch{p}_f{c}"));
        }
        blocks.push(f);
    }
    if let Some(model) = ensemble.whole_model() {
        let f = model.extract_features(x).map_err(CliError::from_core)?;
        for c in 0..f.cols() {
            header.push(format!("whole_f{c}"));
        }
        blocks.push(f);
    }

    let mut csv = String::from("label,");
    csv.push_str(&header.join(","));
    csv.push('\n');
    for r in 0..x.rows() {
        csv.push_str(&loaded.test.y[r].to_string());
        for block in &blocks {
            for &v in block.row(r) {
                csv.push(',');
                csv.push_str(&v.to_string());
            }
        }
        csv.push('\n');
    }
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("features.csv");
    std::fs::write(&path, csv)?;
    Ok(path)
}

/// Fused-posterior score histograms for one class on the test set.
pub fn cmd_score_dist(
    archive_path: &Path,
    class_of_interest: usize,
    bins: usize,
    out_dir: &Path,
) -> CliResult<PathBuf> {
    let archive = ModelArchive::load(archive_path)?;
    let config = RunConfig::parse(&archive.config_snapshot)?;
    let ensemble = restore_ensemble(&archive)?;
    let loaded = load_dataset(&config)?;
    let hist = score_distributions(&ensemble, &loaded.test, class_of_interest, bins)
        .map_err(CliError::from_core)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("score_dist_class{class_of_interest}.csv"));
    std::fs::write(&path, hist.to_csv())?;
    Ok(path)
}
