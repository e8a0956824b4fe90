//! Run configuration: a sectioned key-value text format plus validation.
//!
//! Architectures are too long for command-line flags, so everything lives in
//! the config file; `--seed` and `--out` flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cosmos_core::losses::CosineMode;
use cosmos_core::training::{Hyperparams, LossToggles};

use crate::error::{CliError, CliResult};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// Gaussian blob generator (tests, toy runs).
    Synthetic {
        n_per_class: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    /// MNIST-style IDX image/label file pairs.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
    /// CIFAR-10 binary batches.
    Cifar10 {
        train_batches: Vec<String>,
        test_batches: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchesConfig {
    pub enabled: bool,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub include_whole: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateConfig {
    pub cells: Vec<String>,
    pub depths: Vec<usize>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Stratified subsample caps applied after loading; 0 means no cap.
    pub limit_train: usize,
    pub limit_test: usize,
    /// Train/val split fractions of the training source.
    pub train_fraction: f64,
    pub val_fraction: f64,

    pub patch_arch: Vec<usize>,
    pub whole_arch: Option<Vec<usize>>,
    pub classes: usize,
    pub skip_connections: bool,

    pub patches: PatchesConfig,

    pub toggles: LossToggles,
    pub cosine_mode: CosineMode,

    pub hyper: Hyperparams,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub classifier_batch: usize,

    pub ablate: AblateConfig,
    /// Rank-k identification metrics when > 0.
    pub rank_k: usize,

    pub out_dir: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Synthetic {
                n_per_class: 50,
                dim: 16,
                classes: 2,
                separation: 3.0,
            },
            limit_train: 0,
            limit_test: 0,
            train_fraction: 0.8,
            val_fraction: 0.2,
            patch_arch: vec![196, 150, 100, 100, 50],
            whole_arch: None,
            classes: 10,
            skip_connections: true,
            patches: PatchesConfig {
                enabled: false,
                image_height: 28,
                image_width: 28,
                channels: 1,
                patch_height: 14,
                patch_width: 14,
                include_whole: true,
            },
            toggles: LossToggles::cosmos(),
            cosine_mode: CosineMode::Standard,
            hyper: Hyperparams::default(),
            classifier_epochs: 40,
            classifier_lr: 1e-2,
            classifier_batch: 64,
            ablate: AblateConfig {
                cells: vec![
                    "euclidean".into(),
                    "cosine".into(),
                    "mahalanobis".into(),
                    "euclidean+mi".into(),
                    "cosine+mi".into(),
                    "mahalanobis+mi".into(),
                    "euclidean+cosine".into(),
                    "euclidean+mahalanobis".into(),
                    "cosine+mahalanobis".into(),
                ],
                depths: vec![],
                seeds: 3,
            },
            rank_k: 0,
            out_dir: "out".into(),
            seed: 0,
        }
    }
}

fn parse_sections(text: &str) -> CliResult<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section = String::from("");
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(CliError::Config(format!(
                    "line {}: malformed section header '{raw}'",
                    lineno + 1
                )));
            }
            section = line[1..line.len() - 1].trim().to_string();
            out.entry(section.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected key = value, got '{raw}'",
                lineno + 1
            )));
        };
        out.entry(section.clone())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

struct SectionReader<'a> {
    name: &'a str,
    map: BTreeMap<String, String>,
}

impl<'a> SectionReader<'a> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                CliError::Config(format!("[{}] {key}: cannot parse '{v}'", self.name))
            }),
        }
    }

    fn parse_list(&mut self, key: &str) -> CliResult<Option<Vec<usize>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| {
                    CliError::Config(format!("[{}] {key}: cannot parse list '{v}'", self.name))
                }),
        }
    }

    fn finish(self) -> CliResult<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(CliError::Config(format!(
                "[{}] unknown key '{key}'",
                self.name
            )));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut sections = parse_sections(text)?;
        let mut config = RunConfig::default();
        let mut reader = |name: &'static str| SectionReader {
            name,
            map: sections.remove(name).unwrap_or_default(),
        };

        let mut ds = reader("dataset");
        let kind = ds.take("kind").unwrap_or_else(|| "synthetic".into());
        config.dataset = match kind.as_str() {
            "synthetic" => DatasetKind::Synthetic {
                n_per_class: ds.parse("n_per_class")?.unwrap_or(50),
                dim: ds.parse("dim")?.unwrap_or(16),
                classes: ds.parse("classes")?.unwrap_or(2),
                separation: ds.parse("separation")?.unwrap_or(3.0),
            },
            "idx" => DatasetKind::Idx {
                train_images: ds.take("train_images").ok_or_else(|| {
                    CliError::Config("[dataset] idx needs train_images".into())
                })?,
                train_labels: ds.take("train_labels").ok_or_else(|| {
                    CliError::Config("[dataset] idx needs train_labels".into())
                })?,
                test_images: ds.take("test_images").ok_or_else(|| {
                    CliError::Config("[dataset] idx needs test_images".into())
                })?,
                test_labels: ds.take("test_labels").ok_or_else(|| {
                    CliError::Config("[dataset] idx needs test_labels".into())
                })?,
            },
            "cifar10" => DatasetKind::Cifar10 {
                train_batches: ds
                    .take("train_batches")
                    .ok_or_else(|| CliError::Config("[dataset] cifar10 needs train_batches".into()))?
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .collect(),
                test_batches: ds
                    .take("test_batches")
                    .ok_or_else(|| CliError::Config("[dataset] cifar10 needs test_batches".into()))?
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .collect(),
            },
            other => {
                return Err(CliError::Config(format!(
                    "[dataset] unknown kind '{other}' (synthetic|idx|cifar10)"
                )))
            }
        };
        config.limit_train = ds.parse("limit_train")?.unwrap_or(0);
        config.limit_test = ds.parse("limit_test")?.unwrap_or(0);
        config.train_fraction = ds.parse("train_fraction")?.unwrap_or(0.8);
        config.val_fraction = ds.parse("val_fraction")?.unwrap_or(0.2);
        ds.finish()?;

        let mut model = reader("model");
        if let Some(a) = model.parse_list("patch_arch")? {
            config.patch_arch = a;
        }
        config.whole_arch = model.parse_list("whole_arch")?;
        if let Some(c) = model.parse("classes")? {
            config.classes = c;
        }
        if let Some(d) = model.parse("dropout")? {
            config.hyper.dropout_rate = d;
        }
        if let Some(s) = model.parse("skip_connections")? {
            config.skip_connections = s;
        }
        model.finish()?;

        let mut patches = reader("patches");
        if let Some(e) = patches.parse("enabled")? {
            config.patches.enabled = e;
        }
        if let Some(v) = patches.parse("image_height")? {
            config.patches.image_height = v;
        }
        if let Some(v) = patches.parse("image_width")? {
            config.patches.image_width = v;
        }
        if let Some(v) = patches.parse("channels")? {
            config.patches.channels = v;
        }
        if let Some(v) = patches.parse("patch_height")? {
            config.patches.patch_height = v;
        }
        if let Some(v) = patches.parse("patch_width")? {
            config.patches.patch_width = v;
        }
        if let Some(v) = patches.parse("include_whole")? {
            config.patches.include_whole = v;
        }
        patches.finish()?;

        let mut loss = reader("loss");
        let toggles = LossToggles {
            euclidean: loss.parse("euclidean")?.unwrap_or(config.toggles.euclidean),
            cosine: loss.parse("cosine")?.unwrap_or(config.toggles.cosine),
            mahalanobis: loss
                .parse("mahalanobis")?
                .unwrap_or(config.toggles.mahalanobis),
            mutual_info: loss
                .parse("mutual_info")?
                .unwrap_or(config.toggles.mutual_info),
        };
        config.toggles = toggles;
        if let Some(mode) = loss.take("cosine_mode") {
            config.cosine_mode = CosineMode::parse(&mode)
                .map_err(|e| CliError::Config(format!("[loss] cosine_mode: {e}")))?;
        }
        loss.finish()?;

        let mut train = reader("train");
        macro_rules! hyper_field {
            ($key:literal, $field:ident) => {
                if let Some(v) = train.parse($key)? {
                    config.hyper.$field = v;
                }
            };
        }
        hyper_field!("lambda1", lambda1);
        hyper_field!("lambda2", lambda2);
        hyper_field!("lr_w", lr_w);
        hyper_field!("lr_m", lr_m);
        hyper_field!("lr_omega", lr_omega);
        hyper_field!("max_iters", max_iters);
        hyper_field!("batch_size", batch_size);
        hyper_field!("convergence_tol", convergence_tol);
        hyper_field!("lambda_decay", lambda_decay);
        hyper_field!("patience", patience);
        hyper_field!("metric_cap", metric_cap);
        if let Some(v) = train.parse("classifier_epochs")? {
            config.classifier_epochs = v;
        }
        if let Some(v) = train.parse("classifier_lr")? {
            config.classifier_lr = v;
        }
        if let Some(v) = train.parse("classifier_batch")? {
            config.classifier_batch = v;
        }
        train.finish()?;

        let mut ablate = reader("ablate");
        if let Some(cells) = ablate.take("cells") {
            config.ablate.cells = cells.split(',').map(|c| c.trim().to_string()).collect();
        }
        if let Some(depths) = ablate.parse_list("depths")? {
            config.ablate.depths = depths;
        }
        if let Some(s) = ablate.parse("seeds")? {
            config.ablate.seeds = s;
        }
        ablate.finish()?;

        let mut eval = reader("eval");
        if let Some(k) = eval.parse("rank_k")? {
            config.rank_k = k;
        }
        eval.finish()?;

        let mut output = reader("output");
        if let Some(dir) = output.take("dir") {
            config.out_dir = dir;
        }
        if let Some(seed) = output.parse("seed")? {
            config.seed = seed;
        }
        output.finish()?;

        if let Some(section) = sections.keys().next() {
            return Err(CliError::Config(format!("unknown section [{section}]")));
        }

        config.hyper.seed = config.seed;
        config.hyper.cosine_mode = config.cosine_mode;
        config.hyper.toggles = config.toggles;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !self.toggles.any_reconstruction() {
            return Err(CliError::Config(
                "at least one reconstruction loss must be enabled".into(),
            ));
        }
        if self.patches.enabled {
            let patch_dim =
                self.patches.patch_height * self.patches.patch_width * self.patches.channels;
            if self.patch_arch.first() != Some(&patch_dim) {
                return Err(CliError::Config(format!(
                    "patch_arch starts at {:?} but the patch dim is {patch_dim}",
                    self.patch_arch.first()
                )));
            }
        }
        if let Some(whole) = &self.whole_arch {
            let image_dim =
                self.patches.image_height * self.patches.image_width * self.patches.channels;
            if self.patches.enabled && whole.first() != Some(&image_dim) {
                return Err(CliError::Config(format!(
                    "whole_arch starts at {:?} but the image dim is {image_dim}",
                    whole.first()
                )));
            }
        }
        if self.train_fraction <= 0.0 || self.val_fraction <= 0.0 {
            return Err(CliError::Config("split fractions must be positive".into()));
        }
        if self.train_fraction + self.val_fraction > 1.0 + 1e-12 {
            return Err(CliError::Config("split fractions exceed 1".into()));
        }
        if self.classes < 2 {
            return Err(CliError::Config("need at least 2 classes".into()));
        }
        Ok(())
    }

    /// Canonical text form; archives embed this so evaluation never needs
    /// the original config file. Full float precision, stable ordering.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str("[dataset]\n");
        match &self.dataset {
            DatasetKind::Synthetic {
                n_per_class,
                dim,
                classes,
                separation,
            } => {
                s.push_str("kind = synthetic\n");
                s.push_str(&format!("n_per_class = {n_per_class}\n"));
                s.push_str(&format!("dim = {dim}\n"));
                s.push_str(&format!("classes = {classes}\n"));
                s.push_str(&format!("separation = {separation}\n"));
            }
            DatasetKind::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                s.push_str("kind = idx\n");
                s.push_str(&format!("train_images = {train_images}\n"));
                s.push_str(&format!("train_labels = {train_labels}\n"));
                s.push_str(&format!("test_images = {test_images}\n"));
                s.push_str(&format!("test_labels = {test_labels}\n"));
            }
            DatasetKind::Cifar10 {
                train_batches,
                test_batches,
            } => {
                s.push_str("kind = cifar10\n");
                s.push_str(&format!("train_batches = {}\n", train_batches.join(",")));
                s.push_str(&format!("test_batches = {}\n", test_batches.join(",")));
            }
        }
        s.push_str(&format!("limit_train = {}\n", self.limit_train));
        s.push_str(&format!("limit_test = {}\n", self.limit_test));
        s.push_str(&format!("train_fraction = {}\n", self.train_fraction));
        s.push_str(&format!("val_fraction = {}\n", self.val_fraction));

        s.push_str("\n[model]\n");
        s.push_str(&format!("patch_arch = {}\n", join_usize(&self.patch_arch)));
        if let Some(whole) = &self.whole_arch {
            s.push_str(&format!("whole_arch = {}\n", join_usize(whole)));
        }
        s.push_str(&format!("classes = {}\n", self.classes));
        s.push_str(&format!("dropout = {}\n", self.hyper.dropout_rate));
        s.push_str(&format!("skip_connections = {}\n", self.skip_connections));

        s.push_str("\n[patches]\n");
        s.push_str(&format!("enabled = {}\n", self.patches.enabled));
        s.push_str(&format!("image_height = {}\n", self.patches.image_height));
        s.push_str(&format!("image_width = {}\n", self.patches.image_width));
        s.push_str(&format!("channels = {}\n", self.patches.channels));
        s.push_str(&format!("patch_height = {}\n", self.patches.patch_height));
        s.push_str(&format!("patch_width = {}\n", self.patches.patch_width));
        s.push_str(&format!("include_whole = {}\n", self.patches.include_whole));

        s.push_str("\n[loss]\n");
        s.push_str(&format!("euclidean = {}\n", self.toggles.euclidean));
        s.push_str(&format!("cosine = {}\n", self.toggles.cosine));
        s.push_str(&format!("mahalanobis = {}\n", self.toggles.mahalanobis));
        s.push_str(&format!("mutual_info = {}\n", self.toggles.mutual_info));
        s.push_str(&format!("cosine_mode = {}\n", self.cosine_mode.as_str()));

        s.push_str("\n[train]\n");
        s.push_str(&format!("lambda1 = {}\n", self.hyper.lambda1));
        s.push_str(&format!("lambda2 = {}\n", self.hyper.lambda2));
        s.push_str(&format!("lr_w = {}\n", self.hyper.lr_w));
        s.push_str(&format!("lr_m = {}\n", self.hyper.lr_m));
        s.push_str(&format!("lr_omega = {}\n", self.hyper.lr_omega));
        s.push_str(&format!("max_iters = {}\n", self.hyper.max_iters));
        s.push_str(&format!("batch_size = {}\n", self.hyper.batch_size));
        s.push_str(&format!("convergence_tol = {}\n", self.hyper.convergence_tol));
        s.push_str(&format!("lambda_decay = {}\n", self.hyper.lambda_decay));
        s.push_str(&format!("patience = {}\n", self.hyper.patience));
        s.push_str(&format!("metric_cap = {}\n", self.hyper.metric_cap));
        s.push_str(&format!("classifier_epochs = {}\n", self.classifier_epochs));
        s.push_str(&format!("classifier_lr = {}\n", self.classifier_lr));
        s.push_str(&format!("classifier_batch = {}\n", self.classifier_batch));

        s.push_str("\n[ablate]\n");
        s.push_str(&format!("cells = {}\n", self.ablate.cells.join(",")));
        if !self.ablate.depths.is_empty() {
            s.push_str(&format!("depths = {}\n", join_usize(&self.ablate.depths)));
        }
        s.push_str(&format!("seeds = {}\n", self.ablate.seeds));

        if self.rank_k > 0 {
            s.push_str("\n[eval]\n");
            s.push_str(&format!("rank_k = {}\n", self.rank_k));
        }

        // out_dir is a per-run artifact location, not model state; the
        // snapshot must stay byte-identical across output directories
        s.push_str("\n[output]\n");
        s.push_str(&format!("seed = {}\n", self.seed));
        s
    }

    /// Resolve a dataset path against COSMOS_DATA_DIR when it is relative.
    pub fn resolve_data_path(path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        if p.is_absolute() {
            return p;
        }
        match std::env::var_os("COSMOS_DATA_DIR") {
            Some(root) => PathBuf::from(root).join(p),
            None => p,
        }
    }
}

fn join_usize(v: &[usize]) -> String {
    v.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
