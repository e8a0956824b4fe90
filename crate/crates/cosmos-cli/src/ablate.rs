//! Ablation harness: loss-term cells and depth-sweep rows, each trained
//! under identical seeds and budget, reported as mean +/- std over seeds.

use rayon::prelude::*;

use cosmos_core::pipeline::train_pipeline;
use cosmos_core::training::LossToggles;

use crate::commands::{load_dataset, patch_spec, pipeline_config};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub per_seed: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl AblationCell {
    pub fn failed(&self) -> bool {
        self.mean.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub seeds: usize,
}

/// Parse a cell name like "cosine+mahalanobis" or "euclidean+mi".
pub fn parse_cell(name: &str) -> CliResult<LossToggles> {
    let mut toggles = LossToggles {
        euclidean: false,
        cosine: false,
        mahalanobis: false,
        mutual_info: false,
    };
    for part in name.split('+') {
        match part.trim() {
            "euclidean" | "euc" => toggles.euclidean = true,
            "cosine" | "cos" => toggles.cosine = true,
            "mahalanobis" | "maha" => toggles.mahalanobis = true,
            "mi" => toggles.mutual_info = true,
            other => {
                return Err(CliError::Config(format!(
                    "unknown ablation term '{other}' in cell '{name}'"
                )))
            }
        }
    }
    if !toggles.any_reconstruction() {
        return Err(CliError::Config(format!(
            "cell '{name}' has no reconstruction loss"
        )));
    }
    Ok(toggles)
}

/// Architecture with `depth` layers interpolating the base input and code
/// dims linearly.
pub fn depth_arch(input_dim: usize, code_dim: usize, depth: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(depth + 1);
    for i in 0..=depth {
        let t = i as f64 / depth as f64;
        let d = input_dim as f64 + (code_dim as f64 - input_dim as f64) * t;
        dims.push(d.round().max(1.0) as usize);
    }
    dims
}

enum CellKind {
    Toggles(LossToggles),
    Depth(usize),
}

/// Train every configured cell (and depth row) for `seeds` consecutive
/// seeds; a failing run marks its cell FAILED without aborting the table.
pub fn run_ablation(config: &RunConfig) -> CliResult<AblationTable> {
    let seeds = config.ablate.seeds.max(1);
    let mut jobs: Vec<(String, CellKind)> = Vec::new();
    for cell in &config.ablate.cells {
        jobs.push((cell.clone(), CellKind::Toggles(parse_cell(cell)?)));
    }
    for &depth in &config.ablate.depths {
        if depth == 0 {
            return Err(CliError::Config("depth 0 is not a model".into()));
        }
        jobs.push((format!("depth-{depth}"), CellKind::Depth(depth)));
    }
    if jobs.is_empty() {
        return Err(CliError::Config("ablation config lists no cells".into()));
    }

    let loaded = load_dataset(config)?;
    let spec = patch_spec(config)?;
    let base_pc = pipeline_config(config);

    let runs: Vec<Vec<Option<f64>>> = jobs
        .par_iter()
        .map(|(_, kind)| {
            (0..seeds)
                .map(|s| {
                    let mut pc = base_pc.clone();
                    pc.hyper.seed = config.seed.wrapping_add(s as u64);
                    match kind {
                        CellKind::Toggles(t) => pc.hyper.toggles = *t,
                        CellKind::Depth(depth) => {
                            let base = pc
                                .whole_arch
                                .clone()
                                .unwrap_or_else(|| pc.patch_arch.clone());
                            let input = if pc.tessellate {
                                base[0]
                            } else {
                                loaded.train.feature_dim()
                            };
                            let code = *base.last().expect("non-empty arch");
                            let arch = depth_arch(input, code, *depth);
                            if pc.tessellate {
                                let mut patch = arch.clone();
                                patch[0] = pc.patch_arch[0];
                                pc.patch_arch = patch;
                            }
                            pc.whole_arch = Some(arch);
                        }
                    }
                    train_pipeline(&loaded.train, &loaded.val, spec.as_ref(), &pc)
                        .and_then(|(ensemble, _)| ensemble.accuracy(&loaded.test))
                        .ok()
                })
                .collect()
        })
        .collect();

    let cells = jobs
        .into_iter()
        .zip(runs)
        .map(|((name, _), per_seed)| {
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let (mean, std) = if ok.len() == per_seed.len() {
                let m = ok.iter().sum::<f64>() / ok.len() as f64;
                let var = ok.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / ok.len() as f64;
                (Some(m), Some(var.sqrt()))
            } else {
                (None, None)
            };
            AblationCell {
                name,
                per_seed,
                mean,
                std,
            }
        })
        .collect();
    Ok(AblationTable { cells, seeds })
}

impl AblationTable {
    pub fn all_failed(&self) -> bool {
        self.cells.iter().all(AblationCell::failed)
    }

    pub fn human_table(&self) -> String {
        let width = self
            .cells
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let mut s = format!("{:<width$}  accuracy (mean +/- std over {} seeds)\n", "cell", self.seeds);
        for cell in &self.cells {
            match (cell.mean, cell.std) {
                (Some(m), Some(sd)) => {
                    s.push_str(&format!("{:<width$}  {:.4} +/- {:.4}\n", cell.name, m, sd));
                }
                _ => s.push_str(&format!("{:<width$}  FAILED\n", cell.name)),
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,mean,std");
        for k in 0..self.seeds {
            s.push_str(&format!(",seed{k}"));
        }
        s.push_str(",status\n");
        for cell in &self.cells {
            s.push_str(&cell.name);
            match (cell.mean, cell.std) {
                (Some(m), Some(sd)) => s.push_str(&format!(",{m},{sd}")),
                _ => s.push_str(",,"),
            }
            for v in &cell.per_seed {
                match v {
                    Some(a) => s.push_str(&format!(",{a}")),
                    None => s.push(','),
                }
            }
            s.push_str(if cell.failed() { ",FAILED\n" } else { ",ok\n" });
        }
        s
    }

    pub fn get(&self, name: &str) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_parser_handles_combinations() {
        let t = parse_cell("cosine+mahalanobis").unwrap();
        assert!(t.cosine && t.mahalanobis && !t.euclidean && !t.mutual_info);
        let t = parse_cell("euclidean+mi").unwrap();
        assert!(t.euclidean && t.mutual_info);
        assert!(parse_cell("mi").is_err());
        assert!(parse_cell("bogus").is_err());
    }

    #[test]
    fn depth_arch_interpolates() {
        assert_eq!(depth_arch(64, 8, 3), vec![64, 45, 27, 8]);
        assert_eq!(depth_arch(16, 16, 2), vec![16, 16, 16]);
        assert_eq!(depth_arch(100, 10, 1), vec![100, 10]);
    }

    #[test]
    fn single_cell_table() {
        let config = RunConfig::parse(
            "
[dataset]
kind = synthetic
n_per_class = 30
dim = 12
classes = 2
separation = 3.0

[model]
patch_arch = 12,16,8
classes = 2

[train]
max_iters = 2
batch_size = 16
classifier_epochs = 10

[ablate]
cells = euclidean
seeds = 2

[output]
seed = 3
",
        )
        .unwrap();
        let table = run_ablation(&config).unwrap();
        assert_eq!(table.cells.len(), 1);
        assert_eq!(table.cells[0].name, "euclidean");
        assert!(!table.cells[0].failed());
        assert_eq!(table.cells[0].per_seed.len(), 2);
        let human = table.human_table();
        assert!(human.contains("euclidean"));
        let csv = table.to_csv();
        assert!(csv.starts_with("cell,mean,std,seed0,seed1,status"));
    }

    #[test]
    fn table_structure_matches_nine_cells_and_depths() {
        let config = RunConfig::parse(
            "
[dataset]
kind = synthetic
n_per_class = 24
dim = 12
classes = 2
separation = 3.0

[model]
patch_arch = 12,16,8
classes = 2

[train]
max_iters = 1
batch_size = 16
classifier_epochs = 4

[ablate]
depths = 3,4
seeds = 1

[output]
seed = 2
",
        )
        .unwrap();
        let table = run_ablation(&config).unwrap();
        // default nine cells plus two depth rows
        assert_eq!(table.cells.len(), 11);
        let names: Vec<&str> = table.cells.iter().map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"euclidean+mi"));
        assert!(names.contains(&"cosine+mahalanobis"));
        assert!(names.contains(&"depth-3"));
        assert!(!table.all_failed());
    }
}
