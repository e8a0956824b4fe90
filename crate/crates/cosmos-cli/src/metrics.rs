//! Evaluation metrics: accuracy, per-class accuracy, confusion matrix, and
//! rank-k identification accuracy, emitted both as a human-readable table
//! and as comma-separated text.

use cosmos_core::data::DataBatch;
use cosmos_core::pipeline::StreamEnsemble;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// confusion[true_class][predicted_class]
    pub confusion: Vec<Vec<usize>>,
    /// rank_accuracy[k-1] = fraction with the true class in the top k scores
    pub rank_accuracy: Option<Vec<f64>>,
}

/// Evaluate an ensemble on labeled data. `rank_k > 0` adds identification
/// metrics for ranks 1..=k.
pub fn evaluate(ensemble: &StreamEnsemble, data: &DataBatch, rank_k: usize) -> CliResult<EvalReport> {
    if data.is_empty() {
        return Err(CliError::Data("empty evaluation set".into()));
    }
    let classes = ensemble.n_classes();
    if data.class_count > classes {
        return Err(CliError::Data(format!(
            "data has {} classes but the model was trained with {classes}",
            data.class_count
        )));
    }
    let (predicted, fused) = ensemble
        .predict_batch(&data.x)
        .map_err(CliError::from_core)?;

    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&truth, &pred) in data.y.iter().zip(&predicted) {
        confusion[truth][pred] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / data.len() as f64;
    let per_class_accuracy = (0..classes)
        .map(|c| {
            let total: usize = confusion[c].iter().sum();
            if total == 0 {
                0.0
            } else {
                confusion[c][c] as f64 / total as f64
            }
        })
        .collect();

    let rank_accuracy = if rank_k > 0 {
        let max_k = rank_k.min(classes);
        let mut hits = vec![0usize; max_k];
        for r in 0..data.len() {
            let row = fused.row(r);
            // classes sorted by score desc, index asc for deterministic ties
            let mut order: Vec<usize> = (0..classes).collect();
            order.sort_by(|&a, &b| {
                row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b))
            });
            if let Some(pos) = order.iter().position(|&c| c == data.y[r]) {
                for h in hits.iter_mut().skip(pos) {
                    *h += 1;
                }
            }
        }
        Some(
            hits.iter()
                .map(|&h| h as f64 / data.len() as f64)
                .collect(),
        )
    } else {
        None
    };

    Ok(EvalReport {
        accuracy,
        per_class_accuracy,
        confusion,
        rank_accuracy,
    })
}

impl EvalReport {
    pub fn human_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("accuracy: {:.4}\n", self.accuracy));
        s.push_str("per-class accuracy:\n");
        for (c, acc) in self.per_class_accuracy.iter().enumerate() {
            s.push_str(&format!("  class {c}: {acc:.4}\n"));
        }
        s.push_str("confusion matrix (rows = actual, cols = predicted):\n");
        let classes = self.confusion.len();
        s.push_str("        ");
        for c in 0..classes {
            s.push_str(&format!("{c:>7}"));
        }
        s.push('\n');
        for (truth, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!("  {truth:>4} |"));
            for &count in row {
                s.push_str(&format!("{count:>7}"));
            }
            s.push('\n');
        }
        if let Some(ranks) = &self.rank_accuracy {
            s.push_str("rank-k accuracy:\n");
            for (i, acc) in ranks.iter().enumerate() {
                s.push_str(&format!("  rank-{}: {acc:.4}\n", i + 1));
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,class,value\n");
        s.push_str(&format!("accuracy,,{}\n", self.accuracy));
        for (c, acc) in self.per_class_accuracy.iter().enumerate() {
            s.push_str(&format!("per_class_accuracy,{c},{acc}\n"));
        }
        for (truth, row) in self.confusion.iter().enumerate() {
            for (pred, &count) in row.iter().enumerate() {
                s.push_str(&format!("confusion,{truth}-{pred},{count}\n"));
            }
        }
        if let Some(ranks) = &self.rank_accuracy {
            for (i, acc) in ranks.iter().enumerate() {
                s.push_str(&format!("rank_accuracy,{},{acc}\n", i + 1));
            }
        }
        s
    }
}
