use cosmos_core::data;
use cosmos_core::pipeline::{train_pipeline, PipelineConfig};
use cosmos_core::training::{Hyperparams, LossToggles};
use cosmos_cli::ablate::parse_cell;

use std::path::PathBuf;
use cosmos_core::data::DataBatch;
use cosmos_core::rng::Rng;
use cosmos_core::tensor::Tensor;




/// 7x5 digit glyphs, row-major, one string per digit.
const GLYPHS: [[&str; 7]; 10] = [
    [
        "01110", "10001", "10011", "10101", "11001", "10001", "01110",
    ],
    [
        "00100", "01100", "00100", "00100", "00100", "00100", "01110",
    ],
    [
        "01110", "10001", "00001", "00110", "01000", "10000", "11111",
    ],
    [
        "01110", "10001", "00001", "00110", "00001", "10001", "01110",
    ],
    [
        "00010", "00110", "01010", "10010", "11111", "00010", "00010",
    ],
    [
        "11111", "10000", "11110", "00001", "00001", "10001", "01110",
    ],
    [
        "00110", "01000", "10000", "11110", "10001", "10001", "01110",
    ],
    [
        "11111", "00001", "00010", "00100", "01000", "01000", "01000",
    ],
    [
        "01110", "10001", "10001", "01110", "10001", "10001", "01110",
    ],
    [
        "01110", "10001", "10001", "01111", "00001", "00010", "01100",
    ],
];

/// Render one 28x28 digit image: x3 upscaled glyph (21x15), random
/// placement, per-sample intensity scale, stroke dropout, additive noise.
fn render_digit(digit: usize, rng: &mut Rng) -> Vec<f64> {
    let mut img = vec![0.0f64; 28 * 28];
    let row0 = 1 + rng.next_below(6); // glyph block is 21 rows tall
    let col0 = 2 + rng.next_below(10); // and 15 cols wide
    let intensity = 0.9 + 0.1 * rng.next_f64();
    for (gr, row) in GLYPHS[digit].iter().enumerate() {
        for (gc, ch) in row.bytes().enumerate() {
            if ch != b'1' {
                continue;
            }
            // 5% of strokes drop out
            if rng.next_f64() < 0.05 {
                continue;
            }
            for dr in 0..3 {
                for dc in 0..3 {
                    let r = row0 + gr * 3 + dr;
                    let c = col0 + gc * 3 + dc;
                    img[r * 28 + c] = intensity;
                }
            }
        }
    }
    for v in &mut img {
        *v = (*v + 0.05 * rng.next_normal()).clamp(0.0, 1.0);
    }
    img
}

/// Deterministic rendered digit batch: `n` samples, balanced classes.
pub fn synth_digits(n: usize, seed: u64) -> DataBatch {
    let mut data = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    let mut rng = Rng::derive(seed, 0xd1_617);
    for i in 0..n {
        let digit = i % 10;
        data.extend(render_digit(digit, &mut rng));
        labels.push(digit);
    }
    DataBatch::new(Tensor::new(n, 784, data).unwrap(), labels, 10).unwrap()
}

fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("COSMOS_DATA_DIR").map(PathBuf::from),
        Some(PathBuf::from("data")),
    ];
    for dir in candidates.into_iter().flatten() {
        if dir.join("train-images-idx3-ubyte").exists()
            && dir.join("train-labels-idx1-ubyte").exists()
            && dir.join("t10k-images-idx3-ubyte").exists()
            && dir.join("t10k-labels-idx1-ubyte").exists()
        {
            return Some(dir);
        }
    }
    None
}

/// The desk-scale corpus: (train pool, test pool, source name).
///
/// Real MNIST IDX files win when present under COSMOS_DATA_DIR or ./data;
/// otherwise the rendered digit corpus stands in with identical geometry.
pub fn image_corpus(train_n: usize, test_n: usize, seed: u64) -> (DataBatch, DataBatch, &'static str) {
    if let Some(dir) = mnist_dir() {
        let train = data::load_idx(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
        )
        .expect("mnist train files parse");
        let test = data::load_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
        )
        .expect("mnist test files parse");
        let train = stratified_take(&train, train_n, seed);
        let test = stratified_take(&test, test_n, seed ^ 1);
        (train, test, "mnist")
    } else {
        (
            synth_digits(train_n, seed),
            synth_digits(test_n, seed ^ 0x7e57_d161),
            "rendered-digits",
        )
    }
}

fn stratified_take(batch: &DataBatch, n: usize, seed: u64) -> DataBatch {
    if n >= batch.len() {
        return batch.clone();
    }
    let fraction = n as f64 / batch.len() as f64;
    data::split(batch, &[fraction], seed).expect("stratified take").0
}

/// Process CPU minutes (user + system, including rayon worker threads).
pub fn cpu_minutes() -> f64 {
    let stat = std::fs::read_to_string("/proc/self/stat").unwrap_or_default();
    // fields after the parenthesized command name; utime and stime are the
    // 12th and 13th entries there (clock ticks)
    let Some(paren) = stat.rfind(')') else {
        return 0.0;
    };
    let after = &stat[paren + 1..];
    let fields: Vec<&str> = after.split_whitespace().collect();
    let utime: f64 = fields.get(11).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let stime: f64 = fields.get(12).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    (utime + stime) / 100.0 / 60.0
}

fn main() {
    let (train_pool, test, source) = image_corpus(700, 500, 0xab1a7e);
    let (train, val, _) = data::split(&train_pool, &[0.85, 0.15], 5).unwrap();
    let val = val.unwrap();
    println!("source {source}");
    for (l1, iters) in [(0.5f64, 60usize), (2.0, 60), (8.0, 60)] {
        let lr = 3e-3f64;
        println!("-- lambda1 {l1} iters {iters}");
        for cell in ["euclidean", "euclidean+mi", "cosine", "cosine+mi", "mahalanobis", "mahalanobis+mi"] {
            let toggles = parse_cell(cell).unwrap();
            print!("{cell:<22}");
            for seed in 0..3u64 {
                let hyper = Hyperparams {
                    lambda1: l1, lambda2: 0.0, lr_w: lr, lr_m: 1e-6, lr_omega: 1e-2,
                    max_iters: iters, batch_size: 64, seed: 200 + seed, toggles,
                    ..Hyperparams::default()
                };
                let config = PipelineConfig {
                    patch_arch: vec![784, 96, 48], whole_arch: Some(vec![784, 96, 48]),
                    tessellate: false, include_whole: true, n_classes: 10, use_skips: true,
                    hyper, classifier_epochs: 60, classifier_lr: 1e-2, classifier_batch: 64,
                };
                let acc = train_pipeline(&train, &val, None, &config)
                    .and_then(|(e, _)| e.accuracy(&test))
                    .unwrap();
                print!(" {acc:.3}");
            }
            println!();
        }
    }
    for cell in [] as [&str; 0] {
        let toggles = parse_cell(cell).unwrap();
        print!("{cell:<22}");
        for seed in 0..3u64 {
            let hyper = Hyperparams {
                lambda1: 0.1,
                lambda2: 0.0,
                lr_w: 1e-3,
                lr_m: 1e-6,
                lr_omega: 1e-2,
                max_iters: 18,
                batch_size: 64,
                seed: 200 + seed,
                toggles,
                ..Hyperparams::default()
            };
            let config = PipelineConfig {
                patch_arch: vec![784, 96, 48],
                whole_arch: Some(vec![784, 96, 48]),
                tessellate: false,
                include_whole: true,
                n_classes: 10,
                use_skips: true,
                hyper,
                classifier_epochs: 60,
                classifier_lr: 1e-2,
                classifier_batch: 64,
            };
            let acc = train_pipeline(&train, &val, None, &config)
                .and_then(|(e, _)| e.accuracy(&test))
                .unwrap();
            print!(" {acc:.3}");
        }
        println!();
    }
}
