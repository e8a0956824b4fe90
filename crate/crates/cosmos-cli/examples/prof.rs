use std::time::Instant;
use cosmos_core::pipeline::{train_pipeline, PipelineConfig};
use cosmos_core::training::{Hyperparams, LossToggles};
use cosmos_core::tensor::{init_weights, Tensor};
use cosmos_core::data::DataBatch;
use cosmos_core::rng::Rng;

fn main() {
    // matmul throughput probe
    let a = init_weights(595, 784, 1).unwrap();
    let b = init_weights(784, 128, 2).unwrap();
    let t = Instant::now();
    for _ in 0..10 {
        let _ = a.matmul(&b).unwrap();
    }
    let el = t.elapsed().as_secs_f64();
    let flops = 10.0 * 2.0 * 595.0 * 784.0 * 128.0;
    println!("matmul: {:.2} GFLOP/s", flops / el / 1e9);

    // one ablation-style run
    let mut rng = Rng::new(1);
    let n = 595;
    let data: Vec<f64> = (0..n * 784).map(|_| rng.next_f64()).collect();
    let y: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let train = DataBatch::new(Tensor::new(n, 784, data).unwrap(), y, 10).unwrap();
    let val = train.subset(&(0..100).collect::<Vec<_>>()).unwrap();
    let config = PipelineConfig {
        patch_arch: vec![784, 128, 64],
        whole_arch: Some(vec![784, 128, 64]),
        tessellate: false,
        include_whole: true,
        n_classes: 10,
        use_skips: true,
        hyper: Hyperparams {
            max_iters: 5,
            batch_size: 64,
            lambda1: 0.1,
            seed: 3,
            toggles: LossToggles::cosmos(),
            ..Hyperparams::default()
        },
        classifier_epochs: 10,
        classifier_lr: 1e-2,
        classifier_batch: 64,
    };
    let t = Instant::now();
    let _ = train_pipeline(&train, &val, None, &config).unwrap();
    println!("5 epochs + 10 clf epochs: {:.2}s", t.elapsed().as_secs_f64());
}
