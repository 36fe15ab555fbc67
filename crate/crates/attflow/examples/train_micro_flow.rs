//! Trains a micro (channels/8) flow network on synthetic translation scenes
//! and reports eval EPE against the zero-flow baseline.
//!
//!     cargo run --release -p attflow --example train_micro_flow -- [arch] [iters] [lr] [weights]
//!
//! `weights` is `coarse` (the default schedule) or `equal`.

use attflow::data::{DatasetConfig, FlowDataset, MotionPreset, SampleSource};
use attflow::model::{spec_by_name, FlowNetwork};
use attflow::train::{evaluate, train, TrainConfig};

fn main() -> attflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arch = args.get(1).map(String::as_str).unwrap_or("FlowNetS");
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(800);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4e-4);
    let weights = match args.get(4).map(String::as_str) {
        Some("equal") => vec![1.0 / 7.0; 7],
        Some("fine") => vec![0.0, 0.0, 0.5, 0.2, 0.15, 0.1, 0.05],
        Some("full") => vec![0.4, 0.2, 0.12, 0.1, 0.08, 0.06, 0.04],
        _ => TrainConfig::default().loss_weights,
    };

    let spec = spec_by_name(arch, 8)?;
    let mut model = FlowNetwork::<f32>::build(spec, 7)?;

    let train_data = FlowDataset::new(
        DatasetConfig::new(100, 2048, (64, 64))
            .preset(MotionPreset::Translation)
            .layers(1, 2)
            .max_displacement(7.0),
    );
    let eval_data = FlowDataset::new(
        DatasetConfig::new(2000, 64, (64, 64))
            .preset(MotionPreset::Translation)
            .layers(1, 2)
            .max_displacement(7.0),
    );

    // what a predictor that always says "no motion" would score
    let zero_epe: f64 = (0..eval_data.len())
        .map(|i| eval_data.get(i).unwrap().gt.mean_norm())
        .sum::<f64>()
        / eval_data.len() as f64;
    println!("zero-flow eval EPE: {zero_epe:.3} px");

    let cfg = TrainConfig {
        iterations: iters,
        batch_size: 8,
        learning_rate: lr,
        lr_schedule: attflow::train::LrSchedule::HalveEvery { every: iters / 6 },
        seed: 11,
        loss_weights: weights,
        ..TrainConfig::default()
    };
    println!("training {arch} (channels/8), {iters} iterations, lr {lr} ...");
    let t0 = std::time::Instant::now();
    let report = train(&mut model, &train_data, None, &cfg)?;
    let losses = report.losses();
    for (i, chunk) in losses.chunks(100.max(iters / 10)).enumerate() {
        let mean: f64 = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!(
            "  iters {:5}..{:5}: mean loss {mean:.4}",
            i * chunk.len(),
            (i + 1) * chunk.len()
        );
    }
    let eval_epe = evaluate(&model, &eval_data)?;
    println!(
        "eval EPE: {eval_epe:.3} px ({:.1}x better than zero-flow) in {:.1}s",
        zero_epe / eval_epe,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
