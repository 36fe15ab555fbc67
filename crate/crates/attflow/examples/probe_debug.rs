//! Scratch diagnostics: trains a pair of micro variants briefly and reports
//! per-pyramid-level eval EPE to show where refinement stalls.

use attflow::autodiff::{Graph, Mode};
use attflow::data::{DatasetConfig, FlowDataset, FlowField, MotionPreset, SampleSource};
use attflow::metrics::epe;
use attflow::model::{images_to_input, spec_by_name, FlowNetwork};
use attflow::train::{train, LrSchedule, TrainConfig};

fn per_level_epe(
    model: &FlowNetwork<f32>,
    data: &FlowDataset,
) -> attflow::Result<Vec<(u8, f64)>> {
    let mut sums: Vec<(u8, f64)> = Vec::new();
    for i in 0..data.len() {
        let s = data.get(i)?;
        let mut g = Graph::with_mode(Mode::Inference);
        g.set_check_finite(false);
        let x = g.constant(images_to_input::<f32>(&s.image1, &s.image2)?);
        let pyr = model.forward(&mut g, x)?;
        for (li, level) in pyr.levels().iter().enumerate() {
            let full = g.bilinear_resize(level.var, s.image1.height(), s.image1.width())?;
            let f = FlowField::from_tensor(g.value(full), 0)?;
            let e = epe(&f, &s.gt)?;
            if sums.len() <= li {
                sums.push((level.scale_log2, 0.0));
            }
            sums[li].1 += e;
        }
    }
    for s in &mut sums {
        s.1 /= data.len() as f64;
    }
    Ok(sums)
}

fn main() -> attflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1200);
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
    for arch in ["FlowNeXt32", "AttFlowNeXt32"] {
        let spec = spec_by_name(arch, 8)?;
        let mut model = FlowNetwork::<f32>::build(spec, 7)?;
        let cfg = TrainConfig {
            iterations: iters,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::HalveEvery { every: iters / 6 },
            seed: 11,
            loss_weights: vec![0.4, 0.2, 0.12, 0.1, 0.08, 0.06, 0.04],
            ..TrainConfig::default()
        };
        let report = train(&mut model, &train_data, None, &cfg)?;
        println!(
            "{arch}: final train loss {:.4}",
            report.records.last().unwrap().loss
        );
        for (scale, e) in per_level_epe(&model, &eval_data)? {
            println!("  level 1/{:<3}: eval EPE {e:.3}", 1usize << scale);
        }
    }
    Ok(())
}
