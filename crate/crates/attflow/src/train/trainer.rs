use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Mode, Scalar, Shape, Tensor};
use crate::data::{hflip, photometric_jitter, SamplePair, SampleSource};
use crate::error::{Error, Result};
use crate::metrics::{epe, multiscale_loss};
use crate::model::{write_checkpoint, write_input_planes, FlowNetwork};
use crate::train::state::TrainState;
use crate::train::{IterationRecord, Optimizer, TrainConfig, TrainReport};

/// Deterministic index order for one epoch.
fn epoch_order(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5155_55AA);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Indices of the batch served at `iteration` (pure in seed and iteration,
/// so a resumed run sees exactly the batches the original would have).
fn batch_indices(seed: u64, iteration: usize, len: usize, batch: usize) -> Vec<usize> {
    let per_epoch = (len / batch).max(1);
    let epoch = iteration / per_epoch;
    let slot = iteration % per_epoch;
    let order = epoch_order(seed, epoch, len);
    (0..batch)
        .map(|i| order[(slot * batch + i) % len])
        .collect()
}

fn assemble_batch<T: Scalar>(
    samples: &[SamplePair],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = &samples[0];
    let (h, w) = (first.image1.height(), first.image1.width());
    let plane = h * w;
    let b = samples.len();
    let mut input = vec![T::ZERO; b * 6 * plane];
    let mut gt = vec![T::ZERO; b * 2 * plane];
    for (i, s) in samples.iter().enumerate() {
        if s.image1.height() != h || s.image1.width() != w {
            return Err(Error::shape(
                "batch with mixed sample sizes",
                &[h, w],
                &[s.image1.height(), s.image1.width()],
            ));
        }
        write_input_planes(&s.image1, &s.image2, &mut input[i * 6 * plane..(i + 1) * 6 * plane]);
        s.gt.write_planar(&mut gt[i * 2 * plane..(i + 1) * 2 * plane]);
    }
    Ok((
        Tensor::new(Shape::nchw(b, 6, h, w), input)?,
        Tensor::new(Shape::nchw(b, 2, h, w), gt)?,
    ))
}

/// Per-iteration data seed, also reported on divergence.
fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    crate::data::splitmix64(seed ^ (iteration as u64).wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Trains `model` on `dataset`, recording the loss every iteration. With
/// `eval_dataset`, finishes with a mean-EPE evaluation. Deterministic in
/// (seed, config) for a fixed build; single-threaded.
pub fn train<T: Scalar>(
    model: &mut FlowNetwork<T>,
    dataset: &dyn SampleSource,
    eval_dataset: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let weights = cfg.weights();
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut start_iter = 0usize;
    if let Some(path) = &cfg.resume_from {
        start_iter = TrainState::load_into(path, model, &mut optimizer)?;
    }

    let started = Instant::now();
    let mut report = TrainReport::default();
    for iter in start_iter..cfg.iterations {
        let indices = batch_indices(cfg.seed, iter, dataset.len(), cfg.batch_size);
        let mut samples = indices
            .iter()
            .map(|&i| dataset.get(i))
            .collect::<Result<Vec<_>>>()?;
        if cfg.augment_flip || cfg.augment_photometric {
            let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(cfg.seed, iter));
            for s in &mut samples {
                if cfg.augment_flip && rng.gen_bool(0.5) {
                    *s = hflip(s);
                }
                if cfg.augment_photometric {
                    let brightness = rng.gen_range(-0.1..0.1);
                    let contrast = rng.gen_range(0.85..1.18);
                    *s = photometric_jitter(s, brightness, contrast);
                }
            }
        }
        let (input, gt) = assemble_batch::<T>(&samples)?;

        let mut g = Graph::new();
        g.set_check_finite(false);
        let input = g.constant(input);
        let pyramid = model.forward(&mut g, input)?;
        let loss = multiscale_loss(&mut g, &pyramid, &gt, &weights)?;
        let loss_value = g.value(loss).item().to_f64();
        if !loss_value.is_finite() {
            return Err(Error::NanLoss {
                iteration: iter,
                batch_seed: iteration_seed(cfg.seed, iter),
            });
        }
        g.backward(loss)?;
        let lr = cfg.lr_schedule.lr_at(cfg.learning_rate, iter);
        optimizer.step(model, &g, lr)?;
        drop(g);

        report.records.push(IterationRecord {
            iter,
            loss: loss_value,
            lr,
            wall_s: started.elapsed().as_secs_f64(),
        });

        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let spec = model.spec().clone();
                write_checkpoint(dir.join(format!("iter_{:06}.ckpt", iter + 1)), &spec, model)?;
                TrainState::save(
                    &dir.join(format!("iter_{:06}.state", iter + 1)),
                    model,
                    &optimizer,
                    iter + 1,
                )?;
            }
        }
    }

    if let Some(eval) = eval_dataset {
        report.final_eval_epe = Some(evaluate(model, eval)?);
    }
    report.total_wall_s = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean endpoint error of full-resolution estimates over a dataset.
pub fn evaluate<T: Scalar>(model: &FlowNetwork<T>, dataset: &dyn SampleSource) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("evaluation dataset is empty".into()));
    }
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let s = dataset.get(i)?;
        let est = model.estimate(&s.image1, &s.image2)?;
        total += epe(&est, &s.gt)?;
    }
    Ok(total / dataset.len() as f64)
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub median_seconds: f64,
    pub param_count: usize,
    pub times: Vec<f64>,
}

/// Median wall-clock of single forward passes (one untimed warmup first).
pub fn bench<T: Scalar>(
    model: &FlowNetwork<T>,
    input_hw: (usize, usize),
    repeats: usize,
) -> Result<BenchResult> {
    use crate::nn::ParamVisitor;
    if repeats < 3 {
        return Err(Error::InvalidArgument(format!(
            "bench needs at least 3 repeats, got {repeats}"
        )));
    }
    let (h, w) = input_hw;
    let run = |model: &FlowNetwork<T>| -> Result<f64> {
        let mut g = Graph::with_mode(Mode::Inference);
        g.set_check_finite(false);
        let x = g.constant(Tensor::full(Shape::nchw(1, 6, h, w), T::from_f64(0.1)));
        let t0 = Instant::now();
        let _ = model.forward(&mut g, x)?;
        Ok(t0.elapsed().as_secs_f64())
    };
    run(model)?; // warmup
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        times.push(run(model)?);
    }
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BenchResult {
        median_seconds: sorted[sorted.len() / 2],
        param_count: model.param_count(),
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_indices_are_pure_in_iteration() {
        for iter in [0usize, 5, 17] {
            let a = batch_indices(9, iter, 40, 4);
            let b = batch_indices(9, iter, 40, 4);
            assert_eq!(a, b);
            assert!(a.iter().all(|&i| i < 40));
        }
        // consecutive batches within one epoch do not overlap
        let e0: Vec<usize> = (0..10).flat_map(|i| batch_indices(9, i, 40, 4)).collect();
        let mut sorted = e0.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 40);
    }
}
