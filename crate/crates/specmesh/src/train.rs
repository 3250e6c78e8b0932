//! Training and evaluation driver.
//!
//! Deterministic given the run configuration: parameter init, batch order,
//! and augmentation draws all derive from the configured seed through fixed
//! generator streams.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::store::lr_schedule;
use crate::error::{Error, Result};
use crate::loss::{loss_gradient, loss_value, nme, EvalReport, LossSpec};
use crate::net::{build_model, Model, NetConfig};
use crate::real::{real, Real};
use crate::rng::SeededRng;
use crate::sampling::MeshHierarchy;
use crate::synth::{augment, SampleRecord};
use crate::tensor::Tensor;

/// Generator stream ids hanging off the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

fn default_log_every() -> usize {
    10
}
fn default_checkpoint_every() -> usize {
    500
}
fn default_steps_per_epoch() -> usize {
    40
}

/// Complete run description: network plus training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub net: NetConfig,
    pub seed: u64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    /// Steps per learning-rate epoch.
    #[serde(default = "default_steps_per_epoch")]
    pub steps_per_epoch: usize,
    pub loss: LossSpec,
    #[serde(default)]
    pub augment: bool,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 || self.steps == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, steps and steps_per_epoch must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub log: Vec<LogRow>,
    pub first_loss: f64,
    pub final_loss: f64,
}

/// Callback invoked at checkpoint cadence with (step, serialized state).
pub type CheckpointSink<'a> = dyn FnMut(usize, &[u8]) -> Result<()> + 'a;

fn check_dataset(config: &RunConfig, dataset: &[SampleRecord], n_out: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    for (i, r) in dataset.iter().enumerate() {
        let d = r.image.dims();
        if d[0] != config.net.input_size || d[1] != config.net.input_size {
            return Err(Error::InvalidArgument(format!(
                "sample {i} image is {}x{}, run expects {}",
                d[0], d[1], config.net.input_size
            )));
        }
        if r.gt_vertices.dims()[0] != n_out {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has {} vertices, model outputs {n_out}",
                r.gt_vertices.dims()[0]
            )));
        }
    }
    Ok(())
}

fn stack_batch<T: Real>(records: &[SampleRecord]) -> Result<(Tensor<T>, Tensor<T>)> {
    let b = records.len();
    let img_dims = records[0].image.dims();
    let n = records[0].gt_vertices.dims()[0];
    let mut images = Tensor::<T>::zeros(&[b, img_dims[0], img_dims[1], 3]);
    let mut gt = Tensor::<T>::zeros(&[b, n, 3]);
    let img_len = img_dims[0] * img_dims[1] * 3;
    for (i, r) in records.iter().enumerate() {
        for (o, &v) in images.data_mut()[i * img_len..(i + 1) * img_len]
            .iter_mut()
            .zip(r.image.data())
        {
            *o = real::<T>(f64::from(v));
        }
        for (o, &v) in gt.data_mut()[i * n * 3..(i + 1) * n * 3]
            .iter_mut()
            .zip(r.gt_vertices.data())
        {
            *o = real::<T>(f64::from(v));
        }
    }
    Ok((images, gt))
}

/// Train a fresh model on the dataset. `resume` restores a prior state and
/// continues the step counter from `start_step`.
pub fn train<T: Real>(
    config: &RunConfig,
    hierarchy: Arc<MeshHierarchy>,
    dataset: &[SampleRecord],
    resume: Option<(&[u8], usize)>,
    checkpoint_sink: Option<&mut CheckpointSink<'_>>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let root = SeededRng::new(config.seed);
    let mut model: Model<T> = build_model(
        &config.net,
        hierarchy,
        config.seed ^ STREAM_INIT.wrapping_mul(0x9e37_79b9_7f4a_7c15),
    )?;
    check_dataset(config, dataset, model.output_vertex_count())?;
    let mut start_step = 0;
    if let Some((bytes, step)) = resume {
        model.decode_state(bytes)?;
        start_step = step;
    }

    let mut batch_rng = root.split(STREAM_BATCH);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    batch_rng.shuffle(&mut order);
    let mut cursor = 0;
    // Replay the shuffled stream up to the resume point so a resumed run
    // sees the same batches a continuous run would.
    for _ in 0..start_step * config.batch_size {
        if cursor == order.len() {
            batch_rng.shuffle(&mut order);
            cursor = 0;
        }
        cursor += 1;
    }

    let mut log = Vec::new();
    let mut first_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut sink = checkpoint_sink;
    for step in start_step..config.steps {
        // Assemble the batch in shuffled order, reshuffling at epoch ends.
        let mut batch: Vec<SampleRecord> = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                batch_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(dataset[order[cursor]].clone());
            cursor += 1;
        }
        if config.augment {
            let mut aug_rng = root.split(STREAM_AUGMENT).split(step as u64);
            for r in &mut batch {
                *r = augment(r, &mut aug_rng)?;
            }
        }
        let (images, gt) = stack_batch::<T>(&batch)?;
        let pred = model.forward(&images)?;
        let mut errors = pred.clone();
        for (e, &g) in errors.data_mut().iter_mut().zip(gt.data()) {
            *e = *e - g;
        }
        let loss = loss_value(&errors, &config.loss)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        if step == start_step {
            first_loss = loss;
        }
        final_loss = loss;
        let grad = loss_gradient(&errors, &config.loss)?;
        model.backward(&grad)?;
        let lr = lr_schedule(config.lr, config.decay, (step / config.steps_per_epoch) as i64)?;
        model.store.sgd_momentum_step(lr, config.momentum)?;

        if step % config.log_every == 0 || step + 1 == config.steps {
            log.push(LogRow { step, lr, loss });
        }
        if let Some(sink) = sink.as_mut() {
            if (step + 1) % config.checkpoint_every == 0 && step + 1 != config.steps {
                let bytes = model.encode_state();
                sink(step + 1, &bytes)?;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        first_loss,
        final_loss,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    TwoD,
    ThreeD,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub landmarks_only: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::ThreeD,
            landmarks_only: false,
        }
    }
}

/// Number of worker threads for evaluation, honoring SPECMESH_THREADS.
pub fn eval_threads() -> usize {
    std::env::var("SPECMESH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get().min(4))
                .unwrap_or(1)
        })
}

/// Sparse or dense alignment error for one sample. The normalization hull
/// comes from the annotated landmarks when present, else from all vertices.
pub fn sample_error<T: Real>(
    pred: &Tensor<T>,
    record: &SampleRecord,
    options: EvalOptions,
) -> Result<f64> {
    let dims_used = match options.mode {
        EvalMode::TwoD => 2,
        EvalMode::ThreeD => 3,
    };
    let n = record.gt_vertices.dims()[0];
    let gt: Tensor<f64> = record.gt_vertices.cast();
    let pred64: Tensor<f64> = pred.cast();
    let pick = |t: &Tensor<f64>, ids: &[u32]| {
        Tensor::from_vec(
            &[ids.len(), 3],
            ids.iter()
                .flat_map(|&i| (0..3).map(move |k| t.at2(i as usize, k)))
                .collect(),
        )
        .unwrap()
    };
    match (&record.landmark_indices, options.landmarks_only) {
        (Some(ids), true) => nme(&pick(&pred64, ids), &pick(&gt, ids), dims_used),
        (Some(ids), false) => {
            // Dense distances, hull from the annotated landmarks.
            let hull = crate::loss::hull_size(&pick(&gt, ids))?;
            let mut total = 0.0;
            for i in 0..n {
                let mut d2 = 0.0;
                for c in 0..dims_used {
                    let d = pred64.at2(i, c) - gt.at2(i, c);
                    d2 += d * d;
                }
                total += d2.sqrt();
            }
            Ok(total / n as f64 / hull)
        }
        (None, true) => Err(Error::InvalidArgument(
            "landmarks-only evaluation needs landmark indices".into(),
        )),
        (None, false) => nme(&pred64, &gt, dims_used),
    }
}

/// Evaluate a frozen model over a dataset. Samples are processed by a fixed
/// partition across worker threads and reduced in index order, so the
/// report does not depend on scheduling.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    dataset: &[SampleRecord],
    options: EvalOptions,
    thresholds: &[f64],
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let workers = eval_threads().min(dataset.len());
    let chunk = dataset.len().div_ceil(workers);
    let mut results: Vec<Result<(usize, f64)>> = Vec::with_capacity(dataset.len());
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, part) in dataset.chunks(chunk).enumerate() {
            handles.push(scope.spawn(move || {
                let mut out = Vec::with_capacity(part.len());
                for (k, record) in part.iter().enumerate() {
                    let idx = w * chunk + k;
                    let run = || -> Result<f64> {
                        let (images, _) = stack_batch::<T>(std::slice::from_ref(record))?;
                        let pred = model.infer(&images)?;
                        let n = record.gt_vertices.dims()[0];
                        let pred = pred.reshape(&[n, 3])?;
                        sample_error(&pred, record, options)
                    };
                    out.push(run().map(|e| (idx, e)));
                }
                out
            }));
        }
        for h in handles {
            results.extend(h.join().expect("evaluation worker panicked"));
        }
    });
    let mut samples: Vec<(String, f64, Option<f64>)> = Vec::with_capacity(dataset.len());
    let mut indexed: Vec<(usize, f64)> = Vec::with_capacity(dataset.len());
    for r in results {
        indexed.push(r?);
    }
    indexed.sort_by_key(|&(i, _)| i);
    for (i, e) in indexed {
        samples.push((format!("{i:05}"), e, dataset[i].yaw_degrees));
    }
    EvalReport::from_samples(samples, thresholds)
}

/// Default CED thresholds: 0.001 to 0.1 in steps of 0.001.
pub fn default_thresholds() -> Vec<f64> {
    (1..=100).map(|i| i as f64 * 0.001).collect()
}

pub fn write_log_csv(log: &[LogRow], path: &Path) -> Result<()> {
    let mut out = String::from("step,lr,loss\n");
    for row in log {
        out.push_str(&format!("{},{},{}\n", row.step, row.lr, row.loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::AggregationMode;
    use crate::real::Precision;
    use crate::sampling::build_hierarchy;
    use crate::synth::shapes::sphere_mesh;
    use crate::synth::{synth_dataset, DeformSpec};

    fn tiny_run() -> (RunConfig, Arc<MeshHierarchy>, Vec<SampleRecord>) {
        let net = NetConfig {
            input_size: 16,
            levels: 2,
            encoder_channels: vec![4, 8],
            fc_hidden: 16,
            embedding_dim: 12,
            decoder_channels: 8,
            densegcn_growth: 4,
            cheb_order: 2,
            aggregation_mode: AggregationMode::Full,
            precision: Precision::Single,
            graph_bias: true,
            hierarchy: None,
        };
        let config = RunConfig {
            net,
            seed: 11,
            batch_size: 4,
            steps: 12,
            lr: 1e-3,
            momentum: 0.9,
            decay: 0.99,
            steps_per_epoch: 4,
            loss: LossSpec::exp_linear(5.0, 4.0).unwrap(),
            augment: false,
            log_every: 5,
            checkpoint_every: 500,
        };
        let mesh = sphere_mesh(64, 0.8).unwrap();
        let hierarchy = Arc::new(build_hierarchy(&mesh, &[64, 16]).unwrap());
        let spec = DeformSpec {
            basis_count: 3,
            coeff_range: 0.1,
        };
        let dataset = synth_dataset(&hierarchy.levels[0], &spec, 8, 16, 5).unwrap();
        (config, hierarchy, dataset)
    }

    #[test]
    fn short_run_trains_and_logs() {
        let (config, hierarchy, dataset) = tiny_run();
        let out = train::<f32>(&config, hierarchy, &dataset, None, None).unwrap();
        assert!(out.final_loss.is_finite());
        assert!(!out.log.is_empty());
        assert_eq!(out.log[0].step, 0);
        assert!((out.log[0].lr - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (config, hierarchy, dataset) = tiny_run();
        let a = train::<f32>(&config, hierarchy.clone(), &dataset, None, None)
            .unwrap()
            .model
            .encode_state();
        let b = train::<f32>(&config, hierarchy, &dataset, None, None)
            .unwrap()
            .model
            .encode_state();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_matches_continuous_run() {
        let (mut config, hierarchy, dataset) = tiny_run();
        config.steps = 10;
        let full = train::<f32>(&config, hierarchy.clone(), &dataset, None, None)
            .unwrap()
            .model
            .encode_state();
        let mut half_config = config.clone();
        half_config.steps = 5;
        let half = train::<f32>(&half_config, hierarchy.clone(), &dataset, None, None)
            .unwrap()
            .model
            .encode_state();
        let resumed = train::<f32>(&config, hierarchy, &dataset, Some((&half, 5)), None)
            .unwrap()
            .model
            .encode_state();
        assert_eq!(full, resumed);
    }

    #[test]
    fn evaluation_report_is_thread_invariant() {
        let (mut config, hierarchy, dataset) = tiny_run();
        config.steps = 2;
        let out = train::<f32>(&config, hierarchy, &dataset, None, None).unwrap();
        let opts = EvalOptions::default();
        let thresholds = default_thresholds();
        std::env::set_var("SPECMESH_THREADS", "1");
        let a = evaluate(&out.model, &dataset, opts, &thresholds).unwrap();
        std::env::set_var("SPECMESH_THREADS", "3");
        let b = evaluate(&out.model, &dataset, opts, &thresholds).unwrap();
        std::env::remove_var("SPECMESH_THREADS");
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn perfect_prediction_gives_zero_error() {
        let (config, hierarchy, dataset) = tiny_run();
        let model: Model<f32> =
            build_model(&config.net, hierarchy, 1).unwrap();
        let mut record = dataset[0].clone();
        // The 64-vertex template is below the 68-landmark threshold; pin a
        // small landmark set by hand.
        record.landmark_indices = Some(vec![0, 5, 9, 16, 33, 47]);
        let pred: Tensor<f32> = record.gt_vertices.clone();
        let e = sample_error(&pred, &record, EvalOptions::default()).unwrap();
        assert_eq!(e, 0.0);
        let e = sample_error(
            &pred,
            &record,
            EvalOptions {
                mode: EvalMode::TwoD,
                landmarks_only: true,
            },
        )
        .unwrap();
        assert_eq!(e, 0.0);
        drop(model);
    }

    #[test]
    fn dataset_validation_errors() {
        let (config, hierarchy, mut dataset) = tiny_run();
        dataset[0].gt_vertices = Tensor::<f32>::zeros(&[10, 3]);
        match train::<f32>(&config, hierarchy, &dataset, None, None) {
            Err(e) => assert!(e.to_string().contains("vertices")),
            Ok(_) => panic!("mismatched dataset accepted"),
        }
    }
}
