//! Mini-batch training with validation-driven learning-rate decay, early
//! stopping and best-epoch checkpointing.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{Modality, WindowDataset, N_CLASSES};
use crate::fusion::{build_model, Model, ModelSpec};
use crate::metrics::{classification_report, dataset_targets, evaluate_classification, EpochRecord};
use crate::nn::{lr_schedule, Adam, AdamConfig, Param, TrainConfig};

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation mAP.
    pub model: Model<f32>,
    pub best_epoch: Option<usize>,
    pub best_val_map: Option<f64>,
    pub history: Vec<EpochRecord>,
}

fn check_dataset(name: &str, data: &WindowDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} dataset is empty")));
    }
    Ok(())
}

/// Trains `spec` on `train`, selecting the epoch by mAP on `val`.
///
/// Methods 1 and 2 have no joint loss: their video and audio branches are
/// trained as independent single-modality models and then composed.
pub fn train(spec: &ModelSpec, train: &WindowDataset, val: &WindowDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    check_dataset("training", train)?;
    check_dataset("validation", val)?;
    if train.chunk_len_s != val.chunk_len_s {
        return Err(Error::InvalidArgument(format!(
            "training chunks are {} s, validation chunks {} s",
            train.chunk_len_s, val.chunk_len_s
        )));
    }
    if spec.trainable_end_to_end() {
        return train_end_to_end(spec, "joint", train, val, cfg);
    }
    let method = spec.fusion_method.expect("only fused specs lack a joint loss");
    let mut history = Vec::new();
    let mut branches = Vec::new();
    for modality in [Modality::Video, Modality::Audio] {
        let branch_spec = ModelSpec {
            dropout_keep: spec.dropout_keep,
            ..ModelSpec::single(modality, spec.pooling.clone())
        };
        let outcome = train_end_to_end(&branch_spec, modality.as_str(), train, val, cfg)?;
        history.extend(outcome.history);
        branches.push(outcome.model);
    }
    let model = Model::compose(method, &branches[0], &branches[1])?;
    let best_val_map = evaluate_classification(&model, val)?.map_events;
    Ok(TrainOutcome {
        model,
        best_epoch: None,
        best_val_map,
        history,
    })
}

fn train_end_to_end(
    spec: &ModelSpec,
    stage: &str,
    train: &WindowDataset,
    val: &WindowDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let spec = ModelSpec {
        dropout_keep: cfg.dropout_keep,
        ..spec.clone()
    };
    let mut model = build_model::<f32>(&spec, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(AdamConfig::default());
    let targets = dataset_targets(train);
    let targets_f32 = targets.mapv(f32::from);

    let mut best = model.clone();
    let mut best_epoch = None;
    let mut val_maps: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(&val_maps, cfg).lr;
        order.shuffle(&mut rng);
        let mut train_scores = Array2::<f64>::zeros((train.len(), N_CLASSES));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let video: Vec<_> = batch.iter().map(|&i| train.samples[i].video.view()).collect();
            let audio: Vec<_> = batch.iter().map(|&i| train.samples[i].audio.view()).collect();
            let y = targets_f32.select(ndarray::Axis(0), batch);
            let out = model.loss_and_backward(&video, &audio, y.view(), &mut rng)?;
            let loss = f64::from(out.loss);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            for (row, &i) in batch.iter().enumerate() {
                train_scores.row_mut(i).assign(&out.probs.row(row).mapv(f64::from));
            }
            let mut params: Vec<&mut Param<f32>> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            adam.step(&mut params, lr);
        }
        let train_map = classification_report(stage, train_scores.view(), targets.view())?.map_events;
        let val_map = evaluate_classification(&model, val)?.map_events;
        val_maps.push(val_map.unwrap_or(0.0));
        let schedule = lr_schedule(&val_maps, cfg);
        if schedule.best_epoch == Some(epoch) {
            best = model.clone();
            best_epoch = Some(epoch);
        }
        history.push(EpochRecord {
            stage: stage.into(),
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_map,
            val_map,
        });
        if schedule.stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_val_map: best_epoch.map(|e| val_maps[e]),
        best_epoch,
        history,
    })
}
