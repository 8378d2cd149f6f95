use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, init_network, sample_loss, write_checkpoint, AdamConfig, AuxTargets, Gammas,
    NetworkSpec, ParamStore,
};
use crate::error::{Error, Result};
use crate::grid::{SampleFrame, SENTINEL};
use crate::tensor::{MaskGrid, Real, Reduction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Which binary mask the first layer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMask {
    /// Cells where at least one channel holds an observed value rather
    /// than the missing-data sentinel. Sentinels in the remaining channels
    /// are passed through as ordinary values.
    Valid,
    /// The ground-truth station mask of the sample.
    #[default]
    Stations,
    /// Every cell.
    Dense,
}

impl InputMask {
    pub fn mask_for(self, sample: &SampleFrame) -> MaskGrid {
        let (h, w) = (sample.input.shape()[0], sample.input.shape()[1]);
        match self {
            InputMask::Stations => sample.mask.clone(),
            InputMask::Dense => MaskGrid::ones(h, w),
            InputMask::Valid => {
                let c = sample.input.shape()[2];
                let values = sample
                    .input
                    .data()
                    .chunks(c)
                    .map(|px| if px.iter().all(|&v| v == SENTINEL as f32) { 0.0 } else { 1.0 })
                    .collect();
                MaskGrid::binary(h, w, values).expect("binary by construction")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gammas: Gammas,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Seeds both initialization and the per-epoch shuffle.
    pub seed: u64,
    pub precision: Precision,
    /// Where the best-validation checkpoint is written, if anywhere.
    pub checkpoint: Option<PathBuf>,
    pub reduction: Reduction,
    pub input_mask: InputMask,
    pub aux: AuxTargets,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gammas: Gammas::default(),
            adam: AdamConfig::default(),
            epochs: 30,
            seed: 7,
            precision: Precision::F32,
            checkpoint: None,
            reduction: Reduction::Sum,
            input_mask: InputMask::Stations,
            aux: AuxTargets {
                fw_channel: 0,
                bscan_channel: 1,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters after the last epoch.
    pub last: ParamStore<T>,
    /// Parameters with the lowest validation loss (training loss when there
    /// is no validation set).
    pub best: ParamStore<T>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Initializes from `config.seed` and trains.
pub fn train<T: Real>(
    train_set: &[SampleFrame],
    val_set: &[SampleFrame],
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let params = init_network(spec, config.seed)?;
    train_from(params, train_set, val_set, spec, config)
}

/// Per epoch: seeded shuffle, then forward → loss → backward → Adam for
/// every sample (batch size 1), then a validation pass.
pub fn train_from<T: Real>(
    params: ParamStore<T>,
    train_set: &[SampleFrame],
    val_set: &[SampleFrame],
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(params, train_set, val_set, spec, config, |_, _| {})
}

/// [`train_from`] that reports each finished epoch and the parameters it
/// ended with.
pub fn train_with<T: Real>(
    mut params: ParamStore<T>,
    train_set: &[SampleFrame],
    val_set: &[SampleFrame],
    spec: &NetworkSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore<T>),
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    config.gammas.validate()?;
    spec.validate()?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_loss = f64::INFINITY;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for &i in &order {
            let sample = &train_set[i];
            let m0 = config.input_mask.mask_for(sample);
            let (mut pass, loss) = sample_loss(
                &params,
                spec,
                sample,
                &m0,
                config.aux,
                config.gammas,
                config.reduction,
            )
            .map_err(|e| diverged_at(e, epoch, sample))?;
            let value = pass.tape.scalar(loss).expect("scalar loss").as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged(first_bad_layer(&pass)));
            }
            pass.tape.backward(loss)?;
            params.pull_grads(&pass, false)?;
            adam_step(&mut params, &config.adam)?;
            if let Some(layer) = params
                .layers()
                .iter()
                .find(|l| !(l.kernel.all_finite() && l.bias.all_finite()))
            {
                return Err(Error::Diverged(format!(
                    "parameters of layer {} became non-finite at epoch {epoch}",
                    layer.name
                )));
            }
            total += value;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&params, val_set, spec, config)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&record, &params);
        history.push(record);

        let score = val_loss.unwrap_or(train_loss);
        if score < best_loss {
            best_loss = score;
            best = params.clone();
            best_epoch = Some(epoch);
            if let Some(path) = &config.checkpoint {
                write_checkpoint(path, spec, &params)?;
            }
        }
    }
    Ok(TrainOutcome {
        last: params,
        best,
        best_epoch,
        history,
    })
}

/// Mean multitask loss over a set of samples, without updating anything.
pub fn mean_loss<T: Real>(
    params: &ParamStore<T>,
    samples: &[SampleFrame],
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for sample in samples {
        let m0 = config.input_mask.mask_for(sample);
        let (pass, loss) = sample_loss(
            params,
            spec,
            sample,
            &m0,
            config.aux,
            config.gammas,
            config.reduction,
        )?;
        total += pass.tape.scalar(loss).expect("scalar loss").as_f64();
    }
    Ok(total / samples.len().max(1) as f64)
}

fn diverged_at(e: Error, epoch: usize, sample: &SampleFrame) -> Error {
    match e {
        Error::Diverged(msg) => Error::Diverged(format!(
            "{msg} (epoch {epoch}, sample {})",
            sample.timestamp.format("%Y-%m-%dT%H:%M:%SZ")
        )),
        other => other,
    }
}

fn first_bad_layer<T: Real>(pass: &super::ForwardPass<T>) -> String {
    pass.layer_outputs
        .iter()
        .find(|(_, v)| !pass.tape.value(*v).all_finite())
        .map(|(name, _)| format!("non-finite activations first appear in layer {name}"))
        .unwrap_or_else(|| "loss is non-finite".into())
}
