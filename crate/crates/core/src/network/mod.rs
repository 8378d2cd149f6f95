//! The multiheaded sparsity-invariant network, its loss and training loop.

mod adam;
mod checkpoint;
mod gradcheck;
mod spec;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{inverse_log_transform, SampleFrame};
use crate::tensor::{avgpool_mask, MaskGrid, Real, Reduction, Tape, Tensor, Var};

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{gradcheck_suite, OpCheck, GRADCHECK_STEP, GRADCHECK_TOLERANCE, KINK_MARGIN};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use spec::{format_layers, parse_layers, Activation, Head, LayerSlot, LayerSpec, NetworkSpec};
pub use train::{mean_loss, train, train_from, train_with, EpochRecord, InputMask, Precision, TrainConfig, TrainOutcome};

/// Learnable tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub name: String,
    /// `k×k×Cin×Cout`.
    pub kernel: Tensor<T>,
    /// `Cout`.
    pub bias: Tensor<T>,
}

/// Adam first/second moment accumulators for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

impl<T: Real> Moments<T> {
    fn zeros(n: usize) -> Self {
        Moments {
            first: vec![T::zero(); n],
            second: vec![T::zero(); n],
        }
    }
}

/// Parameters in layer order with their gradients and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    layers: Vec<LayerParams<T>>,
    /// Two entries per layer: kernel, then bias.
    moments: Vec<Moments<T>>,
    step: u64,
    grads_ready: bool,
}

impl<T: Real> ParamStore<T> {
    pub fn from_layers(mut layers: Vec<LayerParams<T>>) -> Self {
        let mut moments = Vec::with_capacity(layers.len() * 2);
        for layer in &mut layers {
            layer.kernel.set_requires_grad(true);
            layer.bias.set_requires_grad(true);
            moments.push(Moments::zeros(layer.kernel.numel()));
            moments.push(Moments::zeros(layer.bias.numel()));
        }
        ParamStore {
            layers,
            moments,
            step: 0,
            grads_ready: false,
        }
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut LayerParams<T> {
        &mut self.layers[idx]
    }

    pub fn moments(&self) -> &[Moments<T>] {
        &self.moments
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn restore_state(&mut self, step: u64, moments: Vec<Moments<T>>) -> Result<()> {
        if moments.len() != self.moments.len()
            || moments
                .iter()
                .zip(&self.moments)
                .any(|(a, b)| a.first.len() != b.first.len() || a.second.len() != b.second.len())
        {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.numel() + l.bias.numel())
            .sum()
    }

    /// Copies gradients from a finished backward pass into the parameters.
    /// Stored gradients are overwritten unless `accumulate` is set.
    pub fn pull_grads(&mut self, pass: &ForwardPass<T>, accumulate: bool) -> Result<()> {
        if pass.param_vars.len() != self.layers.len() {
            return Err(Error::Shape("forward pass was built from different parameters".into()));
        }
        for (layer, &(kv, bv)) in self.layers.iter_mut().zip(&pass.param_vars) {
            for (tensor, var) in [(&mut layer.kernel, kv), (&mut layer.bias, bv)] {
                let src = pass
                    .tape
                    .grad(var)
                    .ok_or_else(|| Error::Autodiff("parameter has no gradient slot".into()))?;
                let dst = tensor.grad_mut().expect("parameters always carry gradients");
                if accumulate {
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                } else {
                    dst.copy_from_slice(src);
                }
            }
        }
        self.grads_ready = true;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    name: l.name.clone(),
                    kernel: l.kernel.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            moments: self
                .moments
                .iter()
                .map(|m| Moments {
                    first: m.first.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    second: m.second.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            step: self.step,
            grads_ready: false,
        }
    }

    fn matches(&self, spec: &NetworkSpec) -> Result<()> {
        let slots = spec.layer_slots();
        if slots.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "spec has {} layers, parameters have {}",
                slots.len(),
                self.layers.len()
            )));
        }
        for (slot, layer) in slots.iter().zip(&self.layers) {
            let k = slot.spec.kernel;
            if layer.kernel.shape() != [k, k, slot.in_channels, slot.spec.filters]
                || layer.bias.shape() != [slot.spec.filters]
            {
                return Err(Error::Shape(format!(
                    "layer {} parameters do not match its spec",
                    slot.name
                )));
            }
        }
        Ok(())
    }
}

/// Kernels uniform in `±√(1/(k²·Cin))`, biases zero, reproducible per seed.
pub fn init_network<T: Real>(spec: &NetworkSpec, seed: u64) -> Result<ParamStore<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_slots()
        .into_iter()
        .map(|slot| {
            let k = slot.spec.kernel;
            let bound = (1.0 / (k * k * slot.in_channels) as f64).sqrt();
            let shape = [k, k, slot.in_channels, slot.spec.filters];
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
            LayerParams {
                name: slot.name,
                kernel: Tensor::new(&shape, data).expect("shape computed from spec"),
                bias: Tensor::zeros(&[slot.spec.filters]),
            }
        })
        .collect();
    Ok(ParamStore::from_layers(layers))
}

/// The tape of one forward evaluation plus handles into it.
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    /// Head outputs, `H×W×1`, indexed by [`Head::index`].
    pub outputs: [Var; 3],
    /// Mask state after the last layer of each head.
    pub masks: [MaskGrid; 3],
    /// `(kernel, bias)` leaves in parameter order.
    pub param_vars: Vec<(Var, Var)>,
    /// Activation of every layer, named as in [`NetworkSpec::layer_slots`].
    pub layer_outputs: Vec<(String, Var)>,
    /// Convolution output of every layer before its activation, same order.
    pub pre_activations: Vec<Var>,
}

impl<T: Real> ForwardPass<T> {
    pub fn output(&self, head: Head) -> &Tensor<T> {
        self.tape.value(self.outputs[head.index()])
    }

    /// Head output as an `H×W` plane.
    pub fn plane(&self, head: Head) -> Tensor<T> {
        let out = self.output(head);
        let (h, w) = (out.shape()[0], out.shape()[1]);
        out.clone().reshape(&[h, w]).expect("head outputs have one channel")
    }
}

fn apply_layer<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &MaskGrid,
    kernel: Var,
    bias: Var,
    spec: &LayerSpec,
    eps: f64,
    name: &str,
) -> Result<(Var, Var, MaskGrid)> {
    let in_layer = |e: Error| match e {
        Error::NonFinite(msg) => Error::Diverged(format!("layer {name}: {msg}")),
        other => other,
    };
    let z = tape.conv2d_sparse(x, mask, kernel, bias, eps).map_err(in_layer)?;
    let pooled = avgpool_mask(mask, spec.kernel)?;
    let y = match spec.activation {
        Activation::Relu => tape.relu(z).map_err(in_layer)?,
        Activation::None => z,
    };
    Ok((z, y, pooled))
}

/// Runs backbone and heads, threading `(features, mask)` through every
/// layer as conv → mask pooling → activation. The backbone's final mask is
/// handed to each head unchanged.
pub fn forward<T: Real>(
    params: &ParamStore<T>,
    spec: &NetworkSpec,
    input: &Tensor<T>,
    m0: &MaskGrid,
) -> Result<ForwardPass<T>> {
    params.matches(spec)?;
    let [h, w, c] = input.shape()[..] else {
        return Err(Error::Shape(format!("input must be H×W×C, got {:?}", input.shape())));
    };
    if c != spec.input_channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, network expects {}",
            spec.input_channels
        )));
    }
    if (m0.height(), m0.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "mask {}×{} does not match input {h}×{w}",
            m0.height(),
            m0.width()
        )));
    }
    if !m0.is_binary() {
        return Err(Error::Mask("network input mask must be binary".into()));
    }

    let mut tape = Tape::new();
    let param_vars: Vec<(Var, Var)> = params
        .layers
        .iter()
        .map(|l| (tape.leaf(l.kernel.clone()), tape.leaf(l.bias.clone())))
        .collect();
    let x = tape.constant(input.clone());
    let trace = forward_on(&mut tape, &param_vars, spec, x, m0)?;
    Ok(ForwardPass {
        tape,
        outputs: trace.outputs,
        masks: trace.masks,
        param_vars,
        layer_outputs: trace.layer_outputs,
        pre_activations: trace.pre_activations,
    })
}

/// Handles produced by [`forward_on`].
pub struct ForwardTrace {
    pub outputs: [Var; 3],
    pub masks: [MaskGrid; 3],
    pub layer_outputs: Vec<(String, Var)>,
    pub pre_activations: Vec<Var>,
}

/// The network applied to nodes already on `tape`. `param_vars` holds one
/// `(kernel, bias)` pair per layer in parameter order. Shapes are checked by
/// the convolutions themselves.
pub fn forward_on<T: Real>(
    tape: &mut Tape<T>,
    param_vars: &[(Var, Var)],
    spec: &NetworkSpec,
    mut x: Var,
    m0: &MaskGrid,
) -> Result<ForwardTrace> {
    let slots = spec.layer_slots();
    if param_vars.len() != slots.len() {
        return Err(Error::Shape(format!(
            "network has {} layers, got {} parameter pairs",
            slots.len(),
            param_vars.len()
        )));
    }
    if !m0.is_binary() {
        return Err(Error::Mask("network input mask must be binary".into()));
    }
    let mut mask = m0.clone();
    let mut layer_outputs = Vec::with_capacity(slots.len());
    let mut pre_activations = Vec::with_capacity(slots.len());

    let n_backbone = spec.backbone.len();
    for (idx, slot) in slots[..n_backbone].iter().enumerate() {
        let (kv, bv) = param_vars[idx];
        let z;
        (z, x, mask) = apply_layer(tape, x, &mask, kv, bv, &slot.spec, spec.mask_eps, &slot.name)?;
        pre_activations.push(z);
        layer_outputs.push((slot.name.clone(), x));
    }

    let mut outputs = [x; 3];
    let mut masks = [mask.clone(), mask.clone(), mask.clone()];
    let mut idx = n_backbone;
    for head in Head::ALL {
        let (mut hx, mut hmask) = (x, mask.clone());
        for _ in spec.head(head) {
            let slot = &slots[idx];
            let (kv, bv) = param_vars[idx];
            let z;
            (z, hx, hmask) =
                apply_layer(tape, hx, &hmask, kv, bv, &slot.spec, spec.mask_eps, &slot.name)?;
            pre_activations.push(z);
            layer_outputs.push((slot.name.clone(), hx));
            idx += 1;
        }
        outputs[head.index()] = hx;
        masks[head.index()] = hmask;
    }

    Ok(ForwardTrace {
        outputs,
        masks,
        layer_outputs,
        pre_activations,
    })
}

/// Loss weights `(γ_fw, γ_bscan, γ_pm25)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gammas {
    pub fw: f64,
    pub bscan: f64,
    pub pm25: f64,
}

impl Default for Gammas {
    fn default() -> Self {
        Gammas {
            fw: 0.25,
            bscan: 0.25,
            pm25: 1.0,
        }
    }
}

impl Gammas {
    pub fn validate(&self) -> Result<()> {
        let all = [self.fw, self.bscan, self.pm25];
        if all.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be >= 0, got {all:?}")));
        }
        if all.iter().all(|&g| g == 0.0) {
            return Err(Error::InvalidArgument("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// `γ_fw·‖I_fw − Î_fw‖₁ + γ_bscan·‖I_bscan − Î_bscan‖₁ + γ_pm25·Σ M·|I_pm25 − Î_pm25|`.
///
/// `outputs` and `targets` are indexed by [`Head::index`] and share one shape.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    outputs: [Var; 3],
    targets: [Var; 3],
    mask: &MaskGrid,
    gammas: Gammas,
    reduction: Reduction,
) -> Result<Var> {
    if [gammas.fw, gammas.bscan, gammas.pm25].iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative loss weight in {gammas:?}")));
    }
    let fw = tape.l1_loss(outputs[0], targets[0], reduction)?;
    let bscan = tape.l1_loss(outputs[1], targets[1], reduction)?;
    let pm25 = tape.masked_l1_loss(outputs[2], targets[2], mask, reduction)?;
    tape.weighted_sum(&[(fw, gammas.fw), (bscan, gammas.bscan), (pm25, gammas.pm25)])
}

/// Channel indices of the fw and bscan autoencoding targets inside the input volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxTargets {
    pub fw_channel: usize,
    pub bscan_channel: usize,
}

/// Builds the three `H×W×1` target tensors for a sample.
pub fn sample_targets<T: Real>(sample: &SampleFrame, aux: AuxTargets) -> Result<[Tensor<T>; 3]> {
    let input = &sample.input;
    let (h, w) = (input.shape()[0], input.shape()[1]);
    Ok([
        input.channel(aux.fw_channel)?.cast(),
        input.channel(aux.bscan_channel)?.cast(),
        sample.label.cast::<T>().reshape(&[h, w, 1])?,
    ])
}

/// Forward pass plus the multitask loss for one sample.
pub fn sample_loss<T: Real>(
    params: &ParamStore<T>,
    spec: &NetworkSpec,
    sample: &SampleFrame,
    m0: &MaskGrid,
    aux: AuxTargets,
    gammas: Gammas,
    reduction: Reduction,
) -> Result<(ForwardPass<T>, Var)> {
    let mut pass = forward(params, spec, &sample.input.cast(), m0)?;
    let targets = sample_targets::<T>(sample, aux)?.map(|t| pass.tape.constant(t));
    let loss = total_loss(&mut pass.tape, pass.outputs, targets, &sample.mask, gammas, reduction)?;
    Ok((pass, loss))
}

/// PM2.5 in μg/m³: the pm25 head passed through `expm1` and clamped at 0.
pub fn predict<T: Real>(
    params: &ParamStore<T>,
    spec: &NetworkSpec,
    input: &Tensor<T>,
    m0: &MaskGrid,
) -> Result<Tensor<f64>> {
    let pass = forward(params, spec, input, m0)?;
    Ok(to_concentration(&pass.plane(Head::Pm25)))
}

/// Applies the inverse label transform elementwise.
pub fn to_concentration<T: Real>(plane: &Tensor<T>) -> Tensor<f64> {
    let data = plane
        .data()
        .iter()
        .map(|v| inverse_log_transform(v.as_f64()))
        .collect();
    Tensor::new(plane.shape(), data).expect("same shape")
}
