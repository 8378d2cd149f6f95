use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward, forward_on, init_network, total_loss, Activation, Gammas, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    avgpool_mask, finite_diff_check_with, GradCheckReport, MaskGrid, Reduction, Tape, Tensor, Var,
};

/// Central-difference step used by [`gradcheck_suite`].
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Smallest distance kept between any L1 residual or ReLU input and its kink.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: String,
    pub report: GradCheckReport,
}

/// Finite-difference check of every differentiable tape operation and of a
/// small multitask network's total loss, in 64-bit arithmetic. `flip_analytic`
/// negates every analytic gradient so callers can confirm the harness fails.
pub fn gradcheck_suite(seed: u64, flip_analytic: bool) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &str, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]| {
        let report = finite_diff_check_with(f, inputs, GRADCHECK_STEP, GRADCHECK_TOLERANCE, flip_analytic)?;
        out.push(OpCheck { name: name.to_string(), report });
        Ok::<(), Error>(())
    };

    let (h, w, cin, cout, k) = (5, 6, 2, 3, 3);
    let binary = random_binary_mask(&mut rng, h, w);
    let pooled = avgpool_mask(&binary, 3)?;
    for (name, mask) in [("conv2d_sparse", &binary), ("conv2d_sparse_pooled_mask", &pooled)] {
        let x = uniform(&mut rng, &[h, w, cin], 1.0).with_grad();
        let kernel = uniform(&mut rng, &[k, k, cin, cout], 0.5).with_grad();
        let bias = uniform(&mut rng, &[cout], 0.5).with_grad();
        let eps = crate::tensor::DEFAULT_MASK_EPS;
        let mut probe = Tape::new();
        let (xv, kv, bv) = (probe.constant(x.clone()), probe.constant(kernel.clone()), probe.constant(bias.clone()));
        let y = probe.conv2d_sparse(xv, mask, kv, bv, eps)?;
        let target = offset_target(&mut rng, probe.value(y));
        run(
            name,
            &|tape, v| {
                let y = tape.conv2d_sparse(v[0], mask, v[1], v[2], eps)?;
                tape.l1_loss(y, v[3], Reduction::Sum)
            },
            &[x, kernel, bias, target],
        )?;
    }

    let x = away_from_zero(&mut rng, &[4, 5, 2]).with_grad();
    let relu_of_x = Tensor::new(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect())?;
    let target = offset_target(&mut rng, &relu_of_x);
    run(
        "relu",
        &|tape, v| {
            let y = tape.relu(v[0])?;
            tape.l1_loss(y, v[1], Reduction::Sum)
        },
        &[x, target],
    )?;

    for (name, reduction) in [("l1_loss_sum", Reduction::Sum), ("l1_loss_mean", Reduction::Mean)] {
        let pred = uniform(&mut rng, &[4, 5, 1], 1.0).with_grad();
        let target = offset_target(&mut rng, &pred).with_grad();
        run(name, &|tape, v| tape.l1_loss(v[0], v[1], reduction), &[pred, target])?;
    }

    let mask = random_binary_mask(&mut rng, 4, 5);
    for (name, reduction) in [("masked_l1_loss_sum", Reduction::Sum), ("masked_l1_loss_mean", Reduction::Mean)] {
        let pred = uniform(&mut rng, &[4, 5, 1], 1.0).with_grad();
        let target = offset_target(&mut rng, &pred).with_grad();
        run(
            name,
            &|tape, v| tape.masked_l1_loss(v[0], v[1], &mask, reduction),
            &[pred, target],
        )?;
    }

    let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..2.0)).collect();
    let scalars: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&mut rng, &[], 2.0).with_grad()).collect();
    run(
        "weighted_sum",
        &|tape, v| tape.weighted_sum(&[(v[0], weights[0]), (v[1], weights[1]), (v[2], weights[2])]),
        &scalars,
    )?;

    let (name, f, inputs) = network_case(&mut rng)?;
    run(name, &f, &inputs)?;
    Ok(out)
}

type Closure = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// A two-layer backbone on an 8x8 grid feeding single-layer linear heads, with inputs
/// redrawn until every ReLU input clears [`KINK_MARGIN`].
fn network_case(rng: &mut ChaCha8Rng) -> Result<(&'static str, Closure, Vec<Tensor<f64>>)> {
    let spec = NetworkSpec {
        input_channels: 2,
        backbone: vec![LayerSpec::relu(3, 3), LayerSpec::relu(3, 3)],
        heads: [vec![LayerSpec::linear(3, 1)], vec![LayerSpec::linear(3, 1)], vec![LayerSpec::linear(3, 1)]],
        mask_eps: crate::tensor::DEFAULT_MASK_EPS,
    };
    let (h, w) = (8, 8);
    let slots = spec.layer_slots();
    for _ in 0..256 {
        let mut params = init_network::<f64>(&spec, rng.gen())?;
        for layer in 0..params.layers().len() {
            let bias = &mut params.layer_mut(layer).bias;
            for b in bias.data_mut() {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
        let input = uniform(rng, &[h, w, spec.input_channels], 1.0);
        let m0 = random_binary_mask(rng, h, w);
        let pass = forward(&params, &spec, &input, &m0)?;
        let clear = slots.iter().zip(&pass.pre_activations).all(|(slot, &z)| {
            slot.spec.activation != Activation::Relu
                || pass.tape.value(z).data().iter().all(|v| v.abs() >= KINK_MARGIN)
        });
        if !clear {
            continue;
        }
        let targets: Vec<Tensor<f64>> = pass.outputs.iter().map(|&o| offset_target(rng, pass.tape.value(o))).collect();
        let label_mask = random_binary_mask(rng, h, w);
        let n_params = params.layers().len();
        let mut inputs: Vec<Tensor<f64>> = Vec::new();
        for layer in params.layers() {
            inputs.push(layer.kernel.clone().with_grad());
            inputs.push(layer.bias.clone().with_grad());
        }
        inputs.push(input);
        inputs.extend(targets);
        let f: Closure = Box::new(move |tape, v| {
            let pairs: Vec<(Var, Var)> = (0..n_params).map(|i| (v[2 * i], v[2 * i + 1])).collect();
            let x = v[2 * n_params];
            let trace = forward_on(tape, &pairs, &spec, x, &m0)?;
            let t = &v[2 * n_params + 1..];
            total_loss(tape, trace.outputs, [t[0], t[1], t[2]], &label_mask, Gammas::default(), Reduction::Sum)
        });
        return Ok(("network_total_loss", f, inputs));
    }
    Err(Error::InvalidArgument("could not draw a network away from ReLU kinks".into()))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("length from shape")
}

/// Values with magnitude in `[0.05, 1)` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen() { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).expect("length from shape")
}

/// `value ± [0.1, 0.5)`, so every L1 residual sits far from zero.
fn offset_target(rng: &mut ChaCha8Rng, value: &Tensor<f64>) -> Tensor<f64> {
    let data = value
        .data()
        .iter()
        .map(|&v| {
            let d: f64 = rng.gen_range(0.1..0.5);
            if rng.gen() { v + d } else { v - d }
        })
        .collect();
    Tensor::new(value.shape(), data).expect("same shape")
}

/// Roughly half the cells set, never empty.
fn random_binary_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> MaskGrid {
    let mut values: Vec<f64> = (0..h * w).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    values[rng.gen_range(0..h * w)] = 1.0;
    MaskGrid::binary(h, w, values).expect("binary by construction")
}
