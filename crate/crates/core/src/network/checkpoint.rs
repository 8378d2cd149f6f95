//! Checkpoint files.
//!
//! ```text
//! WFCKPT1\n
//! <key> = <value>\n ...          network spec, `step`, `optimizer_state`, last line `tensors = N`
//! N × ( u64 LE byte length | WFT1 tensor )
//! ```
//!
//! Tensors are each layer's kernel then bias in layer order, followed (when
//! `optimizer_state = true`) by first and second moments for every parameter
//! tensor in the same order.

use std::path::Path;

use super::{LayerParams, Moments, NetworkSpec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{wft, Real, Tensor};

pub const CHECKPOINT_MAGIC: &str = "WFCKPT1";

pub fn encode_checkpoint<T: Real>(spec: &NetworkSpec, params: &ParamStore<T>) -> Vec<u8> {
    let mut tensors: Vec<Tensor<T>> = Vec::new();
    for layer in params.layers() {
        tensors.push(strip_grad(&layer.kernel));
        tensors.push(strip_grad(&layer.bias));
    }
    for (m, shape_src) in params.moments().iter().zip(
        params
            .layers()
            .iter()
            .flat_map(|l| [l.kernel.shape(), l.bias.shape()]),
    ) {
        tensors.push(Tensor::new(shape_src, m.first.clone()).expect("moment shape"));
        tensors.push(Tensor::new(shape_src, m.second.clone()).expect("moment shape"));
    }

    let mut header = vec![CHECKPOINT_MAGIC.to_string()];
    header.extend(spec.to_kv_lines());
    header.push(format!("step = {}", params.step()));
    header.push("optimizer_state = true".into());
    header.push(format!("tensors = {}", tensors.len()));
    let mut out = (header.join("\n") + "\n").into_bytes();
    for t in &tensors {
        out.extend_from_slice(&(wft::encoded_len(t) as u64).to_le_bytes());
        wft::encode_into(t, &mut out);
    }
    out
}

fn strip_grad<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::new(t.shape(), t.data().to_vec()).expect("same shape")
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Decode("checkpoint header ends before `tensors`".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end])
        .map_err(|_| Error::Decode("checkpoint header is not UTF-8".into()))
}

/// Parses a checkpoint, casting stored tensors to `T` when needed.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<(NetworkSpec, ParamStore<T>)> {
    let mut pos = 0;
    if next_line(bytes, &mut pos)? != CHECKPOINT_MAGIC {
        return Err(Error::Decode("missing WFCKPT1 manifest line".into()));
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    let count: usize = loop {
        let line = next_line(bytes, &mut pos)?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Decode(format!("header line `{line}` is not key = value")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "tensors" {
            break v
                .parse()
                .map_err(|_| Error::Decode(format!("bad tensor count `{v}`")))?;
        }
        pairs.push((k.to_string(), v.to_string()));
    };
    let lookup = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let spec = NetworkSpec::from_kv(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| Error::Decode(e.to_string()))?;
    let step: u64 = lookup("step")
        .unwrap_or("0")
        .parse()
        .map_err(|_| Error::Decode("bad step counter".into()))?;
    let with_state = match lookup("optimizer_state").unwrap_or("false") {
        "true" => true,
        "false" => false,
        other => return Err(Error::Decode(format!("bad optimizer_state `{other}`"))),
    };

    let slots = spec.layer_slots();
    let expected = slots.len() * if with_state { 6 } else { 2 };
    if count != expected {
        return Err(Error::Decode(format!(
            "checkpoint holds {count} tensors, spec needs {expected}"
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len_bytes = bytes
            .get(pos..pos + 8)
            .ok_or_else(|| Error::Decode("truncated tensor length".into()))?;
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap());
        pos += 8;
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| pos.checked_add(l))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Decode("tensor length exceeds file".into()))?;
        tensors.push(wft::decode(&bytes[pos..end])?.into_real::<T>());
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::Decode("trailing bytes after last tensor".into()));
    }

    let mut iter = tensors.into_iter();
    let mut layers = Vec::with_capacity(slots.len());
    for slot in &slots {
        let kernel = iter.next().unwrap();
        let bias = iter.next().unwrap();
        let k = slot.spec.kernel;
        if kernel.shape() != [k, k, slot.in_channels, slot.spec.filters]
            || bias.shape() != [slot.spec.filters]
        {
            return Err(Error::Decode(format!("layer {} has wrong tensor shapes", slot.name)));
        }
        layers.push(LayerParams {
            name: slot.name.clone(),
            kernel,
            bias,
        });
    }
    let mut params = ParamStore::from_layers(layers);
    if with_state {
        let mut moments = Vec::with_capacity(slots.len() * 2);
        while let (Some(first), Some(second)) = (iter.next(), iter.next()) {
            moments.push(Moments {
                first: first.into_data(),
                second: second.into_data(),
            });
        }
        params
            .restore_state(step, moments)
            .map_err(|e| Error::Decode(e.to_string()))?;
    }
    Ok((spec, params))
}

pub fn write_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    spec: &NetworkSpec,
    params: &ParamStore<T>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(spec, params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(NetworkSpec, ParamStore<T>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
