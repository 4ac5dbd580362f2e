//! Parameter persistence: a JSON header with shapes and flags, followed by
//! the flat little-endian 64-bit parameter payload.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FamDims, FamParams, ParamLayout};
use crate::real::Real;

const FORMAT_TAG: &str = "fam-params-v1";
const MAX_HEADER_BYTES: u64 = 1 << 20;

/// Errors from reading or writing parameter checkpoints.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint header: {detail}")]
    Header { detail: String },
    #[error("checkpoint payload has {got} values, expected {expected}")]
    CountMismatch { expected: usize, got: usize },
    #[error("checkpoint value {index} is not finite")]
    NonFinite { index: usize },
    #[error("bad checkpoint values: {detail}")]
    BadValue { detail: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    channels: usize,
    height: usize,
    width: usize,
    reduction: usize,
    shared_head: bool,
    /// Trainable scalars plus the running statistics.
    value_count: usize,
}

fn running_values(shared_head: bool) -> usize {
    if shared_head {
        2
    } else {
        4
    }
}

/// Serializes parameters as `[u64 LE header length][JSON header][f64 LE
/// payload]`; the payload is the flat trainable vector followed by each
/// head's running mean and variance.
pub fn save_params<F: Real>(
    params: &FamParams<F>,
    writer: &mut impl Write,
) -> Result<(), CheckpointError> {
    let dims = params.dims();
    let mut values: Vec<f64> =
        params.flatten_trainable().iter().map(|v| v.as_f64()).collect();
    values.push(params.fused_head.bn_running_mean.as_f64());
    values.push(params.fused_head.bn_running_var.as_f64());
    if let Some(body) = &params.body_head {
        values.push(body.bn_running_mean.as_f64());
        values.push(body.bn_running_var.as_f64());
    }
    let header = CheckpointHeader {
        format: FORMAT_TAG.to_string(),
        channels: dims.channels,
        height: dims.height,
        width: dims.width,
        reduction: dims.reduction,
        shared_head: params.shared_head(),
        value_count: values.len(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Header { detail: e.to_string() })?;
    writer.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    writer.write_all(&header_bytes)?;
    let mut payload = Vec::with_capacity(values.len() * 8);
    for value in values {
        payload.extend_from_slice(&value.to_le_bytes());
    }
    writer.write_all(&payload)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_params`], validating the format
/// tag, dimensions, value count, and finiteness.
pub fn load_params<F: Real>(reader: &mut impl Read) -> Result<FamParams<F>, CheckpointError> {
    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > MAX_HEADER_BYTES {
        return Err(CheckpointError::Header {
            detail: format!("implausible header length {header_len}"),
        });
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    reader.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::Header { detail: e.to_string() })?;
    if header.format != FORMAT_TAG {
        return Err(CheckpointError::Header {
            detail: format!("unknown format tag `{}`", header.format),
        });
    }
    let dims = FamDims::new(header.channels, header.height, header.width, header.reduction)
        .map_err(|e| CheckpointError::Header { detail: e.to_string() })?;
    let layout = ParamLayout::new(&dims, header.shared_head);
    let expected = layout.len + running_values(header.shared_head);
    if header.value_count != expected {
        return Err(CheckpointError::Header {
            detail: format!(
                "value_count {} does not match the declared shape ({expected} values)",
                header.value_count
            ),
        });
    }

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(CheckpointError::CountMismatch { expected, got: payload.len() / 8 });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(CheckpointError::NonFinite { index });
    }

    let mut params = FamParams::<F>::zeros(dims, header.shared_head);
    let trainable: Vec<F> = values[..layout.len].iter().map(|&v| F::cast(v)).collect();
    params
        .set_trainable(&trainable)
        .map_err(|e| CheckpointError::BadValue { detail: e.to_string() })?;
    let mut running = values[layout.len..].iter().copied();
    let mut next = || running.next().expect("count was validated");
    let (mean, var) = (next(), next());
    if var <= 0.0 {
        return Err(CheckpointError::BadValue {
            detail: format!("running variance {var} must be positive"),
        });
    }
    params.fused_head.bn_running_mean = F::cast(mean);
    params.fused_head.bn_running_var = F::cast(var);
    if !header.shared_head {
        let (mean, var) = (next(), next());
        if var <= 0.0 {
            return Err(CheckpointError::BadValue {
                detail: format!("running variance {var} must be positive"),
            });
        }
        let body = params.body_head.as_mut().expect("separate body head exists");
        body.bn_running_mean = F::cast(mean);
        body.bn_running_var = F::cast(var);
    }
    Ok(params)
}
