//! Weight files in the safetensors format, keyed `<layer>/<param>`.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::graph::Graph;
use crate::error::{Error, IoContext, Result};

pub fn save_weights(graph: &Graph, path: &Path) -> Result<()> {
    let params = graph.named_params();
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|(name, p, _)| {
            let data: Vec<u8> = p.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), p.value.shape().to_vec(), data)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, shape, data)| {
            TensorView::new(Dtype::F32, shape.clone(), data)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::InvalidInput(format!("tensor {name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let serialized = safetensors::serialize(views, None)
        .map_err(|e| Error::InvalidInput(format!("serializing weights: {e}")))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(path, serialized).at(path)
}

/// Copy tensors from the file into every graph parameter accepted by
/// `filter`; returns how many were set.
pub fn load_weights(graph: &mut Graph, path: &Path, allow_missing: bool, filter: impl Fn(&str) -> bool) -> Result<usize> {
    if !path.exists() {
        return Err(Error::WeightsMissing { path: path.to_path_buf() });
    }
    let raw = std::fs::read(path).at(path)?;
    let incompatible = |message: String| Error::WeightsIncompatible {
        path: path.to_path_buf(),
        message,
    };
    let file = SafeTensors::deserialize(&raw).map_err(|e| incompatible(e.to_string()))?;
    let available: HashMap<String, TensorView> = file.tensors().into_iter().collect();
    let mut loaded = 0;
    for (name, param, _) in graph.named_params_mut() {
        if !filter(&name) {
            continue;
        }
        let Some(view) = available.get(&name) else {
            if allow_missing {
                continue;
            }
            return Err(incompatible(format!("tensor {name} not found")));
        };
        if view.dtype() != Dtype::F32 {
            return Err(incompatible(format!("tensor {name} has dtype {:?}, expected F32", view.dtype())));
        }
        if view.shape() != param.value.shape() {
            return Err(incompatible(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                view.shape(),
                param.value.shape()
            )));
        }
        for (dst, chunk) in param.value.data_mut().iter_mut().zip(view.data().chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        loaded += 1;
    }
    Ok(loaded)
}
