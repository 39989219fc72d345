use std::collections::HashMap;

use super::ModelConfig;
use crate::archive::{NamedTensors, Tensor};
use crate::error::{Result, ToastError};
use crate::linalg::{Matrix, Vector};

/// Projections of one attention head. `wq`, `wk`, `wv` are `D × k`,
/// `wproj` is `k × D`, where `k` is the layer's live head width.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wproj: Matrix,
    pub bq: Vector,
    pub bk: Vector,
    pub bv: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub heads: Vec<HeadWeights>,
    /// Output projection bias, shared across heads.
    pub bproj: Vector,
    pub fc1: Matrix,
    pub bfc1: Vector,
    pub fc2: Matrix,
    pub bfc2: Vector,
    pub ln1_scale: Vector,
    pub ln1_shift: Vector,
    pub ln2_scale: Vector,
    pub ln2_shift: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub blocks: Vec<BlockWeights>,
}

impl HeadWeights {
    pub fn width(&self) -> usize {
        self.wq.cols()
    }
}

fn check_matrix(m: &Matrix, rows: usize, cols: usize, layer: usize, name: &str) -> Result<()> {
    if m.dims() != (rows, cols) {
        return Err(ToastError::shape(
            Some(layer),
            name,
            format!("expected {rows}x{cols}, found {}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

fn check_vector(v: &Vector, len: usize, layer: usize, name: &str) -> Result<()> {
    if v.len() != len {
        return Err(ToastError::shape(
            Some(layer),
            name,
            format!("expected length {len}, found {}", v.len()),
        ));
    }
    Ok(())
}

impl BlockWeights {
    /// Checks every tensor against the config's shapes for `layer`.
    pub fn validate(&self, config: &ModelConfig, layer: usize) -> Result<()> {
        let d = config.embed_dim;
        let k = config.live_head_dim(layer);
        if self.heads.len() != config.num_heads {
            return Err(ToastError::shape(
                Some(layer),
                "heads",
                format!("expected {} heads, found {}", config.num_heads, self.heads.len()),
            ));
        }
        for (h, hw) in self.heads.iter().enumerate() {
            check_matrix(&hw.wq, d, k, layer, &names::head(layer, "wq", h))?;
            check_matrix(&hw.wk, d, k, layer, &names::head(layer, "wk", h))?;
            check_matrix(&hw.wv, d, k, layer, &names::head(layer, "wv", h))?;
            check_matrix(&hw.wproj, k, d, layer, &names::head(layer, "wproj", h))?;
            check_vector(&hw.bq, k, layer, &names::head(layer, "bq", h))?;
            check_vector(&hw.bk, k, layer, &names::head(layer, "bk", h))?;
            check_vector(&hw.bv, k, layer, &names::head(layer, "bv", h))?;
        }
        check_vector(&self.bproj, d, layer, &names::block(layer, "bproj"))?;
        check_matrix(&self.fc1, d, config.mlp_dim, layer, &names::block(layer, "fc1"))?;
        check_vector(&self.bfc1, config.mlp_dim, layer, &names::block(layer, "bfc1"))?;
        check_matrix(&self.fc2, config.mlp_dim, d, layer, &names::block(layer, "fc2"))?;
        check_vector(&self.bfc2, d, layer, &names::block(layer, "bfc2"))?;
        check_vector(&self.ln1_scale, d, layer, &names::block(layer, "ln1.scale"))?;
        check_vector(&self.ln1_shift, d, layer, &names::block(layer, "ln1.shift"))?;
        check_vector(&self.ln2_scale, d, layer, &names::block(layer, "ln2.scale"))?;
        check_vector(&self.ln2_shift, d, layer, &names::block(layer, "ln2.shift"))?;
        Ok(())
    }
}

/// Tensor names used inside weight archives.
pub mod names {
    pub fn head(layer: usize, kind: &str, head: usize) -> String {
        format!("layer{layer}.{kind}.h{head}")
    }

    pub fn block(layer: usize, kind: &str) -> String {
        format!("layer{layer}.{kind}")
    }
}

impl ModelWeights {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.blocks.len() != config.num_layers {
            return Err(ToastError::shape(
                None,
                "blocks",
                format!(
                    "expected {} layers, found {}",
                    config.num_layers,
                    self.blocks.len()
                ),
            ));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            b.validate(config, l)?;
        }
        Ok(())
    }

    /// Canonical archive layout: per layer, per head Q/K/V/proj then biases,
    /// then the block-level tensors.
    pub fn to_named_tensors(&self) -> NamedTensors {
        let mut out = Vec::new();
        for (l, b) in self.blocks.iter().enumerate() {
            for (h, hw) in b.heads.iter().enumerate() {
                out.push((names::head(l, "wq", h), Tensor::Matrix(hw.wq.clone())));
                out.push((names::head(l, "wk", h), Tensor::Matrix(hw.wk.clone())));
                out.push((names::head(l, "wv", h), Tensor::Matrix(hw.wv.clone())));
                out.push((names::head(l, "wproj", h), Tensor::Matrix(hw.wproj.clone())));
                out.push((names::head(l, "bq", h), Tensor::Vector(hw.bq.clone())));
                out.push((names::head(l, "bk", h), Tensor::Vector(hw.bk.clone())));
                out.push((names::head(l, "bv", h), Tensor::Vector(hw.bv.clone())));
            }
            out.push((names::block(l, "bproj"), Tensor::Vector(b.bproj.clone())));
            out.push((names::block(l, "fc1"), Tensor::Matrix(b.fc1.clone())));
            out.push((names::block(l, "bfc1"), Tensor::Vector(b.bfc1.clone())));
            out.push((names::block(l, "fc2"), Tensor::Matrix(b.fc2.clone())));
            out.push((names::block(l, "bfc2"), Tensor::Vector(b.bfc2.clone())));
            out.push((names::block(l, "ln1.scale"), Tensor::Vector(b.ln1_scale.clone())));
            out.push((names::block(l, "ln1.shift"), Tensor::Vector(b.ln1_shift.clone())));
            out.push((names::block(l, "ln2.scale"), Tensor::Vector(b.ln2_scale.clone())));
            out.push((names::block(l, "ln2.shift"), Tensor::Vector(b.ln2_shift.clone())));
        }
        out
    }

    /// Assembles weights from archive tensors. Bias tensors are optional and
    /// default to zero; everything else must be present with matching shape.
    pub fn from_named_tensors(config: &ModelConfig, tensors: NamedTensors) -> Result<Self> {
        config.validate()?;
        let mut map: HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut blocks = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let k = config.live_head_dim(l);
            let d = config.embed_dim;
            let mut heads = Vec::with_capacity(config.num_heads);
            for h in 0..config.num_heads {
                heads.push(HeadWeights {
                    wq: take_matrix(&mut map, &names::head(l, "wq", h), l)?,
                    wk: take_matrix(&mut map, &names::head(l, "wk", h), l)?,
                    wv: take_matrix(&mut map, &names::head(l, "wv", h), l)?,
                    wproj: take_matrix(&mut map, &names::head(l, "wproj", h), l)?,
                    bq: take_bias(&mut map, &names::head(l, "bq", h), l, k)?,
                    bk: take_bias(&mut map, &names::head(l, "bk", h), l, k)?,
                    bv: take_bias(&mut map, &names::head(l, "bv", h), l, k)?,
                });
            }
            let block = BlockWeights {
                heads,
                bproj: take_bias(&mut map, &names::block(l, "bproj"), l, d)?,
                fc1: take_matrix(&mut map, &names::block(l, "fc1"), l)?,
                bfc1: take_bias(&mut map, &names::block(l, "bfc1"), l, config.mlp_dim)?,
                fc2: take_matrix(&mut map, &names::block(l, "fc2"), l)?,
                bfc2: take_bias(&mut map, &names::block(l, "bfc2"), l, d)?,
                ln1_scale: take_vector(&mut map, &names::block(l, "ln1.scale"), l)?,
                ln1_shift: take_vector(&mut map, &names::block(l, "ln1.shift"), l)?,
                ln2_scale: take_vector(&mut map, &names::block(l, "ln2.scale"), l)?,
                ln2_shift: take_vector(&mut map, &names::block(l, "ln2.shift"), l)?,
            };
            block.validate(config, l)?;
            blocks.push(block);
        }
        Ok(Self { blocks })
    }
}

fn take_matrix(map: &mut HashMap<String, Tensor>, name: &str, layer: usize) -> Result<Matrix> {
    match map.remove(name) {
        Some(Tensor::Matrix(m)) => Ok(m),
        Some(Tensor::Vector(v)) => Err(ToastError::shape(
            Some(layer),
            name,
            format!("expected a matrix, found a vector of length {}", v.len()),
        )),
        None => Err(ToastError::MissingTensor(name.to_string())),
    }
}

fn take_vector(map: &mut HashMap<String, Tensor>, name: &str, layer: usize) -> Result<Vector> {
    match map.remove(name) {
        Some(Tensor::Vector(v)) => Ok(v),
        Some(Tensor::Matrix(m)) => Err(ToastError::shape(
            Some(layer),
            name,
            format!("expected a vector, found a {}x{} matrix", m.rows(), m.cols()),
        )),
        None => Err(ToastError::MissingTensor(name.to_string())),
    }
}

fn take_bias(
    map: &mut HashMap<String, Tensor>,
    name: &str,
    layer: usize,
    len: usize,
) -> Result<Vector> {
    if map.contains_key(name) {
        take_vector(map, name, layer)
    } else {
        Ok(Vector::zeros(len))
    }
}
