//! GSNW (network weights) and GSNF (forest) on-disk formats.

use std::io::{Read, Write};

use ndarray::NdFloat;

use crate::error::{Error, Result};
use crate::features::SeasonMode;
use crate::model::forest::{Forest, ForestConfig, TreeNode};
use crate::model::params::{tensor_layout, ArchDescriptor, ModelParams, NamedTensor};
use crate::wire;

const GSNW_MAGIC: [u8; 4] = *b"GSNW";
const GSNF_MAGIC: [u8; 4] = *b"GSNF";

const BRANCH_CONV: u8 = 0b01;
const BRANCH_LSTM: u8 = 0b10;

/// Writes network parameters; payloads are single precision regardless of
/// the in-memory float type. Returns the byte count.
pub fn write_weights<F: NdFloat, W: Write>(params: &ModelParams<F>, sink: &mut W) -> Result<u64> {
    let desc = &params.desc;
    let mut buf = Vec::new();
    wire::write_header(&mut buf, GSNW_MAGIC)?;
    buf.push(desc.season.code());
    let mut branches = 0u8;
    if desc.conv_branch {
        branches |= BRANCH_CONV;
    }
    if desc.lstm_branch {
        branches |= BRANCH_LSTM;
    }
    buf.push(branches);
    buf.push(u8::from(desc.with_delta));
    buf.push(desc.channels as u8);
    buf.push(desc.timesteps as u8);
    buf.push(desc.patch as u8);
    wire::write_u32(&mut buf, params.tensors.len() as u32)?;
    for tensor in &params.tensors {
        let name = tensor.name.as_bytes();
        wire::write_u16(&mut buf, name.len() as u16)?;
        buf.extend_from_slice(name);
        buf.push(tensor.dims.len() as u8);
        for &d in &tensor.dims {
            wire::write_u32(&mut buf, d as u32)?;
        }
        for v in &tensor.data {
            wire::write_f32(&mut buf, v.to_f32().expect("float narrows to f32"))?;
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Reads network parameters, reconstructing layer sizes from tensor dims
/// and verifying the result matches the canonical layout.
pub fn read_weights<F: NdFloat, R: Read>(source: &mut R) -> Result<ModelParams<F>> {
    wire::read_header(source, GSNW_MAGIC, "GSNW")?;
    let season = SeasonMode::from_code(wire::read_u8(source)?)?;
    let branches = wire::read_u8(source)?;
    let with_delta = wire::read_u8(source)? != 0;
    let channels = wire::read_u8(source)? as usize;
    let timesteps = wire::read_u8(source)? as usize;
    let patch = wire::read_u8(source)? as usize;
    let count = wire::read_u32(source)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = wire::read_u16(source)? as usize;
        let mut name_buf = vec![0u8; name_len];
        wire::read_exact_or_truncated(source, &mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::InvalidConfig("tensor name is not valid UTF-8".into()))?;
        let rank = wire::read_u8(source)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(wire::read_u32(source)? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = wire::read_f32_payload(source, len)?;
        let trainable = !(name.ends_with(".mean") || name.ends_with(".var"));
        tensors.push(NamedTensor {
            name,
            dims,
            data: raw
                .into_iter()
                .map(|v| F::from(v).expect("f32 widens"))
                .collect(),
            trainable,
        });
    }

    let find_len = |name: &str| tensors.iter().find(|t| t.name == name).map(|t| t.len());
    let lstm_branch = branches & BRANCH_LSTM != 0;
    let conv_branch = branches & BRANCH_CONV != 0;
    let desc = ArchDescriptor {
        season,
        conv_branch,
        lstm_branch,
        with_delta,
        channels,
        timesteps,
        patch,
        conv1d_filters: find_len("conv1d.bias").unwrap_or(8),
        lstm_units: find_len("lstm1.bias").map_or(16, |l| l / 4),
        lstm_layers: if lstm_branch {
            tensors
                .iter()
                .filter(|t| t.name.starts_with("lstm") && t.name.ends_with(".w_ih"))
                .count()
        } else {
            4
        },
        conv_filters: find_len("conv2d1.bias").unwrap_or(64),
        dense_units: find_len("fusion.bias").unwrap_or(64),
    };
    // file must carry exactly the canonical layout for this descriptor
    let layout = tensor_layout(&desc);
    if layout.len() != tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "weights file has {} tensors, descriptor wants {}",
            tensors.len(),
            layout.len()
        )));
    }
    for ((name, dims, trainable), tensor) in layout.into_iter().zip(&tensors) {
        if name != tensor.name || dims != tensor.dims || trainable != tensor.trainable {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} does not match the expected layout",
                tensor.name
            )));
        }
    }
    let params = ModelParams { desc, tensors };
    params.desc.validate()?;
    Ok(params)
}

/// Writes a forest in the GSNF format. Returns the byte count.
pub fn write_forest<W: Write>(forest: &Forest, sink: &mut W) -> Result<u64> {
    let mut buf = Vec::new();
    wire::write_header(&mut buf, GSNF_MAGIC)?;
    let cfg = &forest.config;
    wire::write_u32(&mut buf, cfg.trees as u32)?;
    wire::write_u32(&mut buf, cfg.max_depth.map_or(0, |d| d as u32))?;
    wire::write_u16(&mut buf, cfg.mtry.map_or(0, |m| m as u16))?;
    buf.push(u8::from(cfg.bootstrap));
    buf.push(u8::from(cfg.include_delta));
    wire::write_u64(&mut buf, cfg.seed)?;
    wire::write_u16(&mut buf, forest.feature_len as u16)?;
    for tree in &forest.trees {
        wire::write_u32(&mut buf, tree.len() as u32)?;
        for node in tree {
            wire::write_u16(&mut buf, node.feature)?;
            wire::write_f32(&mut buf, node.threshold)?;
            wire::write_u32(&mut buf, node.left)?;
            wire::write_u32(&mut buf, node.right)?;
            buf.push(node.leaf_class);
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Reads a GSNF forest.
pub fn read_forest<R: Read>(source: &mut R) -> Result<Forest> {
    wire::read_header(source, GSNF_MAGIC, "GSNF")?;
    let trees_count = wire::read_u32(source)? as usize;
    let max_depth = match wire::read_u32(source)? {
        0 => None,
        d => Some(d as usize),
    };
    let mtry = match wire::read_u16(source)? {
        0 => None,
        m => Some(m as usize),
    };
    let bootstrap = wire::read_u8(source)? != 0;
    let include_delta = wire::read_u8(source)? != 0;
    let seed = wire::read_u64(source)?;
    let feature_len = wire::read_u16(source)? as usize;
    let mut trees = Vec::with_capacity(trees_count);
    for _ in 0..trees_count {
        let node_count = wire::read_u32(source)? as usize;
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            nodes.push(TreeNode {
                feature: wire::read_u16(source)?,
                threshold: wire::read_f32(source)?,
                left: wire::read_u32(source)?,
                right: wire::read_u32(source)?,
                leaf_class: wire::read_u8(source)?,
            });
        }
        trees.push(nodes);
    }
    Ok(Forest {
        config: ForestConfig {
            trees: trees_count,
            max_depth,
            mtry,
            bootstrap,
            seed,
            include_delta,
        },
        feature_len,
        trees,
    })
}

/// Distinguishes weight files from forest files by magic.
pub fn sniff_model_kind(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(&GSNW_MAGIC) {
        Some("network")
    } else if bytes.starts_with(&GSNF_MAGIC) {
        Some("forest")
    } else {
        None
    }
}
