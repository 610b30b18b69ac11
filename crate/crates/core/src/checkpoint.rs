//! Binary checkpoints.
//!
//! Layout: `LATC`, u32 version, u64 header length, JSON header, the parameter
//! blocks as little-endian f32 in declaration order, then the SHA-256 of every
//! preceding byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LatticeError, Result};
use crate::model::{ModelConfig, ModelContext, ParameterSet};

const MAGIC: &[u8; 4] = b"LATC";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub modality_names: Vec<String>,
    pub modality_dims: Vec<usize>,
    pub blocks: Vec<BlockInfo>,
    pub config_digest: String,
}

impl CheckpointHeader {
    pub fn describe(ctx: &ModelContext, params: &ParameterSet, config_digest: &str) -> Self {
        CheckpointHeader {
            model: ctx.config.clone(),
            num_users: ctx.num_users,
            num_items: ctx.num_items,
            modality_names: ctx.modality_names(),
            modality_dims: ctx.modality_dims(),
            blocks: params
                .block_names()
                .into_iter()
                .zip(params.block_shapes())
                .map(|(name, shape)| BlockInfo { name, shape })
                .collect(),
            config_digest: config_digest.to_string(),
        }
    }

    /// Errors unless the checkpoint was produced for a model shaped like `ctx`.
    pub fn check_compatible(&self, ctx: &ModelContext) -> Result<()> {
        let mismatch = |what: &str, ckpt: String, run: String| {
            Err(LatticeError::Shape(format!(
                "checkpoint {} is {} but the run config gives {}",
                what, ckpt, run
            )))
        };
        if self.model != ctx.config {
            return mismatch(
                "model config",
                serde_json::to_string(&self.model)?,
                serde_json::to_string(&ctx.config)?,
            );
        }
        if (self.num_users, self.num_items) != (ctx.num_users, ctx.num_items) {
            return mismatch(
                "users x items",
                format!("{}x{}", self.num_users, self.num_items),
                format!("{}x{}", ctx.num_users, ctx.num_items),
            );
        }
        if self.modality_names != ctx.modality_names() || self.modality_dims != ctx.modality_dims() {
            return mismatch(
                "modalities",
                format!("{:?} {:?}", self.modality_names, self.modality_dims),
                format!("{:?} {:?}", ctx.modality_names(), ctx.modality_dims()),
            );
        }
        Ok(())
    }
}

pub fn encode_checkpoint(header: &CheckpointHeader, params: &ParameterSet) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * params.num_scalars() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for block in params.blocks() {
        for &v in block {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ParameterSet)> {
    let bad = |m: &str| LatticeError::Checkpoint(m.to_string());
    if bytes.len() < 16 + DIGEST_LEN {
        return Err(bad("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch; file is corrupt or was modified"));
    }
    if &body[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(LatticeError::Checkpoint(format!("unsupported version {}", version)));
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("header length exceeds file"))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[16..header_end])
        .map_err(|e| LatticeError::Checkpoint(format!("bad header: {}", e)))?;
    header
        .model
        .validate()
        .map_err(|e| LatticeError::Checkpoint(e.to_string()))?;

    let mut params = ParameterSet::zeros(
        &header.model,
        header.num_users,
        header.num_items,
        &header.modality_dims,
    );
    let expected: Vec<BlockInfo> = params
        .block_names()
        .into_iter()
        .zip(params.block_shapes())
        .map(|(name, shape)| BlockInfo { name, shape })
        .collect();
    if expected != header.blocks {
        return Err(bad("block list disagrees with the model description"));
    }
    let payload = &body[header_end..];
    if payload.len() != 4 * params.num_scalars() {
        return Err(LatticeError::Checkpoint(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            4 * params.num_scalars()
        )));
    }
    let mut chunks = payload.chunks_exact(4);
    for block in params.blocks_mut() {
        for (v, c) in block.iter_mut().zip(chunks.by_ref()) {
            *v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    }
    if let Some(name) = params.first_non_finite() {
        return Err(LatticeError::Checkpoint(format!("non-finite values in {}", name)));
    }
    Ok((header, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, header: &CheckpointHeader, params: &ParameterSet) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(header, params)?;
    fs::write(path, bytes).map_err(|e| LatticeError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParameterSet)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LatticeError::io(path, e))?;
    decode_checkpoint(&bytes)
}
