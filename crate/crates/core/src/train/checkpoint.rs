//! Binary checkpoint format.
//!
//! All integers and reals are little-endian. Layout:
//!
//! | field | type |
//! |---|---|
//! | magic `GCOTECK\0` | 8 bytes |
//! | format version | u32 |
//! | precision (4 or 8 bytes per real), variant code, stage code, reserved | 4 × u8 |
//! | d, d_s, K | 3 × u32 |
//! | step | u64 |
//! | entities, relations | 2 × u32 |
//! | entity vocabulary hash, relation vocabulary hash | 2 × u64 |
//! | best validation MRR | f64 |
//! | non-improving validations | u32 |
//! | seed, optimizer step | 2 × u64 |
//!
//! followed by three parameter sets (parameters, first moments, second
//! moments), each as the five blocks entity, matrix, scale, reverse, angle,
//! every block prefixed by its u64 length and stored in the header's precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::Vocabulary;
use crate::numeric::{Precision, Real};
use crate::ote::{Model, ModelConfig, OteError, ParamShape, Params, Variant};

use super::adam::AdamState;
use super::Stage;

const MAGIC: &[u8; 8] = b"GCOTECK\0";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 12 + 8 + 8 + 16 + 8 + 4 + 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint stores {stored}-bit reals, caller asked for {requested}-bit")]
    Precision { stored: usize, requested: usize },
    #[error("{kind} vocabulary hash mismatch: checkpoint {stored:#018x}, data {found:#018x}")]
    Vocabulary {
        kind: &'static str,
        stored: u64,
        found: u64,
    },
    #[error("checkpoint config incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] OteError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointHeader {
    pub precision: Precision,
    pub config: ModelConfig,
    pub groups: usize,
    pub stage: Stage,
    pub step: u64,
    pub num_entities: usize,
    pub num_relations: usize,
    pub entity_hash: u64,
    pub relation_hash: u64,
    pub best_valid_mrr: f64,
    pub bad_evals: u32,
    pub seed: u64,
}

impl CheckpointHeader {
    /// Refuses data whose vocabularies differ from the ones trained on.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<(), CheckpointError> {
        let pairs = [
            ("entity", self.entity_hash, vocab.entity_hash()),
            ("relation", self.relation_hash, vocab.relation_hash()),
        ];
        for (kind, stored, found) in pairs {
            if stored != found {
                return Err(CheckpointError::Vocabulary { kind, stored, found });
            }
        }
        Ok(())
    }

    /// Refuses a different model shape.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<(), CheckpointError> {
        if self.config != *cfg {
            return Err(CheckpointError::Incompatible(format!(
                "checkpoint has d={} d_s={} {}, requested d={} d_s={} {}",
                self.config.dim,
                self.config.sub_dim,
                self.config.variant.name(),
                cfg.dim,
                cfg.sub_dim,
                cfg.variant.name()
            )));
        }
        Ok(())
    }
}

/// Model, optimizer state and the counters needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub model: Model<T>,
    pub adam: AdamState<T>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint<T: Real>(ck: &Checkpoint<T>) -> Vec<u8> {
    let h = &ck.header;
    let mut out = Vec::with_capacity(HEADER_LEN + 3 * ck.model.params().len() * T::PRECISION.bytes());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.extend_from_slice(&[T::PRECISION.bytes() as u8, h.config.variant.code(), h.stage.code(), 0]);
    put_u32(&mut out, h.config.dim as u32);
    put_u32(&mut out, h.config.sub_dim as u32);
    put_u32(&mut out, h.groups as u32);
    put_u64(&mut out, h.step);
    put_u32(&mut out, h.num_entities as u32);
    put_u32(&mut out, h.num_relations as u32);
    put_u64(&mut out, h.entity_hash);
    put_u64(&mut out, h.relation_hash);
    out.extend_from_slice(&h.best_valid_mrr.to_le_bytes());
    put_u32(&mut out, h.bad_evals);
    put_u64(&mut out, h.seed);
    put_u64(&mut out, ck.adam.step);
    for set in [ck.model.params(), &ck.adam.m, &ck.adam.v] {
        for block in set.blocks() {
            put_u64(&mut out, block.len() as u64);
            for &v in block {
                v.write_le(&mut out);
            }
        }
    }
    out
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint<T: Real>(ck: &Checkpoint<T>, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode_checkpoint(ck)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_header(r: &mut Reader<'_>) -> Result<(CheckpointHeader, u64), CheckpointError> {
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let precision = match r.u8()? {
        4 => Precision::F32,
        8 => Precision::F64,
        other => return Err(CheckpointError::Malformed(format!("precision byte {other}"))),
    };
    let variant_code = r.u8()?;
    let variant = Variant::from_code(variant_code)
        .ok_or_else(|| CheckpointError::Malformed(format!("variant code {variant_code}")))?;
    let stage_code = r.u8()?;
    let stage =
        Stage::from_code(stage_code).ok_or_else(|| CheckpointError::Malformed(format!("stage code {stage_code}")))?;
    r.u8()?;
    let dim = r.u32()? as usize;
    let sub_dim = r.u32()? as usize;
    let groups = r.u32()? as usize;
    let config = ModelConfig::new(dim, sub_dim, variant)?;
    if config.groups() != groups {
        return Err(CheckpointError::Malformed(format!(
            "K={groups} but d/d_s={}",
            config.groups()
        )));
    }
    let header = CheckpointHeader {
        precision,
        config,
        groups,
        step: r.u64()?,
        num_entities: r.u32()? as usize,
        num_relations: r.u32()? as usize,
        entity_hash: r.u64()?,
        relation_hash: r.u64()?,
        best_valid_mrr: r.f64()?,
        bad_evals: r.u32()?,
        seed: r.u64()?,
        stage,
    };
    let adam_step = r.u64()?;
    Ok((header, adam_step))
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let (header, adam_step) = decode_header(&mut r)?;
    if header.precision != T::PRECISION {
        return Err(CheckpointError::Precision {
            stored: header.precision.bytes() * 8,
            requested: T::PRECISION.bytes() * 8,
        });
    }
    let shape = ParamShape::new(header.config, header.num_entities, header.num_relations);
    let width = T::PRECISION.bytes();
    let read_set = |r: &mut Reader<'_>| -> Result<Params<T>, CheckpointError> {
        let mut p = Params::zeros(&shape);
        for (block, name) in p.blocks_mut().into_iter().zip(crate::ote::BLOCK_NAMES) {
            let len = r.u64()? as usize;
            if len != block.len() {
                return Err(CheckpointError::Malformed(format!(
                    "block {name} has {len} values, config implies {}",
                    block.len()
                )));
            }
            let raw = r.take(len * width)?;
            for (v, chunk) in block.iter_mut().zip(raw.chunks_exact(width)) {
                *v = T::read_le(chunk);
            }
        }
        Ok(p)
    };
    let params = read_set(&mut r)?;
    let m = read_set(&mut r)?;
    let v = read_set(&mut r)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let model = Model::from_params(header.config, header.num_entities, header.num_relations, params)?;
    Ok(Checkpoint {
        header,
        model,
        adam: AdamState { m, v, step: adam_step },
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

/// Reads only the fixed-size header.
pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointHeader, CheckpointError> {
    use std::io::Read;
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::with_capacity(HEADER_LEN);
    fs::File::open(path)
        .map_err(io)?
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(io)?;
    Ok(decode_header(&mut Reader { bytes: &buf, pos: 0 })?.0)
}
