//! On-disk bundle layout:
//!
//! ```text
//! bundle/
//!   metadata.json      strategy, config, tensor shapes, unit layout
//!   encoder_<i>.bin    encoder tensors, f64 little-endian, concatenated
//!   head_<role>.bin    head weight then bias, f64 little-endian
//!   history.jsonl      one training-history record per line
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{HistoryRecord, Role, Strategy, StrategyConfig, StrategyError, TrainedBundle, Unit};
use crate::encoder::{ClassifierHead, EncoderSpec, ParameterSet, SequenceEncoder, TinyEncoder};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMetadata {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMetadata {
    pub file: String,
    pub spec: EncoderSpec,
    pub tensors: Vec<TensorMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetadata {
    pub file: String,
    pub input_width: usize,
    pub outputs: usize,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMetadata {
    pub role: Role,
    pub encoder: usize,
    pub fused_from: Option<Role>,
    pub head: HeadMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub format_version: u32,
    pub strategy: Strategy,
    pub config: StrategyConfig,
    pub encoders: Vec<EncoderMetadata>,
    pub units: Vec<UnitMetadata>,
}

impl BundleMetadata {
    pub fn read(dir: &Path) -> Result<Self, StrategyError> {
        let meta: BundleMetadata = serde_json::from_slice(&fs::read(dir.join("metadata.json"))?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(StrategyError::Format(format!(
                "unsupported format version {}",
                meta.format_version
            )));
        }
        Ok(meta)
    }

    pub fn unit(&self, role: Role) -> Option<&UnitMetadata> {
        self.units.iter().find(|u| u.role == role)
    }
}

fn write_blob(path: &Path, chunks: &[&[f64]]) -> Result<(), StrategyError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for chunk in chunks {
        for x in *chunk {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_blob(path: &Path) -> Result<Vec<f64>, StrategyError> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(StrategyError::Format(format!(
            "{} is not a whole number of f64 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn save_bundle<E: SequenceEncoder + ParameterSet>(
    bundle: &TrainedBundle<E>,
    dir: &Path,
) -> Result<BundleMetadata, StrategyError> {
    bundle.check_architecture()?;
    fs::create_dir_all(dir)?;
    let mut encoders = Vec::new();
    for (i, enc) in bundle.encoders.iter().enumerate() {
        let file = format!("encoder_{i}.bin");
        let tensors = enc.tensors();
        write_blob(&dir.join(&file), &tensors.iter().map(|t| t.data).collect::<Vec<_>>())?;
        encoders.push(EncoderMetadata {
            file,
            spec: enc.spec().clone(),
            tensors: tensors
                .iter()
                .map(|t| TensorMetadata {
                    name: t.name.to_string(),
                    shape: t.shape.clone(),
                })
                .collect(),
        });
    }
    let mut units = Vec::new();
    for u in &bundle.units {
        let file = format!("head_{}.bin", u.role);
        let h = &u.head;
        write_blob(
            &dir.join(&file),
            &[
                h.weight.as_slice().expect("standard layout"),
                h.bias.as_slice().expect("standard layout"),
            ],
        )?;
        units.push(UnitMetadata {
            role: u.role,
            encoder: u.encoder,
            fused_from: u.fused_from,
            head: HeadMetadata {
                file,
                input_width: h.input_width(),
                outputs: h.outputs(),
                dropout_rate: h.dropout_rate,
            },
        });
    }
    let meta = BundleMetadata {
        format_version: FORMAT_VERSION,
        strategy: bundle.strategy,
        config: bundle.config.clone(),
        encoders,
        units,
    };
    fs::write(dir.join("metadata.json"), serde_json::to_vec_pretty(&meta)?)?;
    write_history(&dir.join("history.jsonl"), &bundle.history)?;
    Ok(meta)
}

pub fn write_history(path: &Path, history: &[HistoryRecord]) -> Result<(), StrategyError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for rec in history {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<TrainedBundle<TinyEncoder>, StrategyError> {
    let meta = BundleMetadata::read(dir)?;
    let mut encoders = Vec::new();
    for em in &meta.encoders {
        let mut enc = TinyEncoder::new(em.spec.clone())?;
        let expected: Vec<TensorMetadata> = enc
            .tensors()
            .iter()
            .map(|t| TensorMetadata {
                name: t.name.to_string(),
                shape: t.shape.clone(),
            })
            .collect();
        if expected != em.tensors {
            return Err(StrategyError::Format(format!(
                "{}: tensor layout does not match the encoder spec",
                em.file
            )));
        }
        let data = read_blob(&dir.join(&em.file))?;
        if data.len() != enc.parameter_count() {
            return Err(StrategyError::Format(format!(
                "{}: expected {} values, found {}",
                em.file,
                enc.parameter_count(),
                data.len()
            )));
        }
        let mut offset = 0;
        for t in enc.tensors_mut() {
            t.copy_from_slice(&data[offset..offset + t.len()]);
            offset += t.len();
        }
        encoders.push(enc);
    }
    let mut units = Vec::new();
    for um in &meta.units {
        let h = &um.head;
        let data = read_blob(&dir.join(&h.file))?;
        let n_weight = h.outputs * h.input_width;
        if data.len() != n_weight + h.outputs {
            return Err(StrategyError::Format(format!(
                "{}: expected {} values, found {}",
                h.file,
                n_weight + h.outputs,
                data.len()
            )));
        }
        let weight = Array2::from_shape_vec((h.outputs, h.input_width), data[..n_weight].to_vec())
            .map_err(|e| StrategyError::Format(e.to_string()))?;
        let bias = Array1::from(data[n_weight..].to_vec());
        units.push(Unit {
            role: um.role,
            encoder: um.encoder,
            head: ClassifierHead::from_parts(weight, bias, h.dropout_rate)?,
            fused_from: um.fused_from,
        });
    }
    let history = match fs::File::open(dir.join("history.jsonl")) {
        Ok(f) => BufReader::new(f)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| Ok(serde_json::from_str(&l?)?))
            .collect::<Result<Vec<_>, StrategyError>>()?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let bundle = TrainedBundle {
        strategy: meta.strategy,
        config: meta.config,
        encoders,
        units,
        history,
    };
    bundle.check_architecture()?;
    Ok(bundle)
}
