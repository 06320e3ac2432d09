//! Binary checkpoint format.
//!
//! ```text
//! magic        4 bytes  "CQDM"
//! version      u32
//! scorer       u8       0 = ComplEx, 1 = DistMult
//! layout       u8       0 = complex split layout (all re, then all im)
//! width        u8       bytes per stored value: 4 (f32) or 8 (f64)
//! calibration  u8       0 = logistic, 1 = min-max per call
//! temperature  f64
//! rank         u32
//! entities     u32
//! relations    u32
//! payload      entity table then relation table, row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use thiserror::Error;

use super::{CalibrationKind, CalibrationParams, EmbeddingModel, ModelError, ScorerKind};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CQDM";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("unsupported scorer tag {0}")]
    UnsupportedScorer(u8),
    #[error("unsupported embedding layout tag {0}")]
    UnsupportedLayout(u8),
    #[error("unsupported value width {0}")]
    UnsupportedWidth(u8),
    #[error("unsupported calibration tag {0}")]
    UnsupportedCalibration(u8),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(std::io::Error),
}

fn truncated(e: std::io::Error) -> CheckpointError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CheckpointError::Truncated
    } else {
        CheckpointError::Io(e)
    }
}

pub fn encode<T: Scalar>(model: &EmbeddingModel<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + (model.entity_table().len() + model.relation_table().len()) * T::WIDTH as usize);
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    out.write_u8(match model.scorer() {
        ScorerKind::ComplEx => 0,
        ScorerKind::DistMult => 1,
    })
    .unwrap();
    out.write_u8(0).unwrap();
    out.write_u8(T::WIDTH).unwrap();
    let cal = model.calibration();
    out.write_u8(match cal.kind {
        CalibrationKind::Logistic => 0,
        CalibrationKind::MinMaxPerCall => 1,
    })
    .unwrap();
    out.write_f64::<LittleEndian>(cal.temperature).unwrap();
    out.write_u32::<LittleEndian>(model.rank() as u32).unwrap();
    out.write_u32::<LittleEndian>(model.num_entities() as u32).unwrap();
    out.write_u32::<LittleEndian>(model.num_relations() as u32).unwrap();
    for &x in model.entity_table().iter().chain(model.relation_table().iter()) {
        if T::WIDTH == 4 {
            out.write_f32::<LittleEndian>(x.to_f32().unwrap()).unwrap();
        } else {
            out.write_f64::<LittleEndian>(x.as_f64()).unwrap();
        }
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<EmbeddingModel<T>, CheckpointError> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let scorer = match cur.read_u8().map_err(truncated)? {
        0 => ScorerKind::ComplEx,
        1 => ScorerKind::DistMult,
        other => return Err(CheckpointError::UnsupportedScorer(other)),
    };
    let layout = cur.read_u8().map_err(truncated)?;
    if layout != 0 {
        return Err(CheckpointError::UnsupportedLayout(layout));
    }
    let width = cur.read_u8().map_err(truncated)?;
    if width != 4 && width != 8 {
        return Err(CheckpointError::UnsupportedWidth(width));
    }
    let kind = match cur.read_u8().map_err(truncated)? {
        0 => CalibrationKind::Logistic,
        1 => CalibrationKind::MinMaxPerCall,
        other => return Err(CheckpointError::UnsupportedCalibration(other)),
    };
    let temperature = cur.read_f64::<LittleEndian>().map_err(truncated)?;
    let rank = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let n_ent = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let n_rel = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;

    let payload = (n_ent + n_rel)
        .checked_mul(rank)
        .and_then(|n| n.checked_mul(width as usize))
        .ok_or(CheckpointError::Truncated)?;
    let remaining = bytes.len() - cur.position() as usize;
    if remaining < payload {
        return Err(CheckpointError::Truncated);
    }
    if remaining > payload {
        return Err(CheckpointError::Trailing(remaining - payload));
    }
    let mut read_table = |rows: usize| -> Result<Array2<T>, CheckpointError> {
        let mut data = Vec::with_capacity(rows * rank);
        for _ in 0..rows * rank {
            let v = if width == 4 {
                cur.read_f32::<LittleEndian>().map_err(truncated)? as f64
            } else {
                cur.read_f64::<LittleEndian>().map_err(truncated)?
            };
            data.push(T::of(v));
        }
        Ok(Array2::from_shape_vec((rows, rank), data).expect("shape matches length"))
    };
    let entities = read_table(n_ent)?;
    let relations = read_table(n_rel)?;
    Ok(EmbeddingModel::from_tables(
        scorer,
        entities,
        relations,
        CalibrationParams { kind, temperature },
    )?)
}

pub fn save_model<T: Scalar>(model: &EmbeddingModel<T>, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(model);
    let mut f = fs::File::create(path).map_err(CheckpointError::Io)?;
    f.write_all(&bytes).map_err(CheckpointError::Io)?;
    f.flush().map_err(CheckpointError::Io)
}

/// Loads a checkpoint, converting stored values to `T`.
pub fn load_model<T: Scalar>(path: &Path) -> Result<EmbeddingModel<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(CheckpointError::Io)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> EmbeddingModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = EmbeddingModel::random(ScorerKind::ComplEx, 6, 5, 4, 0.3, &mut rng).unwrap();
        m.set_calibration(CalibrationParams {
            kind: CalibrationKind::MinMaxPerCall,
            temperature: 2.5,
        })
        .unwrap();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&m, &path).unwrap();
        assert_eq!(load_model::<f64>(&path).unwrap(), m);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m32 = EmbeddingModel::<f32>::random(ScorerKind::DistMult, 3, 2, 2, 1.0, &mut rng).unwrap();
        assert_eq!(decode::<f32>(&encode(&m32)).unwrap(), m32);
        // f32 payload widened to f64 is lossless
        let widened = decode::<f64>(&encode(&m32)).unwrap();
        assert_eq!(widened.entity_table()[[1, 2]] as f32, m32.entity_table()[[1, 2]]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode(&sample());
        for cut in [3, 10, 30, bytes.len() - 1] {
            assert!(matches!(decode::<f64>(&bytes[..cut]), Err(CheckpointError::Truncated)), "cut {cut}");
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode(&sample());
        bytes[8] = 7;
        let err = decode::<f64>(&bytes).unwrap_err();
        assert!(matches!(err, CheckpointError::UnsupportedScorer(7)));
        assert!(err.to_string().contains("unsupported scorer"));

        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(decode::<f64>(&bytes), Err(CheckpointError::Version { found: 9 })));

        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode::<f64>(&bytes), Err(CheckpointError::BadMagic)));
    }
}
