//! Checkpoint serialization and word-vector import.
//!
//! A checkpoint is a directory holding `manifest.json` (ordered list of
//! `{name, shape}`) and `weights.bin` (the tensors' values as little-endian
//! 64-bit floats, row-major, concatenated in manifest order). Round-trips
//! are bit-exact.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderError, EncoderModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

/// One tensor's snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorState {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Full parameter snapshot of a model, in checkpoint order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelState {
    pub tensors: Vec<TensorState>,
}

pub fn save_checkpoint_state(state: &ModelState, dir: &Path) -> Result<(), EncoderError> {
    std::fs::create_dir_all(dir).map_err(EncoderError::io(dir))?;
    let manifest: Vec<ManifestEntry> = state
        .tensors
        .iter()
        .map(|t| ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json + "\n").map_err(EncoderError::io(&manifest_path))?;

    let weights_path = dir.join("weights.bin");
    let file = std::fs::File::create(&weights_path).map_err(EncoderError::io(&weights_path))?;
    let mut w = BufWriter::new(file);
    for tensor in &state.tensors {
        for value in &tensor.values {
            w.write_all(&value.to_le_bytes())
                .map_err(EncoderError::io(&weights_path))?;
        }
    }
    w.flush().map_err(EncoderError::io(&weights_path))
}

pub fn load_checkpoint_state(dir: &Path) -> Result<ModelState, EncoderError> {
    let manifest_path = dir.join("manifest.json");
    let json =
        std::fs::read_to_string(&manifest_path).map_err(EncoderError::io(&manifest_path))?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&json).map_err(|e| EncoderError::MalformedManifest {
            reason: e.to_string(),
        })?;
    let weights_path = dir.join("weights.bin");
    let bytes = std::fs::read(&weights_path).map_err(EncoderError::io(&weights_path))?;
    let total: usize = manifest
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != total * 8 {
        return Err(EncoderError::WeightsSizeMismatch {
            expected: total * 8,
            found: bytes.len(),
        });
    }
    let mut tensors = Vec::with_capacity(manifest.len());
    let mut offset = 0usize;
    for entry in manifest {
        let n: usize = entry.shape.iter().product();
        let values: Vec<f64> = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")))
            .collect();
        offset += n * 8;
        tensors.push(TensorState {
            name: entry.name,
            shape: entry.shape,
            values,
        });
    }
    Ok(ModelState { tensors })
}

/// Overwrite embedding rows for vocabulary tokens found in a word-vector
/// text file. Returns how many rows were overwritten.
pub fn load_word_vectors(model: &mut EncoderModel, path: &Path) -> Result<usize, EncoderError> {
    let file = std::fs::File::open(path).map_err(EncoderError::io(path))?;
    let mut lines = BufReader::new(file).lines();
    let malformed = |line: usize, reason: String| EncoderError::MalformedVectorFile {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let header = match lines.next() {
        Some(Ok(line)) => line,
        Some(Err(e)) => return Err(EncoderError::io(path)(e)),
        None => return Err(malformed(1, "missing <count> <dim> header".to_string())),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(malformed(1, format!("expected \"<count> <dim>\", got {header:?}")));
    }
    let count: usize = fields[0]
        .parse()
        .map_err(|_| malformed(1, format!("bad count {:?}", fields[0])))?;
    let dim: usize = fields[1]
        .parse()
        .map_err(|_| malformed(1, format!("bad dim {:?}", fields[1])))?;
    let model_dim = model.config().dim;
    if dim != model_dim {
        return Err(EncoderError::VectorDimensionMismatch {
            expected: model_dim,
            found: dim,
        });
    }

    let mut embedding = model.embedding_tensor().values();
    let mut rows_seen = 0usize;
    let mut overwritten = 0usize;
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(EncoderError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 2;
        rows_seen += 1;
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line has a first field");
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| malformed(line_no, format!("bad float {f:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(malformed(
                line_no,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if let Some(id) = model.vocab().id_of(word) {
            embedding[id * model_dim..(id + 1) * model_dim].copy_from_slice(&values);
            overwritten += 1;
        }
    }
    if rows_seen != count {
        return Err(malformed(
            1,
            format!("header promises {count} rows, file holds {rows_seen}"),
        ));
    }
    model.embedding_tensor().set_values(&embedding);
    Ok(overwritten)
}
