use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{EmberError, Result};
use crate::numerics::Tensor;

/// Reserved row for padding; always the zero vector.
pub const PAD_INDEX: usize = 0;
/// Reserved row for out-of-vocabulary tokens; the mean of all loaded vectors.
pub const UNK_INDEX: usize = 1;
/// Reserved row standing in for an absent component; initialized as a copy of
/// the UNK row and trained as the `embed.nocomp` parameter.
pub const NOCOMP_INDEX: usize = 2;

const RESERVED: usize = 3;

/// Pretrained word vectors plus the token -> row index map.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    matrix: Tensor,
    dim: usize,
}

impl EmbeddingTable {
    /// Build a table from `(token, vector)` pairs; reserved rows are
    /// prepended in front of the loaded vectors.
    pub fn from_pairs(pairs: Vec<(String, Vec<f64>)>, dim: usize) -> Result<Self> {
        let rows = RESERVED + pairs.len();
        let mut data = vec![0.0; rows * dim];
        let mut vocab = HashMap::with_capacity(pairs.len());

        let mut mean = vec![0.0; dim];
        for (i, (token, vector)) in pairs.iter().enumerate() {
            if vector.len() != dim {
                return Err(EmberError::dims(
                    format!("embedding for '{token}'"),
                    dim.to_string(),
                    vector.len().to_string(),
                ));
            }
            let row = RESERVED + i;
            data[row * dim..(row + 1) * dim].copy_from_slice(vector);
            for (m, v) in mean.iter_mut().zip(vector) {
                *m += v;
            }
            if vocab.insert(token.clone(), row).is_some() {
                return Err(EmberError::DuplicateId { id: token.clone() });
            }
        }
        if !pairs.is_empty() {
            for m in &mut mean {
                *m /= pairs.len() as f64;
            }
        }
        // PAD stays zero; UNK and NOCOMP start from the mean vector.
        data[UNK_INDEX * dim..(UNK_INDEX + 1) * dim].copy_from_slice(&mean);
        data[NOCOMP_INDEX * dim..(NOCOMP_INDEX + 1) * dim].copy_from_slice(&mean);

        Ok(EmbeddingTable {
            vocab,
            matrix: Tensor::from_vec(rows, dim, data)?,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Row index for a token; unknown tokens map to UNK.
    pub fn index_of(&self, token: &str) -> usize {
        self.vocab.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        self.matrix.row_slice(index)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }
}

/// Load a whitespace-separated embedding file: `token v1 .. vd` per line.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|_| EmberError::MissingFile {
        path: path.display().to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default().to_string();
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| EmberError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if values.len() != dim {
            return Err(EmberError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("expected {dim} values, got {}", values.len()),
            });
        }
        pairs.push((token, values));
    }
    EmbeddingTable::from_pairs(pairs, dim)
}

/// Write `(token, vector)` pairs in the loadable format.
pub fn write_embeddings(pairs: &[(String, Vec<f64>)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for (token, vector) in pairs {
        write!(out, "{token}")?;
        for v in vector {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
