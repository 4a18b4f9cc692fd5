//! Embedding table ingestion and the softmax probability transform.
//!
//! Embeddings are produced out of process (any sentence encoder emitting
//! the declared dimension) and ingested here from a JSON Lines file or a
//! compact binary format. The reserved id `__empty__` holds the
//! empty-string embedding used as the empty-group sentinel.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for the empty-string embedding.
pub const EMPTY_ID: &str = "__empty__";

/// Magic bytes introducing the binary embedding format.
pub const BINARY_MAGIC: &[u8; 4] = b"GFEV";

/// Probabilities are clamped to at least this before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Immutable id -> vector map with a single declared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct RowLine {
    id: String,
    vec: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("embedding dim must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            entries: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vec: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vec.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: vec.len(),
                context: format!("embedding {id}"),
            });
        }
        if let Some(bad) = vec.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {bad} in embedding {id}"
            )));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate embedding id {id}")));
        }
        self.entries.insert(id, vec);
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// The empty-group sentinel: the stored `__empty__` vector, or the zero
    /// vector (whose softmax is uniform) when none was ingested.
    pub fn empty_vector(&self) -> Vec<f64> {
        self.lookup(EMPTY_ID)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Load a table from a file, auto-detecting the JSON Lines and binary
    /// layouts by the leading magic bytes.
    pub fn ingest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut magic = [0u8; 4];
        let n = file.read(&mut magic).map_err(|e| Error::io(&display, e))?;
        if n == 4 && &magic == BINARY_MAGIC {
            let mut rest = Vec::new();
            file.read_to_end(&mut rest).map_err(|e| Error::io(&display, e))?;
            Self::from_binary_body(&rest, &display)
        } else {
            // JSON Lines: re-read from the start.
            let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
            Self::from_jsonl(BufReader::new(file), &display)
        }
    }

    fn from_jsonl(reader: impl BufRead, path: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((idx, line)) => {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str::<HeaderLine>(&line).map_err(|e| {
                        Error::parse(path, idx + 1, format!("expected {{\"dim\": N}} header: {e}"))
                    })?;
                }
                None => return Err(Error::parse(path, 1, "empty embedding file, no header")),
            }
        };
        let mut table = EmbeddingTable::new(header.dim)?;
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: RowLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
            table.insert(row.id, row.vec).map_err(|e| match e {
                Error::Shape { expected, actual, context } => Error::Parse {
                    path: path.to_string(),
                    line: idx + 1,
                    message: format!("dim mismatch for {context}: expected {expected}, got {actual}"),
                },
                other => other,
            })?;
        }
        Ok(table)
    }

    fn from_binary_body(body: &[u8], path: &str) -> Result<Self> {
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > body.len() {
                return Err(Error::parse(path, 0, "truncated binary embedding file"));
            }
            let slice = &body[*cursor..*cursor + n];
            *cursor += n;
            Ok(slice)
        };
        let dim_bytes: [u8; 4] = take(&mut cursor, 4)?.try_into().unwrap();
        let dim = u32::from_le_bytes(dim_bytes) as usize;
        let mut table = EmbeddingTable::new(dim)?;
        while cursor < body.len() {
            let len_bytes: [u8; 2] = take(&mut cursor, 2)?.try_into().unwrap();
            let id_len = u16::from_le_bytes(len_bytes) as usize;
            let id = String::from_utf8(take(&mut cursor, id_len)?.to_vec())
                .map_err(|e| Error::parse(path, 0, format!("invalid utf-8 id: {e}")))?;
            let mut vec = Vec::with_capacity(dim);
            for _ in 0..dim {
                let b: [u8; 4] = take(&mut cursor, 4)?.try_into().unwrap();
                vec.push(f32::from_le_bytes(b) as f64);
            }
            table.insert(id, vec)?;
        }
        Ok(table)
    }

    /// Write the JSON Lines layout: a `{"dim": N}` header then one row per id.
    /// Rows are sorted by id so output is deterministic.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let display = path.as_ref().display().to_string();
        let mut out = Vec::new();
        let header = serde_json::to_string(&HeaderLine { dim: self.dim }).expect("header json");
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        for id in ids {
            let row = RowLine {
                id: id.clone(),
                vec: self.entries[id].clone(),
            };
            out.extend_from_slice(serde_json::to_string(&row).expect("row json").as_bytes());
            out.push(b'\n');
        }
        std::fs::write(&path, out).map_err(|e| Error::io(&display, e))
    }

    /// Write the binary layout (f32 values), rows sorted by id.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let display = path.as_ref().display().to_string();
        let mut out = Vec::new();
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        for id in ids {
            let bytes = id.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
            for v in &self.entries[id] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&display, e))?;
        file.write_all(&out).map_err(|e| Error::io(&display, e))
    }
}

/// Numerically stable softmax: subtract the max before exponentiating.
/// Output entries are strictly positive and sum to one.
pub fn softmax_normalize(v: &[f64]) -> Vec<f64> {
    debug_assert!(!v.is_empty());
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_closed_forms() {
        let u = softmax_normalize(&[2.5, 2.5, 2.5, 2.5]);
        for x in &u {
            assert!((x - 0.25).abs() < 1e-12);
        }
        let p = softmax_normalize(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let shifted: Vec<f64> = v.iter().map(|x| x + 3.7).collect();
            let a = softmax_normalize(&v);
            let b = softmax_normalize(&shifted);
            let sum: f64 = a.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
                assert!(*x > 0.0);
            }
        }
    }

    #[test]
    fn ingest_jsonl_validates_rows() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        std::fs::write(
            &good,
            "{\"dim\": 3}\n{\"id\": \"a\", \"vec\": [1.0, 2.0, 3.0]}\n",
        )
        .unwrap();
        let table = EmbeddingTable::ingest(&good).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.lookup("a").unwrap(), &[1.0, 2.0, 3.0]);
        assert!(table.lookup("b").is_none());

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"dim\": 3}\n{\"id\": \"short\", \"vec\": [1.0, 2.0]}\n",
        )
        .unwrap();
        let err = EmbeddingTable::ingest(&bad).unwrap_err();
        assert!(err.to_string().contains("short"), "error names the id: {err}");

        let nonfinite = dir.path().join("nan.jsonl");
        std::fs::write(
            &nonfinite,
            "{\"dim\": 2}\n{\"id\": \"x\", \"vec\": [1.0, 1e999]}\n",
        )
        .unwrap();
        assert!(EmbeddingTable::ingest(&nonfinite).is_err());
    }

    #[test]
    fn empty_sentinel_policy() {
        let mut table = EmbeddingTable::new(4).unwrap();
        assert_eq!(table.empty_vector(), vec![0.0; 4]);
        let uniform = softmax_normalize(&table.empty_vector());
        for p in uniform {
            assert!((p - 0.25).abs() < 1e-12);
        }
        table.insert(EMPTY_ID, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(table.empty_vector(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn jsonl_round_trip_preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = EmbeddingTable::new(16).unwrap();
        for i in 0..20 {
            let v: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
            table.insert(format!("id{i}"), v).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.jsonl");
        table.write_jsonl(&path).unwrap();
        let back = EmbeddingTable::ingest(&path).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn binary_round_trip_within_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut table = EmbeddingTable::new(8).unwrap();
        for i in 0..10 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            table.insert(format!("row-{i}"), v).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.bin");
        table.write_binary(&path).unwrap();
        let back = EmbeddingTable::ingest(&path).unwrap();
        assert_eq!(back.dim(), 8);
        assert_eq!(back.len(), 10);
        for id in table.ids() {
            let orig = table.lookup(id).unwrap();
            let got = back.lookup(id).unwrap();
            for (o, g) in orig.iter().zip(got) {
                let rel = (o - g).abs() / o.abs().max(1.0);
                assert!(rel < 1e-7, "{id}: {o} vs {g}");
            }
        }
    }

    #[test]
    fn ingest_is_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        std::fs::write(
            &a,
            "{\"dim\": 2}\n{\"id\": \"x\", \"vec\": [1.0, 2.0]}\n{\"id\": \"y\", \"vec\": [3.0, 4.0]}\n",
        )
        .unwrap();
        std::fs::write(
            &b,
            "{\"dim\": 2}\n{\"id\": \"y\", \"vec\": [3.0, 4.0]}\n{\"id\": \"x\", \"vec\": [1.0, 2.0]}\n",
        )
        .unwrap();
        assert_eq!(
            EmbeddingTable::ingest(&a).unwrap(),
            EmbeddingTable::ingest(&b).unwrap()
        );
    }
}
