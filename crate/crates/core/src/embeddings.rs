//! Keyed fixed-dimension vectors and cosine similarity.
//!
//! Two on-disk formats are supported:
//!
//! * text: a `count dim` header line, then one `key v1 ... vdim` line per entry;
//! * binary: little-endian `b"EMB1"`, `u32` count, `u32` dim, then per entry a
//!   `u32` byte length, the UTF-8 key, and `dim` `f32` values.
//!
//! Values are held and accumulated in `f64` whatever the storage precision.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::dot;

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorFormat {
    Text,
    Binary,
}

impl FromStr for VectorFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" | "txt" | "vec" => Ok(VectorFormat::Text),
            "binary" | "bin" => Ok(VectorFormat::Binary),
            other => Err(format!("unknown vector format {other:?}")),
        }
    }
}

impl VectorFormat {
    /// `.bin` files are binary, everything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => VectorFormat::Binary,
            _ => VectorFormat::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    /// Squared Euclidean norms.
    sq_norms: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            sq_norms: Vec::new(),
        }
    }

    pub fn from_entries<K, V>(dim: usize, entries: impl IntoIterator<Item = (K, V)>) -> Result<Self>
    where
        K: Into<String>,
        V: AsRef<[f64]>,
    {
        let mut store = EmbeddingStore::new(dim);
        for (i, (k, v)) in entries.into_iter().enumerate() {
            store.push(k.into(), v.as_ref(), i + 1)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: &[f64]) -> Result<()> {
        let line = self.keys.len() + 1;
        self.push(key.into(), vector, line)
    }

    fn push(&mut self, key: String, vector: &[f64], line: usize) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                line,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value in vector {key}")));
        }
        let sq_norm = dot(vector, vector);
        if sq_norm == 0.0 {
            return Err(Error::ZeroNorm(key));
        }
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateId { kind: "embedding", id: key });
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.data.extend_from_slice(vector);
        self.sq_norms.push(sq_norm);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Keys in insertion order.
    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn index_of(&self, key: &str) -> Result<usize> {
        self.index
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn vector(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.vector_at(i))
    }

    pub fn vector_at(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm_at(&self, i: usize) -> f64 {
        self.sq_norms[i].sqrt()
    }

    pub fn cosine(&self, u: &str, v: &str) -> Result<f64> {
        Ok(self.cosine_at(self.index_of(u)?, self.index_of(v)?))
    }

    /// Cosine between stored entries `i` and `j`, clamped to [−1, 1].
    #[inline]
    pub fn cosine_at(&self, i: usize, j: usize) -> f64 {
        let d = dot(self.vector_at(i), self.vector_at(j));
        (d / (self.sq_norms[i] * self.sq_norms[j]).sqrt()).clamp(-1.0, 1.0)
    }

    /// Cosine between entry `i` and an external vector with known squared norm.
    #[inline]
    pub fn cosine_with(&self, i: usize, query: &[f64], query_sq_norm: f64) -> f64 {
        let d = dot(self.vector_at(i), query);
        (d / (self.sq_norms[i] * query_sq_norm).sqrt()).clamp(-1.0, 1.0)
    }

    /// A store holding only `keys`, in that order.
    pub fn subset<S: AsRef<str>>(&self, keys: &[S]) -> Result<EmbeddingStore> {
        let mut out = EmbeddingStore::new(self.dim);
        for k in keys {
            let i = self.index_of(k.as_ref())?;
            out.insert(k.as_ref(), self.vector_at(i))?;
        }
        Ok(out)
    }

    pub fn write_text<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let io = |e| Error::io("vector output", e);
        writeln!(w, "{} {}", self.len(), self.dim).map_err(io)?;
        for (i, key) in self.keys.iter().enumerate() {
            write!(w, "{key}").map_err(io)?;
            for v in self.vector_at(i) {
                write!(w, " {v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Binary output stores `f32`; values are rounded.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let io = |e| Error::io("vector output", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(self.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        for (i, key) in self.keys.iter().enumerate() {
            w.write_all(&(key.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(key.as_bytes()).map_err(io)?;
            for &v in self.vector_at(i) {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path, format: VectorFormat) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        match format {
            VectorFormat::Text => self.write_text(file),
            VectorFormat::Binary => self.write_binary(file),
        }
    }
}

pub fn load_vectors(path: &Path, format: VectorFormat) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        VectorFormat::Text => read_text(BufReader::new(file), &name),
        VectorFormat::Binary => read_binary(BufReader::new(file), &name),
    }
}

pub fn read_text<R: BufRead>(reader: R, source_name: &str) -> Result<EmbeddingStore> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::parse(source_name, 1, e.to_string()))?;
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
            match (parse(parts.next()), parse(parts.next()), parts.next()) {
                (Some(c), Some(d), None) if d > 0 => (c, d),
                _ => return Err(Error::parse(source_name, 1, "expected header \"count dim\"")),
            }
        }
        None => return Err(Error::parse(source_name, 1, "empty vector file")),
    };

    let mut store = EmbeddingStore::new(dim);
    let mut values = Vec::with_capacity(dim);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().expect("non-empty line");
        values.clear();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| Error::parse(source_name, line_no, format!("invalid number {p:?}")))?;
            values.push(v);
        }
        store.push(key.to_string(), &values, line_no)?;
    }
    if store.len() != count {
        return Err(Error::parse(
            source_name,
            1,
            format!("header declares {count} vectors, found {}", store.len()),
        ));
    }
    Ok(store)
}

pub fn read_binary<R: Read>(mut reader: R, source_name: &str) -> Result<EmbeddingStore> {
    let truncated = |what: &str| Error::parse(source_name, 0, format!("truncated binary file ({what})"));
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::parse(source_name, 0, "bad magic, expected EMB1"));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word).map_err(|_| truncated("count"))?;
    let count = u32::from_le_bytes(word) as usize;
    reader.read_exact(&mut word).map_err(|_| truncated("dim"))?;
    let dim = u32::from_le_bytes(word) as usize;
    if dim == 0 {
        return Err(Error::parse(source_name, 0, "dimension must be positive"));
    }

    let mut store = EmbeddingStore::new(dim);
    let mut raw = vec![0u8; dim * 4];
    let mut values = vec![0f64; dim];
    for entry in 0..count {
        reader.read_exact(&mut word).map_err(|_| truncated("key length"))?;
        let len = u32::from_le_bytes(word) as usize;
        let mut key = vec![0u8; len];
        reader.read_exact(&mut key).map_err(|_| truncated("key"))?;
        let key = String::from_utf8(key)
            .map_err(|_| Error::parse(source_name, entry + 1, "key is not valid UTF-8"))?;
        reader.read_exact(&mut raw).map_err(|_| truncated("values"))?;
        for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        store.push(key, &values, entry + 1)?;
    }
    Ok(store)
}

/// Rectangle `[row_start, row_end) × [col_start, col_end)` in key-list coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

/// Dense cosine similarities for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBlock<'a> {
    pub tile: Tile,
    pub row_keys: &'a [String],
    pub col_keys: &'a [String],
    values: Vec<f64>,
}

impl SimilarityBlock<'_> {
    pub fn rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn cols(&self) -> usize {
        self.col_keys.len()
    }

    /// Similarity at local coordinates.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.col_keys.len() + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Tiling of `rows × cols` into `block_size` squares. Tiles are independent and
/// may be computed in any order or in parallel.
#[derive(Debug, Clone)]
pub struct BlockPlan<'a> {
    store: &'a EmbeddingStore,
    row_keys: &'a [String],
    col_keys: &'a [String],
    row_idx: Vec<usize>,
    col_idx: Vec<usize>,
    block_size: usize,
}

pub fn pairwise_blocks<'a>(
    store: &'a EmbeddingStore,
    rows: &'a [String],
    cols: &'a [String],
    block_size: usize,
) -> Result<BlockPlan<'a>> {
    if block_size == 0 {
        return Err(Error::InvalidParameter("block size must be at least 1".into()));
    }
    let row_idx = rows.iter().map(|k| store.index_of(k)).collect::<Result<Vec<_>>>()?;
    let col_idx = cols.iter().map(|k| store.index_of(k)).collect::<Result<Vec<_>>>()?;
    Ok(BlockPlan {
        store,
        row_keys: rows,
        col_keys: cols,
        row_idx,
        col_idx,
        block_size,
    })
}

impl<'a> BlockPlan<'a> {
    pub fn store(&self) -> &'a EmbeddingStore {
        self.store
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn tiles(&self) -> Vec<Tile> {
        let b = self.block_size;
        let mut tiles = Vec::new();
        for row_start in (0..self.row_keys.len()).step_by(b) {
            for col_start in (0..self.col_keys.len()).step_by(b) {
                tiles.push(Tile {
                    row_start,
                    row_end: (row_start + b).min(self.row_keys.len()),
                    col_start,
                    col_end: (col_start + b).min(self.col_keys.len()),
                });
            }
        }
        tiles
    }

    pub fn block(&self, tile: Tile) -> SimilarityBlock<'a> {
        let mut values = Vec::with_capacity((tile.row_end - tile.row_start) * (tile.col_end - tile.col_start));
        for &i in &self.row_idx[tile.row_start..tile.row_end] {
            for &j in &self.col_idx[tile.col_start..tile.col_end] {
                values.push(self.store.cosine_at(i, j));
            }
        }
        SimilarityBlock {
            tile,
            row_keys: &self.row_keys[tile.row_start..tile.row_end],
            col_keys: &self.col_keys[tile.col_start..tile.col_end],
            values,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SimilarityBlock<'a>> + '_ {
        self.tiles().into_iter().map(move |t| self.block(t))
    }
}
