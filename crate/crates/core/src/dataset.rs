//! Feature-embedding storage: the ICIF binary format, a CSV format, and a
//! seeded Gaussian-mixture generator.
//!
//! ICIF layout (little-endian):
//!
//! ```text
//! 0..4    magic "ICIF"
//! 4..8    version (u32) = 1
//! 8..16   instance count n (u64)
//! 16..24  dim d (u64)
//! n x { label: u32, features: d x f32 }
//! name table: k (u32), then k x { class_id: u32, len: u32, utf8 bytes }
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};

pub const ICIF_MAGIC: &[u8; 4] = b"ICIF";
pub const ICIF_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreFormat {
    Icif,
    Csv,
}

impl StoreFormat {
    /// Guesses the format from a file extension, defaulting to ICIF.
    pub fn from_path(path: &Path) -> StoreFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => StoreFormat::Csv,
            _ => StoreFormat::Icif,
        }
    }
}

/// Embeddings grouped by class. Class ids are the indices `0..num_classes()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    classes: Vec<Vec<Vec<f32>>>,
    class_names: BTreeMap<u32, String>,
}

impl FeatureStore {
    pub fn new(
        dim: usize,
        classes: Vec<Vec<Vec<f32>>>,
        class_names: BTreeMap<u32, String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(IciError::invalid("feature dimension must be positive"));
        }
        for (c, members) in classes.iter().enumerate() {
            for (i, v) in members.iter().enumerate() {
                if v.len() != dim {
                    return Err(IciError::invalid(format!(
                        "class {c} instance {i} has length {}, expected {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(IciError::invalid(format!(
                        "class {c} instance {i} has a non-finite entry"
                    )));
                }
            }
        }
        if let Some(&id) = class_names.keys().find(|&&id| id as usize >= classes.len()) {
            return Err(IciError::invalid(format!("name given for unknown class {id}")));
        }
        Ok(FeatureStore {
            dim,
            classes,
            class_names,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, id: usize) -> &[Vec<f32>] {
        &self.classes[id]
    }

    pub fn class_size(&self, id: usize) -> usize {
        self.classes[id].len()
    }

    pub fn total_instances(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.class_names
    }

    /// Feature vector widened to f64.
    pub fn feature_f64(&self, class: usize, index: usize) -> Vec<f64> {
        self.classes[class][index].iter().map(|&v| v as f64).collect()
    }

    fn check_saveable(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(IciError::invalid("store has no classes"));
        }
        if let Some(c) = self.classes.iter().position(Vec::is_empty) {
            return Err(IciError::invalid(format!("class {c} is empty")));
        }
        Ok(())
    }
}

fn parse_err(position: impl Into<String>, message: impl Into<String>) -> IciError {
    IciError::Parse {
        position: position.into(),
        message: message.into(),
    }
}

/// Groups `(label, features)` records into a store with dense class ids.
fn assemble(
    dim: usize,
    records: Vec<(u32, Vec<f32>)>,
    names: BTreeMap<u32, String>,
) -> Result<FeatureStore> {
    let num_classes = records.iter().map(|(l, _)| *l as usize + 1).max().unwrap_or(0);
    let mut classes = vec![Vec::new(); num_classes];
    for (label, v) in records {
        classes[label as usize].push(v);
    }
    if let Some(c) = classes.iter().position(Vec::is_empty) {
        return Err(IciError::invalid(format!(
            "class ids must be dense from 0; class {c} has no instances"
        )));
    }
    FeatureStore::new(dim, classes, names)
}

pub fn encode_icif(store: &FeatureStore) -> Result<Vec<u8>> {
    store.check_saveable()?;
    let n = store.total_instances();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (4 + 4 * store.dim) + 4);
    out.extend_from_slice(ICIF_MAGIC);
    out.extend_from_slice(&ICIF_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(store.dim as u64).to_le_bytes());
    for (label, members) in store.classes.iter().enumerate() {
        for v in members {
            out.extend_from_slice(&(label as u32).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&(store.class_names.len() as u32).to_le_bytes());
    for (id, name) in &store.class_names {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(parse_err(
                format!("byte {}", self.pos),
                format!(
                    "truncated {what}: need {len} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_icif(bytes: &[u8]) -> Result<FeatureStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != ICIF_MAGIC {
        return Err(parse_err("byte 0", format!("bad magic {magic:?}, expected \"ICIF\"")));
    }
    let version = cur.u32("version")?;
    if version != ICIF_VERSION {
        return Err(parse_err("byte 4", format!("unsupported version {version}")));
    }
    let n = cur.u64("instance count")?;
    let dim = cur.u64("dimension")?;
    if dim == 0 {
        return Err(parse_err("byte 16", "dimension must be positive"));
    }
    let expected = n
        .checked_mul(4 + 4 * dim)
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| parse_err("byte 8", "payload size overflows"))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual < expected {
        return Err(parse_err(
            format!("byte {}", bytes.len()),
            format!("truncated payload: expected {expected} record bytes, found {actual}"),
        ));
    }
    let dim = dim as usize;
    let mut records = Vec::with_capacity(n as usize);
    for r in 0..n as usize {
        let start = cur.pos;
        let label = cur.u32("label")?;
        let raw = cur.take(4 * dim, "features")?;
        let v: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(j) = v.iter().position(|x| !x.is_finite()) {
            return Err(parse_err(
                format!("byte {}", start + 4 + 4 * j),
                format!("record {r} feature {j} is not finite"),
            ));
        }
        records.push((label, v));
    }
    let k = cur.u32("name table count")?;
    let mut names = BTreeMap::new();
    for _ in 0..k {
        let at = cur.pos;
        let id = cur.u32("class id")?;
        let len = cur.u32("name length")? as usize;
        let raw = cur.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|e| parse_err(format!("byte {at}"), format!("class name is not UTF-8: {e}")))?;
        names.insert(id, name.to_owned());
    }
    if cur.pos != bytes.len() {
        return Err(parse_err(
            format!("byte {}", cur.pos),
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    assemble(dim, records, names)
}

pub fn encode_csv(store: &FeatureStore) -> Result<String> {
    store.check_saveable()?;
    let mut out = String::from("label");
    for j in 0..store.dim {
        write!(out, ",f{j}").expect("string write");
    }
    out.push('\n');
    for (label, members) in store.classes.iter().enumerate() {
        for v in members {
            write!(out, "{label}").expect("string write");
            for x in v {
                // 9 significant digits round-trip any f32
                write!(out, ",{x:.8e}").expect("string write");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn decode_csv(text: &str) -> Result<FeatureStore> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err("line 1", "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(parse_err("line 1", "header must be label,f0,...,f{d-1}"));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse_err("line 1", format!("column {} should be f{j}, got {c:?}", j + 1)));
        }
    }
    let dim = cols.len() - 1;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                format!("line {lineno}"),
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        let label: u32 = fields[0]
            .parse()
            .map_err(|e| parse_err(format!("line {lineno}"), format!("bad label {:?}: {e}", fields[0])))?;
        let mut v = Vec::with_capacity(dim);
        for (j, f) in fields[1..].iter().enumerate() {
            let x: f32 = f.parse().map_err(|e| {
                parse_err(format!("line {lineno}"), format!("bad value {f:?} in f{j}: {e}"))
            })?;
            if !x.is_finite() {
                return Err(parse_err(format!("line {lineno}"), format!("f{j} is not finite")));
            }
            v.push(x);
        }
        records.push((label, v));
    }
    if records.is_empty() {
        return Err(parse_err("line 2", "no instances"));
    }
    assemble(dim, records, BTreeMap::new())
}

pub fn load_store(path: &Path, format: StoreFormat) -> Result<FeatureStore> {
    match format {
        StoreFormat::Icif => {
            let bytes = fs::read(path).map_err(|e| IciError::io(path, e))?;
            decode_icif(&bytes)
        }
        StoreFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| IciError::io(path, e))?;
            decode_csv(&text)
        }
    }
}

pub fn save_store(store: &FeatureStore, path: &Path, format: StoreFormat) -> Result<()> {
    let bytes = match format {
        StoreFormat::Icif => encode_icif(store)?,
        StoreFormat::Csv => encode_csv(store)?.into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| IciError::io(path, e))
}

/// Gaussian-mixture generator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub cluster_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.per_class == 0 {
            return Err(IciError::invalid("synthetic counts must all be >= 1"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(IciError::invalid("noise_scale must be positive"));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return Err(IciError::invalid("cluster_separation must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Draws a store and returns the class centers alongside it.
///
/// Centers are uniform on the sphere of radius `cluster_separation`;
/// instances add isotropic Gaussian noise of scale `noise_scale`.
pub fn generate_synthetic_with_centers(spec: &SynthSpec) -> Result<(FeatureStore, Vec<Vec<f64>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let g: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break g.iter().map(|v| v / norm * spec.cluster_separation).collect();
            }
        })
        .collect();
    let classes = centers
        .iter()
        .map(|center| {
            (0..spec.per_class)
                .map(|_| {
                    center
                        .iter()
                        .map(|&c| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (c + spec.noise_scale * z) as f32
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok((FeatureStore::new(spec.dim, classes, BTreeMap::new())?, centers))
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<FeatureStore> {
    generate_synthetic_with_centers(spec).map(|(s, _)| s)
}
