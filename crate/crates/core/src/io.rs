//! Line-delimited candidate records, report writers, run manifests and the
//! content-addressed utility-matrix cache.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::candidate::{validate_set, Candidate, CandidateSet};
use crate::error::{Error, Result};
use crate::utility::{utility_matrix, UtilityMatrix};

/// Wire form: one candidate per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub instruction_id: String,
    #[serde(default)]
    pub instruction_text: String,
    pub candidate_id: usize,
    pub text: String,
    pub rewards: BTreeMap<String, f64>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

impl CandidateRecord {
    pub fn from_candidate(set: &CandidateSet, c: &Candidate) -> Self {
        Self {
            instruction_id: set.instruction_id.clone(),
            instruction_text: set.instruction_text.clone(),
            candidate_id: c.id,
            text: c.text.clone(),
            rewards: c.rewards.clone(),
            embedding: c.embedding.clone(),
            logprob: c.logprob,
        }
    }
}

/// Parses records, groups them by instruction id in order of first appearance,
/// orders each group by candidate id and validates it.
pub fn read_sets<R: BufRead>(reader: R) -> Result<Vec<CandidateSet>> {
    let mut groups: IndexMap<String, (String, Vec<Candidate>)> = IndexMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CandidateRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let entry = groups
            .entry(rec.instruction_id.clone())
            .or_insert_with(|| (rec.instruction_text.clone(), Vec::new()));
        entry.1.push(Candidate {
            id: rec.candidate_id,
            text: rec.text,
            rewards: rec.rewards,
            embedding: rec.embedding,
            logprob: rec.logprob,
        });
    }
    groups
        .into_iter()
        .map(|(instruction_id, (instruction_text, mut candidates))| {
            candidates.sort_by_key(|c| c.id);
            validate_set(CandidateSet {
                instruction_id: instruction_id.clone(),
                instruction_text,
                candidates,
            })
            .map_err(|e| Error::Validation {
                instruction_id,
                source: Box::new(e),
            })
        })
        .collect()
}

/// [`read_sets`] on a file. An empty file yields an empty list.
pub fn load_sets(path: impl AsRef<Path>) -> Result<Vec<CandidateSet>> {
    read_sets(BufReader::new(File::open(path)?))
}

/// Writes one record per candidate. Non-finite numbers have no JSON form and
/// are rejected rather than written as `null`.
pub fn write_sets<W: Write>(mut writer: W, sets: &[CandidateSet]) -> Result<()> {
    for set in sets {
        for c in &set.candidates {
            check_finite(c)?;
            serde_json::to_writer(&mut writer, &CandidateRecord::from_candidate(set, c))?;
            writer.write_all(b"\n")?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn check_finite(c: &Candidate) -> Result<()> {
    let bad = |field: &str| Error::NonFinite {
        candidate_id: c.id,
        field: field.to_string(),
    };
    if let Some((name, _)) = c.rewards.iter().find(|(_, v)| !v.is_finite()) {
        return Err(bad(&format!("rewards.{name}")));
    }
    if c.embedding.iter().any(|v| !v.is_finite()) {
        return Err(bad("embedding"));
    }
    if c.logprob.is_some_and(|v| !v.is_finite()) {
        return Err(bad("logprob"));
    }
    Ok(())
}

pub fn save_sets(path: impl AsRef<Path>, sets: &[CandidateSet]) -> Result<()> {
    write_sets(BufWriter::new(File::create(path)?), sets)
}

/// One JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, rows: &[T]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut writer, row)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// CSV with a header row derived from `T`'s field names.
pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), rows)
}

pub fn save_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows)
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let read = file.read(&mut buf)?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Path and SHA-256 digest of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            path: path.as_ref().display().to_string(),
            sha256: file_digest(path)?,
        })
    }
}

/// Everything needed to rerun a command and reproduce its outputs. Holds no
/// timestamps or host details, so repeated runs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    /// Output file names, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Utility matrices on disk, keyed by instruction id and an embedding digest.
///
/// File layout: magic `RBUM`, `n` as little-endian u64, then `n * n`
/// little-endian f64 values in row-major order.
#[derive(Debug, Clone)]
pub struct UtilityCache {
    dir: PathBuf,
}

const CACHE_MAGIC: &[u8; 4] = b"RBUM";

impl UtilityCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn key(set: &CandidateSet) -> String {
        let mut h = Sha256::new();
        h.update((set.instruction_id.len() as u64).to_le_bytes());
        h.update(set.instruction_id.as_bytes());
        h.update((set.len() as u64).to_le_bytes());
        h.update((set.dim() as u64).to_le_bytes());
        for c in &set.candidates {
            for v in &c.embedding {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn path_for(&self, set: &CandidateSet) -> PathBuf {
        self.dir.join(format!("{}.umx", Self::key(set)))
    }

    fn read(path: &Path, n: usize) -> Option<UtilityMatrix> {
        let bytes = fs::read(path).ok()?;
        if bytes.len() != 12 + 8 * n * n || &bytes[..4] != CACHE_MAGIC {
            return None;
        }
        let stored = u64::from_le_bytes(bytes[4..12].try_into().ok()?) as usize;
        if stored != n {
            return None;
        }
        let values = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        UtilityMatrix::from_values(n, values).ok()
    }

    fn write(path: &Path, m: &UtilityMatrix) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + 8 * m.values().len());
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&(m.n() as u64).to_le_bytes());
        for v in m.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = path.with_extension("umx.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Cached matrix if present and well-formed, otherwise computed and stored.
    pub fn get_or_compute(&self, set: &CandidateSet) -> Result<UtilityMatrix> {
        let path = self.path_for(set);
        if let Some(m) = Self::read(&path, set.len()) {
            return Ok(m);
        }
        let m = utility_matrix(set)?;
        Self::write(&path, &m)?;
        Ok(m)
    }
}
