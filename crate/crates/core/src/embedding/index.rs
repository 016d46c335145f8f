use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{embed, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::taxonomy::{CodeCatalog, CodeSystem};

const MAGIC: &[u8; 8] = b"MCFIDX01";

#[derive(Debug, Clone, PartialEq)]
pub struct IndexItem {
    /// Display form of the code (dotted for ICD).
    pub code: String,
    pub description: String,
    pub vector: EmbeddingVector,
}

/// Exact-scan cosine index over one catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeIndex {
    pub system: CodeSystem,
    pub dim: usize,
    pub provider_id: String,
    pub catalog_version: String,
    pub items: Vec<IndexItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Ranked by score descending, ties by code ascending.
    pub candidates: Vec<Candidate>,
    pub n_requested: usize,
    pub expanded: bool,
}

#[derive(Serialize, Deserialize)]
struct ProgressHeader {
    provider_id: String,
    dim: usize,
    system: CodeSystem,
    catalog_version: String,
}

#[derive(Serialize, Deserialize)]
struct ProgressItem {
    code: String,
    vector: Vec<f32>,
}

/// Embeds `code description` for every catalog entry.
///
/// With `progress`, each embedded item is appended to that file as soon as it
/// is computed and already-present items are reused, so an interrupted build
/// resumes where it stopped.
pub fn build_index(
    catalog: &CodeCatalog,
    provider: &dyn EmbeddingProvider,
    progress: Option<&Path>,
) -> Result<CodeIndex, EmbeddingError> {
    if catalog.is_empty() {
        return Err(EmbeddingError::EmptyCatalog);
    }
    let header = ProgressHeader {
        provider_id: provider.provider_id(),
        dim: provider.dim(),
        system: catalog.system,
        catalog_version: catalog.version.clone(),
    };

    let mut done: HashMap<String, Vec<f32>> = HashMap::new();
    let sink = match progress {
        Some(path) => {
            done = read_progress(path, &header)?;
            let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(
                    f,
                    "{}",
                    serde_json::to_string(&header).expect("header serializes")
                )?;
            }
            Some(Mutex::new(f))
        }
        None => None,
    };

    let entries: Vec<(String, String)> = catalog
        .entries()
        .map(|(k, d)| (catalog.display_code(k), d.to_string()))
        .collect();

    let items = entries
        .par_iter()
        .map(|(code, description)| {
            if let Some(v) = done.get(code) {
                if v.len() == provider.dim() {
                    return Ok(IndexItem {
                        code: code.clone(),
                        description: description.clone(),
                        vector: EmbeddingVector::from_stored(v.clone()),
                    });
                }
            }
            let vector = embed(provider, &format!("{code} {description}")).map_err(|e| {
                EmbeddingError::Item {
                    code: code.clone(),
                    source: Box::new(e),
                }
            })?;
            if let Some(sink) = &sink {
                let line = serde_json::to_string(&ProgressItem {
                    code: code.clone(),
                    vector: vector.as_slice().to_vec(),
                })
                .expect("progress item serializes");
                let mut f = sink.lock().expect("progress lock poisoned");
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            Ok(IndexItem {
                code: code.clone(),
                description: description.clone(),
                vector,
            })
        })
        .collect::<Result<Vec<_>, EmbeddingError>>()?;

    Ok(CodeIndex {
        system: catalog.system,
        dim: provider.dim(),
        provider_id: provider.provider_id(),
        catalog_version: catalog.version.clone(),
        items,
    })
}

fn read_progress(
    path: &Path,
    expected: &ProgressHeader,
) -> Result<HashMap<String, Vec<f32>>, EmbeddingError> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut lines = BufReader::new(File::open(path)?).lines();
    let Some(first) = lines.next().transpose()? else {
        return Ok(out);
    };
    let header: ProgressHeader = serde_json::from_str(&first)
        .map_err(|e| EmbeddingError::ProgressMismatch(format!("bad header: {e}")))?;
    if header.provider_id != expected.provider_id
        || header.dim != expected.dim
        || header.system != expected.system
        || header.catalog_version != expected.catalog_version
    {
        return Err(EmbeddingError::ProgressMismatch(format!(
            "{} (dim {}, catalog {})",
            header.provider_id, header.dim, header.catalog_version
        )));
    }
    for line in lines {
        let line = line?;
        // A torn final line from an interrupted write is skipped and recomputed.
        if let Ok(item) = serde_json::from_str::<ProgressItem>(&line) {
            out.insert(item.code, item.vector);
        }
    }
    Ok(out)
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.code.cmp(&b.code))
}

impl CodeIndex {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn description(&self, code: &str) -> Option<&str> {
        self.items
            .iter()
            .find(|i| i.code == code)
            .map(|i| i.description.as_str())
    }

    /// Fails unless `provider` is the one this index was built with.
    pub fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), EmbeddingError> {
        let query = provider.provider_id();
        if query != self.provider_id {
            return Err(EmbeddingError::ProviderMismatch {
                index: self.provider_id.clone(),
                query,
            });
        }
        Ok(())
    }

    fn scored(&self, query: &EmbeddingVector) -> Result<Vec<Candidate>, EmbeddingError> {
        if query.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        self.items
            .iter()
            .map(|item| {
                Ok(Candidate {
                    code: item.code.clone(),
                    score: super::cosine(&item.vector, query)?,
                })
            })
            .collect()
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&[match self.system {
                CodeSystem::Icd10Cm => 0u8,
                CodeSystem::Cpt => 1u8,
            }])?;
            w.write_all(&(self.dim as u32).to_le_bytes())?;
            write_str32(&mut w, &self.provider_id)?;
            write_str32(&mut w, &self.catalog_version)?;
            w.write_all(&(self.items.len() as u64).to_le_bytes())?;
            for item in &self.items {
                let code = item.code.as_bytes();
                w.write_all(&(code.len() as u16).to_le_bytes())?;
                w.write_all(code)?;
                write_str32(&mut w, &item.description)?;
                for v in item.vector.as_slice() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let mut r = BufReader::new(File::open(path)?);
        let corrupt = |m: &str| EmbeddingError::CorruptIndex(m.to_string());

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let system = match read_u8(&mut r)? {
            0 => CodeSystem::Icd10Cm,
            1 => CodeSystem::Cpt,
            s => {
                return Err(EmbeddingError::CorruptIndex(format!(
                    "unknown system tag {s}"
                )))
            }
        };
        let dim = read_u32(&mut r)? as usize;
        let provider_id = read_str32(&mut r)?;
        let catalog_version = read_str32(&mut r)?;
        let count = read_u64(&mut r)?;
        let mut items = Vec::with_capacity(count.min(1 << 20) as usize);
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)
                .map_err(|_| corrupt("truncated item"))?;
            let code = read_string(&mut r, u16::from_le_bytes(len) as usize)?;
            let description = read_str32(&mut r)?;
            let mut values = Vec::with_capacity(dim);
            let mut buf = [0u8; 4];
            for _ in 0..dim {
                r.read_exact(&mut buf)
                    .map_err(|_| corrupt("truncated vector"))?;
                values.push(f32::from_le_bytes(buf));
            }
            items.push(IndexItem {
                code,
                description,
                vector: EmbeddingVector::from_stored(values),
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(CodeIndex {
            system,
            dim,
            provider_id,
            catalog_version,
            items,
        })
    }

    /// Human-readable JSON-lines dump: a header object, then one object per item.
    pub fn export_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::json!({
            "system": self.system,
            "dim": self.dim,
            "provider_id": self.provider_id,
            "catalog_version": self.catalog_version,
            "items": self.items.len(),
        });
        writeln!(w, "{header}")?;
        for item in &self.items {
            let line = serde_json::json!({
                "code": item.code,
                "description": item.description,
                "vector": item.vector.as_slice(),
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Exact top-`n` by cosine; ties broken by ascending code.
pub fn query_top_n(
    index: &CodeIndex,
    query: &EmbeddingVector,
    n: usize,
) -> Result<RetrievalResult, EmbeddingError> {
    let mut scored = index.scored(query)?;
    let n = n.max(1);
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, rank);
        scored.truncate(n);
    }
    scored.sort_by(rank);
    Ok(RetrievalResult {
        candidates: scored,
        n_requested: n,
        expanded: false,
    })
}

/// Top-`n` retrieval filtered by `accept`, doubling the window up to `max_n`
/// while nothing in it is acceptable.
///
/// Returns the accepted candidates of the first window that has any, in rank
/// order. `expanded` is set whenever the initial window had no acceptable
/// candidate; an exhausted search returns no candidates.
pub fn fallback_expand(
    index: &CodeIndex,
    query: &EmbeddingVector,
    n: usize,
    max_n: usize,
    accept: impl Fn(&Candidate) -> bool,
) -> Result<RetrievalResult, EmbeddingError> {
    let mut ranked = index.scored(query)?;
    ranked.sort_by(rank);
    let max_n = max_n.max(n).max(1);
    let mut window = n.max(1);
    let mut start = 0;
    let mut expanded = false;

    loop {
        let end = window.min(ranked.len());
        let accepted: Vec<Candidate> = ranked[start.min(end)..end]
            .iter()
            .filter(|c| accept(c))
            .cloned()
            .collect();
        if !accepted.is_empty() {
            return Ok(RetrievalResult {
                candidates: accepted,
                n_requested: window,
                expanded,
            });
        }
        expanded = true;
        if window >= max_n || end >= ranked.len() {
            return Ok(RetrievalResult {
                candidates: Vec::new(),
                n_requested: window,
                expanded,
            });
        }
        start = end;
        window = (window * 2).min(max_n);
    }
}

fn write_str32(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u8(r: &mut impl Read) -> Result<u8, EmbeddingError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|_| EmbeddingError::CorruptIndex("truncated header".into()))?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32, EmbeddingError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| EmbeddingError::CorruptIndex("truncated field".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, EmbeddingError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| EmbeddingError::CorruptIndex("truncated field".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_str32(r: &mut impl Read) -> Result<String, EmbeddingError> {
    let len = read_u32(r)? as usize;
    read_string(r, len)
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String, EmbeddingError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| EmbeddingError::CorruptIndex("truncated string".into()))?;
    String::from_utf8(buf).map_err(|_| EmbeddingError::CorruptIndex("invalid UTF-8".into()))
}
