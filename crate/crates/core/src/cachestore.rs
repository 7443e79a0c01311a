//! Pre-saved compressed document prompts.
//!
//! File layout (little-endian): magic `RCC1`, SHA-256 of the hyper model
//! parameters, SHA-256 of `theta_d`, `L_d` and `d_hyper` as `u32`, entry
//! count as `u64`, then `(doc id u64, byte offset u64)` index entries, then
//! the packed `f64` prompt matrices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compressor::{compress_document_value, CompressedPrompt, SourceKind};
use crate::error::{Error, Result};
use crate::modulator::DocPromptSource;
use crate::numerics::Tensor;
use crate::retrieval::Document;
use crate::tinylm::{SyntheticImage, TinyLm, Vocabulary};

const MAGIC: &[u8; 4] = b"RCC1";
const HEADER_BYTES: u64 = 4 + 32 + 32 + 4 + 4 + 8;
const INDEX_ENTRY_BYTES: u64 = 16;

pub fn tensor_checksum(t: &Tensor) -> [u8; 32] {
    Sha256::digest(t.to_le_bytes()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub count: usize,
    pub cache_bytes: u64,
    pub raw_bytes: u64,
}

/// Bytes of document content: UTF-8 text plus 4 bytes per image patch code.
pub fn raw_corpus_bytes(corpus: &[Document]) -> u64 {
    corpus
        .iter()
        .map(|d| d.text.len() as u64 + 4 * d.image_codes.as_ref().map_or(0, |c| c.len() as u64))
        .sum()
}

/// Compresses every document with the current `theta_d` and writes the cache file.
pub fn build_cache(
    corpus: &[Document],
    vocab: &Vocabulary,
    hyper: &TinyLm,
    theta_d: &Tensor,
    path: &Path,
) -> Result<CacheSummary> {
    let (l_d, d) = theta_d.dims2()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&hyper.params().checksum())?;
    w.write_all(&tensor_checksum(theta_d))?;
    w.write_u32::<LittleEndian>(l_d as u32)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_u64::<LittleEndian>(corpus.len() as u64)?;
    let data_start = HEADER_BYTES + INDEX_ENTRY_BYTES * corpus.len() as u64;
    let matrix_bytes = (l_d * d * 8) as u64;
    for (i, doc) in corpus.iter().enumerate() {
        w.write_u64::<LittleEndian>(doc.id)?;
        w.write_u64::<LittleEndian>(data_start + i as u64 * matrix_bytes)?;
    }
    let patch_width = hyper.config().patch_width;
    for doc in corpus {
        let tokens = vocab.tokenize(&doc.text)?;
        let image = match &doc.image_codes {
            Some(c) => Some(SyntheticImage::from_codes(c.clone(), patch_width)?),
            None => None,
        };
        let prompt = compress_document_value(hyper, theta_d, doc.id, &tokens, image.as_ref())?;
        w.write_all(&prompt.rows.to_le_bytes())?;
    }
    w.flush()?;
    Ok(CacheSummary {
        count: corpus.len(),
        cache_bytes: std::fs::metadata(path)?.len(),
        raw_bytes: raw_corpus_bytes(corpus),
    })
}

/// An opened cache whose checksums match the live models.
pub struct PromptCache {
    file: File,
    path: PathBuf,
    index: HashMap<u64, u64>,
    l_d: usize,
    d: usize,
    file_len: u64,
}

impl PromptCache {
    pub fn open(path: &Path, hyper: &TinyLm, theta_d: &Tensor) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                command: "racc bench --pre-save",
            },
            _ => e.into(),
        })?;
        let file_len = file.metadata()?.len();
        let format = |detail: String| Error::Format {
            what: "prompt cache",
            detail,
        };
        if file_len < HEADER_BYTES {
            return Err(format("file shorter than its header".into()));
        }
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format(format!("bad magic {magic:?}")));
        }
        let mut hyper_sum = [0u8; 32];
        let mut theta_sum = [0u8; 32];
        file.read_exact(&mut hyper_sum)?;
        file.read_exact(&mut theta_sum)?;
        if hyper_sum != hyper.params().checksum() {
            return Err(Error::StaleCache(format!(
                "{} was built with different hyper model weights; rebuild it with `racc bench --pre-save`",
                path.display()
            )));
        }
        if theta_sum != tensor_checksum(theta_d) {
            return Err(Error::StaleCache(format!(
                "{} was built with a different theta_d; rebuild it with `racc bench --pre-save`",
                path.display()
            )));
        }
        let l_d = file.read_u32::<LittleEndian>()? as usize;
        let d = file.read_u32::<LittleEndian>()? as usize;
        let count = file.read_u64::<LittleEndian>()?;
        if HEADER_BYTES + count.saturating_mul(INDEX_ENTRY_BYTES) > file_len {
            return Err(format(format!("index of {count} entries exceeds the file")));
        }
        let mut index = HashMap::with_capacity(count as usize);
        let matrix_bytes = (l_d * d * 8) as u64;
        for _ in 0..count {
            let id = file.read_u64::<LittleEndian>()?;
            let off = file.read_u64::<LittleEndian>()?;
            if off.checked_add(matrix_bytes).is_none_or(|end| end > file_len) {
                return Err(format(format!("entry {id} points outside the file")));
            }
            index.insert(id, off);
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
            index,
            l_d,
            d,
            file_len,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file_len(&self) -> u64 {
        self.file_len
    }

    /// Reads the stored matrix for `doc_id` without recomputation.
    pub fn load_prompt(&mut self, doc_id: u64) -> Result<CompressedPrompt> {
        let off = *self.index.get(&doc_id).ok_or(Error::NotFound(doc_id))?;
        self.file.seek(SeekFrom::Start(off))?;
        let mut data = vec![0f64; self.l_d * self.d];
        self.file.read_f64_into::<LittleEndian>(&mut data)?;
        Ok(CompressedPrompt {
            rows: Tensor::new(&[self.l_d, self.d], data)?,
            source_kind: SourceKind::Document,
            source_id: doc_id,
        })
    }
}

impl DocPromptSource for PromptCache {
    fn doc_prompt(&mut self, id: u64) -> Result<Tensor> {
        Ok(self.load_prompt(id)?.rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskReport {
    pub raw_bytes: u64,
    pub cache_bytes: u64,
    /// `cache_bytes / raw_bytes`; `None` when the corpus is empty.
    pub ratio: Option<f64>,
}

pub fn disk_report(cache_path: &Path, corpus: &[Document]) -> Result<DiskReport> {
    let cache_bytes = std::fs::metadata(cache_path)?.len();
    let raw_bytes = raw_corpus_bytes(corpus);
    Ok(DiskReport {
        raw_bytes,
        cache_bytes,
        ratio: (raw_bytes > 0).then(|| cache_bytes as f64 / raw_bytes as f64),
    })
}
