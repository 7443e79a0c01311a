//! Tab-separated corpus and instance files.
//!
//! Corpus: `id \t text \t codes` (codes space-separated, empty for text-only).
//! Instances: `id \t codes \t patch_width \t question \t answers-json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::task::{Document, VqaInstance};
use crate::tinylm::SyntheticImage;

fn bad(line: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "tsv",
        detail: format!("line {line}: {}", detail.into()),
    }
}

fn join_codes(codes: &[u32]) -> String {
    codes.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_codes(s: &str, line: usize) -> Result<Vec<u32>> {
    s.split_whitespace()
        .map(|c| c.parse().map_err(|_| bad(line, format!("bad patch code {c:?}"))))
        .collect()
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n']) {
        return Err(Error::Format {
            what: "tsv",
            detail: format!("field contains a tab or newline: {s:?}"),
        });
    }
    Ok(())
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        check_field(&d.text)?;
        let codes = d.image_codes.as_deref().map(join_codes).unwrap_or_default();
        writeln!(w, "{}\t{}\t{}", d.id, d.text, codes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let r = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 fields, got {}", f.len())));
        }
        let id = f[0].parse().map_err(|_| bad(i + 1, "bad document id"))?;
        if f[1].trim().is_empty() {
            return Err(bad(i + 1, "empty document"));
        }
        let codes = parse_codes(f[2], i + 1)?;
        docs.push(Document {
            id,
            text: f[1].to_string(),
            image_codes: (!codes.is_empty()).then_some(codes),
        });
    }
    Ok(docs)
}

pub fn write_instances(path: &Path, instances: &[VqaInstance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in instances {
        check_field(&inst.question)?;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            inst.id,
            join_codes(inst.image.codes()),
            inst.image.patch_width(),
            inst.question,
            serde_json::to_string(&inst.answers)?
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<VqaInstance>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(i + 1, format!("expected 5 fields, got {}", f.len())));
        }
        let id = f[0].parse().map_err(|_| bad(i + 1, "bad instance id"))?;
        let width = f[2].parse().map_err(|_| bad(i + 1, "bad patch width"))?;
        let answers: Vec<String> = serde_json::from_str(f[4])?;
        if answers.is_empty() {
            return Err(bad(i + 1, "instance has no answers"));
        }
        out.push(VqaInstance {
            id,
            image: SyntheticImage::from_codes(parse_codes(f[1], i + 1)?, width)?,
            question: f[3].to_string(),
            answers,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::task::{generate_task, TaskConfig};

    #[test]
    fn round_trip() {
        let t = generate_task(&TaskConfig {
            n_entities: 10,
            n_instances: 20,
            multimodal_docs: true,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (c, i) = (dir.path().join("corpus.tsv"), dir.path().join("val.tsv"));
        write_corpus(&c, &t.corpus).unwrap();
        write_instances(&i, &t.val).unwrap();
        assert_eq!(read_corpus(&c).unwrap(), t.corpus);
        assert_eq!(read_instances(&i).unwrap(), t.val);
    }
}
