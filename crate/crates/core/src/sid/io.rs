//! Embedding ingestion and codebook persistence.
//!
//! Text embeddings: a `d_feat N` header, then `item_id v1 … v_dfeat` per line.
//! Binary embeddings: little-endian f32 rows, with a `<path>.json` sidecar
//! `{"d_feat", "n", "item_ids"}`.
//! Codebooks: version byte, u32 manifest length, JSON manifest, f32 payload.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_corpus, ItemEmbedding, SidCodebooks};
use crate::error::{Error, Result};

const CODEBOOK_VERSION: u8 = 1;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_embeddings_text(path: impl AsRef<Path>) -> Result<Vec<ItemEmbedding>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (dim, count) = loop {
        let Some((no, line)) = lines.next() else {
            return Err(parse_err(path, 1, "missing `d_feat N` header"));
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(d), Some(n), None) => break (d, n),
            _ => return Err(parse_err(path, no + 1, "expected header `d_feat N`")),
        }
    };

    let mut out = Vec::with_capacity(count);
    for (no, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("non-empty line");
        let vector = parts
            .map(|t| {
                t.parse::<f32>()
                    .map_err(|_| parse_err(path, no + 1, format!("bad number `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vector.len() != dim {
            return Err(parse_err(
                path,
                no + 1,
                format!("expected {dim} values, found {}", vector.len()),
            ));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding {
                item_id: id.to_string(),
            });
        }
        out.push(ItemEmbedding::new(id, vector));
    }
    if out.len() != count {
        return Err(format_err(
            path,
            format!("header declares {count} items, found {}", out.len()),
        ));
    }
    Ok(out)
}

pub fn write_embeddings_text(path: impl AsRef<Path>, items: &[ItemEmbedding]) -> Result<()> {
    let path = path.as_ref();
    let dim = validate_corpus(items)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{dim} {}", items.len())?;
        for e in items {
            write!(w, "{}", e.item_id)?;
            for x in &e.vector {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct BinaryManifest {
    d_feat: usize,
    n: usize,
    item_ids: Vec<String>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_embeddings_binary(path: impl AsRef<Path>, items: &[ItemEmbedding]) -> Result<()> {
    let path = path.as_ref();
    let dim = validate_corpus(items)?;
    let manifest = BinaryManifest {
        d_feat: dim,
        n: items.len(),
        item_ids: items.iter().map(|e| e.item_id.clone()).collect(),
    };
    let mut payload = Vec::with_capacity(items.len() * dim * 4);
    for e in items {
        for x in &e.vector {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let side = sidecar(path);
    fs::write(&side, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&side, e))
}

pub fn read_embeddings_binary(path: impl AsRef<Path>) -> Result<Vec<ItemEmbedding>> {
    let path = path.as_ref();
    let side = sidecar(path);
    let manifest: BinaryManifest = serde_json::from_slice(
        &fs::read(&side).map_err(|e| Error::io(&side, e))?,
    )
    .map_err(|e| format_err(&side, e.to_string()))?;
    if manifest.item_ids.len() != manifest.n {
        return Err(format_err(&side, "item_ids length differs from n"));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != manifest.n * manifest.d_feat * 4 {
        return Err(format_err(
            path,
            format!(
                "payload has {} bytes, expected {}",
                bytes.len(),
                manifest.n * manifest.d_feat * 4
            ),
        ));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let items: Vec<ItemEmbedding> = manifest
        .item_ids
        .into_iter()
        .zip(floats.chunks(manifest.d_feat.max(1)))
        .map(|(id, v)| ItemEmbedding::new(id, v.to_vec()))
        .collect();
    validate_corpus(&items)?;
    Ok(items)
}

/// Dispatch on the sidecar: a `<path>.json` file marks the binary variant.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<ItemEmbedding>> {
    let path = path.as_ref();
    if sidecar(path).exists() {
        read_embeddings_binary(path)
    } else {
        read_embeddings_text(path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CodebookManifest {
    #[serde(rename = "L")]
    levels: usize,
    #[serde(rename = "W")]
    size: usize,
    d_feat: usize,
    seed: u64,
    fingerprint: u64,
}

impl SidCodebooks {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&CodebookManifest {
            levels: self.levels,
            size: self.size,
            d_feat: self.dim,
            seed: self.seed,
            fingerprint: self.fingerprint,
        })?;
        let mut out = Vec::with_capacity(5 + manifest.len() + self.centroids.len() * 4);
        out.push(CODEBOOK_VERSION);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for x in &self.centroids {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| format_err(origin, m);
        let (&version, rest) = bytes.split_first().ok_or_else(|| bad("empty file"))?;
        if version != CODEBOOK_VERSION {
            return Err(bad(&format!("unsupported codebook version {version}")));
        }
        if rest.len() < 4 {
            return Err(bad("truncated manifest length"));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(bad("truncated manifest"));
        }
        let m: CodebookManifest =
            serde_json::from_slice(&rest[..len]).map_err(|e| bad(&e.to_string()))?;
        let payload = &rest[len..];
        if payload.len() != m.levels * m.size * m.d_feat * 4 {
            return Err(bad("payload length does not match manifest"));
        }
        let centroids = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        SidCodebooks::from_parts(m.levels, m.size, m.d_feat, m.seed, m.fingerprint, centroids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sid::fit_codebooks;

    fn sample() -> Vec<ItemEmbedding> {
        (0..6)
            .map(|i| ItemEmbedding::new(format!("item{i}"), vec![i as f32, 0.5 - i as f32, 1e-3]))
            .collect()
    }

    #[test]
    fn text_and_binary_embeddings_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let items = sample();
        let txt = dir.path().join("emb.txt");
        write_embeddings_text(&txt, &items).unwrap();
        assert_eq!(read_embeddings(&txt).unwrap(), items);

        let bin = dir.path().join("emb.f32");
        write_embeddings_binary(&bin, &items).unwrap();
        assert_eq!(read_embeddings(&bin).unwrap(), items);
    }

    #[test]
    fn text_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        fs::write(&p, "2 2\na 1 2\nb 1 x\n").unwrap();
        match read_embeddings_text(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "2 2\na 1 2\nb 1\n").unwrap();
        assert!(matches!(read_embeddings_text(&p), Err(Error::Parse { line: 3, .. })));
        fs::write(&p, "2 2\na 1 2\nb 1 inf\n").unwrap();
        assert!(matches!(
            read_embeddings_text(&p),
            Err(Error::NonFiniteEmbedding { .. })
        ));
    }

    #[test]
    fn codebook_file_layout_and_roundtrip() {
        let cb = fit_codebooks(&sample(), 2, 3, 5, 9).unwrap();
        let bytes = cb.to_bytes().unwrap();
        assert_eq!(bytes[0], CODEBOOK_VERSION);
        let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(&bytes[5..5 + len]).unwrap();
        assert_eq!(manifest["L"], 2);
        assert_eq!(manifest["W"], 3);
        assert_eq!(manifest["d_feat"], 3);
        assert_eq!(manifest["seed"], 9);
        assert_eq!(bytes.len(), 5 + len + 2 * 3 * 3 * 4);

        let back = SidCodebooks::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, cb);

        let mut wrong = bytes.clone();
        wrong[0] = 9;
        assert!(SidCodebooks::from_bytes(&wrong, Path::new("mem")).is_err());
    }
}
