//! FEMB binary embeddings, CSV embeddings and quality CSVs.
//!
//! FEMB layout, little-endian throughout:
//!
//! ```text
//! "FEMB" | u32 version = 1 | u64 record count | u32 dimension
//! per record: u16 len + image_id | u16 len + identity_id | dimension x f32
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingRecord, QualityTable};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FEMB";
const VERSION: u32 = 1;

fn stream_err(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated FEMB stream".into())
    } else {
        Error::io("<stream>", e)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(stream_err)?;
    Ok(buf)
}

fn read_token(r: &mut impl Read, what: &str) -> Result<String> {
    let len = u16::from_le_bytes(read_array(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(stream_err)?;
    let s = String::from_utf8(buf).map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))?;
    if s.is_empty() {
        return Err(Error::Format(format!("empty {what}")));
    }
    Ok(s)
}

fn write_token(w: &mut impl Write, s: &str, what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Format(format!("empty {what}")));
    }
    let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("{what} longer than 65535 bytes")))?;
    w.write_all(&len.to_le_bytes()).map_err(stream_err)?;
    w.write_all(s.as_bytes()).map_err(stream_err)
}

fn check_unique<'a>(seen: &mut HashSet<&'a str>, id: &'a str) -> Result<()> {
    if !seen.insert(id) {
        return Err(Error::DuplicateId(id.to_owned()));
    }
    Ok(())
}

fn check_dimension(records: &[EmbeddingRecord]) -> Result<usize> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    if !records.is_empty() && dim < 2 {
        return Err(Error::Format(format!("embedding dimension must be >= 2, got {dim}")));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                image_id: r.image_id.clone(),
                expected: dim,
                found: r.vector.len(),
            });
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of {}", r.image_id)));
        }
        check_unique(&mut seen, &r.image_id)?;
    }
    Ok(dim)
}

pub fn read_femb(mut r: impl Read) -> Result<Vec<EmbeddingRecord>> {
    if &read_array::<4>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic, expected FEMB".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported FEMB version {version}")));
    }
    let count = u64::from_le_bytes(read_array(&mut r)?);
    let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if count > 0 && dim < 2 {
        return Err(Error::Format(format!("embedding dimension must be >= 2, got {dim}")));
    }

    // The count is untrusted; don't preallocate from it.
    let mut records = Vec::new();
    for _ in 0..count {
        let image_id = read_token(&mut r, "image_id")?;
        let identity_id = read_token(&mut r, "identity_id")?;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = f32::from_le_bytes(read_array(&mut r)?);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("embedding of {image_id}")));
            }
            vector.push(v);
        }
        records.push(EmbeddingRecord {
            image_id,
            identity_id,
            vector,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(stream_err)? != 0 {
        return Err(Error::Format("trailing bytes after last FEMB record".into()));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for rec in &records {
        check_unique(&mut seen, &rec.image_id)?;
    }
    Ok(records)
}

pub fn write_femb(mut w: impl Write, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = check_dimension(records)?;
    w.write_all(MAGIC).map_err(stream_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(stream_err)?;
    w.write_all(&(records.len() as u64).to_le_bytes()).map_err(stream_err)?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
    w.write_all(&dim32.to_le_bytes()).map_err(stream_err)?;
    for r in records {
        write_token(&mut w, &r.image_id, "image_id")?;
        write_token(&mut w, &r.identity_id, "identity_id")?;
        for v in &r.vector {
            w.write_all(&v.to_le_bytes()).map_err(stream_err)?;
        }
    }
    w.flush().map_err(stream_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn read_embeddings_csv(r: impl Read) -> Result<Vec<EmbeddingRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() < 4 || &header[0] != "image_id" || &header[1] != "identity_id" {
        return Err(Error::Format("embedding CSV header must be image_id,identity_id,v0,v1,...".into()));
    }
    let dim = header.len() - 2;
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("v{i}") {
            return Err(Error::Format(format!("unexpected column {name}, expected v{i}")));
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let image_id = row.get(0).unwrap_or_default().to_owned();
        if row.len() != dim + 2 {
            return Err(Error::DimensionMismatch {
                image_id,
                expected: dim,
                found: row.len().saturating_sub(2),
            });
        }
        let identity_id = row[1].to_owned();
        if image_id.is_empty() || identity_id.is_empty() {
            return Err(Error::Format("empty id in embedding CSV".into()));
        }
        let vector = row
            .iter()
            .skip(2)
            .map(|field| {
                let v: f32 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad component {field:?} for {image_id}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(format!("embedding of {image_id}")))
                }
            })
            .collect::<Result<Vec<f32>>>()?;
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateId(image_id));
        }
        records.push(EmbeddingRecord {
            image_id,
            identity_id,
            vector,
        });
    }
    Ok(records)
}

/// Load embeddings from a FEMB file, or from CSV when the magic is absent.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        read_femb(bytes.as_slice())
    } else {
        read_embeddings_csv(bytes.as_slice())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_embeddings_femb(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    write_femb(create(path)?, records).map_err(|e| relabel(e, path))
}

pub fn write_embeddings_csv(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    let dim = check_dimension(records)?;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["image_id".to_owned(), "identity_id".to_owned()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.image_id.clone(), r.identity_id.clone()];
        row.extend(r.vector.iter().map(f32::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

pub fn read_quality_csv(r: impl Read) -> Result<QualityTable> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(csv_err)?;
    if header.len() != 2 || &header[0] != "image_id" || &header[1] != "score" {
        return Err(Error::Format("quality CSV header must be image_id,score".into()));
    }
    let mut table = QualityTable::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let id = &row[0];
        if id.is_empty() {
            return Err(Error::Format("empty image_id in quality CSV".into()));
        }
        let score: f64 = row[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("unparseable score {:?} for {id}", &row[1])))?;
        table.insert(id, score)?;
    }
    Ok(table)
}

/// Scores are written with the shortest representation that round-trips.
pub fn write_quality_csv(w: impl Write, table: &QualityTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["image_id", "score"]).map_err(csv_err)?;
    for (id, q) in table.iter() {
        w.write_record([id, q.to_string().as_str()]).map_err(csv_err)?;
    }
    w.flush().map_err(stream_err)
}

pub fn load_quality_scores(path: impl AsRef<Path>) -> Result<QualityTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_quality_csv(BufReader::new(file))
}

pub fn write_quality_scores(path: impl AsRef<Path>, table: &QualityTable) -> Result<()> {
    let path = path.as_ref();
    write_quality_csv(create(path)?, table).map_err(|e| relabel(e, path))
}
