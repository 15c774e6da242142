//! Append-only JSONL files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Every complete line of `path` parsed as `T`. A missing file reads as
/// empty; a trailing line without a newline (an interrupted write) is
/// ignored.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        n += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: ignoring unterminated line {n}", path.display());
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{} line {n}: {e}", path.display()))
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Writes `items` as a fresh JSONL file.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)
}

/// An append handle that first drops any unterminated tail.
pub struct Spool {
    file: File,
}

impl Spool {
    pub fn open(path: &Path) -> std::io::Result<Spool> {
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let text = std::fs::read(path)?;
        let keep = text.iter().rposition(|b| *b == b'\n').map(|i| i + 1).unwrap_or(0);
        if keep < text.len() {
            file.set_len(keep as u64)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok(Spool { file })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(item)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()
    }
}
