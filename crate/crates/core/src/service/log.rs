//! Append-only JSON-Lines response log.
//!
//! Every accepted response is one line. A crash can leave at most one torn
//! record at the end of the file; replay drops it with a warning. Damage
//! anywhere else is an error.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Response, ResponseSet};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("response log line {line} is damaged: {message}")]
    Corrupt { line: usize, message: String },
    #[error("response log: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Default)]
pub struct Replay {
    pub set: ResponseSet,
    pub warnings: Vec<String>,
    /// Byte length of the intact prefix of the log.
    pub valid_len: usize,
}

/// Rebuilds the accepted-response set from log bytes.
pub fn replay(log: &[u8]) -> Result<Replay, LogError> {
    let mut out = Replay::default();
    let mut offset = 0;
    let mut line = 0;
    while offset < log.len() {
        line += 1;
        let rest = &log[offset..];
        let (record, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let end = offset + record.len() + usize::from(terminated);
        if record.iter().all(u8::is_ascii_whitespace) {
            offset = end;
            out.valid_len = end;
            continue;
        }
        let parsed: Result<Response, _> = serde_json::from_slice(record);
        match parsed {
            Ok(r) => {
                out.set.insert(r).map_err(|c| LogError::Corrupt {
                    line,
                    message: format!("record conflicts with earlier records: {c}"),
                })?;
                out.valid_len = end;
            }
            Err(e) if !terminated => {
                out.warnings.push(format!(
                    "discarded truncated record at line {line} (byte {offset}, {} bytes): {e}",
                    record.len()
                ));
                break;
            }
            Err(e) => {
                return Err(LogError::Corrupt {
                    line,
                    message: e.to_string(),
                })
            }
        }
        offset = end;
    }
    Ok(out)
}

/// Writer side of the log. Each append is a single write of one full line
/// followed by `sync_data`.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
}

impl LogWriter {
    /// Opens (creating if needed) the log at `path`, replays it, and cuts off
    /// a torn trailing record so later appends start on a clean line.
    pub fn open(path: &Path) -> Result<(LogWriter, Replay), LogError> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut rep = replay(&bytes)?;
        if rep.valid_len < bytes.len() {
            file.set_len(rep.valid_len as u64)?;
            file.sync_data()?;
            rep.warnings.push(format!(
                "truncated {} trailing bytes from {}",
                bytes.len() - rep.valid_len,
                path.display()
            ));
        } else if !bytes.is_empty() && !bytes.ends_with(b"\n") {
            // Intact last record that lost only its newline.
            file.write_all(b"\n")?;
            file.sync_data()?;
        }
        Ok((LogWriter { file }, rep))
    }

    pub fn append(&mut self, r: &Response) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(r).expect("response serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}
