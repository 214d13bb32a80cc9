//! Append-only JSON-lines journal.
//!
//! Every store mutation is one line, synced before `append` returns. On
//! open the file is replayed front to back. A final line without its
//! terminating newline is a torn write from a crash: it is dropped and the
//! file truncated back to the last complete record. Any other unparsable
//! line is corruption and fails the open.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::marker::PhantomData;
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal {path}: corrupt record at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub struct Journal<T> {
    path: PathBuf,
    file: File,
    _entry: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> Journal<T> {
    /// Opens (creating with mode 0600 if absent) and replays the journal.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<T>), JournalError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| JournalError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .mode(0o600)
            .open(&path)
            .map_err(io_err)?;
        let mut contents = Vec::new();
        file.read_to_end(&mut contents).map_err(io_err)?;

        let complete = match contents.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < contents.len() {
            file.set_len(complete as u64).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }

        let mut entries = Vec::new();
        for (idx, line) in contents[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let entry = serde_json::from_slice(line).map_err(|e| JournalError::Corrupt {
                path: path.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok((
            Journal {
                path,
                file,
                _entry: PhantomData,
            },
            entries,
        ))
    }

    pub fn append(&mut self, entry: &T) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(entry).expect("journal entries serialize");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    #[test]
    fn replay_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.journal");
        {
            let (mut j, entries) = Journal::<u32>::open(&path).unwrap();
            assert!(entries.is_empty());
            j.append(&1).unwrap();
            j.append(&2).unwrap();
        }
        let (mut j, entries) = Journal::<u32>::open(&path).unwrap();
        assert_eq!(entries, vec![1, 2]);
        j.append(&3).unwrap();
        let (_, entries) = Journal::<u32>::open(&path).unwrap();
        assert_eq!(entries, vec![1, 2, 3]);
        let mode = std::fs::metadata(&path).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.journal");
        std::fs::write(&path, b"1\n2\n3").unwrap();
        let (mut j, entries) = Journal::<u32>::open(&path).unwrap();
        assert_eq!(entries, vec![1, 2]);
        j.append(&4).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"1\n2\n4\n");
    }

    #[test]
    fn interior_corruption_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.journal");
        std::fs::write(&path, b"1\nnope\n3\n").unwrap();
        assert!(matches!(
            Journal::<u32>::open(&path),
            Err(JournalError::Corrupt { line: 2, .. })
        ));
    }
}
