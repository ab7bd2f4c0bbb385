use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::CompletionRecord;

/// Completion cache: an append-only JSONL journal plus an in-memory index.
///
/// Loading tolerates a torn final line from an interrupted write; when a key
/// appears more than once the last record wins.
#[derive(Debug)]
pub struct ResponseCache {
    index: RwLock<HashMap<String, CompletionRecord>>,
    journal: Option<Mutex<File>>,
    path: Option<PathBuf>,
    skipped_lines: usize,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::new(HashMap::new()),
            journal: None,
            path: None,
            skipped_lines: 0,
        }
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;

        let mut index = HashMap::new();
        let mut skipped_lines = 0;
        for line in BufReader::new(&file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CompletionRecord>(&line) {
                Ok(rec) => {
                    index.insert(rec.cache_key.clone(), rec);
                }
                Err(_) => skipped_lines += 1,
            }
        }

        // Start appends on a fresh line if the previous writer died mid-record.
        let len = file.metadata()?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }

        Ok(Self {
            index: RwLock::new(index),
            journal: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
            skipped_lines,
        })
    }

    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        self.index
            .read()
            .expect("cache index lock poisoned")
            .get(key)
            .cloned()
    }

    pub fn insert(&self, record: CompletionRecord) -> std::io::Result<()> {
        if let Some(journal) = &self.journal {
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            let mut file = journal.lock().expect("cache journal lock poisoned");
            file.write_all(&line)?;
            file.flush()?;
        }
        self.index
            .write()
            .expect("cache index lock poisoned")
            .insert(record.cache_key.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Journal lines that could not be parsed on load.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }
}
