use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Completion, CompletionRequest, NoteProvider, PromptKind, ProviderError};
use crate::Error;

#[derive(Debug, Deserialize)]
struct FixtureRecord {
    id: String,
    prompt_kind: PromptKind,
    text: String,
}

/// Replays recorded completions from a JSONL file.
///
/// Records of each prompt kind are served in file order: request `i` with
/// batch size `b` gets records `i*b .. i*b+b` of that kind, so the output is
/// independent of worker scheduling.
#[derive(Debug)]
pub struct FixtureProvider {
    path: PathBuf,
    records: BTreeMap<PromptKind, Vec<(String, String)>>,
}

impl FixtureProvider {
    pub fn load(path: &Path) -> Result<FixtureProvider, Error> {
        let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
        let mut records: BTreeMap<PromptKind, Vec<(String, String)>> = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io_at(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: FixtureRecord = serde_json::from_str(&line).map_err(|e| Error::parse_at(path, i + 1, e))?;
            records.entry(r.prompt_kind).or_default().push((r.id, r.text));
        }
        Ok(FixtureProvider { path: path.to_path_buf(), records })
    }

    pub fn available(&self, kind: PromptKind) -> usize {
        self.records.get(&kind).map_or(0, Vec::len)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl NoteProvider for FixtureProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ProviderError> {
        let pool = self.records.get(&request.kind).map(Vec::as_slice).unwrap_or(&[]);
        let start = request.sequence * request.batch;
        if start >= pool.len() {
            return Err(ProviderError::Exhausted { kind: request.kind, available: pool.len(), requested: start + 1 });
        }
        let end = (start + request.batch).min(pool.len());
        Ok(pool[start..end]
            .iter()
            .map(|(id, text)| Completion { source_id: Some(id.clone()), text: text.clone() })
            .collect())
    }

    fn name(&self) -> &str {
        "fixture"
    }
}
