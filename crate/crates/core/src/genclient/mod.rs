//! Synthetic note generation through a chat-completion provider.
//!
//! Two providers implement [`NoteProvider`]: [`LiveProvider`] talks to an
//! OpenAI-compatible endpoint, [`FixtureProvider`] replays a JSONL corpus so
//! every downstream stage runs offline. [`generate`] drives either one with
//! retries, optional rate limiting and parallel requests, and persists each
//! note as soon as it (and everything before it) has arrived.

mod fixture;
mod live;
mod ratelimit;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use fixture::FixtureProvider;
pub use live::{LiveConfig, LiveProvider};
pub use ratelimit::TokenBucket;

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Standard,
    NegativeOnly,
    NoLabelSentences,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Standard, PromptKind::NegativeOnly, PromptKind::NoLabelSentences];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Standard => "standard",
            PromptKind::NegativeOnly => "negative_only",
            PromptKind::NoLabelSentences => "no_label_sentences",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(PromptKind::Standard),
            "negative" | "negative_only" => Ok(PromptKind::NegativeOnly),
            "no_label" | "no_label_sentences" => Ok(PromptKind::NoLabelSentences),
            other => Err(format!("unknown prompt kind `{other}`")),
        }
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const STANDARD_PROMPT: &str = include_str!("prompts/standard.txt");
const NEGATIVE_ONLY_PROMPT: &str = include_str!("prompts/negative_only.txt");
const NO_LABEL_PROMPT: &str = include_str!("prompts/no_label_sentences.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub text: String,
}

impl PromptTemplate {
    pub fn for_kind(kind: PromptKind) -> PromptTemplate {
        let text = match kind {
            PromptKind::Standard => STANDARD_PROMPT,
            PromptKind::NegativeOnly => NEGATIVE_ONLY_PROMPT,
            PromptKind::NoLabelSentences => NO_LABEL_PROMPT,
        };
        PromptTemplate { kind, text: text.to_string() }
    }

    /// Prompt for one request; `batch` only matters for sentence batches.
    pub fn render(&self, batch: usize) -> String {
        self.text.replace("{n}", &batch.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    pub temperature: f64,
    /// Passed through verbatim into the request body.
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model_name: "gpt-3.5-turbo-0613".to_string(),
            temperature: 1.2,
            extra: serde_json::Map::new(),
        }
    }
}

/// A generated note (or, for sentence batches, a single sentence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNote {
    pub id: String,
    pub text: String,
    pub prompt_kind: PromptKind,
    pub model_name: String,
    pub temperature: f64,
    pub created_at: String,
}

impl RawNote {
    pub fn new(id: impl Into<String>, prompt_kind: PromptKind, text: impl Into<String>) -> RawNote {
        let params = GenerationParams::default();
        RawNote {
            id: id.into(),
            text: text.into(),
            prompt_kind,
            model_name: params.model_name,
            temperature: params.temperature,
            created_at: now_rfc3339(),
        }
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub kind: PromptKind,
    pub prompt: String,
    pub params: GenerationParams,
    /// Order stamp of the request within one `generate` call.
    pub sequence: usize,
    /// Number of records wanted from this request.
    pub batch: usize,
}

/// One record returned by a provider. Fixture records keep their own ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub source_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("fixture exhausted: {kind} has {available} record(s), request needs #{requested}")]
    Exhausted { kind: PromptKind, available: usize, requested: usize },
    #[error("provider error: {0}")]
    Fatal(String),
}

/// A chat-completion backend. Implementations must tolerate concurrent calls.
pub trait NoteProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ProviderError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub parallelism: usize,
    pub requests_per_minute: Option<f64>,
    /// Sentences requested per call for the no-label prompt.
    pub sentence_batch: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            max_attempts: 5,
            backoff_base: Duration::from_millis(500),
            parallelism: 1,
            requests_per_minute: None,
            sentence_batch: 50,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("{source} ({persisted} record(s) persisted before abort)")]
    Aborted {
        #[source]
        source: ProviderError,
        persisted: usize,
    },
    #[error("request count must be at least 1")]
    EmptyRequest,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GenerateError {
    pub fn is_auth(&self) -> bool {
        matches!(self, GenerateError::Aborted { source: ProviderError::Auth(_), .. })
    }
}

/// Receives notes in order as they become final.
pub trait NoteSink: Send {
    fn persist(&mut self, note: &RawNote) -> std::io::Result<()>;
}

impl NoteSink for Vec<RawNote> {
    fn persist(&mut self, note: &RawNote) -> std::io::Result<()> {
        self.push(note.clone());
        Ok(())
    }
}

/// Optional first line of a notes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotesHeader {
    pub format: String,
    pub prompt_kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl NotesHeader {
    pub const FORMAT: &'static str = "factorspan.raw_notes.v1";

    pub fn new(prompt_kind: PromptKind, config_hash: Option<String>) -> NotesHeader {
        NotesHeader { format: Self::FORMAT.to_string(), prompt_kind, config_hash }
    }
}

/// JSONL sink flushing after every record.
pub struct JsonlNoteWriter {
    inner: BufWriter<File>,
}

impl JsonlNoteWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(JsonlNoteWriter { inner: BufWriter::new(File::create(path)?) })
    }

    /// Like [`JsonlNoteWriter::create`], starting the file with `header`.
    pub fn with_header(path: &Path, header: &NotesHeader) -> std::io::Result<Self> {
        let mut w = Self::create(path)?;
        serde_json::to_writer(&mut w.inner, header)?;
        w.inner.write_all(b"\n")?;
        w.inner.flush()?;
        Ok(w)
    }
}

impl NoteSink for JsonlNoteWriter {
    fn persist(&mut self, note: &RawNote) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.inner, note)?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()
    }
}

/// Reads a notes file, skipping a leading [`NotesHeader`] if present.
pub fn read_notes(path: &Path) -> Result<Vec<RawNote>, Error> {
    Ok(read_notes_with_header(path)?.1)
}

pub fn read_notes_with_header(path: &Path) -> Result<(Option<NotesHeader>, Vec<RawNote>), Error> {
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut notes = Vec::new();
    let mut header = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io_at(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if notes.is_empty() && header.is_none() {
            if let Ok(h) = serde_json::from_str::<NotesHeader>(&line) {
                if h.format == NotesHeader::FORMAT {
                    header = Some(h);
                    continue;
                }
            }
        }
        notes.push(serde_json::from_str(&line).map_err(|e| Error::parse_at(path, i + 1, e))?);
    }
    Ok((header, notes))
}

fn call_with_retry(
    provider: &dyn NoteProvider,
    request: &CompletionRequest,
    opts: &GenerateOptions,
    limiter: Option<&TokenBucket>,
) -> Result<Vec<Completion>, ProviderError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        if let Some(l) = limiter {
            l.acquire();
        }
        match provider.complete(request) {
            Ok(c) => return Ok(c),
            Err(ProviderError::Transient(msg)) if attempt < opts.max_attempts => {
                let wait = opts.backoff_base * 2u32.saturating_pow(attempt - 1);
                log::warn!("request {} attempt {attempt} failed: {msg}; retrying in {wait:?}", request.sequence);
                std::thread::sleep(wait);
            }
            Err(e) => return Err(e),
        }
    }
}

struct Schedule {
    issued: usize,
    in_flight: usize,
    received: usize,
}

struct Collector<'a> {
    done: BTreeMap<usize, Vec<Completion>>,
    next_to_flush: usize,
    emitted: usize,
    target: usize,
    notes: Vec<RawNote>,
    sink: &'a mut dyn NoteSink,
}

impl Collector<'_> {
    fn flush(
        &mut self,
        kind: PromptKind,
        params: &GenerationParams,
        io_err: &mut Option<std::io::Error>,
    ) {
        while let Some(batch) = self.done.remove(&self.next_to_flush) {
            for (j, c) in batch.into_iter().enumerate() {
                if self.emitted >= self.target {
                    break;
                }
                let id = c
                    .source_id
                    .unwrap_or_else(|| format!("{}_{:05}_{:03}", kind.as_str(), self.next_to_flush, j));
                let note = RawNote {
                    id,
                    text: c.text,
                    prompt_kind: kind,
                    model_name: params.model_name.clone(),
                    temperature: params.temperature,
                    created_at: now_rfc3339(),
                };
                if let Err(e) = self.sink.persist(&note) {
                    io_err.get_or_insert(e);
                }
                self.notes.push(note);
                self.emitted += 1;
            }
            self.next_to_flush += 1;
        }
    }
}

/// Generates exactly `n` records of the template's kind.
///
/// Requests are order-stamped; the returned list and the sink both see notes
/// in request order regardless of which worker finished first.
pub fn generate(
    template: &PromptTemplate,
    n: usize,
    params: &GenerationParams,
    provider: &dyn NoteProvider,
    opts: &GenerateOptions,
    sink: &mut dyn NoteSink,
) -> Result<Vec<RawNote>, GenerateError> {
    if n == 0 {
        return Err(GenerateError::EmptyRequest);
    }
    let batch = match template.kind {
        PromptKind::NoLabelSentences => opts.sentence_batch.max(1),
        _ => 1,
    };
    let limiter = opts.requests_per_minute.map(|rpm| TokenBucket::new(rpm, 1.0));
    let collector = Mutex::new(Collector {
        done: BTreeMap::new(),
        next_to_flush: 0,
        emitted: 0,
        target: n,
        notes: Vec::with_capacity(n),
        sink,
    });
    // Requests are issued while the records already received plus the
    // capacity of requests in flight fall short of `n`; short batches cause
    // top-up requests, bounded so a provider returning nothing terminates.
    let max_requests = n.div_ceil(batch) * 4 + 4;
    let sched = Mutex::new(Schedule { issued: 0, in_flight: 0, received: 0 });
    let stop = AtomicBool::new(false);
    let failure: Mutex<Option<ProviderError>> = Mutex::new(None);
    let io_error: Mutex<Option<std::io::Error>> = Mutex::new(None);

    let worker = || loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let seq = {
            let mut st = sched.lock().unwrap();
            if st.received >= n || st.issued >= max_requests {
                return;
            }
            if st.received + st.in_flight * batch >= n {
                if st.in_flight == 0 {
                    return;
                }
                drop(st);
                std::thread::sleep(Duration::from_millis(2));
                continue;
            }
            st.issued += 1;
            st.in_flight += 1;
            st.issued - 1
        };
        let request = CompletionRequest {
            kind: template.kind,
            prompt: template.render(batch),
            params: params.clone(),
            sequence: seq,
            batch,
        };
        let result = call_with_retry(provider, &request, opts, limiter.as_ref());
        {
            let mut st = sched.lock().unwrap();
            st.in_flight -= 1;
            if let Ok(items) = &result {
                st.received += items.len();
            }
        }
        match result {
            Ok(items) => {
                let mut c = collector.lock().unwrap();
                c.done.insert(seq, items);
                let mut err = None;
                c.flush(template.kind, params, &mut err);
                if let Some(e) = err {
                    io_error.lock().unwrap().get_or_insert(e);
                    stop.store(true, Ordering::SeqCst);
                }
            }
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                stop.store(true, Ordering::SeqCst);
                return;
            }
        }
    };

    let workers = opts.parallelism.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(worker);
        }
    });

    let collector = collector.into_inner().unwrap();
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(GenerateError::Io(e));
    }
    if let Some(source) = failure.into_inner().unwrap() {
        return Err(GenerateError::Aborted { source, persisted: collector.notes.len() });
    }
    if collector.notes.len() < n {
        return Err(GenerateError::Aborted {
            source: ProviderError::Fatal(format!("provider returned only {} of {n} records", collector.notes.len())),
            persisted: collector.notes.len(),
        });
    }
    Ok(collector.notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct Flaky {
        failures_left: AtomicU32,
        calls: AtomicU32,
    }

    impl NoteProvider for Flaky {
        fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Err(ProviderError::Transient("503".into()));
            }
            Ok((0..request.batch)
                .map(|i| Completion { source_id: None, text: format!("note {} {}", request.sequence, i) })
                .collect())
        }

        fn name(&self) -> &str {
            "flaky"
        }
    }

    fn fast_opts() -> GenerateOptions {
        GenerateOptions { backoff_base: Duration::from_millis(1), ..GenerateOptions::default() }
    }

    #[test]
    fn prompts_match_published_wording() {
        let std = PromptTemplate::for_kind(PromptKind::Standard);
        assert!(std.text.starts_with("Create a narrative psychiatric clinical note (about 500 words) and annotate sentences with\n"));
        assert!(std.text.trim_end().ends_with("Do not annotate the plan."));
        let neg = PromptTemplate::for_kind(PromptKind::NegativeOnly);
        assert!(neg.text.contains("annotate sentences with negative examples of the following factors"));
        let nl = PromptTemplate::for_kind(PromptKind::NoLabelSentences);
        assert!(nl.render(50).starts_with("Write 50 different sentences"));
        for f in crate::schema::Factor::ALL {
            assert!(nl.text.contains(&f.name().replace('_', " ")), "{f} missing from no-label prompt");
        }
    }

    #[test]
    fn default_params() {
        let p = GenerationParams::default();
        assert_eq!(p.temperature, 1.2);
    }

    #[test]
    fn retries_transient_failures() {
        let p = Flaky { failures_left: AtomicU32::new(3), calls: AtomicU32::new(0) };
        let mut sink = Vec::new();
        let notes = generate(
            &PromptTemplate::for_kind(PromptKind::Standard),
            2,
            &GenerationParams::default(),
            &p,
            &fast_opts(),
            &mut sink,
        )
        .unwrap();
        assert_eq!(notes.len(), 2);
        assert_eq!(sink.len(), 2);
        assert_eq!(p.calls.load(Ordering::SeqCst), 5);
        assert_eq!(notes[0].prompt_kind, PromptKind::Standard);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let p = Flaky { failures_left: AtomicU32::new(100), calls: AtomicU32::new(0) };
        let err = generate(
            &PromptTemplate::for_kind(PromptKind::Standard),
            1,
            &GenerationParams::default(),
            &p,
            &fast_opts(),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert!(matches!(err, GenerateError::Aborted { persisted: 0, .. }));
        assert_eq!(p.calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn sentence_batches_are_split_into_records() {
        let p = Flaky { failures_left: AtomicU32::new(0), calls: AtomicU32::new(0) };
        let opts = GenerateOptions { sentence_batch: 4, parallelism: 3, ..fast_opts() };
        let notes = generate(
            &PromptTemplate::for_kind(PromptKind::NoLabelSentences),
            10,
            &GenerationParams::default(),
            &p,
            &opts,
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(notes.len(), 10);
        assert_eq!(notes[0].text, "note 0 0");
        assert_eq!(notes[4].text, "note 1 0");
        assert_eq!(notes[9].text, "note 2 1");
    }

    #[test]
    fn parallel_generation_keeps_request_order() {
        let p = Flaky { failures_left: AtomicU32::new(0), calls: AtomicU32::new(0) };
        let opts = GenerateOptions { parallelism: 4, ..fast_opts() };
        let notes = generate(
            &PromptTemplate::for_kind(PromptKind::Standard),
            20,
            &GenerationParams::default(),
            &p,
            &opts,
            &mut Vec::new(),
        )
        .unwrap();
        let texts: Vec<String> = notes.iter().map(|n| n.text.clone()).collect();
        let expected: Vec<String> = (0..20).map(|i| format!("note {i} 0")).collect();
        assert_eq!(texts, expected);
    }

    #[test]
    fn header_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.jsonl");
        let header = NotesHeader::new(PromptKind::NegativeOnly, Some("abc".into()));
        let mut w = JsonlNoteWriter::with_header(&path, &header).unwrap();
        let note = RawNote::new("x", PromptKind::NegativeOnly, "He denies intent.");
        w.persist(&note).unwrap();
        drop(w);
        let (h, notes) = read_notes_with_header(&path).unwrap();
        assert_eq!(h, Some(header));
        assert_eq!(notes, vec![note]);
    }
}
