//! Append-only decision log and the state replayed from it.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use mcf_core::jsonl::read_jsonl_lenient;
use serde::{Deserialize, Serialize};

use crate::ReviewError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub chart_id: String,
    pub code: String,
    pub reviewer_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub decided_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl ReviewDecision {
    pub fn validate(&self) -> Result<(), ReviewError> {
        if self.verdict == Verdict::Reject
            && self.reason.as_deref().is_none_or(|r| r.trim().is_empty())
        {
            return Err(ReviewError::Invalid("a rejection needs a reason".into()));
        }
        if self.reviewer_id.trim().is_empty() {
            return Err(ReviewError::Invalid("reviewer_id must not be empty".into()));
        }
        Ok(())
    }
}

type DecisionKey = (String, String, String);

/// Latest decision per (chart, code, reviewer), rebuilt by replaying the log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReviewState {
    latest: BTreeMap<DecisionKey, (usize, ReviewDecision)>,
    idempotency: HashMap<String, usize>,
    events: usize,
}

impl ReviewState {
    pub fn replay(events: &[ReviewDecision]) -> Self {
        let mut s = Self::default();
        for e in events {
            s.apply(e.clone());
        }
        s
    }

    /// Later timestamps win; equal timestamps fall back to log order.
    pub fn apply(&mut self, d: ReviewDecision) {
        let seq = self.events;
        self.events += 1;
        if let Some(k) = &d.idempotency_key {
            self.idempotency.insert(k.clone(), seq);
        }
        let key = (d.chart_id.clone(), d.code.clone(), d.reviewer_id.clone());
        match self.latest.get(&key) {
            Some((_, cur)) if cur.decided_at > d.decided_at => {}
            _ => {
                self.latest.insert(key, (seq, d));
            }
        }
    }

    pub fn event_count(&self) -> usize {
        self.events
    }

    pub fn seen_key(&self, key: &str) -> bool {
        self.idempotency.contains_key(key)
    }

    /// Latest decision by each reviewer for one label.
    pub fn decisions_for<'a>(
        &'a self,
        chart_id: &'a str,
        code: &'a str,
    ) -> impl Iterator<Item = &'a ReviewDecision> + 'a {
        self.latest
            .range((chart_id.to_string(), code.to_string(), String::new())..)
            .take_while(move |((c, k, _), _)| c == chart_id && k == code)
            .map(|(_, (_, d))| d)
    }

    pub fn decisions(&self) -> impl Iterator<Item = &ReviewDecision> {
        self.latest.values().map(|(_, d)| d)
    }
}

/// JSON-lines event log; the only writer is the owning service.
pub struct DecisionStore {
    path: PathBuf,
    write_lock: Mutex<()>,
}

impl DecisionStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<ReviewDecision>), ReviewError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(ReviewError::io(dir))?;
        }
        let events = recover(&path)?;
        Ok((
            Self {
                path,
                write_lock: Mutex::new(()),
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, d: &ReviewDecision) -> Result<(), ReviewError> {
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(ReviewError::io(&self.path))?;
        let mut line = serde_json::to_string(d).expect("decision serializes");
        line.push('\n');
        f.write_all(line.as_bytes())
            .map_err(ReviewError::io(&self.path))?;
        f.sync_data().map_err(ReviewError::io(&self.path))?;
        Ok(())
    }

    pub fn read_all(&self) -> Result<Vec<ReviewDecision>, ReviewError> {
        Ok(read_jsonl_lenient(&self.path)?)
    }
}

/// Loads the log and cuts off a torn final record left by a crash, so the
/// next append starts on a clean line.
fn recover(path: &Path) -> Result<Vec<ReviewDecision>, ReviewError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            std::fs::File::create(path).map_err(ReviewError::io(path))?;
            return Ok(Vec::new());
        }
        Err(e) => return Err(ReviewError::io(path)(e)),
    };
    let mut events = Vec::new();
    let mut good = 0;
    let segments: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if line.trim().is_empty() {
            good += line.len();
            continue;
        }
        match serde_json::from_str::<ReviewDecision>(line.trim_end()) {
            Ok(d) if line.ends_with('\n') => events.push(d),
            _ if last => break,
            Ok(_) => unreachable!("only the final segment can lack a newline"),
            Err(e) => {
                return Err(ReviewError::Invalid(format!(
                    "{}:{}: corrupt decision record: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
        good += line.len();
    }
    if good < text.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(ReviewError::io(path))?;
        f.set_len(good as u64).map_err(ReviewError::io(path))?;
    }
    Ok(events)
}
