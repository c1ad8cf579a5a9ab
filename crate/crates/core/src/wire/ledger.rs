//! Query ledger: budget accounting plus a content-addressed response cache.
//!
//! When backed by a file, every successful dispatch is appended as one JSON
//! line and flushed before the response is handed back, so a crashed or
//! interrupted run can resume without re-querying. Dispatch counters are
//! rebuilt from the records on open.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub endpoint: String,
    pub request_hash: String,
    pub request: Value,
    pub response: Value,
    pub ts: u64,
}

#[derive(Debug, Default)]
struct State {
    dispatched: BTreeMap<String, u64>,
    cache: HashMap<String, Value>,
    queries: u64,
    cache_hits: u64,
    sink: Option<BufWriter<File>>,
}

#[derive(Debug)]
pub struct Ledger {
    budget: Option<u64>,
    path: Option<PathBuf>,
    state: Mutex<State>,
}

/// Point-in-time view of the ledger counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub budget: Option<u64>,
    pub dispatched: BTreeMap<String, u64>,
    pub dispatched_total: u64,
    pub queries: u64,
    pub cache_hits: u64,
    pub cached_entries: usize,
}

impl Ledger {
    pub fn in_memory(budget: Option<u64>) -> Self {
        Self {
            budget,
            path: None,
            state: Mutex::new(State::default()),
        }
    }

    /// Opens (or creates) an append-only cache file and replays its records.
    pub fn open(path: impl AsRef<Path>, budget: Option<u64>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut state = State::default();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        *state.dispatched.entry(rec.endpoint).or_default() += 1;
                        state.cache.insert(rec.request_hash, rec.response);
                    }
                    // A torn trailing write from an interrupted run.
                    Err(e) => warn!(line = lineno + 1, error = %e, "skipping unreadable ledger record"),
                }
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        state.sink = Some(BufWriter::new(file));
        Ok(Self {
            budget,
            path: Some(path),
            state: Mutex::new(state),
        })
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Counts one logical query and returns the cached response, if any.
    pub fn lookup(&self, key: &str) -> Option<Value> {
        let mut st = self.state.lock().expect("ledger poisoned");
        st.queries += 1;
        let hit = st.cache.get(key).cloned();
        if hit.is_some() {
            st.cache_hits += 1;
        }
        hit
    }

    /// Reserves one dispatch against the budget. Fails without side effects
    /// once the budget is spent.
    pub fn reserve(&self, endpoint: &str) -> Result<()> {
        let mut st = self.state.lock().expect("ledger poisoned");
        let total: u64 = st.dispatched.values().sum();
        if let Some(budget) = self.budget {
            if total >= budget {
                return Err(Error::BudgetExhausted {
                    budget,
                    dispatched: total,
                });
            }
        }
        *st.dispatched.entry(endpoint.to_string()).or_default() += 1;
        Ok(())
    }

    /// Stores a validated response and persists it when file-backed.
    pub fn record(&self, endpoint: &str, key: String, request: &Value, response: &Value) -> Result<()> {
        let mut st = self.state.lock().expect("ledger poisoned");
        if let Some(sink) = st.sink.as_mut() {
            let rec = CacheRecord {
                endpoint: endpoint.to_string(),
                request_hash: key.clone(),
                request: request.clone(),
                response: response.clone(),
                ts: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            serde_json::to_writer(&mut *sink, &rec)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        st.cache.insert(key, response.clone());
        Ok(())
    }

    pub fn dispatched_total(&self) -> u64 {
        self.state.lock().expect("ledger poisoned").dispatched.values().sum()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let st = self.state.lock().expect("ledger poisoned");
        LedgerSnapshot {
            budget: self.budget,
            dispatched: st.dispatched.clone(),
            dispatched_total: st.dispatched.values().sum(),
            queries: st.queries,
            cache_hits: st.cache_hits,
            cached_entries: st.cache.len(),
        }
    }
}
