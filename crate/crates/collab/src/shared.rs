use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use layerloom_core::ir::IrModel;
use serde::{Deserialize, Serialize};

use crate::event::{apply, EventDraft, EventKind, Payload, UpdateEvent};
use crate::CollabError;

/// A full copy of the model is cached after this many logged events.
pub const CHECKPOINT_INTERVAL: u64 = 500;

/// An accepted but not yet committed edit; see [`SharedModel::prepare`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub event: UpdateEvent,
    /// The model after the edit; `None` for highlights.
    next: Option<IrModel>,
    version: u64,
}

impl Prepared {
    /// Whether committing will add a log entry.
    pub fn is_logged(&self) -> bool {
        self.next.is_some()
    }

    pub fn next_model(&self) -> Option<&IrModel> {
        self.next.as_ref()
    }
}

/// The inputs of [`SharedModel::replay`], detached from the model so the
/// fold can run without holding whatever guards it.
#[derive(Debug, Clone)]
pub struct ReplayPlan {
    base: Arc<IrModel>,
    events: Vec<Payload>,
}

impl ReplayPlan {
    pub fn run(self) -> Result<IrModel, CollabError> {
        let mut model = Arc::unwrap_or_clone(self.base);
        for payload in &self.events {
            apply(&mut model, payload)?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub event_id: u64,
    pub kind: EventKind,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub summary: String,
}

/// The authoritative copy of one model together with the log that
/// produced it. Event `n` in the log has `event_id == n` (1-based), so
/// the version is the log length.
#[derive(Debug, Clone)]
pub struct SharedModel {
    initial: Arc<IrModel>,
    current: IrModel,
    log: Vec<UpdateEvent>,
    checkpoints: BTreeMap<u64, Arc<IrModel>>,
}

impl SharedModel {
    pub fn new(initial: IrModel) -> Self {
        SharedModel {
            current: initial.clone(),
            initial: Arc::new(initial),
            log: Vec::new(),
            checkpoints: BTreeMap::new(),
        }
    }

    /// Rebuilds from persisted parts, starting at the newest checkpoint
    /// that the log reaches.
    pub fn restore(
        initial: IrModel,
        log: Vec<UpdateEvent>,
        checkpoints: BTreeMap<u64, IrModel>,
    ) -> Result<Self, CollabError> {
        for (i, event) in log.iter().enumerate() {
            if event.event_id != Some(i as u64 + 1) {
                return Err(CollabError::InvalidPayload(format!(
                    "log entry {} carries event id {:?}",
                    i + 1,
                    event.event_id
                )));
            }
            if let Payload::Revert { to_version } = event.payload {
                if to_version > i as u64 {
                    return Err(CollabError::InvalidPayload(format!(
                        "event {} reverts forward to {to_version}",
                        i + 1
                    )));
                }
            }
        }
        let version = log.len() as u64;
        let checkpoints =
            checkpoints.into_iter().filter(|(v, _)| *v <= version).map(|(v, m)| (v, Arc::new(m))).collect();
        let mut shared = SharedModel { current: initial.clone(), initial: Arc::new(initial), log, checkpoints };
        shared.current = shared.replay(version)?;
        Ok(shared)
    }

    pub fn version(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn current(&self) -> &IrModel {
        &self.current
    }

    pub fn initial(&self) -> &IrModel {
        &self.initial
    }

    pub fn log(&self) -> &[UpdateEvent] {
        &self.log
    }

    pub fn checkpoints(&self) -> &BTreeMap<u64, Arc<IrModel>> {
        &self.checkpoints
    }

    /// Validates and applies a client edit. Mutating events are logged
    /// with the next version; highlights are checked against the current
    /// model and returned without an id. The model is untouched on error.
    pub fn submit(&mut self, draft: EventDraft, now: DateTime<Utc>) -> Result<UpdateEvent, CollabError> {
        let prepared = self.prepare(draft, now)?;
        Ok(self.commit(prepared))
    }

    /// Appends a revert event that makes the current model equal to
    /// `replay(to_version)`.
    pub fn revert(&mut self, to_version: u64, author: String, now: DateTime<Utc>) -> Result<UpdateEvent, CollabError> {
        let base_version = self.version();
        self.submit(EventDraft { payload: Payload::Revert { to_version }, author, base_version }, now)
    }

    /// Computes the outcome of an edit without changing anything, so the
    /// caller can persist the event before [`commit`](Self::commit).
    pub fn prepare(&self, draft: EventDraft, now: DateTime<Utc>) -> Result<Prepared, CollabError> {
        let EventDraft { payload, author, base_version } = draft;
        let (event_id, next) = match &payload {
            Payload::Revert { to_version } => {
                let version = self.version();
                if *to_version >= version {
                    return Err(CollabError::VersionOutOfRange { requested: *to_version, current: version });
                }
                (Some(version + 1), Some(self.replay(*to_version)?))
            }
            p if !p.is_mutating() => {
                apply(&mut self.current.clone(), p)?;
                (None, None)
            }
            p => {
                let mut next = self.current.clone();
                apply(&mut next, p)?;
                (Some(self.version() + 1), Some(next))
            }
        };
        let event = UpdateEvent { event_id, payload, author, base_version, timestamp: now };
        Ok(Prepared { event, next, version: self.version() })
    }

    /// Applies a prepared edit.
    ///
    /// # Panics
    /// If another edit was committed since `prepared` was computed.
    pub fn commit(&mut self, prepared: Prepared) -> UpdateEvent {
        assert_eq!(prepared.version, self.version(), "prepared against an older version");
        let Some(next) = prepared.next else { return prepared.event };
        self.log.push(prepared.event.clone());
        self.current = next;
        if self.version() % CHECKPOINT_INTERVAL == 0 {
            self.checkpoints.insert(self.version(), Arc::new(self.current.clone()));
        }
        debug_assert_eq!(self.replay(self.version()).as_ref(), Ok(&self.current), "log no longer replays to current");
        prepared.event
    }

    /// The model as it was right after event `upto_version`.
    pub fn replay(&self, upto_version: u64) -> Result<IrModel, CollabError> {
        self.replay_plan(upto_version)?.run()
    }

    /// The base model and events that [`replay`](Self::replay) folds.
    pub fn replay_plan(&self, upto_version: u64) -> Result<ReplayPlan, CollabError> {
        let version = self.version();
        if upto_version > version {
            return Err(CollabError::VersionOutOfRange { requested: upto_version, current: version });
        }
        // Walk back from the target: the newest revert (or checkpoint) in
        // range fixes the state, so only the events after it need folding.
        let mut segments = Vec::new();
        let mut target = upto_version;
        let base = loop {
            let (base, from) = match self.checkpoints.range(..=target).next_back() {
                Some((&v, m)) => (Some(m), v),
                None => (None, 0),
            };
            let last_revert = self.log[from as usize..target as usize]
                .iter()
                .rposition(|e| matches!(e.payload, Payload::Revert { .. }))
                .map(|i| i + from as usize);
            match last_revert {
                Some(i) => {
                    segments.push(i + 1..target as usize);
                    let Payload::Revert { to_version } = self.log[i].payload else { unreachable!() };
                    target = to_version;
                }
                None => {
                    segments.push(from as usize..target as usize);
                    break base.unwrap_or(&self.initial).clone();
                }
            }
        };
        let events = segments.into_iter().rev().flat_map(|r| &self.log[r]).map(|e| e.payload.clone()).collect();
        Ok(ReplayPlan { base, events })
    }

    pub fn history(&self) -> Vec<HistoryEntry> {
        self.log
            .iter()
            .map(|e| HistoryEntry {
                event_id: e.event_id.unwrap_or_default(),
                kind: e.payload.kind(),
                author: e.author.clone(),
                timestamp: e.timestamp,
                summary: e.payload.summary(),
            })
            .collect()
    }
}
