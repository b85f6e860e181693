//! Interaction events, item catalogs and per-user sequences.
//!
//! The canonical on-disk format is a UTF-8 CSV with header
//! `user_id,item_id,timestamp,event_type`, where `timestamp` is integer epoch
//! seconds and `event_type` is one of `like`, `dislike`, `play`, `skip`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default maximum length of a model input sequence.
pub const DEFAULT_MAX_LEN: usize = 150;

pub const CSV_HEADER: [&str; 4] = ["user_id", "item_id", "timestamp", "event_type"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub String);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_owned())
    }
}

impl From<&str> for ItemId {
    fn from(s: &str) -> Self {
        ItemId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    Like,
    Dislike,
    Play,
    Skip,
}

impl EventType {
    pub const ALL: [EventType; 4] = [EventType::Like, EventType::Dislike, EventType::Play, EventType::Skip];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Like => "like",
            EventType::Dislike => "dislike",
            EventType::Play => "play",
            EventType::Skip => "skip",
        }
    }
}

impl FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "like" => Ok(EventType::Like),
            "dislike" => Ok(EventType::Dislike),
            "play" => Ok(EventType::Play),
            "skip" => Ok(EventType::Skip),
            other => Err(format!("unknown event type {other:?}")),
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An event as read from a file, before items are resolved against a catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawEvent {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: u64,
    pub kind: EventType,
}

/// One timestamped interaction with its item resolved to a catalog index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub user: UserId,
    pub item: usize,
    pub timestamp: u64,
    pub kind: EventType,
}

/// Dense mapping between raw item identifiers and indices `0..len()`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Catalog {
    ids: Vec<ItemId>,
    index: HashMap<ItemId, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a catalog from identifiers in index order. Duplicates are rejected.
    pub fn from_ids(ids: impl IntoIterator<Item = ItemId>) -> Result<Self> {
        let mut catalog = Catalog::new();
        for id in ids {
            if catalog.index.contains_key(&id) {
                return Err(Error::invalid(format!("duplicate catalog item {id}")));
            }
            catalog.insert(id);
        }
        Ok(catalog)
    }

    /// Returns the index of `id`, assigning the next free index if unseen.
    pub fn insert(&mut self, id: ItemId) -> usize {
        if let Some(&idx) = self.index.get(&id) {
            return idx;
        }
        let idx = self.ids.len();
        self.index.insert(id.clone(), idx);
        self.ids.push(id);
        idx
    }

    pub fn index_of(&self, id: &ItemId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> Option<&ItemId> {
        self.ids.get(idx)
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A time-ordered, immutable collection of events over a catalog.
///
/// Events are sorted by timestamp; equal timestamps keep their input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
    catalog: Catalog,
    by_user: BTreeMap<UserId, Vec<usize>>,
}

impl EventLog {
    /// Sorts `raw` by timestamp (stable) and assigns catalog indices in order
    /// of first appearance in the sorted stream.
    pub fn from_raw(raw: Vec<RawEvent>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyLog);
        }
        let raw = stable_sort(raw);
        let mut catalog = Catalog::new();
        let events = raw
            .into_iter()
            .map(|r| Event { item: catalog.insert(r.item), user: r.user, timestamp: r.timestamp, kind: r.kind })
            .collect();
        Ok(Self::assemble(events, catalog))
    }

    /// Like [`EventLog::from_raw`] but resolves items against a fixed catalog.
    /// An empty `raw` yields an empty log.
    pub fn from_raw_with_catalog(raw: Vec<RawEvent>, catalog: Catalog) -> Result<Self> {
        let raw = stable_sort(raw);
        let mut events = Vec::with_capacity(raw.len());
        for r in raw {
            let item = catalog
                .index_of(&r.item)
                .ok_or_else(|| Error::invalid(format!("item {} not in catalog", r.item)))?;
            events.push(Event { user: r.user, item, timestamp: r.timestamp, kind: r.kind });
        }
        Ok(Self::assemble(events, catalog))
    }

    /// Builds a log from events already indexed against `catalog`.
    pub fn from_events(events: Vec<Event>, catalog: Catalog) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| e.item >= catalog.len()) {
            return Err(Error::invalid(format!("item index {} outside catalog of size {}", e.item, catalog.len())));
        }
        let mut events = events;
        events.sort_by_key(|e| e.timestamp);
        Ok(Self::assemble(events, catalog))
    }

    fn assemble(events: Vec<Event>, catalog: Catalog) -> Self {
        let mut by_user: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
        for (pos, e) in events.iter().enumerate() {
            by_user.entry(e.user.clone()).or_default().push(pos);
        }
        EventLog { events, catalog, by_user }
    }

    /// Keeps the events matching `keep`; the catalog is unchanged.
    pub fn filter(&self, mut keep: impl FnMut(&Event) -> bool) -> EventLog {
        let events = self.events.iter().filter(|e| keep(e)).cloned().collect();
        Self::assemble(events, self.catalog.clone())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.by_user.keys()
    }

    pub fn user_count(&self) -> usize {
        self.by_user.len()
    }

    /// The user's events in chronological order.
    pub fn user_events<'a>(&'a self, user: &UserId) -> impl Iterator<Item = &'a Event> + 'a {
        self.by_user.get(user).into_iter().flatten().map(move |&p| &self.events[p])
    }

    /// The user's complete chronological item list (not truncated).
    pub fn user_items(&self, user: &UserId) -> Vec<usize> {
        self.user_events(user).map(|e| e.item).collect()
    }

    /// Global interaction count per catalog item.
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.catalog.len()];
        for e in &self.events {
            counts[e.item] += 1;
        }
        counts
    }

    /// Writes the log in the canonical CSV format.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for e in &self.events {
            let item = &self.catalog.ids[e.item];
            w.write_record([e.user.0.as_str(), item.0.as_str(), &e.timestamp.to_string(), e.kind.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

fn stable_sort(mut raw: Vec<RawEvent>) -> Vec<RawEvent> {
    raw.sort_by_key(|r| r.timestamp);
    raw
}

/// Parses canonical event CSV rows without building a log.
pub fn read_raw_events<R: Read>(source: R) -> Result<Vec<RawEvent>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut records = reader.records();

    match records.next() {
        None => return Ok(Vec::new()),
        Some(header) => {
            let header = header.map_err(|e| csv_parse_error(&e, 1))?;
            let fields: Vec<&str> = header.iter().map(str::trim).collect();
            if fields != CSV_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header {:?}, found {:?}", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
                });
            }
        }
    }

    let mut out = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_parse_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::Parse { line, message: format!("expected 4 fields, found {}", record.len()) });
        }
        let timestamp = record[2]
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Parse { line, message: format!("timestamp {:?} is not a nonnegative integer", &record[2]) })?;
        let kind = record[3].trim().parse::<EventType>().map_err(|message| Error::Parse { line, message })?;
        out.push(RawEvent { user: UserId(record[0].to_owned()), item: ItemId(record[1].to_owned()), timestamp, kind });
    }
    Ok(out)
}

fn csv_parse_error(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse { line, message: e.to_string() }
}

/// Reads a canonical event CSV into a sorted [`EventLog`].
pub fn ingest_events<R: Read>(source: R) -> Result<EventLog> {
    EventLog::from_raw(read_raw_events(source)?)
}

pub fn ingest_path(path: impl AsRef<Path>) -> Result<EventLog> {
    ingest_events(File::open(path)?)
}

/// A user's most recent items, oldest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSequence {
    pub user: UserId,
    pub items: Vec<usize>,
}

impl UserSequence {
    /// Keeps only the last `l_max` items of `items`.
    pub fn truncated(user: UserId, items: &[usize], l_max: usize) -> Self {
        let start = items.len().saturating_sub(l_max);
        UserSequence { user, items: items[start..].to_vec() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Per-user item sequences in event order, truncated to the last `l_max` items.
pub fn user_sequences(log: &EventLog, l_max: usize) -> Result<BTreeMap<UserId, UserSequence>> {
    if l_max == 0 {
        return Err(Error::invalid("l_max must be at least 1"));
    }
    Ok(log
        .users()
        .map(|u| (u.clone(), UserSequence::truncated(u.clone(), &log.user_items(u), l_max)))
        .collect())
}
