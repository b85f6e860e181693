//! Dataset preparation: popularity-based item sampling, the global temporal
//! split and graded relevance labels.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{read_raw_events, Catalog, Event, EventLog, EventType, ItemId, UserId};
use crate::error::{Error, Result};

/// Graded relevance per item index, each label in `{0, 1, 2}`.
pub type Labels = BTreeMap<usize, u8>;

/// Graded relevance per user.
pub type LabeledGroundTruth = BTreeMap<UserId, Labels>;

fn raw_label(kind: EventType) -> i8 {
    match kind {
        EventType::Like => 2,
        EventType::Play => 1,
        EventType::Skip => -1,
        EventType::Dislike => -2,
    }
}

/// Graded labels for one user's chronological events inside a window.
///
/// The first interaction sets the label. Likes and dislikes always overwrite
/// it; plays and skips overwrite it only while the item has not been liked or
/// disliked in the window. Negative labels become 0.
pub fn assign_labels(events: impl IntoIterator<Item = (usize, EventType)>) -> Labels {
    let mut state: HashMap<usize, (i8, bool)> = HashMap::new();
    for (item, kind) in events {
        let explicit = matches!(kind, EventType::Like | EventType::Dislike);
        match state.get_mut(&item) {
            None => {
                state.insert(item, (raw_label(kind), explicit));
            }
            Some((label, judged)) => {
                if explicit || !*judged {
                    *label = raw_label(kind);
                }
                *judged |= explicit;
            }
        }
    }
    state.into_iter().map(|(item, (label, _))| (item, label.max(0) as u8)).collect()
}

/// Selects `n` distinct items with probability proportional to their global
/// interaction counts, without replacement, and keeps only their events.
///
/// The returned log is re-indexed over a catalog of exactly `n` items, in
/// order of first appearance.
pub fn popularity_sample(log: &EventLog, n: usize, seed: u64) -> Result<(EventLog, Catalog)> {
    let counts = log.item_counts();
    let present: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
    if n == 0 || n > present.len() {
        return Err(Error::invalid(format!("cannot sample {n} items from {} distinct items", present.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<usize> = present
        .choose_multiple_weighted(&mut rng, n, |&i| counts[i] as f64)
        .map_err(|e| Error::invalid(format!("weighted sampling failed: {e}")))?
        .copied()
        .collect();

    let mut catalog = Catalog::new();
    let mut events = Vec::new();
    for e in log.events().iter().filter(|e| chosen.contains(&e.item)) {
        let id = log.catalog().id(e.item).expect("indexed item").clone();
        events.push(Event { item: catalog.insert(id), ..e.clone() });
    }
    let sampled = EventLog::from_events(events, catalog.clone())?;
    Ok((sampled, catalog))
}

/// Train / validation / test partition of a log around global time borders.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    /// Events at or before the validation border for validation users, and at
    /// or before the test border for everyone else.
    pub train: EventLog,
    /// Validation users' events in `(val_border, test_border]`.
    pub validation_events: EventLog,
    /// Events strictly after the test border.
    pub test_events: EventLog,
    pub validation: LabeledGroundTruth,
    pub test: LabeledGroundTruth,
    pub test_border: u64,
    /// `None` when no validation users were requested.
    pub val_border: Option<u64>,
    pub val_users: BTreeSet<UserId>,
}

impl DatasetSplit {
    pub fn catalog(&self) -> &Catalog {
        self.train.catalog()
    }

    /// Everything the user did up to the test border, in order. Used as the
    /// scoring input when evaluating on the test partition.
    pub fn history_items(&self, user: &UserId) -> Vec<usize> {
        let mut items = self.train.user_items(user);
        items.extend(self.validation_events.user_items(user));
        items
    }

    /// Writes `catalog.csv`, `train.csv`, `validation.csv`, `test.csv` and
    /// `manifest.csv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;

        let mut w = csv::Writer::from_path(dir.join("catalog.csv"))?;
        w.write_record(["item_id"])?;
        for id in self.catalog().ids() {
            w.write_record([id.0.as_str()])?;
        }
        w.flush()?;

        self.train.write_csv_path(dir.join("train.csv"))?;
        self.validation_events.write_csv_path(dir.join("validation.csv"))?;
        self.test_events.write_csv_path(dir.join("test.csv"))?;

        let mut rows: BTreeMap<&UserId, Vec<(&str, u64)>> = BTreeMap::new();
        for user in self.train.users() {
            let border = match (self.val_users.contains(user), self.val_border) {
                (true, Some(vb)) => vb,
                _ => self.test_border,
            };
            rows.entry(user).or_default().push(("train", border));
        }
        if let Some(vb) = self.val_border {
            for user in &self.val_users {
                rows.entry(user).or_default().push(("validation", vb));
            }
        }
        for user in self.test_events.users() {
            rows.entry(user).or_default().push(("test", self.test_border));
        }
        let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
        w.write_record(["user_id", "partition", "border_timestamp"])?;
        for (user, parts) in rows {
            for (part, border) in parts {
                w.write_record([user.0.as_str(), part, &border.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a split written by [`DatasetSplit::write_dir`].
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let open = |name: &str| -> Result<File> {
            let path = dir.join(name);
            File::open(&path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
        };

        let mut reader = csv::Reader::from_reader(open("catalog.csv")?);
        let mut ids = Vec::new();
        for rec in reader.records() {
            ids.push(ItemId(rec?[0].to_owned()));
        }
        let catalog = Catalog::from_ids(ids)?;

        let train = EventLog::from_raw_with_catalog(read_raw_events(open("train.csv")?)?, catalog.clone())?;
        let validation_events =
            EventLog::from_raw_with_catalog(read_raw_events(open("validation.csv")?)?, catalog.clone())?;
        let test_events = EventLog::from_raw_with_catalog(read_raw_events(open("test.csv")?)?, catalog)?;

        let mut test_border = None;
        let mut val_border = None;
        let mut val_users = BTreeSet::new();
        let mut reader = csv::Reader::from_reader(open("manifest.csv")?);
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let border: u64 = rec[2]
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("bad border timestamp {:?}", &rec[2]) })?;
            match &rec[1] {
                "train" => {}
                "validation" => {
                    val_border = Some(border);
                    val_users.insert(UserId(rec[0].to_owned()));
                }
                "test" => test_border = Some(border),
                other => return Err(Error::Parse { line, message: format!("unknown partition {other:?}") }),
            }
        }
        let test_border = test_border.ok_or_else(|| Error::Split("manifest has no test partition".into()))?;

        Ok(DatasetSplit {
            validation: labels_by_user(&validation_events),
            test: labels_by_user(&test_events),
            train,
            validation_events,
            test_events,
            test_border,
            val_border,
            val_users,
        })
    }
}

fn labels_by_user(log: &EventLog) -> LabeledGroundTruth {
    log.users()
        .map(|u| (u.clone(), assign_labels(log.user_events(u).map(|e| (e.item, e.kind)))))
        .collect()
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {f}")))
    }
}

/// Timestamp of the last event kept out of the held-out tail.
fn border_timestamp(events: &[&Event], fraction: f64) -> Option<u64> {
    let keep = ((1.0 - fraction) * events.len() as f64).floor() as usize;
    keep.checked_sub(1).map(|i| events[i].timestamp)
}

/// Global temporal split.
///
/// The test border is the timestamp of the event at sorted position
/// `floor((1 − test_fraction)·|events|) − 1`; everything strictly later is
/// test. The validation border is computed the same way over the pre-test
/// events, and only the `val_user_count` randomly chosen validation users have
/// their `(val_border, test_border]` events held out.
pub fn global_temporal_split(
    log: &EventLog,
    test_fraction: f64,
    val_fraction: f64,
    val_user_count: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    check_fraction("test_fraction", test_fraction)?;
    check_fraction("val_fraction", val_fraction)?;
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if val_user_count > log.user_count() {
        return Err(Error::invalid(format!(
            "requested {val_user_count} validation users but the log has {}",
            log.user_count()
        )));
    }

    let all: Vec<&Event> = log.events().iter().collect();
    let test_border =
        border_timestamp(&all, test_fraction).ok_or_else(|| Error::Split("no events before the test border".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let val_users: BTreeSet<UserId> =
        log.users().cloned().choose_multiple(&mut rng, val_user_count).into_iter().collect();

    let pre_test: Vec<&Event> = log.events().iter().filter(|e| e.timestamp <= test_border).collect();
    let val_border = if val_users.is_empty() {
        None
    } else {
        Some(
            border_timestamp(&pre_test, val_fraction)
                .ok_or_else(|| Error::Split("no events before the validation border".into()))?,
        )
    };

    let train = log.filter(|e| match val_border {
        Some(vb) if val_users.contains(&e.user) => e.timestamp <= vb,
        _ => e.timestamp <= test_border,
    });
    let validation_events = match val_border {
        Some(vb) => log.filter(|e| val_users.contains(&e.user) && e.timestamp > vb && e.timestamp <= test_border),
        None => log.filter(|_| false),
    };
    let test_events = log.filter(|e| e.timestamp > test_border);

    if train.is_empty() {
        return Err(Error::Split("train partition is empty".into()));
    }
    if test_events.is_empty() {
        return Err(Error::Split(format!("no events strictly after the test border {test_border}")));
    }

    Ok(DatasetSplit {
        validation: labels_by_user(&validation_events),
        test: labels_by_user(&test_events),
        train,
        validation_events,
        test_events,
        test_border,
        val_border,
        val_users,
    })
}
