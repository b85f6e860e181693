//! Seeded synthetic logs with repeated consumption.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EventLog, EventType, ItemId, RawEvent, UserId};
use crate::error::{Error, Result};

const START_TIMESTAMP: u64 = 1_600_000_000;
const MAX_GAP: u64 = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub events_per_user: usize,
    /// Probability that an event reuses one of the user's favorites.
    pub rho: f64,
    pub favorites_per_user: usize,
    /// Zipf exponent of the global item distribution.
    pub global_skew: f64,
    /// Probabilities of like, dislike, play and skip, in that order.
    pub event_type_mix: [f64; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 1000,
            events_per_user: 400,
            rho: 0.8,
            favorites_per_user: 20,
            global_skew: 1.0,
            event_type_mix: [0.1, 0.05, 0.75, 0.1],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("users", self.users), ("items", self.items), ("events_per_user", self.events_per_user)] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.favorites_per_user == 0 || self.favorites_per_user > self.items {
            return Err(Error::invalid(format!(
                "favorites_per_user must lie in 1..={}, got {}",
                self.items, self.favorites_per_user
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.global_skew >= 0.0 && self.global_skew.is_finite()) {
            return Err(Error::invalid(format!("global_skew must be a nonnegative number, got {}", self.global_skew)));
        }
        let sum: f64 = self.event_type_mix.iter().sum();
        if self.event_type_mix.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("event_type_mix must be probabilities summing to 1, got {:?}", self.event_type_mix)));
        }
        Ok(())
    }
}

const KINDS: [EventType; 4] = [EventType::Like, EventType::Dislike, EventType::Play, EventType::Skip];

struct UserState {
    favorites: Vec<usize>,
    counts: Vec<u64>,
}

/// Generates a log in which every user interleaves favorites (picked with
/// weight `1 + own count`) and fresh Zipf draws. Timestamps strictly increase
/// across the whole log.
pub fn generate(config: &SynthConfig) -> Result<EventLog> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zipf: Vec<f64> = (0..config.items).map(|k| ((k + 1) as f64).powf(-config.global_skew)).collect();
    let global = WeightedIndex::new(&zipf).map_err(|e| Error::invalid(e.to_string()))?;
    let kinds = WeightedIndex::new(config.event_type_mix).map_err(|e| Error::invalid(e.to_string()))?;
    let catalog: Vec<usize> = (0..config.items).collect();

    let mut states = Vec::with_capacity(config.users);
    for _ in 0..config.users {
        let favorites: Vec<usize> = catalog
            .choose_multiple_weighted(&mut rng, config.favorites_per_user, |&k| zipf[k])
            .map_err(|e| Error::invalid(e.to_string()))?
            .copied()
            .collect();
        states.push(UserState { favorites, counts: vec![0; config.items] });
    }

    let user_ids: Vec<UserId> = (0..config.users).map(|u| UserId(format!("u{u:05}"))).collect();
    let item_ids: Vec<ItemId> = (0..config.items).map(|i| ItemId(format!("i{i:05}"))).collect();
    let mut raw = Vec::with_capacity(config.users * config.events_per_user);
    let mut ts = START_TIMESTAMP;
    let mut order: Vec<usize> = (0..config.users).collect();
    for _ in 0..config.events_per_user {
        order.shuffle(&mut rng);
        for &u in &order {
            let st = &mut states[u];
            let item = if rng.gen_bool(config.rho) {
                let weights = st.favorites.iter().map(|&f| 1.0 + st.counts[f] as f64);
                st.favorites[WeightedIndex::new(weights).expect("positive weights").sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
            st.counts[item] += 1;
            ts += rng.gen_range(1..=MAX_GAP);
            raw.push(RawEvent {
                user: user_ids[u].clone(),
                item: item_ids[item].clone(),
                timestamp: ts,
                kind: KINDS[kinds.sample(&mut rng)],
            });
        }
    }
    EventLog::from_raw(raw)
}

/// Fraction of events whose item the same user had already consumed.
pub fn repeat_fraction(log: &EventLog) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let repeats = log.events().iter().filter(|e| !seen.insert((&e.user, e.item))).count();
    repeats as f64 / log.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64) -> SynthConfig {
        SynthConfig { users: 20, items: 200, events_per_user: 100, rho, favorites_per_user: 10, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic_and_strictly_increasing() {
        let a = generate(&small(0.5)).unwrap();
        let b = generate(&small(0.5)).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.len(), 2000);
        assert!(a.events().windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn full_reuse_stays_in_favorites() {
        let cfg = small(1.0);
        let log = generate(&cfg).unwrap();
        for u in log.users() {
            let distinct: HashSet<usize> = log.user_items(u).into_iter().collect();
            assert!(distinct.len() <= cfg.favorites_per_user);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small(0.5);
        c.favorites_per_user = 201;
        assert!(generate(&c).is_err());
        let mut c = small(1.5);
        assert!(generate(&c).is_err());
        c.rho = 0.5;
        c.event_type_mix = [0.5, 0.5, 0.5, 0.0];
        assert!(generate(&c).is_err());
        c.event_type_mix = [0.25; 4];
        c.users = 0;
        assert!(generate(&c).is_err());
    }
}
