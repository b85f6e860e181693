use poprec::data::{EventType, ItemId, RawEvent, UserId, UserSequence};
use poprec::eval::{evaluate, evaluate_users, rank_items, Gain};
use poprec::pipeline::{global_temporal_split, LabeledGroundTruth, Labels};
use poprec::popcore::{argsort_desc, counts_vector, PpsMode};
use poprec::scorers::{MostPopular, PersonalizedMostPopular, Scorer};
use poprec::synth::{generate, SynthConfig};
use poprec::{EventLog, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Zero(usize);

impl Scorer for Zero {
    fn name(&self) -> &str {
        "zero"
    }
    fn head(&self) -> Option<PpsMode> {
        None
    }
    fn catalog_size(&self) -> usize {
        self.0
    }
    fn score(&self, _: &UserSequence) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

fn synth_log() -> EventLog {
    generate(&SynthConfig { users: 60, items: 300, events_per_user: 150, seed: 9, ..SynthConfig::default() }).unwrap()
}

#[test]
fn full_ranking_matches_stable_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        assert_eq!(rank_items(&scores, n).unwrap(), oracle);
    }
}

#[test]
fn perfect_repeats_score_one() {
    let mut raw = Vec::new();
    for (t, item) in ["a", "b", "a", "c", "a", "b", "d", "a", "b"].iter().enumerate() {
        raw.push(RawEvent { user: UserId("u".into()), item: ItemId((*item).into()), timestamp: t as u64, kind: EventType::Play });
    }
    let log = EventLog::from_raw(raw).unwrap();
    let pmp = PersonalizedMostPopular::new(&log).unwrap();
    let a = log.catalog().index_of(&ItemId("a".into())).unwrap();
    let b = log.catalog().index_of(&ItemId("b".into())).unwrap();
    let gt = LabeledGroundTruth::from([(UserId("u".into()), Labels::from([(a, 1), (b, 1)]))]);
    let e = evaluate_users(&pmp, &gt, |u| log.user_items(u), &[5], Gain::Exponential).unwrap();
    assert!((e.mean(5).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn personal_popularity_beats_global_on_repeats() {
    let split = global_temporal_split(&synth_log(), 0.1, 0.1, 0, 1).unwrap();
    let mp = evaluate(&MostPopular::new(&split.train).unwrap(), &split, &[10]).unwrap();
    let pmp = evaluate(&PersonalizedMostPopular::new(&split.train).unwrap(), &split, &[10]).unwrap();
    assert!(pmp.mean(10).unwrap() > mp.mean(10).unwrap());
    let zero = evaluate(&Zero(split.catalog().len()), &split, &[10]).unwrap();
    assert!(zero.per_user.values().all(|v| v[0].is_finite()));
}

#[test]
fn most_popular_top_item_is_most_frequent() {
    let log = synth_log();
    let counts = log.item_counts();
    let mp = MostPopular::new(&log).unwrap();
    let seq = UserSequence { user: UserId("anyone".into()), items: vec![] };
    let top = rank_items(&mp.score(&seq).unwrap(), 1).unwrap()[0];
    assert_eq!(counts[top], *counts.iter().max().unwrap());
}

#[test]
fn personal_ranking_is_count_argsort() {
    let log = synth_log();
    let n = log.catalog().len();
    let pmp = PersonalizedMostPopular::new(&log).unwrap();
    for u in log.users().take(10) {
        let seq = UserSequence { user: u.clone(), items: log.user_items(u) };
        let counts = counts_vector(&seq.items, n).unwrap();
        assert_eq!(rank_items(&pmp.score(&seq).unwrap(), n).unwrap(), argsort_desc(counts.as_slice()));
    }
}
