//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion's PASS/FAIL line is always printed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use poprec::data::UserSequence;
use poprec::eval::{bonferroni, build_report, evaluate, ndcg_at_k, paired_t_test, rank_items};
use poprec::neural::{
    forward, gradient_check, train_with_report, Direction, LossKind, ModelConfig, NeuralScorer, ParameterSet, Token,
};
use poprec::pipeline::{assign_labels, global_temporal_split, DatasetSplit, Labels};
use poprec::popcore::{
    counts_vector, pps_matrix, sigmoid_pps_logits, smoothed_pp_probability, softmax_pps_logits, CountsVector, PpsMode,
};
use poprec::scorers::{MostPopular, PersonalizedMostPopular, Scorer};
use poprec::synth::{generate, SynthConfig};
use poprec::EventType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn logit_inversion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=500);
        let c = CountsVector::new((0..n).map(|_| rng.gen_range(0..=10_000)).collect());
        for eps in [0.01, 0.05, 0.1, 0.2, 1.0] {
            let p = smoothed_pp_probability(&c, eps).map_err(|e| e.to_string())?;
            let soft = softmax_pps_logits(&c, eps).map_err(|e| e.to_string())?;
            let sig = sigmoid_pps_logits(&c, eps).map_err(|e| e.to_string())?;
            let z: f64 = soft.values().iter().map(|y| y.exp()).sum();
            for (j, &pj) in p.as_slice().iter().enumerate() {
                let via_softmax = soft.values()[j].exp() / z;
                let via_sigmoid = 1.0 / (1.0 + (-sig.values()[j]).exp());
                worst = worst.max((via_softmax - pj).abs()).max((via_sigmoid - pj).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    check(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("max deviation {worst:.1e} in {secs:.2}s"))
}

fn exact_fractions() -> Outcome {
    let c = CountsVector::new(vec![2, 1, 0]);
    let p = smoothed_pp_probability(&c, 1.0).map_err(|e| e.to_string())?;
    let soft = softmax_pps_logits(&c, 1.0).map_err(|e| e.to_string())?;
    let sig = sigmoid_pps_logits(&c, 1.0).map_err(|e| e.to_string())?;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
    check(close(p.as_slice(), &[0.5, 1.0 / 3.0, 1.0 / 6.0]), || format!("p = {:?}", p.as_slice()))?;
    check(close(soft.values(), &[0.0, (2.0f64 / 3.0).ln(), (1.0f64 / 3.0).ln()]), || format!("softmax {:?}", soft.values()))?;
    check(close(sig.values(), &[0.0, -(2.0f64).ln(), -(5.0f64).ln()]), || format!("sigmoid {:?}", sig.values()))?;
    Ok("p = [1/2, 1/3, 1/6] with both logit encodings".into())
}

fn causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 15;
    let mut config = ModelConfig::new(Direction::Unidirectional, LossKind::Bce);
    config.embed_dim = 8;
    config.l_max = 20;
    let params = ParameterSet::init(&config, n).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.gen_range(2..=20);
        let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n)).collect();
        let i = rng.gen_range(0..len - 1);
        let mut other = seq.clone();
        for x in &mut other[i + 1..] {
            *x = rng.gen_range(0..n);
        }
        for mode in [PpsMode::Softmax, PpsMode::Sigmoid] {
            let a = pps_matrix(&seq, n, 0.1, mode).map_err(|e| e.to_string())?;
            let b = pps_matrix(&other, n, 0.1, mode).map_err(|e| e.to_string())?;
            check(a.row(i) == b.row(i), || format!("pps row {i} changed"))?;
        }
        let toks = |s: &[usize]| s.iter().map(|&x| Token::Item(x)).collect::<Vec<_>>();
        let fa = forward(&params, &config, &toks(&seq)).map_err(|e| e.to_string())?;
        let fb = forward(&params, &config, &toks(&other)).map_err(|e| e.to_string())?;
        for (x, y) in fa.row(i).iter().zip(fb.row(i)) {
            worst = worst.max((x - y).abs());
        }
    }
    check(worst <= 1e-12, || format!("model row deviation {worst:e}"))?;
    Ok(format!("100 sequences, pps bit-exact, model max deviation {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let n = 12;
    let seq = [0, 3, 5, 3, 11, 7, 3, 2];
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for direction in [Direction::Unidirectional, Direction::MaskedBidirectional] {
        for (loss, beta) in [(LossKind::Ce, 1.0), (LossKind::Bce, 1.0), (LossKind::Gbce, 0.5), (LossKind::Gbce, 1.0)] {
            for pps in [false, true] {
                let mut config = ModelConfig::new(direction, loss).with_pps(pps);
                config.embed_dim = 4;
                config.heads = 2;
                config.l_max = 6;
                config.beta = beta;
                config.negatives_per_positive = 4;
                config.mask_probability = 0.4;
                config.seed = 17;
                let params = ParameterSet::init(&config, n).map_err(|e| e.to_string())?;
                let r = gradient_check(&params, &seq, &config, 1e-4)
                    .map_err(|e| format!("{direction:?}/{loss:?} beta {beta} pps {pps}: {e}"))?;
                worst = worst.max(r.max_rel_error);
                runs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{runs} configurations, max relative error {worst:.1e} in {secs:.2}s"))
}

fn epsilon_contrast() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    while cases < 100 {
        let n = rng.gen_range(2..=50);
        let c: Vec<u64> = (0..n).map(|_| rng.gen_range(0..=100)).collect();
        if c.iter().all(|&x| x == c[0]) {
            continue;
        }
        cases += 1;
        let c = CountsVector::new(c);
        let ratio = |eps: f64| -> Result<f64, String> {
            let p = smoothed_pp_probability(&c, eps).map_err(|e| e.to_string())?;
            let s = p.as_slice();
            Ok(s.iter().cloned().fold(f64::MIN, f64::max) / s.iter().cloned().fold(f64::MAX, f64::min))
        };
        let ratios = [0.01, 0.1, 1.0, 10.0].map(ratio);
        let ratios: Vec<f64> = ratios.into_iter().collect::<Result<_, _>>()?;
        check(ratios.windows(2).all(|w| w[1] < w[0]), || format!("ratios {ratios:?} for {:?}", c.as_slice()))?;
        let p = smoothed_pp_probability(&c, 1e9).map_err(|e| e.to_string())?;
        let s = p.as_slice();
        let spread = s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
        check(spread < 1e-6, || format!("spread {spread:e} at eps 1e9"))?;
    }
    Ok("100 nonconstant count vectors".into())
}

fn ndcg_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 500 {
        let n = rng.gen_range(1..=20);
        let graded: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=2)).collect();
        if graded.iter().all(|&l| l == 0) {
            continue;
        }
        done += 1;
        let labels: Labels = graded.iter().enumerate().filter(|(_, &l)| rng.gen_bool(0.7) || l > 0).map(|(i, &l)| (i, l)).collect();
        let mut ranking: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            ranking.swap(i, rng.gen_range(0..=i));
        }
        let k = rng.gen_range(1..=n);
        let gain = |l: u8| 2f64.powi(l as i32) - 1.0;
        let mut dcg = 0.0;
        for (r, item) in ranking.iter().take(k).enumerate() {
            dcg += gain(*labels.get(item).unwrap_or(&0)) / ((r + 2) as f64).log2();
        }
        let mut ideal: Vec<u8> = labels.values().copied().collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let mut idcg = 0.0;
        for (r, &l) in ideal.iter().take(k).enumerate() {
            idcg += gain(l) / ((r + 2) as f64).log2();
        }
        let got = ndcg_at_k(&ranking, &labels, k).map_err(|e| e.to_string())?;
        worst = worst.max((got - dcg / idcg).abs());
    }
    check(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let hand = ndcg_at_k(&[1, 0, 2], &Labels::from([(0, 2), (1, 1), (2, 0)]), 3).map_err(|e| e.to_string())?;
    check((hand - 0.79671).abs() <= 1e-5, || format!("hand case {hand}"))?;
    Ok(format!("500 instances, max deviation {worst:.1e}; hand case {hand:.5}"))
}

struct RqData {
    split: DatasetSplit,
}

fn rq_data() -> &'static RqData {
    static DATA: OnceLock<RqData> = OnceLock::new();
    DATA.get_or_init(|| {
        let config = SynthConfig { users: 200, items: 1000, events_per_user: 400, rho: 0.8, seed: 2024, ..SynthConfig::default() };
        let log = generate(&config).expect("synth");
        let split = global_temporal_split(&log, 0.1, 0.1, 40, 2024).expect("split");
        RqData { split }
    })
}

fn rq_model(pps: bool) -> ModelConfig {
    let mut c = ModelConfig::new(Direction::MaskedBidirectional, LossKind::Ce).with_pps(pps);
    c.max_epochs = 50;
    c.seed = 42;
    c
}

fn rq1() -> Outcome {
    let start = Instant::now();
    let split = &rq_data().split;
    let mp = evaluate(&MostPopular::new(&split.train).map_err(|e| e.to_string())?, split, &[10]).map_err(|e| e.to_string())?;
    let pmp = evaluate(&PersonalizedMostPopular::new(&split.train).map_err(|e| e.to_string())?, split, &[10])
        .map_err(|e| e.to_string())?;
    let untrained = NeuralScorer::untrained(rq_model(false), split.catalog().len()).map_err(|e| e.to_string())?;
    let nn = evaluate(&untrained, split, &[10]).map_err(|e| e.to_string())?;
    let (mp, pmp, nn) = (mp.mean(10).unwrap(), pmp.mean(10).unwrap(), nn.mean(10).unwrap());
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("NDCG@10 PMP {pmp:.4}, MP {mp:.4}, untrained {nn:.4} in {secs:.1}s");
    check(pmp - mp >= 0.10, || detail.clone())?;
    check(pmp >= nn, || detail.clone())?;
    check(secs < 120.0, || detail.clone())?;
    Ok(detail)
}

fn rq2() -> Outcome {
    let start = Instant::now();
    let split = &rq_data().split;
    let mut evals = Vec::new();
    let mut epochs = Vec::new();
    for pps in [false, true] {
        let (scorer, report) = train_with_report(&split.train, &rq_model(pps), &split.validation).map_err(|e| e.to_string())?;
        let name = if pps { "pps" } else { "base" };
        let scorer = scorer.with_name(name);
        epochs.push(report.best_epoch);
        evals.push(evaluate(&scorer, split, &[10]).map_err(|e| e.to_string())?);
    }
    let report = build_report(&evals, &[("base".into(), "pps".into())]).map_err(|e| e.to_string())?;
    let cmp = report.comparison("base", "pps", 10).ok_or("missing comparison")?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "NDCG@10 off {:.4}, on {:.4} ({:.3}x), p_adj {:.2e}, best epochs {:?}, {secs:.0}s",
        cmp.base_mean,
        cmp.treatment_mean,
        cmp.treatment_mean / cmp.base_mean,
        cmp.p_adj,
        epochs
    );
    check(cmp.treatment_mean >= 1.10 * cmp.base_mean, || detail.clone())?;
    check(cmp.p_adj < 0.05, || detail.clone())?;
    check(secs < 900.0, || detail.clone())?;
    Ok(detail)
}

fn pps_as_prior() -> Outcome {
    let log = generate(&SynthConfig { users: 30, items: 80, events_per_user: 60, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let n = log.catalog().len();
    let pmp = PersonalizedMostPopular::new(&log).map_err(|e| e.to_string())?;
    let mut users = 0;
    for (direction, loss) in [(Direction::MaskedBidirectional, LossKind::Ce), (Direction::Unidirectional, LossKind::Bce)] {
        let mut config = ModelConfig::new(direction, loss).with_pps(true);
        config.embed_dim = 8;
        config.l_max = 20;
        let zero = NeuralScorer::new("zero", config.clone(), ParameterSet::zeros(&config, n).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for u in log.users() {
            let seq = UserSequence { user: u.clone(), items: log.user_items(u) };
            let counts = counts_vector(&seq.items, n).map_err(|e| e.to_string())?;
            if counts.as_slice().iter().all(|&c| c == counts.as_slice()[0]) {
                continue;
            }
            users += 1;
            let a = rank_items(&zero.score(&seq).map_err(|e| e.to_string())?, n).map_err(|e| e.to_string())?;
            let b = rank_items(&pmp.score(&seq).map_err(|e| e.to_string())?, n).map_err(|e| e.to_string())?;
            check(a == b, || format!("{direction:?}: ranking differs for {u}"))?;
        }
    }
    Ok(format!("{users} user rankings identical across both heads"))
}

fn split_correctness() -> Outcome {
    let log = generate(&SynthConfig { users: 200, items: 1000, events_per_user: 500, seed: 10, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    check(log.len() == 100_000, || format!("{} events", log.len()))?;
    let split = global_temporal_split(&log, 0.1, 0.1, 20, 10).map_err(|e| e.to_string())?;
    let frac = split.test_events.len() as f64 / log.len() as f64;
    check((0.09..=0.11).contains(&frac), || format!("test fraction {frac}"))?;
    let late = split.train.events().iter().filter(|e| e.timestamp > split.test_border).count();
    check(late == 0, || format!("{late} train events after the border"))?;
    let tmp = std::env::temp_dir().join(format!("poprec-acceptance-{}", std::process::id()));
    let (a, b) = (tmp.join("a"), tmp.join("b"));
    split.write_dir(&a).map_err(|e| e.to_string())?;
    global_temporal_split(&log, 0.1, 0.1, 20, 10).and_then(|s| s.write_dir(&b)).map_err(|e| e.to_string())?;
    for f in ["catalog.csv", "train.csv", "validation.csv", "test.csv", "manifest.csv"] {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        check(x == y, || format!("{f} differs between runs"))?;
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(format!("test fraction {frac:.4}, no leakage, byte-identical reruns"))
}

fn label_rules() -> Outcome {
    use EventType::*;
    let cases: [(&[EventType], u8); 4] = [(&[Play], 1), (&[Like, Skip], 2), (&[Dislike, Like], 2), (&[Skip, Play], 1)];
    for (events, want) in cases {
        let got = assign_labels(events.iter().map(|&k| (0, k)));
        check(got.get(&0) == Some(&want), || format!("{events:?} gave {got:?}, expected {want}"))?;
    }
    Ok("play→1, like+skip→2, dislike+like→2, skip+play→1".into())
}

fn statistics() -> Outcome {
    let t = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).map_err(|e| e.to_string())?;
    check((t.t - 4.2426).abs() < 5e-5, || format!("t = {}", t.t))?;
    check((t.p - 0.0132).abs() <= 5e-4, || format!("p = {}", t.p))?;
    for m in [1usize, 8, 50] {
        for p in [0.0004, 0.01, 0.03, 0.5] {
            let adj = bonferroni(p, m);
            check(adj == (m as f64 * p).min(1.0), || format!("bonferroni({p}, {m}) = {adj}"))?;
        }
    }
    Ok(format!("t = {:.4}, p = {:.4}; Bonferroni for m in 1, 8, 50", t.t, t.p))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("logit inversion", logit_inversion),
        ("exact fractions", exact_fractions),
        ("causality", causality),
        ("gradient checks", gradient_checks),
        ("epsilon contrast", epsilon_contrast),
        ("ndcg oracle", ndcg_oracle),
        ("rq1 personal popularity", rq1),
        ("rq2 popularity logits", rq2),
        ("pps as prior", pps_as_prior),
        ("split correctness", split_correctness),
        ("label rules", label_rules),
        ("statistics", statistics),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let line = match &outcome {
            Ok(detail) => format!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed.push(i + 1);
                format!("criterion {:>2} {name}: FAIL ({why})", i + 1)
            }
        };
        println!("{line}");
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
