use poprec::synth::{generate, repeat_fraction, SynthConfig};

fn config(rho: f64) -> SynthConfig {
    SynthConfig { users: 100, items: 1000, events_per_user: 500, rho, seed: 3, ..SynthConfig::default() }
}

#[test]
fn repeat_fraction_in_expected_band() {
    let f = repeat_fraction(&generate(&config(0.8)).unwrap());
    assert!((0.75..=0.90).contains(&f), "repeat fraction {f}");
}

#[test]
fn repeat_fraction_grows_with_rho() {
    let fractions: Vec<f64> =
        [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&r| repeat_fraction(&generate(&config(r)).unwrap())).collect();
    assert!(fractions.windows(2).all(|w| w[0] <= w[1]), "{fractions:?}");
}
