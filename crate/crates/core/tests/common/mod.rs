#![allow(dead_code)]

use std::time::{Duration, Instant};

use piezo::linalg::CMat;
use piezo::C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Haar-ish random unitaries from the QR factor of complex Gaussian-like matrices.
pub fn random_unitaries(count: usize, m: usize, seed: u64) -> Vec<CMat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a = CMat::from_fn(m, m, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            a.qr().q()
        })
        .collect()
}

/// Collects named checks for one acceptance criterion and prints one summary line.
pub struct Criterion {
    number: usize,
    title: &'static str,
    start: Instant,
    limit: Duration,
    checks: Vec<(String, bool)>,
}

impl Criterion {
    pub fn new(number: usize, title: &'static str, limit_secs: u64) -> Criterion {
        Criterion { number, title, start: Instant::now(), limit: Duration::from_secs(limit_secs), checks: Vec::new() }
    }

    pub fn at_most(&mut self, name: &str, value: f64, bound: f64) {
        self.checks.push((format!("{name} = {value:.3e} (≤ {bound:e})"), value <= bound));
    }

    pub fn at_least(&mut self, name: &str, value: f64, bound: f64) {
        self.checks.push((format!("{name} = {value:.3} (≥ {bound})"), value >= bound));
    }

    pub fn within(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        self.checks.push((format!("{name} = {value:.4} (in [{lo}, {hi}])"), value >= lo && value <= hi));
    }

    pub fn outside(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        self.checks.push((format!("{name} = {value:.4} (outside [{lo}, {hi}])"), !(value >= lo && value <= hi)));
    }

    pub fn holds(&mut self, name: &str, ok: bool) {
        self.checks.push((name.to_string(), ok));
    }

    /// Prints the verdict line and panics with the failed checks if any.
    pub fn finish(mut self) {
        let elapsed = self.start.elapsed();
        self.checks.push((format!("runtime {:.1} s (< {} s)", elapsed.as_secs_f64(), self.limit.as_secs()), elapsed < self.limit));
        let pass = self.checks.iter().all(|(_, ok)| *ok);
        let detail: Vec<String> =
            self.checks.iter().map(|(s, ok)| if *ok { s.clone() } else { format!("FAILED {s}") }).collect();
        println!("criterion {} ({}): {} | {}", self.number, self.title, if pass { "PASS" } else { "FAIL" }, detail.join("; "));
        let failed: Vec<&String> = self.checks.iter().filter(|(_, ok)| !ok).map(|(s, _)| s).collect();
        assert!(failed.is_empty(), "criterion {} failed: {failed:?}", self.number);
    }
}
