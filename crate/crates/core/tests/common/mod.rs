#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survcontour_core::data::{ingest_csv, Column, ColumnRoles, IngestOptions, SurvivalDataset};

/// One continuous predictor `x` plus outcome columns.
pub fn dataset(time: &[f64], status: &[u32], x: &[f64]) -> SurvivalDataset {
    SurvivalDataset::new(
        ColumnRoles::new("time", "status", "x"),
        time.to_vec(),
        status.to_vec(),
        vec![("x".into(), Column::Continuous { values: x.to_vec() })],
    )
    .unwrap()
}

/// Exponential times with hazard exp(beta * x), uniform censoring, and an
/// adjuster `z` plus a three-level group `g`.
pub fn synthetic_csv(n: usize, beta: f64, causes: u32, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("time,status,x,z,g\n");
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..10.0);
        let z: f64 = rng.random_range(-1.0..1.0);
        let g = ["a", "b", "c"][rng.random_range(0..3)];
        let rate = 0.1 * (beta * (x - 5.0) + 0.3 * z).exp();
        let t = -rng.random::<f64>().ln() / rate;
        let c = rng.random_range(0.0..30.0);
        let (time, status) = if t <= c {
            (t, 1 + rng.random_range(0..causes))
        } else {
            (c, 0)
        };
        csv.push_str(&format!("{time:.6},{status},{x:.6},{z:.6},{g}\n"));
    }
    csv
}

pub fn synthetic(n: usize, beta: f64, causes: u32, seed: u64, roles: &ColumnRoles) -> SurvivalDataset {
    ingest_csv(synthetic_csv(n, beta, causes, seed).as_bytes(), roles, &IngestOptions::default())
        .unwrap()
        .0
}

pub fn veterans(roles: &ColumnRoles) -> SurvivalDataset {
    let bytes = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/veteran.csv")).unwrap();
    ingest_csv(&bytes, roles, &IngestOptions::default()).unwrap().0
}

/// Direct enumeration of all ordered pairs.
pub fn brute_force_c(times: &[f64], events: &[bool], scores: &[f64]) -> (f64, u64) {
    let (mut num, mut comparable) = (0.0, 0u64);
    for i in 0..times.len() {
        for j in 0..times.len() {
            if events[i] && times[i] < times[j] {
                comparable += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    (num / comparable as f64, comparable)
}
