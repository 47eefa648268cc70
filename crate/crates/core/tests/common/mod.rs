//! Shared fixtures and independent oracles for the integration tests.

#![allow(dead_code)]

use std::io::Write;

use evload_core::features::{build_feature_matrix, FeatureOptions};
use evload_core::gridval::{Bus, BusKind, BusLoad, GridCase, Line, LoadProfile};
use evload_core::synth::{generate, SynthConfig};
use evload_core::FeatureMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Print a criterion verdict past the test harness's output capture.
pub fn verdict(id: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] criterion {id}: {tag} ({detail})");
}

/// Daily features of the default synthetic fixture.
pub fn fixture_features() -> FeatureMatrix {
    let out = generate(&SynthConfig::default()).expect("synthetic fixture");
    build_feature_matrix(&out.series, FeatureOptions::default())
        .expect("feature build")
        .matrix
}

/// Gauss–Seidel power flow with a flat start. Iterates until the largest
/// voltage update drops below `1e-13` and returns bus voltage magnitudes in
/// bus order.
pub fn gauss_seidel(case: &GridCase, timestep: usize) -> Vec<f64> {
    let n = case.buses.len();
    let pos = |id: usize| case.buses.iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for l in &case.lines {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r, l.x);
        let (i, j) = (pos(l.from), pos(l.to));
        y[i][i] += ys;
        y[j][j] += ys;
        y[i][j] -= ys;
        y[j][i] -= ys;
    }
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    for (id, load) in &case.loads.buses {
        s[pos(*id)] = -Complex64::new(load.p[timestep], load.q[timestep]);
    }
    let mut v = vec![Complex64::new(1.0, 0.0); n];
    for _ in 0..200_000 {
        let mut worst = 0.0f64;
        for i in 0..n {
            if case.buses[i].kind == BusKind::Slack {
                continue;
            }
            let mut acc = s[i].conj() / v[i].conj();
            for j in 0..n {
                if j != i {
                    acc -= y[i][j] * v[j];
                }
            }
            let next = acc / y[i][i];
            worst = worst.max((next - v[i]).norm());
            v[i] = next;
        }
        if worst < 1e-13 {
            return v.iter().map(|z| z.norm()).collect();
        }
    }
    panic!("Gauss-Seidel oracle did not converge");
}

/// Random radial feeder with 2–6 buses, non-contiguous ids and a random
/// slack position. Loads are light enough to keep the case feasible.
pub fn random_radial_case(rng: &mut ChaCha8Rng, n_timesteps: usize) -> GridCase {
    let n = rng.random_range(2..=6);
    let slack = rng.random_range(0..n);
    let ids: Vec<usize> = (0..n).map(|k| 10 * k + 3).collect();
    let buses = ids
        .iter()
        .enumerate()
        .map(|(k, &id)| Bus {
            id,
            kind: if k == slack { BusKind::Slack } else { BusKind::Pq },
            base_kv: 12.47,
        })
        .collect();
    let lines = (1..n)
        .map(|k| Line {
            from: ids[rng.random_range(0..k)],
            to: ids[k],
            r: rng.random_range(0.005..0.05),
            x: rng.random_range(0.01..0.1),
        })
        .collect();
    let mut loads = LoadProfile {
        n_timesteps,
        ..Default::default()
    };
    for (k, &id) in ids.iter().enumerate() {
        if k == slack {
            continue;
        }
        let p: Vec<f64> = (0..n_timesteps).map(|_| rng.random_range(0.0..0.15)).collect();
        let q = p.iter().map(|v| v * rng.random_range(0.0..0.5)).collect();
        loads.buses.insert(id, BusLoad { p, q });
    }
    let case = GridCase {
        base_mva: 1.0,
        buses,
        lines,
        loads,
    };
    case.validate().expect("generated case is valid");
    case
}
