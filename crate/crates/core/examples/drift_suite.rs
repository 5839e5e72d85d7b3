//! Vanilla versus calibrated decoding over many seeded drift worlds,
//! including the component ablations.
//!
//! ```text
//! cargo run --release --example drift_suite -- [n_worlds] [prior_strength] [drift_onset]
//! ```

use dlc_core::calibrator::{CalibrationConfig, LambdaMode};
use dlc_core::decoder::{DecodeOptions, SamplerKind, SamplerSpec};
use dlc_core::sim::{decode_image, evaluate, generate_world, WorldSpec};

fn run(spec: &WorldSpec, seed: u64, opts: &DecodeOptions) -> (f64, f64) {
    let world = generate_world(spec, seed).unwrap();
    let scorer = world.scorer();
    let captions: Vec<_> = (0..world.images().len())
        .map(|i| {
            let sampler = SamplerSpec::new(SamplerKind::Nucleus { p: 1.0 }, seed * 1000 + i as u64);
            let out = decode_image(&world, &scorer, i, opts, sampler).unwrap();
            (world.images()[i].image.id.clone(), out.tokens)
        })
        .collect();
    let r = evaluate(&captions, &world).unwrap();
    (r.c_i, r.c_s)
}

fn main() {
    let n_worlds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let mut spec = WorldSpec::default();
    if let Some(p) = std::env::args().nth(2).and_then(|s| s.parse().ok()) {
        spec.drift.prior_strength = p;
    }
    if let Some(o) = std::env::args().nth(3).and_then(|s| s.parse().ok()) {
        spec.drift.drift_onset = o;
    }
    let dlc = CalibrationConfig {
        alpha: 3.0,
        window_n: 8,
        top_k: 8,
        ..Default::default()
    };
    let arms: Vec<(&str, DecodeOptions)> = vec![
        (
            "vanilla",
            DecodeOptions {
                vanilla: true,
                max_new_tokens: 64,
                ..Default::default()
            },
        ),
        (
            "dlc",
            DecodeOptions {
                calibration: dlc.clone(),
                max_new_tokens: 64,
                ..Default::default()
            },
        ),
        (
            "no-ccta",
            DecodeOptions {
                calibration: CalibrationConfig {
                    disable_ccta: true,
                    ..dlc.clone()
                },
                max_new_tokens: 64,
                ..Default::default()
            },
        ),
        (
            "no-ita",
            DecodeOptions {
                calibration: CalibrationConfig {
                    disable_ita: true,
                    ..dlc.clone()
                },
                max_new_tokens: 64,
                ..Default::default()
            },
        ),
        (
            "const-lambda",
            DecodeOptions {
                calibration: CalibrationConfig {
                    lambda_mode: LambdaMode::Constant,
                    ..dlc.clone()
                },
                max_new_tokens: 64,
                ..Default::default()
            },
        ),
    ];

    let results: Vec<Vec<(f64, f64)>> = arms
        .iter()
        .map(|(_, opts)| (0..n_worlds).map(|s| run(&spec, s, opts)).collect())
        .collect();

    let mean =
        |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    println!(
        "{:<14} {:>8} {:>8} {:>12}",
        "arm", "C_I", "C_S", "<=vanilla"
    );
    for ((name, _), r) in arms.iter().zip(&results) {
        let wins = r
            .iter()
            .zip(&results[0])
            .filter(|(a, b)| a.0 <= b.0 && a.1 <= b.1)
            .count();
        println!(
            "{name:<14} {:>8.4} {:>8.4} {:>9}/{n_worlds}",
            mean(r, |x| x.0),
            mean(r, |x| x.1),
            wins
        );
    }
}
