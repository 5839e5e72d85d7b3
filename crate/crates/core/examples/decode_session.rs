//! Decode one caption with and without calibration and compare.
//!
//! ```text
//! cargo run --example decode_session -- [world_seed] [image]
//! ```

use dlc_core::calibrator::CalibrationConfig;
use dlc_core::decoder::{DecodeOptions, SamplerSpec};
use dlc_core::sim::{count_caption, decode_image, generate_world, DriftWorld, WorldSpec};

fn show(world: &DriftWorld, image: usize, label: &str, opts: &DecodeOptions) {
    let out = decode_image(world, &world.scorer(), image, opts, SamplerSpec::greedy()).unwrap();
    let text: Vec<&str> = out.tokens.iter().map(|t| world.text(*t).unwrap()).collect();
    let id = &world.images()[image].image.id;
    let m = count_caption(world, id, &out.tokens).unwrap();
    println!("{label}: C_I {:.3} C_S {:.3}", m.c_i(), m.c_s());
    println!("  {}", text.join(" "));
}

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(11);
    let image = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let world = generate_world(&WorldSpec::default(), seed).unwrap();
    let present: Vec<&str> = world.images()[image]
        .present
        .iter()
        .map(|t| world.text(*t).unwrap())
        .collect();
    println!(
        "image {} shows: {}",
        world.images()[image].image.id,
        present.join(", ")
    );

    let calibrated = DecodeOptions {
        calibration: CalibrationConfig {
            top_k: 8,
            ..Default::default()
        },
        max_new_tokens: 48,
        ..Default::default()
    };
    let vanilla = DecodeOptions {
        vanilla: true,
        ..calibrated.clone()
    };
    show(&world, image, "vanilla", &vanilla);
    show(&world, image, "calibrated", &calibrated);
}
