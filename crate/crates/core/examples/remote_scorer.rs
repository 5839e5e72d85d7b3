//! Decode against an external scoring service.
//!
//! ```text
//! cargo run --example remote_scorer -- http://localhost:8000 [image_id]
//! ```
//!
//! The service answers `POST /score` with `{"image_id", "texts"}` and returns
//! `{"scores"}`. Its image ids must match the world's (`img-0000`, ...).

use dlc_core::alignment::RemoteScorer;
use dlc_core::calibrator::CalibrationConfig;
use dlc_core::decoder::{DecodeOptions, SamplerSpec};
use dlc_core::sim::{decode_image, generate_world, WorldSpec};

fn main() {
    let Some(url) = std::env::args().nth(1) else {
        eprintln!("usage: remote_scorer <base-url> [image_id]");
        std::process::exit(2);
    };
    let id = std::env::args().nth(2).unwrap_or_else(|| "img-0000".into());
    let world = generate_world(&WorldSpec::default(), 0).unwrap();
    let Some(image) = world.image_index(&id) else {
        eprintln!("no image `{id}` in this world");
        std::process::exit(2);
    };
    let scorer = RemoteScorer::new(&url, 4);
    let opts = DecodeOptions {
        calibration: CalibrationConfig {
            top_k: 8,
            ..Default::default()
        },
        max_new_tokens: 32,
        ..Default::default()
    };
    let out = decode_image(&world, &scorer, image, &opts, SamplerSpec::greedy()).unwrap();
    if let Some(reason) = &out.trace.abort {
        eprintln!("aborted after {} steps: {reason}", out.trace.steps.len());
        std::process::exit(1);
    }
    let text: Vec<&str> = out.tokens.iter().map(|t| world.text(*t).unwrap()).collect();
    println!("{}", text.join(" "));
}
