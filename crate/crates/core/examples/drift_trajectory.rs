//! Contextual alignment of the sampled token over one vanilla session, as
//! CSV. The collapse after the drift onset is the signal calibration reacts
//! to.

use dlc_core::calibrator::CalibrationConfig;
use dlc_core::decoder::{DecodeOptions, SamplerSpec};
use dlc_core::sim::{
    ccta_trajectory, decode_image, generate_world, write_trajectory_csv, WorldSpec,
};

fn main() {
    let world = generate_world(&WorldSpec::default(), 11).unwrap();
    // alpha 0 scores every step but leaves the logits untouched.
    let opts = DecodeOptions {
        calibration: CalibrationConfig {
            alpha: 0.0,
            top_k: 8,
            ..Default::default()
        },
        max_new_tokens: 64,
        ..Default::default()
    };
    let out = decode_image(&world, &world.scorer(), 0, &opts, SamplerSpec::greedy()).unwrap();
    eprintln!("drift onset at step {}", world.drift().drift_onset);
    let points = ccta_trajectory(&out.trace).unwrap();
    write_trajectory_csv(&points, std::io::stdout().lock()).unwrap();
}
