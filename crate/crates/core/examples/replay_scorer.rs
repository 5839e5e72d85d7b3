//! Record every score a session asks for, then rerun the session from the
//! recording alone.

use dlc_core::alignment::{RecordingScorer, ReplayScorer};
use dlc_core::calibrator::CalibrationConfig;
use dlc_core::decoder::{DecodeOptions, SamplerKind, SamplerSpec};
use dlc_core::sim::{decode_image, generate_world, WorldSpec};

fn main() {
    let world = generate_world(&WorldSpec::default(), 3).unwrap();
    let opts = DecodeOptions {
        calibration: CalibrationConfig {
            top_k: 8,
            ..Default::default()
        },
        max_new_tokens: 32,
        ..Default::default()
    };
    let sampler = SamplerSpec::new(SamplerKind::Nucleus { p: 0.9 }, 42);

    let recorder = RecordingScorer::new(world.scorer());
    let first = decode_image(&world, &recorder, 1, &opts, sampler).unwrap();
    let mut file = Vec::new();
    recorder.write_jsonl(&mut file).unwrap();
    println!(
        "recorded {} scores, {} bytes",
        recorder.records().len(),
        file.len()
    );

    let replay = ReplayScorer::from_reader(file.as_slice()).unwrap();
    let second = decode_image(&world, &replay, 1, &opts, sampler).unwrap();
    let same = first.trace.to_jsonl_string() == second.trace.to_jsonl_string();
    println!("replayed trace identical: {same}");
}
