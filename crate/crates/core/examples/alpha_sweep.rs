//! Hallucination rates as the maximum intervention strength grows.

use dlc_core::calibrator::CalibrationConfig;
use dlc_core::decoder::{DecodeOptions, SamplerSpec};
use dlc_core::sim::{decode_image, evaluate, generate_world, WorldSpec};

fn main() {
    let worlds: Vec<_> = (0..20)
        .map(|s| generate_world(&WorldSpec::default(), s).unwrap())
        .collect();
    println!("alpha   C_I     C_S");
    for alpha in [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0] {
        let opts = DecodeOptions {
            calibration: CalibrationConfig {
                alpha,
                top_k: 8,
                ..Default::default()
            },
            max_new_tokens: 64,
            ..Default::default()
        };
        let (mut ci, mut cs) = (0.0, 0.0);
        for w in &worlds {
            let captions: Vec<_> = (0..w.images().len())
                .map(|i| {
                    let out =
                        decode_image(w, &w.scorer(), i, &opts, SamplerSpec::greedy()).unwrap();
                    (w.images()[i].image.id.clone(), out.tokens)
                })
                .collect();
            let r = evaluate(&captions, w).unwrap();
            ci += r.c_i;
            cs += r.c_s;
        }
        let n = worlds.len() as f64;
        println!("{alpha:<7.1} {:.4}  {:.4}", ci / n, cs / n);
    }
}
