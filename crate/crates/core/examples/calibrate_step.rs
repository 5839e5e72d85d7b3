//! One calibration step by hand: a context, three candidates, and how their
//! logits move.

use dlc_core::calibrator::{CalibrationConfig, Calibrator, Candidate};
use dlc_core::sim::{generate_world, TokenKind, WorldSpec};

fn main() {
    let world = generate_world(&WorldSpec::default(), 11).unwrap();
    let image = &world.images()[0];
    let present: Vec<_> = image.present.iter().copied().collect();
    let absent = world
        .ids_of(TokenKind::HallucinationConcept)
        .next()
        .unwrap();

    let context: Vec<&str> = present
        .iter()
        .take(2)
        .map(|t| world.text(*t).unwrap())
        .collect();
    let context = context.join(" and ");
    let candidates: Vec<Candidate> = [(present[2], 5.0), (absent, 5.5), (world.eos(), 1.0)]
        .into_iter()
        .map(|(token, logit)| Candidate {
            token,
            text: world.text(token).unwrap().to_string(),
            logit,
            special: token == world.eos(),
        })
        .collect();

    let mut cal = Calibrator::new(CalibrationConfig::default()).unwrap();
    let step = cal
        .step(&world.scorer(), &image.image, &context, &candidates)
        .unwrap();
    println!("context `{context}`");
    println!(
        "hcta {:.4}  baseline {:.4}  lambda {:.4}",
        step.hcta, step.baseline, step.lambda
    );
    for a in &step.assessments {
        match (a.comb, a.rva) {
            (Some(comb), Some(rva)) => println!(
                "{:>10}  logit {:.3} -> {:.3}  comb {comb:+.4}  rva {rva:+.4}  x{:.4}",
                a.text, a.logit_before, a.logit_after, a.multiplier
            ),
            _ => println!("{:>10}  logit {:.3} (bypassed)", "<eos>", a.logit_before),
        }
    }
}
