//! Full 50-epoch run on a second seed, checking the shape of the trace.

use simvit::io::{decode_model, encode_model};
use simvit::training::{evaluate, gen_toy_dataset, train_toy, TrainOptions};
use simvit::{build_model, preset_config, Variant};

/// Published checksum of the seed-0, 256-sample, 10-class toy set in `f32`.
const TOY_SEED0_CHECKSUM: &str = "62c8248bf4271fda6684b74262c2a976f633bda2672b5394fc6628b3acc93a06";

#[test]
fn toy_dataset_checksum_is_pinned() {
    let data = gen_toy_dataset::<f32>(0, 256, 10).unwrap();
    assert_eq!(data.checksum(), TOY_SEED0_CHECKSUM);
}

#[test]
fn seed_one_run_learns_with_a_settling_trace() {
    let cfg = preset_config(Variant::MicroReduced, 10);
    let data = gen_toy_dataset::<f32>(1, 256, 10).unwrap();
    let mut model = build_model::<f32>(&cfg, 1).unwrap();
    let opts = TrainOptions {
        epochs: 50,
        seed: 1,
        ..TrainOptions::default()
    };
    let trace = train_toy(&mut model, &data, opts, |_| {}).unwrap();
    assert_eq!(trace.len(), 50);
    assert!(
        (trace[0].loss - 10f64.ln()).abs() <= 0.3,
        "epoch 0 loss {}",
        trace[0].loss
    );

    // Mean loss over consecutive 5-epoch blocks never goes up.
    let blocks: Vec<f64> = trace
        .chunks(5)
        .map(|c| c.iter().map(|s| s.loss).sum::<f64>() / 5.0)
        .collect();
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "block means {blocks:?}");
    }

    let acc = evaluate(&model, &data).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");

    // Reloaded weights classify identically.
    let reloaded = decode_model::<f32>(&encode_model(&model).unwrap(), &cfg).unwrap();
    assert_eq!(evaluate(&reloaded, &data).unwrap(), acc);
}
