use simvit::io::{encode_ppm, load_weights, read_ppm, save_weights, Ppm, RunConfig};
use simvit::{build_model, count_params, preset_config, Error, Variant};

#[test]
fn weights_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let cfg = preset_config(Variant::MicroReduced, 10);
    let model = build_model::<f64>(&cfg, 8).unwrap();
    save_weights(&model, &path).unwrap();
    let back = load_weights::<f64>(&path, &cfg).unwrap();
    assert_eq!(model.store.checksum(), back.store.checksum());

    // Wrong precision and wrong head width are both reported, not coerced.
    assert!(matches!(
        load_weights::<f32>(&path, &cfg),
        Err(Error::TensorMismatch { .. })
    ));
    let err = load_weights::<f64>(&path, &preset_config(Variant::MicroReduced, 5)).unwrap_err();
    assert!(err.to_string().contains("head.fc"), "{err}");
}

#[test]
fn truncated_weight_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let cfg = preset_config(Variant::MicroReduced, 10);
    save_weights(&build_model::<f32>(&cfg, 0).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_weights::<f32>(&path, &cfg), Err(Error::Truncated(_))));
}

#[test]
fn ppm_file_decodes_and_normalizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.ppm");
    let img = Ppm {
        width: 2,
        height: 1,
        rgb: vec![0, 255, 51, 255, 0, 102],
    };
    std::fs::write(&path, encode_ppm(&img)).unwrap();
    let t = read_ppm::<f64>(&path).unwrap();
    assert_eq!(t.shape(), &[1, 2, 3]);
    let expect = [-1.0, 1.0, -0.6, 1.0, -1.0, -0.2];
    for (a, b) in t.data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(read_ppm::<f64>(dir.path().join("missing.ppm")).is_err());
}

#[test]
fn ablation_configs_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = count_params(&preset_config(Variant::Micro, 1000)).unwrap().total();
    let cases = [
        ("variant = \"micro\"\npos_embed = true\n", base + 56 * 56 * 32),
        ("variant = \"micro\"\nwindow = [5, 5, 5]\n", base),
    ];
    for (i, (text, params)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("c{i}.toml"));
        std::fs::write(&path, text).unwrap();
        let cfg = RunConfig::load(&path).unwrap().to_model_config().unwrap();
        assert_eq!(count_params(&cfg).unwrap().total(), *params);
    }
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "variant = \"micro\"\n\ndepths = 4\n").unwrap();
    let err = RunConfig::load(&path).unwrap_err().to_string();
    assert!(err.contains("line 3") && err.contains("depths"), "{err}");
}
