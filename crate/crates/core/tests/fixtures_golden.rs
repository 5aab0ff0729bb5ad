mod common;

use common::*;
use quboround::eval::accuracy;
use quboround::io;
use serde_json::Value;

fn golden() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture("golden.json")).unwrap()).unwrap()
}

#[test]
fn batch_pre_activations_match_reference() {
    let (net, samples) = load_fixture("mnist1_fixture.json", "digits_test.csv");
    let g = golden();
    let batch = &g["mnist1_batch"];
    let rows: Vec<usize> = serde_json::from_value(batch["rows"].clone()).unwrap();
    let pre: Vec<Vec<f64>> = serde_json::from_value(batch["pre_activations"].clone()).unwrap();
    let preds: Vec<usize> = serde_json::from_value(batch["predictions"].clone()).unwrap();
    for ((&row, want), &pred) in rows.iter().zip(&pre).zip(&preds) {
        let out = net.forward(&samples[row].features).unwrap();
        let got = &out.last().unwrap().pre;
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() <= 1e-6, "row {row}: {a} vs {b}");
        }
        assert_eq!(net.predict(&samples[row].features).unwrap(), pred);
    }
}

#[test]
fn float_accuracy_matches_reference() {
    let g = golden();
    for (model, data, key) in [
        ("mnist1_fixture.json", "digits_test.csv", "mnist1"),
        ("mnist2_fixture.json", "digits_test.csv", "mnist2"),
        ("micro_fixture.json", "micro_test.csv", "micro"),
    ] {
        let (net, samples) = load_fixture(model, data);
        io::check_dataset(&samples, net.input_width(), net.output_width()).unwrap();
        assert_eq!(accuracy(&net, &samples).unwrap(), g["accuracy"][key].as_f64().unwrap(), "{key}");
    }
}

#[test]
fn model_roundtrip_is_exact() {
    let (net, _) = load_fixture("mnist2_fixture.json", "digits_test.csv");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    io::save_model(&path, &net).unwrap();
    assert_eq!(io::load_model(&path).unwrap(), net);
}

#[test]
fn dataset_roundtrip_is_exact() {
    let samples = io::load_dataset(fixture("micro_test.csv")).unwrap();
    assert_eq!(samples.len(), 500);
    let text = io::dataset_to_string(&samples);
    let back = io::dataset_from_reader(std::path::Path::new("mem"), text.as_bytes()).unwrap();
    assert_eq!(back, samples);
}
