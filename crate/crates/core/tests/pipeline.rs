mod common;

use common::*;
use quboround::eval::{accuracy, layer_frobenius_report, layer_plan_error, qubo_cost, scatter_sample, ScatterKind};
use quboround::io;
use quboround::pipeline::{
    adaround_plan, apply_plan, quantize_adaround, quantize_rtn, rtn_plan, select_calibration, AdaroundOptions,
    Calibration, LayerPlan,
};
use quboround::solve::energy;
use quboround::{DenseNetwork, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_network(seed: u64) -> (DenseNetwork, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = random_layer(&mut rng, 3, 5);
    let samples = random_inputs(&mut rng, 20, 5)
        .into_iter()
        .map(|x| Sample::new(x, rng.random_range(0..3)))
        .collect();
    (DenseNetwork::new(vec![layer]).unwrap(), samples)
}

fn brute_min(q: &quboround::QuboMatrix) -> f64 {
    let dim = q.dim();
    (0u32..1 << dim)
        .map(|mask| {
            let v: Vec<u8> = (0..dim).map(|j| ((mask >> j) & 1) as u8).collect();
            energy(q, &v)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn tiny_layer_reaches_subproblem_optimum() {
    for seed in 0..10 {
        let (net, samples) = tiny_network(seed);
        for bits in [2, 4] {
            let cal = Calibration::new(&net, &samples, bits).unwrap();
            let batches = cal.batches(&net).unwrap();
            let plan = adaround_plan(&net, &cal, &batches, &AdaroundOptions::default()).unwrap();
            for i in 0..3 {
                let q = batches[0].subproblem(i);
                let got = energy(&q, &plan.layers[0].neuron_bits(i));
                let best = brute_min(&q);
                assert!(got <= best + 1e-12 * best.abs().max(1.0), "seed {seed} bits {bits} neuron {i}: {got} vs {best}");
            }
        }
    }
}

#[test]
fn adaptive_plan_never_worse_than_nearest() {
    for seed in 0..10 {
        let (net, samples) = tiny_network(100 + seed);
        for bits in 1..=8 {
            let cal = Calibration::new(&net, &samples, bits).unwrap();
            let batches = cal.batches(&net).unwrap();
            let rtn = rtn_plan(&net, &cal, &batches);
            let ada = adaround_plan(&net, &cal, &batches, &AdaroundOptions::default()).unwrap();
            assert!(qubo_cost(&batches, &ada).unwrap() <= qubo_cost(&batches, &rtn).unwrap());

            let layer = &net.layers()[0];
            let e_rtn = layer_plan_error(layer, &cal.scales[0], &cal.inputs[0], &rtn.layers[0]);
            let e_ada = layer_plan_error(layer, &cal.scales[0], &cal.inputs[0], &ada.layers[0]);
            assert!(e_ada <= e_rtn + 1e-9 * e_rtn.max(1.0), "seed {seed} bits {bits}: {e_ada} > {e_rtn}");
        }
    }
}

#[test]
fn plan_error_tracks_cost() {
    // Mean error = (s_w s_x)² (Σ E[d²] + cost) for every plan.
    let (net, samples) = tiny_network(5);
    let cal = Calibration::new(&net, &samples, 3).unwrap();
    let batches = cal.batches(&net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let plan = LayerPlan {
            weight_bits: (0..3).map(|_| random_bits(&mut rng, 5)).collect(),
            bias_bits: random_bits(&mut rng, 3),
            energies: Vec::new(),
        };
        let direct = layer_plan_error(&net.layers()[0], &cal.scales[0], &cal.inputs[0], &plan);
        let cost = quboround::eval::layer_cost(&batches[0], &plan);
        let via = batches[0].scale_product().powi(2) * (batches[0].constant_term() + cost);
        assert!(relative_gap(direct, via) < 1e-9, "{direct} vs {via}");
    }
}

#[test]
fn runs_are_deterministic() {
    let (net, samples) = load_fixture("micro_fixture.json", "micro_test.csv");
    let cal = select_calibration(&samples, 0.1, 42).unwrap();
    let opts = AdaroundOptions::default();
    let (a, pa) = quantize_adaround(&net, &cal, 2, &opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let (b, pb) = pool.install(|| quantize_adaround(&net, &cal, 2, &opts).unwrap());
    assert_eq!(io::quantized_to_string(&a), io::quantized_to_string(&b));
    assert_eq!(io::plan_to_string(&pa), io::plan_to_string(&pb));
}

#[test]
fn quantized_roundtrip_is_exact() {
    let (net, samples) = load_fixture("mnist2_fixture.json", "digits_test.csv");
    let cal = select_calibration(&samples, 0.1, 42).unwrap();
    let (qnet, plan) = quantize_adaround(&net, &cal, 3, &AdaroundOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (qp, pp) = (dir.path().join("q.json"), dir.path().join("p.json"));
    io::save_quantized(&qp, &qnet).unwrap();
    io::save_plan(&pp, &plan).unwrap();
    let back = io::load_quantized(&qp).unwrap();
    assert_eq!(back, qnet);
    assert_eq!(io::load_plan(&pp).unwrap(), plan);
    assert_eq!(accuracy(&back, &samples).unwrap(), accuracy(&qnet, &samples).unwrap());
}

#[test]
fn frobenius_report_of_zero_plan() {
    // With every bit zero and no clipping the stored network is the floor
    // reconstruction, whose error is the constant term alone.
    let (net, samples) = tiny_network(9);
    let cal = Calibration::new(&net, &samples, 8).unwrap();
    let batches = cal.batches(&net).unwrap();
    let mut plan = rtn_plan(&net, &cal, &batches);
    plan.layers[0] = LayerPlan {
        weight_bits: vec![vec![0; 5]; 3],
        bias_bits: vec![0; 3],
        energies: Vec::new(),
    };
    let qnet = apply_plan(&net, &cal.scales, &plan).unwrap();
    let report = layer_frobenius_report(&net, &qnet, &samples).unwrap();
    let want = batches[0].scale_product().powi(2) * batches[0].constant_term();
    assert!(relative_gap(report[0], want) < 1e-9, "{} vs {want}", report[0]);
}

#[test]
fn scatter_rows() {
    let (net, samples) = load_fixture("micro_fixture.json", "micro_test.csv");
    let cal = select_calibration(&samples, 0.1, 42).unwrap();
    let opts = AdaroundOptions::default();
    let rows = scatter_sample(&net, &samples, &cal, 2, 12, 7, &opts).unwrap();
    assert_eq!(rows.len(), 14);
    assert!(rows[..12].iter().all(|r| r.kind == ScatterKind::Random));
    assert_eq!(rows[12].kind, ScatterKind::Rtn);
    assert_eq!(rows[13].kind, ScatterKind::Adaround);
    assert!(rows.iter().enumerate().all(|(i, r)| r.plan_id == i));
    assert!(rows[13].cost <= rows[12].cost);
    let rtn_acc = accuracy(&quantize_rtn(&net, &cal, 2).unwrap(), &samples).unwrap();
    assert_eq!(rows[12].accuracy, rtn_acc);
    assert_eq!(scatter_sample(&net, &samples, &cal, 2, 12, 7, &opts).unwrap(), rows);
    assert!(scatter_sample(&net, &samples, &cal, 2, 0, 7, &opts).is_err());
}
