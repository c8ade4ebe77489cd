use burstdof_core::models::{Bpn, BpnConfig};
use burstdof_core::scene::generate_dataset;
use burstdof_core::train::{train_bpn, TrainConfig};

#[test]
fn small_bpn_overfits_one_scene() {
    let scenes = generate_dataset(1, 32, 17).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        lr: 3e-3,
        alpha_range: (1.0, 1.0),
        invert_prob: 0.0,
        scale_prob: 0.0,
        eval_interval: 100,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = Bpn::new(
        BpnConfig {
            levels: 2,
            base: 4,
            burst_len: 9,
        },
        3,
    )
    .unwrap();
    let run = train_bpn(model, &scenes, &scenes, &cfg, None).unwrap();
    let mean = |r: std::ops::Range<usize>| run.curve[r.clone()].iter().map(|p| p.loss).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(0..20), mean(280..300));
    assert!(last < first - 0.2, "loss {first:.3} -> {last:.3}");
    let vals: Vec<f64> = run.curve.iter().filter_map(|p| p.val_ssim).collect();
    assert!(vals.last().unwrap() > &0.7, "{vals:?}");
}
