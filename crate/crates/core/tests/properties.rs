use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use burstdof_core::burst::{extract_burst, sample_trajectory};
use burstdof_core::models::{merge, ScalePyramid};
use burstdof_core::ndgrad::{op_suite, ParamSet, Tape, Tensor};
use burstdof_core::scene::generate_dataset;
use burstdof_core::train::{make_sample, TrainConfig};
use burstdof_core::{bias_disparity, circular_aperture_mask, photograph, ApertureMask, DisparityMap, LightField};

fn light_field(seed: u64, size: usize) -> LightField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 9 * 9 * size * size * 3;
    LightField::new(size, size, 9, 3, (0..n).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn tensor(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn photograph_is_linear_in_the_light_field(seed in any::<u64>(), alpha in -2.0f64..2.0, a in 0.0f32..0.5, b in 0.0f32..0.5) {
        let l1 = light_field(seed, 8);
        let l2 = light_field(seed ^ 1, 8);
        let mix = l1.combine(a, &l2, b).unwrap();
        let mask = circular_aperture_mask(9, 4.0).unwrap();
        for c in 0..3 {
            let p = photograph(&mix, &mask, alpha, c).unwrap();
            let p1 = photograph(&l1, &mask, alpha, c).unwrap();
            let p2 = photograph(&l2, &mask, alpha, c).unwrap();
            for i in 0..p.data().len() {
                let want = a as f64 * p1.data()[i] + b as f64 * p2.data()[i];
                prop_assert!((p.data()[i] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn photograph_matches_integer_shift_oracle(seed in any::<u64>(), alpha in 0i32..3, radius in 0.0f64..4.5) {
        let lf = light_field(seed, 10);
        let mask = circular_aperture_mask(9, radius).unwrap();
        let img = photograph(&lf, &mask, alpha as f64, 1).unwrap();
        for y in 0..10i32 {
            for x in 0..10i32 {
                let mut acc = 0.0;
                for (&(u, v), &w) in mask.offsets().iter().zip(mask.weights()) {
                    let (row, col) = lf.grid_index(u, v).unwrap();
                    let sx = (x - alpha * u).clamp(0, 9) as usize;
                    let sy = (y - alpha * v).clamp(0, 9) as usize;
                    acc += w * lf.sample_at(row, col, sx, sy, 1) as f64;
                }
                prop_assert!((img.get(x as usize, y as usize, 0) - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn center_mask_gives_center_view(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let lf = light_field(seed, 6);
        let img = photograph(&lf, &ApertureMask::center(), alpha, 2).unwrap();
        let center = lf.center_view();
        prop_assert_eq!(img.data(), center.plane(2));
    }

    #[test]
    fn bias_subtracts_alpha(values in prop::collection::vec(-5.0f64..5.0, 16), alpha in 0.0f64..4.0) {
        let d = DisparityMap::new(4, 4, values.clone()).unwrap();
        let b = bias_disparity(&d, alpha);
        for (x, y) in b.values().iter().zip(&values) {
            prop_assert_eq!(*x, y - alpha);
        }
    }

    #[test]
    fn softmax_is_a_distribution(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut tape = Tape::new();
        let x = tape.constant(tensor(seed, &[2, 3, 4, 5], -scale, scale));
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y).data();
        for b in 0..2 {
            for i in 0..20 {
                let s: f64 = (0..3).map(|k| v[(b * 3 + k) * 20 + i]).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!((0..3).all(|k| v[(b * 3 + k) * 20 + i] >= 0.0));
            }
        }
    }

    #[test]
    fn merge_is_convex(seed in any::<u64>()) {
        let defocus = [0, 1, 2].map(|k| tensor(seed.wrapping_add(k), &[1, 1, 6, 7], 0.0, 1.0));
        let disparity = [3, 4, 5].map(|k| tensor(seed.wrapping_add(k), &[1, 1, 6, 7], -2.0, 2.0));
        let p = ScalePyramid { defocus, disparity };
        let mut tape = Tape::new();
        let logits = tape.constant(tensor(seed ^ 7, &[1, 3, 6, 7], -4.0, 4.0));
        let w = tape.softmax(logits, 1).unwrap();
        let out = merge(&p, tape.value(w)).unwrap();
        for i in 0..42 {
            let vals = [0, 1, 2].map(|s| p.defocus[s].data()[i]);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.data()[i] >= lo - 1e-12 && out.data()[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn every_op_passes_gradient_check(seed in any::<u64>()) {
        for op in op_suite() {
            let err = (op.check)(seed).unwrap();
            prop_assert!(err < 1e-6, "{} err {}", op.name, err);
        }
    }

    #[test]
    fn integer_refocus_is_undone_by_reshifting(seed in any::<u64>(), alpha in 0i32..3) {
        let lf = light_field(seed, 12);
        let traj = sample_trajectory(9, 9, seed, true).unwrap();
        let burst = extract_burst(&lf, &traj, alpha as f64).unwrap();
        let m = 4 * alpha as usize;
        for (frame, &(u, v)) in burst.frames.iter().zip(traj.viewpoints()) {
            let back = frame.translated(-(alpha * u) as f64, -(alpha * v) as f64);
            let raw = lf.view(u, v).unwrap();
            for y in m..12 - m {
                for x in m..12 - m {
                    for c in 0..3 {
                        prop_assert!((back.get(x, y, c) - raw.get(x, y, c)).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn trajectories_descend_and_center(seed in any::<u64>(), n in prop::sample::select(vec![4usize, 9])) {
        let t = sample_trajectory(n, 9, seed, true).unwrap();
        prop_assert_eq!(t.len(), n);
        let vp = t.viewpoints();
        prop_assert!(vp.windows(2).all(|w| w[0].1 > w[1].1));
        prop_assert_eq!(t.center_of_mass(), (0.0, 0.0));
        prop_assert_eq!(t, sample_trajectory(n, 9, seed, true).unwrap());
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), dims in prop::collection::vec(1usize..4, 1..4)) {
        let mut p = ParamSet::new();
        p.push("a", tensor(seed, &dims, -1.0, 1.0));
        p.push("b.bias", tensor(seed ^ 3, &[2], -1.0, 1.0));
        let p = p.quantized();
        let back = ParamSet::from_bytes(&p.to_bytes()).unwrap();
        prop_assert_eq!(back, p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_samples_are_consistent(seed in any::<u64>()) {
        let scene = &generate_dataset(1, 32, seed % 1000).unwrap()[0];
        let cfg = TrainConfig::default();
        let s = make_sample(&scene.light_field, &scene.disparity, &cfg, seed).unwrap();
        let again = make_sample(&scene.light_field, &scene.disparity, &cfg, seed).unwrap();
        prop_assert_eq!(&s.ground_truth, &again.ground_truth);
        prop_assert_eq!(s.burst.len(), cfg.burst_len);
        prop_assert!((0.0..=4.0).contains(&s.alpha));
        prop_assert!(s.ground_truth.data().iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        prop_assert_eq!(s.burst.width(), s.ground_truth.width());
        prop_assert_eq!(s.disparity.width(), s.ground_truth.width());
        let expect = if s.downscaled { 16 } else { 32 };
        prop_assert_eq!(s.ground_truth.width(), expect);
        if !s.downscaled {
            for (b, d) in s.disparity.values().iter().zip(scene.disparity.values()) {
                prop_assert!((b - (d - s.alpha)).abs() < 1e-12);
            }
        }
    }
}
