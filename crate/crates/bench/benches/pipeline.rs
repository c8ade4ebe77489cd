use criterion::{black_box, criterion_group, criterion_main, Criterion};

use burstdof_core::models::{bpn_forward, multiscale_bpn};
use burstdof_core::ndgrad::Tape;
use burstdof_core::{circular_aperture_mask, ground_truth, photograph};

fn lightfield(c: &mut Criterion) {
    let s = burstdof_bench::scene(64);
    let mask = circular_aperture_mask(9, 4.0).unwrap();
    c.bench_function("photograph 64x64 one channel", |b| {
        b.iter(|| photograph(black_box(&s.light_field), &mask, 1.5, 0).unwrap())
    });
    c.bench_function("ground_truth 64x64 rgb", |b| {
        b.iter(|| ground_truth(black_box(&s.light_field), &mask, 1.5).unwrap())
    });
}

fn conv(c: &mut Criterion) {
    let x = burstdof_bench::tensor(&[3, 16, 64, 64], 1);
    let w = burstdof_bench::tensor(&[16, 16, 3, 3], 2);
    c.bench_function("conv2d 16->16 3x3 on 3x64x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            black_box(tape.conv2d(xv, wv, 1, 1).unwrap());
        })
    });
    c.bench_function("conv2d forward+backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let wv = tape.param(w.clone());
            let y = tape.conv2d(xv, wv, 1, 1).unwrap();
            let m = tape.mean(y).unwrap();
            black_box(tape.backward(m).unwrap());
        })
    });
}

fn networks(c: &mut Criterion) {
    let model = burstdof_bench::bpn();
    let stack = burstdof_bench::burst_stack(64);
    c.bench_function("bpn forward 9x64x64", |b| {
        b.iter(|| bpn_forward(&model, black_box(&stack)).unwrap())
    });
    c.bench_function("multiscale bpn 9x64x64", |b| {
        b.iter(|| multiscale_bpn(&model, black_box(&stack)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = lightfield, conv, networks
}
criterion_main!(benches);
