use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use recognet_bench::random;
use recognet_core::convlstm::{cell_step, ConvLstmParams, ConvLstmSpec, ConvLstmState};
use recognet_core::tensorcore::ops::{conv2d, conv_transpose2d};
use recognet_core::tensorcore::Conv2dOptions;
use recognet_core::Graph;

fn convolutions(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for (n, cin, cout, hw, dil) in [(10, 8, 8, 32, 1), (10, 8, 8, 32, 2), (10, 20, 48, 16, 1)] {
        let x = random(&[n, cin, hw, hw], 1);
        let w = random(&[cout, cin, 3, 3], 2);
        let b = random(&[cout], 3);
        let opts = Conv2dOptions::new(1, dil, dil);
        let id = format!("{n}x{cin}x{hw}x{hw}->{cout} d{dil}");
        group.bench_function(BenchmarkId::from_parameter(id), |bch| {
            bch.iter(|| conv2d(&x, &w, Some(&b), opts).unwrap())
        });
    }
    group.finish();

    let x = random(&[10, 12, 8, 8], 4);
    let w = random(&[12, 12, 2, 2], 5);
    c.bench_function("conv_transpose2d 10x12x8x8 s2", |bch| {
        bch.iter(|| conv_transpose2d(&x, &w, None, 2, 0).unwrap())
    });
}

fn lstm_step(c: &mut Criterion) {
    let spec = ConvLstmSpec::new(12, 8, 3).unwrap();
    let params = ConvLstmParams::<f32>::init(spec, &mut recognet_bench::rng(6));
    let x = random(&[1, 12, 16, 16], 7);
    c.bench_function("convlstm cell step 12->8 16x16", |bch| {
        bch.iter(|| {
            let mut g = Graph::new();
            let vars = params.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let s = ConvLstmState::zeros(&mut g, 1, 8, 16, 16);
            cell_step(&mut g, &vars, xv, &s).unwrap()
        })
    });
}

criterion_group!(benches, convolutions, lstm_step);
criterion_main!(benches);
