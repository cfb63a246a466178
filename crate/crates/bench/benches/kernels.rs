use criterion::{black_box, criterion_group, criterion_main, Criterion};
use hotspot_bench::tc_bench;
use hotspot_core::autodiff::{Array, Padding, Params, Tape};
use hotspot_core::evaluate::{binarize, fairness_metrics, group_confusion, HotspotSeries};
use hotspot_core::geo::Group;

fn filled(shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut params = Params::new();
    let x = params.insert("x", filled(&[32, 9, 7, 13])).unwrap();
    let k = params.insert("k", filled(&[3, 3, 13, 8])).unwrap();
    let b = params.insert("b", filled(&[8])).unwrap();
    c.bench_function("conv2d forward+backward 32x9x7x13 -> 8", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, kv, bv) = (tape.param(&params, x), tape.param(&params, k), tape.param(&params, b));
            let y = tape.conv2d(xv, kv, bv, Padding::Same).unwrap();
            let r = tape.relu(y);
            let s = tape.sum(r);
            params.zero_grad();
            tape.backward(s, &mut params).unwrap();
            black_box(tape.value(s).item())
        })
    });
}

fn model_step(c: &mut Criterion) {
    let b = tc_bench(100);
    let day = b.city.range.day(40);
    let feats = b.data.features_for_day(day).unwrap();
    let targets = b.data.targets_for_day(day).unwrap();
    let gates = b.data.gate_refs().unwrap();
    let fr: Vec<_> = feats.iter().collect();
    let mut params = b.model.init_params(0).unwrap();
    c.bench_function("TC forward+backward, one day of 100 tracts", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let z = b.model.reported_var(&mut tape, &params, &fr, Some(&gates)).unwrap();
            let loss = tape.mse(z, &targets).unwrap();
            params.zero_grad();
            tape.backward(loss, &mut params).unwrap();
            black_box(tape.value(loss).item())
        })
    });
}

fn metrics(c: &mut Criterion) {
    let b = tc_bench(100);
    let range = b.city.range;
    let days = range.len();
    let n = b.data.tract_ids.len();
    let series = |salt: usize| HotspotSeries {
        range,
        tract_ids: b.data.tract_ids.clone(),
        h: (0..n).map(|i| (0..days).map(|d| (i * 31 + d * 17 + salt) % 7 < 3).collect()).collect(),
    };
    let (pred, truth) = (series(0), series(3));
    c.bench_function("group confusion + metrics, 100 tracts x 1 year", |bench| {
        bench.iter(|| {
            let conf = group_confusion(&pred, &truth, &b.data.populations, &b.data.shares).unwrap();
            black_box(Group::ALL.map(|g| fairness_metrics(conf.get(g)).fpr))
        })
    });
    let y: Vec<f64> = (0..n).map(|i| (i * 13 % 29) as f64).collect();
    c.bench_function("binarize 100 tracts", |bench| bench.iter(|| black_box(binarize(&y))));
}

criterion_group!(benches, conv, model_step, metrics);
criterion_main!(benches);
