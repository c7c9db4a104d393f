use criterion::{criterion_group, criterion_main, Criterion};
use decaylab::kernels::{build_oseen_profile, kernel_l1_norm, L1Options, ProfileGridSpec};
use decaylab::{build_chi_family, build_profile, BumpSpec, Grid};
use std::hint::black_box;

fn profiles(c: &mut Criterion) {
    let bump = BumpSpec::new(-2.0, 2.0).unwrap();
    c.bench_function("profile_order_4", |b| {
        b.iter(|| build_profile(black_box(&bump), 4).unwrap())
    });
    let grid = Grid::new(2, 128, 16.0).unwrap();
    c.bench_function("family_order_2_sample_128", |b| {
        b.iter(|| {
            build_chi_family(&[(-2.0, 2.0), (-2.0, 2.0)], 2)
                .unwrap()
                .sample(black_box(&grid))
                .unwrap()
        })
    });
}

fn oseen(c: &mut Criterion) {
    let spec = ProfileGridSpec {
        size: 128,
        half_width: 16.0,
        tail_window: (3.0, 8.0),
    };
    let mut group = c.benchmark_group("oseen");
    group.sample_size(10);
    group.bench_function("profile_128", |b| {
        b.iter(|| build_oseen_profile(2, black_box(&spec)).unwrap())
    });
    let profile = build_oseen_profile(2, &spec).unwrap();
    group.bench_function("l1_norm", |b| {
        b.iter(|| kernel_l1_norm(&profile, black_box(1.0), &L1Options::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, profiles, oseen);
criterion_main!(benches);
