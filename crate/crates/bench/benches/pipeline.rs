use criterion::{criterion_group, criterion_main, Criterion};
use lolo_dcv_bench::{bench_config, survey_fixture};
use lolo_dcv_core::{
    build_folds, build_grid, cv_curve, encode_design, expand_interactions, fit_path, lambda_max,
    Scenario,
};

fn bench_design_expansion(c: &mut Criterion) {
    let fixture = survey_fixture(11);
    c.bench_function("design_expansion_9x4x8", |b| {
        b.iter(|| {
            let base = encode_design(&fixture.dataset, Scenario::Original).unwrap();
            expand_interactions(&base).unwrap()
        });
    });
}

fn bench_path_fit(c: &mut Criterion) {
    let fixture = survey_fixture(11);
    let config = bench_config();
    let x = fixture.design.values();
    let y = fixture.design.y();
    let anchor = lambda_max(x, y);
    let grid = build_grid(anchor, config.grid_count, config.grid_min_ratio.unwrap()).unwrap();
    let mut group = c.benchmark_group("path");
    group.sample_size(10);
    group.bench_function("fit_path_25_points", |b| {
        b.iter(|| fit_path(x, y, &grid).unwrap());
    });
    group.finish();
}

fn bench_cv_curve(c: &mut Criterion) {
    let fixture = survey_fixture(11);
    let config = bench_config();
    let x = fixture.design.values();
    let y = fixture.design.y();
    let anchor = lambda_max(x, y);
    let grid = build_grid(anchor, config.grid_count, config.grid_min_ratio.unwrap()).unwrap();
    let folds = build_folds(&fixture.dataset, Some("house"), 5, config.seed).unwrap();
    let mut group = c.benchmark_group("cv");
    group.sample_size(10);
    group.bench_function("cv_curve_5_fold", |b| {
        b.iter(|| cv_curve(x, y, &grid, &folds).unwrap());
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_design_expansion,
    bench_path_fit,
    bench_cv_curve
);
criterion_main!(benches);
