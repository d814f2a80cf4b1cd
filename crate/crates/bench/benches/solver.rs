use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use starris::bcd::{run_scheme, BcdConfig, Scheme};
use starris::conic::{build_bs_subproblem, build_ris_subproblem, solve, SolverSettings};
use starris::geometry::build_channel_set;
use starris::profile::{baseline_profile, BaselineKind};
use starris::rate::{evaluate, BeamformerSet};
use starris_bench::{block_data, default_scenario, default_with_elements, small_scenario};

fn channels_and_rates(c: &mut Criterion) {
    let s = default_scenario();
    c.bench_function("channel_set/default", |b| b.iter(|| build_channel_set(&s, s.seed).unwrap()));
    let ch = build_channel_set(&s, s.seed).unwrap();
    let profiles = baseline_profile(BaselineKind::Fixed55, &s.element_counts(), None).unwrap();
    let beams = BeamformerSet::zeros(s.stream_count(), s.bs.antenna_count);
    c.bench_function("evaluate/default", |b| b.iter(|| evaluate(&s, &ch, &profiles, &beams).unwrap()));
}

fn block_solves(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let mut group = c.benchmark_group("block_solve");
    group.sample_size(10);
    for n in [8, 16, 32] {
        let (bs, ris) = block_data(&default_with_elements(n));
        let bs = build_bs_subproblem(&bs).unwrap();
        let ris = build_ris_subproblem(&ris).unwrap();
        if n == 16 {
            group.bench_function("bs/default", |b| b.iter(|| solve(&bs.program, &settings).unwrap()));
        }
        group.bench_with_input(BenchmarkId::new("ris", n), &ris, |b, ris| {
            b.iter(|| solve(&ris.program, &settings).unwrap())
        });
    }
    group.finish();
}

fn full_run(c: &mut Criterion) {
    let s = small_scenario();
    let config = BcdConfig::from_scenario(&s);
    let mut group = c.benchmark_group("bcd");
    group.sample_size(10);
    group.bench_function("small/fixed_55", |b| b.iter(|| run_scheme(&s, &config, Scheme::Fixed55).unwrap()));
    group.finish();
}

criterion_group!(benches, channels_and_rates, block_solves, full_run);
criterion_main!(benches);
