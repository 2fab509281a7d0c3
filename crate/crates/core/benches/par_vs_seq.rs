use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bestchoice::design::best_choice;
use bestchoice::dist::sample_lkt_batch;
use bestchoice::population::compute_moments;
use bestchoice::sim::gaussian_population;

#[cfg(feature = "parallel")]
fn with_threads<R>(threads: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R>(_threads: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    f()
}

fn bench_best_choice(c: &mut Criterion) {
    let pop = gaussian_population(200, 5, 42);
    let moments = compute_moments(&pop, 100).unwrap();
    let mut group = c.benchmark_group("best_choice_t1000");
    for &threads in &[1usize, 0] {
        let label = if threads == 1 { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            b.iter(|| with_threads(t, || best_choice(&pop, &moments, 1000, 7).unwrap().m_min))
        });
    }
    group.finish();
}

fn bench_lkt_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("lkt_batch_200k");
    for &threads in &[1usize, 0] {
        let label = if threads == 1 { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            b.iter(|| with_threads(t, || sample_lkt_batch(5, 100, 200_000, 3).len()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_best_choice, bench_lkt_sampling);
criterion_main!(benches);
