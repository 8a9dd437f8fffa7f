use criterion::{black_box, criterion_group, criterion_main, Criterion};
use taskcomm::Observation;

fn belief_update(c: &mut Criterion) {
    let mut g = c.benchmark_group("belief_update");
    for ticks in [10, 60] {
        let (belief, world, action) = taskcomm_bench::mid_trial(ticks, 2);
        let next = world.apply(&action).unwrap();
        for obs in [Observation::NoSpacebar, Observation::Spacebar] {
            g.bench_function(format!("tick{ticks}/{obs:?}"), |b| {
                b.iter(|| black_box(&belief).update(&action, &next, obs).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, belief_update);
criterion_main!(benches);
