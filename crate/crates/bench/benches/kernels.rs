use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use pint_conv::model_problems::build_advection_diffusion;
use pint_conv::prop_norms::error_norm_fcf;
use pint_conv::spacetime::{mgrit_cycle, random_guess, DenseStep, StepRef};
use pint_conv::tap::tap_constant;
use pint_conv::{lookup, CoarseSystem, PropagatorPair, Relaxation, SpaceTimeSystem, VelocityField};

const N: usize = 8;
const K: usize = 4;
const N_COARSE: usize = 50;

fn pair() -> PropagatorPair {
    pair_with(N_COARSE)
}

fn pair_with(n_coarse: usize) -> PropagatorPair {
    let p = build_advection_diffusion(N, VelocityField::V1, 0.1).unwrap();
    let s = lookup("SDIRK1").unwrap();
    PropagatorPair::from_schemes(p.l.as_ref(), s, s, 1.0 / N as f64, K, n_coarse).unwrap()
}

fn propagator(c: &mut Criterion) {
    let p = build_advection_diffusion(16, VelocityField::V1, 0.1).unwrap();
    let s = lookup("SDIRK3").unwrap();
    c.bench_function("propagator_matrix sdirk3 n=16", |b| {
        b.iter(|| s.propagator_matrix(black_box(p.l.as_ref()), 0.05).unwrap())
    });
}

fn cycle(c: &mut Criterion) {
    let pr = pair();
    let n_points = K * (N_COARSE - 1) + 1;
    let step: StepRef = Arc::new(DenseStep::new(&pr.phi));
    let sys =
        SpaceTimeSystem::uniform(step, n_points, K, vec![0.0; n_points * pr.phi.nrows()]).unwrap();
    let coarse = CoarseSystem::uniform(Arc::new(DenseStep::new(&pr.psi)), N_COARSE);
    let u0 = random_guess(n_points * pr.phi.nrows(), 1);
    c.bench_function("mgrit FCF cycle n=8 k=4 N_c=50", |b| {
        b.iter(|| {
            let mut u = u0.clone();
            mgrit_cycle(&sys, &coarse, Relaxation::FCF, &mut u);
            u
        })
    });
}

fn tap(c: &mut Criterion) {
    let pr = pair();
    c.bench_function("tap constant FCF 65 samples n=8", |b| {
        b.iter(|| tap_constant(black_box(&pr), Relaxation::FCF, 65).unwrap())
    });
}

fn norm(c: &mut Criterion) {
    // dense SVD of dimension 64 * 10
    let pr = pair_with(10);
    c.bench_function("error norm FCF closed form n=8 N_c=10", |b| {
        b.iter(|| error_norm_fcf(black_box(&pr)).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = propagator, cycle, tap, norm
}
criterion_main!(kernels);
