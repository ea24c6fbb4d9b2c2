use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use sqlab_core::assumptions::{check_assumptions, CheckOptions};
use sqlab_core::diagnostics::{compute_series, quotient_fn_d1, quotient_fn_d2, DiagnosticOptions};
use sqlab_core::integrator::{integrate, sample_brownian, step_drift_implicit, Scheme, TimeGrid};
use sqlab_core::systems::{make_torus_heat_scalar_noise, NoiseForm, SystemSpec, TrigField};
use sqlab_core::{assemble_tilde_a, spectrum};

fn scalar_noise(modes: usize) -> SystemSpec {
    make_torus_heat_scalar_noise(1, modes, &[TrigField::constant(0.5)], &[], &TrigField::default(), NoiseForm::Stratonovich)
        .unwrap()
}

fn derivative_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("quotient_derivatives");
    for n in [8, 32, 128] {
        let m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let sym = (&m + m.transpose()) * 0.5;
        let x = DVector::from_fn(n, |i, _| 1.0 / (1.0 + i as f64));
        let h = DVector::from_fn(n, |i, _| (i as f64).sin());
        group.bench_with_input(BenchmarkId::new("d1", n), &n, |b, _| {
            b.iter(|| quotient_fn_d1(black_box(&sym), 1e-8, black_box(&x), black_box(&h)))
        });
        group.bench_with_input(BenchmarkId::new("d2", n), &n, |b, _| {
            b.iter(|| quotient_fn_d2(black_box(&sym), 1e-8, black_box(&x), black_box(&h), black_box(&h)))
        });
    }
    group.finish();
}

fn integrator_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("drift_implicit_step");
    for modes in [16, 64] {
        let sys = scalar_noise(modes);
        let dw = [0.01];
        group.bench_with_input(BenchmarkId::from_parameter(modes), &modes, |b, _| {
            b.iter(|| step_drift_implicit(&sys.ops, black_box(&sys.u0), 0.0, 1e-3, &dw).unwrap())
        });
    }
    group.finish();
}

fn path_pipeline(c: &mut Criterion) {
    let sys = scalar_noise(32);
    let grid = TimeGrid::new(1.0, 1e-2).unwrap();
    c.bench_function("brownian_path_1e4", |b| {
        let fine = TimeGrid::new(1.0, 1e-4).unwrap();
        b.iter(|| sample_brownian(1, &fine, black_box(3), 0))
    });
    c.bench_function("integrate_and_diagnose_32_modes", |b| {
        b.iter(|| {
            let traj = integrate(&sys, Scheme::DriftImplicit, &grid, 1, 0).unwrap();
            compute_series(&traj, &sys, None, &DiagnosticOptions::default()).unwrap()
        })
    });
}

fn operator_checks(c: &mut Criterion) {
    let sys = scalar_noise(64);
    c.bench_function("tilde_spectrum_64", |b| {
        b.iter(|| spectrum(&assemble_tilde_a(&sys.ops, 0.0).unwrap().sym_part, true).unwrap())
    });
    let small = scalar_noise(16);
    c.bench_function("check_assumptions_16", |b| {
        b.iter(|| check_assumptions(&small, &CheckOptions::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = derivative_kernels, integrator_steps, path_pipeline, operator_checks
}
criterion_main!(benches);
