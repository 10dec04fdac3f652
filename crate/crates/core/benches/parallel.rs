//! Sequential vs rayon execution of the data-parallel kernels.

use std::hint::black_box;

use capsim_core::dynamics::CapsuleState;
use capsim_core::geometry::{pose, shapes, RigidTransform, UnitQuat, Vec3};
use capsim_core::metrics::{cloud_to_cloud, icp_align, IcpOptions};
use capsim_core::sensing::{
    axis_actions, greedy_plan_step, visible_vertices, CameraIntrinsics, CameraRig, CoverageMap, RigKind,
};
use capsim_core::tissue::{deformed_positions, DeformationState, PeristalsisParams};
use capsim_core::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(0.0..0.10),
                rng.random_range(0.0..0.06),
                rng.random_range(0.0..0.03),
            )
        })
        .collect()
}

fn bench(c: &mut Criterion) {
    let organ = shapes::fixture_tube();
    let capsule = CapsuleState::at_rest(pose(Vec3::new(0.0, 0.0, 0.06), UnitQuat::identity()), Default::default());
    let rig = CameraRig::standard(RigKind::Dual, &capsule.params, CameraIntrinsics::default());

    let mut g = c.benchmark_group("visibility");
    for &exec in Exec::available() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &exec, |b, &exec| {
            b.iter(|| visible_vertices(black_box(&organ.mesh), &capsule.pose, &rig, exec))
        });
    }
    g.finish();

    let coverage = CoverageMap::new(organ.mesh.vertex_count());
    let actions = axis_actions(0.005);
    let mut g = c.benchmark_group("greedy_step");
    for &exec in Exec::available() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &exec, |b, &exec| {
            b.iter(|| greedy_plan_step(black_box(&organ), &coverage, &capsule, &rig, &actions, exec))
        });
    }
    g.finish();

    let moving = cloud(5000, 1);
    let truth = pose(Vec3::new(0.002, -0.001, 0.003), UnitQuat::from_euler_angles(0.05, -0.1, 0.08));
    let fixed: Vec<Vec3> = moving.iter().map(|p| truth * nalgebra::Point3::from(*p)).map(|p| p.coords).collect();
    let mut g = c.benchmark_group("icp");
    g.sample_size(20);
    for &exec in Exec::available() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &exec, |b, &exec| {
            b.iter(|| icp_align(black_box(&moving), &fixed, &RigidTransform::identity(), &IcpOptions::default(), exec))
        });
    }
    g.finish();

    let other = cloud(20000, 2);
    let mut g = c.benchmark_group("cloud_to_cloud");
    for &exec in Exec::available() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &exec, |b, &exec| {
            b.iter(|| cloud_to_cloud(black_box(&other), &moving, exec))
        });
    }
    g.finish();

    let deformation = DeformationState::new(organ.mesh.vertex_count(), Default::default());
    let wave = PeristalsisParams::default();
    let mut g = c.benchmark_group("deformed_positions");
    for &exec in Exec::available() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &exec, |b, &exec| {
            b.iter(|| deformed_positions(black_box(&organ), &deformation, Some((&wave, 1.0, 1.0)), exec))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
