//! Packet loss evaluation, parallel against sequential, over packet sizes.

#[path = "../tests/common/mod.rs"]
mod common;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use nalgebra::Vector3;
use stppp_core::simulator::simulate_events;
use stppp_core::types::packetize;
use stppp_core::{BearingLut, Execution, LossConfig, MotionModel, Objective, PacketLoss, WarpParams};

fn loss(c: &mut Criterion) {
    let cam = common::camera();
    let lut = BearingLut::build(&cam).unwrap();
    let scene = common::scene(0);
    let motion = WarpParams::ConstOmega { omega: Vector3::new(0.5, -1.2, 2.0).normalize() * common::deg(200.0) };
    let events = simulate_events(&scene, &motion, 1.5 * 80_000.0 * 8.0 / scene.total_rate(), &cam).unwrap();

    for objective in [Objective::Nb, Objective::Cmax] {
        let cfg = LossConfig { objective, ..LossConfig::default() };
        let mut group = c.benchmark_group(format!("{objective:?}"));
        for n in [10_000usize, 20_000, 40_000, 80_000] {
            let packet = packetize(&events[..n], n).unwrap().remove(0);
            let theta = motion.to_normalized(packet.duration());
            group.throughput(Throughput::Elements(n as u64));
            for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
                let mut f = PacketLoss::new(&packet, &lut, &cam, MotionModel::Rotation, &cfg, 100, exec).unwrap();
                group.bench_with_input(BenchmarkId::new(name, n), &theta, |b, theta| b.iter(|| f.evaluate(theta).unwrap()));
            }
        }
        group.finish();
    }
}

criterion_group!(benches, loss);
criterion_main!(benches);
