#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stppp_core::simulator::{generate_scene, simulate_events, SceneModel};
use stppp_core::types::packetize;
use stppp_core::{CameraModel, EventPacket, WarpParams};

pub fn camera() -> CameraModel {
    CameraModel::pinhole(200.0, 200.0, 120.0, 90.0, 240, 180).unwrap()
}

pub fn deg(x: f64) -> f64 {
    x.to_radians()
}

/// Textured test scene: 5000 points at 300-600 events/s in a 120 degree cone.
pub fn scene(seed: u64) -> SceneModel {
    generate_scene(5000, (300.0, 600.0), deg(120.0), seed).unwrap()
}

/// Direction uniform on the sphere, speed uniform in `[lo, hi]` deg/s.
pub fn random_omega(seed: u64, lo: f64, hi: f64) -> Vector3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    let speed = rng.random_range(lo..hi);
    Vector3::new(s * phi.cos(), s * phi.sin(), z) * deg(speed)
}

/// First `n` events of `scene` seen under `motion`, as one packet.
pub fn packet_from(scene: &SceneModel, motion: &WarpParams, n: usize, camera: &CameraModel) -> EventPacket {
    let duration = 8.0 * n as f64 / scene.total_rate();
    let events = simulate_events(scene, motion, duration, camera).unwrap();
    assert!(events.len() >= n, "only {} events", events.len());
    packetize(&events[..n], n).unwrap().remove(0)
}

pub fn rotation_packet(seed: u64, omega: Vector3<f64>, n: usize) -> EventPacket {
    packet_from(&scene(seed), &WarpParams::ConstOmega { omega }, n, &camera())
}

pub fn max_abs(v: &Vector3<f64>) -> f64 {
    v.amax()
}
