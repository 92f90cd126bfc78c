mod common;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stppp_core::optimizer::fd_gradient;
use stppp_core::simulator::generate_scene;
use stppp_core::{Aligner, Event, Execution, LossConfig, MotionModel, OptimConfig, VelocityEstimate, WarpParams};

fn aligner(model: MotionModel) -> Aligner {
    Aligner::new(common::camera(), model, LossConfig::default(), OptimConfig::default()).unwrap()
}

fn error_deg(est: &VelocityEstimate, omega: Vector3<f64>) -> f64 {
    (est.velocity_at_mid() - omega).amax().to_degrees()
}

/// Loss at the zero initialisation, for the never-worse check.
fn initial_loss(al: &Aligner, packet: &stppp_core::EventPacket) -> f64 {
    al.packet_loss(packet).unwrap().evaluate_params(&WarpParams::zero(al.model())).unwrap()
}

#[test]
fn recovers_rotation_about_optical_axis() {
    let omega = Vector3::new(0.0, 0.0, common::deg(100.0));
    let packet = common::rotation_packet(0, omega, 30_000);
    let al = aligner(MotionModel::Rotation);
    let est = al.estimate_packet(&packet, None).unwrap();
    assert!(est.converged);
    assert!(error_deg(&est, omega) < 1.0, "{:?}", est.params);
    assert!(est.final_loss <= initial_loss(&al, &packet));
    assert!(est.t_start <= est.t_mid && est.t_mid <= est.t_end);
}

#[test]
fn still_camera_stays_still() {
    let packet = common::rotation_packet(1, Vector3::zeros(), 30_000);
    let est = aligner(MotionModel::Rotation).estimate_packet(&packet, None).unwrap();
    assert!(est.velocity_at_mid().norm().to_degrees() < 0.5, "{:?}", est.params);
}

#[test]
fn affine_model_nests_constant_rotation() {
    // a sparse scene gives half-second packets, long enough to observe acceleration
    let cam = common::camera();
    let scene = generate_scene(500, (300.0, 600.0), common::deg(120.0), 0).unwrap();
    let omega = common::random_omega(3000, 20.0, 80.0);
    let packet = common::packet_from(&scene, &WarpParams::ConstOmega { omega }, 30_000, &cam);
    let affine = aligner(MotionModel::Affine).estimate_packet(&packet, None).unwrap();
    let constant = aligner(MotionModel::Rotation).estimate_packet(&packet, None).unwrap();
    let WarpParams::AffineOmega { accel, .. } = affine.params else { panic!("wrong model") };
    assert!(accel.norm().to_degrees() < 5.0, "{accel:?}");
    assert!((affine.velocity_at_mid() - constant.velocity_at_mid()).amax().to_degrees() < 1.0);
    assert!(error_deg(&affine, omega) < 1.0);
}

/// Three constant-rotation streams of exactly `n` events, back to back.
fn three_segments(n: usize) -> (Vec<Event>, [Vector3<f64>; 3]) {
    let omegas = [
        Vector3::new(0.0, 0.0, 100.0),
        Vector3::new(60.0, -40.0, 80.0),
        Vector3::new(-90.0, 30.0, -20.0),
    ]
    .map(|w| w.map(common::deg));
    let cam = common::camera();
    let mut stream = Vec::with_capacity(3 * n);
    let mut offset = 0.0;
    for (i, omega) in omegas.iter().enumerate() {
        let packet = common::packet_from(&common::scene(10 + i as u64), &WarpParams::ConstOmega { omega: *omega }, n, &cam);
        let events = packet.to_events();
        let start = events[0].t;
        stream.extend(events.iter().map(|e| Event { t: e.t - start + offset, ..*e }));
        offset = stream.last().unwrap().t + 1e-6;
    }
    (stream, omegas)
}

#[test]
fn piecewise_sequence_with_and_without_warm_start() {
    let (stream, omegas) = three_segments(30_000);
    let warm = aligner(MotionModel::Rotation).run_sequence(&stream).unwrap();
    assert_eq!(warm.len(), 3);
    for (est, omega) in warm.iter().zip(omegas) {
        assert!(error_deg(est, omega) < 1.0, "{:?} vs {omega:?}", est.params);
    }
    let cold_cfg = OptimConfig { warm_start: false, ..OptimConfig::default() };
    let cold = Aligner::new(common::camera(), MotionModel::Rotation, LossConfig::default(), cold_cfg)
        .unwrap()
        .run_sequence(&stream)
        .unwrap();
    for (a, b) in warm.iter().zip(&cold) {
        assert!((a.velocity_at_mid() - b.velocity_at_mid()).amax().to_degrees() < 1.0);
    }
}

#[test]
fn recovers_translation() {
    let cam = common::camera();
    let v = Vector3::new(-0.064, -0.467, -0.370);
    let packet = common::packet_from(&common::scene(0), &WarpParams::LinearVel { v }, 30_000, &cam);
    let est = aligner(MotionModel::Translation).estimate_packet(&packet, None).unwrap();
    let e = est.velocity_at_mid();
    let angle = (e.dot(&v) / (e.norm() * v.norm())).clamp(-1.0, 1.0).acos().to_degrees();
    assert!(angle < 2.0, "{angle} deg");
    // depth motion is the weakly observed component
    assert!((e.x - v.x).abs() < 0.01 * v.norm() && (e.y - v.y).abs() < 0.01 * v.norm(), "{e:?}");
    assert!((e - v).norm() < 0.04 * v.norm(), "{e:?}");
}

#[test]
fn estimates_are_reproducible() {
    let packet = common::rotation_packet(2, Vector3::new(0.5, 0.2, -1.0), 5_000);
    let cfg = OptimConfig { max_iters: 20, ..OptimConfig::default() };
    let run = |exec| {
        Aligner::new(common::camera(), MotionModel::Rotation, LossConfig::default(), cfg)
            .unwrap()
            .with_execution(exec)
            .estimate_packet(&packet, None)
            .unwrap()
    };
    let a = run(Execution::Parallel);
    assert_eq!(a, run(Execution::Parallel));
    assert_eq!(a, run(Execution::Sequential));
}

#[test]
fn unmappable_packet_is_flagged_and_the_sequence_continues() {
    let cam = common::camera();
    let n = 3000;
    let packet = common::rotation_packet(4, Vector3::new(0.2, 0.0, 0.5), n);
    let good = packet.to_events();
    let span = good[n - 1].t - good[0].t + 1e-6;
    let mut stream = good.clone();
    // a packet whose pixels all lie off the sensor
    stream.extend(good.iter().map(|e| Event { x: e.x + 1000.0, t: e.t + span, ..*e }));
    stream.extend(good.iter().map(|e| Event { t: e.t + 2.0 * span, ..*e }));
    let cfg = OptimConfig { max_iters: 10, ..OptimConfig::default() };
    let al = Aligner::new(cam, MotionModel::Rotation, LossConfig::default(), cfg).unwrap().with_packet_size(n);
    let out = al.run_sequence(&stream).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out[0].converged && out[2].converged);
    assert!(!out[1].converged && out[1].final_loss.is_nan());
    assert!(al.run_sequence(&[]).unwrap().is_empty());
}

#[test]
fn central_differences_are_second_order() {
    let f = |x: &[f64]| Ok((1.3 * x[0]).sin() * (0.7 * x[1]).exp() + x[2].powi(3) * x[0].cos());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = f;
        let h = 1e-2;
        let g1 = fd_gradient(&mut g, &x, &[h; 3]).unwrap();
        let g2 = fd_gradient(&mut g, &x, &[h / 2.0; 3]).unwrap();
        let g4 = fd_gradient(&mut g, &x, &[h / 4.0; 3]).unwrap();
        let d1: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let d2: f64 = g2.iter().zip(&g4).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let ratio = d1 / d2;
        assert!((3.5..=4.5).contains(&ratio), "{ratio} at {x:?}");
    }
}
