//! Synthetic event streams drawn from the aligned point-process model.
//!
//! Each scene point emits events as a homogeneous Poisson process. An event
//! is observed where the camera sees the point at the event's timestamp,
//! rounded to the nearest pixel.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::camera::CameraModel;
use crate::dataset::{self, ImuSample, PoseSample};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::so3::{rotate_vector, Rotation};
use crate::types::{Event, MotionModel, Polarity, WarpParams};

/// Timestamps are rounded to this resolution so written files reload exactly.
pub const TIME_QUANTUM: f64 = 1e-9;
pub const DEFAULT_IMU_RATE: f64 = 1000.0;
pub const DEFAULT_POSE_RATE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub bearing: Vector3<f64>,
    /// Events per second.
    pub rate: f64,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub points: Vec<ScenePoint>,
    pub seed: u64,
}

impl SceneModel {
    pub fn total_rate(&self) -> f64 {
        self.points.iter().map(|p| p.rate).sum()
    }

    /// Points of both scenes; the seed of `self` is kept.
    pub fn union(&self, other: &SceneModel) -> SceneModel {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        SceneModel { points, seed: self.seed }
    }
}

/// Random bearings uniform on the spherical cap of full angle `fov` around
/// the optical axis, rates uniform in `rate_range`, alternating polarity.
pub fn generate_scene(n_points: usize, rate_range: (f64, f64), fov: f64, seed: u64) -> Result<SceneModel> {
    let (lo, hi) = rate_range;
    if n_points == 0 {
        return Err(Error::InvalidParameter("scene needs at least one point".into()));
    }
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid rate range [{lo}, {hi}]")));
    }
    if !(0.0..=std::f64::consts::TAU).contains(&fov) {
        return Err(Error::InvalidParameter(format!("field of view {fov} rad outside [0, 2pi]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos_min = (fov / 2.0).cos();
    let points = (0..n_points)
        .map(|i| {
            let cos_t = 1.0 - (1.0 - cos_min) * rng.random::<f64>();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let bearing = Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t);
            let rate = lo + (hi - lo) * rng.random::<f64>();
            let polarity = if i % 2 == 0 { Polarity::Positive } else { Polarity::Negative };
            ScenePoint { bearing, rate, polarity }
        })
        .collect();
    Ok(SceneModel { points, seed })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub motion: WarpParams,
    pub duration: f64,
}

/// Piecewise motion starting at t = 0. Segments are either all rotational
/// (constant or affine angular velocity) or all translational.
#[derive(Debug, Clone)]
pub struct Trajectory {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    orientations: Vec<Rotation>,
    offsets: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments.first().ok_or(Error::Empty("trajectory"))?;
        let translational = first.motion.model() == MotionModel::Translation;
        let mut starts = Vec::with_capacity(segments.len());
        let mut orientations = Vec::with_capacity(segments.len());
        let mut offsets = Vec::with_capacity(segments.len());
        let (mut t, mut rot, mut off) = (0.0, Rotation::identity(), Vector3::zeros());
        for s in &segments {
            if (s.motion.model() == MotionModel::Translation) != translational {
                return Err(Error::InvalidParameter("cannot mix rotational and translational segments".into()));
            }
            if !(s.duration > 0.0 && s.duration.is_finite()) || !s.motion.is_finite() {
                return Err(Error::InvalidParameter(format!("invalid segment {s:?}")));
            }
            starts.push(t);
            orientations.push(rot);
            offsets.push(off);
            rot = rot.compose(&Rotation::from_vector(&rotation_vector(&s.motion, s.duration)));
            off += translation(&s.motion, s.duration);
            t += s.duration;
        }
        Ok(Trajectory { segments, starts, orientations, offsets })
    }

    pub fn constant(motion: WarpParams, duration: f64) -> Result<Self> {
        Self::new(vec![Segment { motion, duration }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        let last = self.segments.len() - 1;
        self.starts[last] + self.segments[last].duration
    }

    pub fn is_translational(&self) -> bool {
        self.segments[0].motion.model() == MotionModel::Translation
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let i = self.starts.partition_point(|&s| s <= t).max(1) - 1;
        (i, t - self.starts[i])
    }

    /// Body-frame angular velocity (rotational) or scene velocity relative
    /// to the camera (translational) at time `t`.
    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        let (i, dt) = self.locate(t);
        self.segments[i].motion.velocity_at(dt)
    }

    /// Camera-to-world rotation at time `t`.
    pub fn orientation_at(&self, t: f64) -> Rotation {
        let (i, dt) = self.locate(t);
        self.orientations[i].compose(&Rotation::from_vector(&rotation_vector(&self.segments[i].motion, dt)))
    }

    /// Displacement of the scene relative to the camera since t = 0.
    pub fn scene_offset_at(&self, t: f64) -> Vector3<f64> {
        let (i, dt) = self.locate(t);
        self.offsets[i] + translation(&self.segments[i].motion, dt)
    }

    /// Ray under which the camera sees scene point `bearing` at time `t`.
    /// Translational scenes place points at unit depth.
    pub fn observed_ray(&self, bearing: &Vector3<f64>, t: f64) -> Option<Vector3<f64>> {
        let (i, dt) = self.locate(t);
        let motion = &self.segments[i].motion;
        if self.is_translational() {
            if bearing.z <= 1e-6 {
                return None;
            }
            Some(bearing / bearing.z + self.offsets[i] + translation(motion, dt))
        } else {
            let r0 = self.orientations[i].inverse().apply(bearing);
            Some(rotate_vector(&-rotation_vector(motion, dt), &r0))
        }
    }
}

fn rotation_vector(motion: &WarpParams, dt: f64) -> Vector3<f64> {
    match motion {
        WarpParams::ConstOmega { omega } => omega * dt,
        WarpParams::AffineOmega { omega0, accel } => omega0 * dt + accel * (0.5 * dt * dt),
        WarpParams::LinearVel { .. } => Vector3::zeros(),
    }
}

fn translation(motion: &WarpParams, dt: f64) -> Vector3<f64> {
    match motion {
        WarpParams::LinearVel { v } => v * dt,
        _ => Vector3::zeros(),
    }
}

/// Simulates a single constant motion over `[0, duration]`.
pub fn simulate_events(scene: &SceneModel, motion: &WarpParams, duration: f64, camera: &CameraModel) -> Result<Vec<Event>> {
    simulate_trajectory(scene, &Trajectory::constant(*motion, duration)?, camera, Execution::default())
}

/// Simulates the scene over the whole trajectory. Each point draws from its
/// own RNG stream, so the output does not depend on the execution mode.
pub fn simulate_trajectory(
    scene: &SceneModel,
    trajectory: &Trajectory,
    camera: &CameraModel,
    exec: Execution,
) -> Result<Vec<Event>> {
    camera.validate()?;
    if let Some(p) = scene.points.iter().find(|p| !(p.rate > 0.0 && p.rate.is_finite())) {
        return Err(Error::InvalidParameter(format!("point rate {} must be positive", p.rate)));
    }
    let duration = trajectory.duration();
    let per_point = par::map_range(exec, scene.points.len(), |i| {
        let point = &scene.points[i];
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(i as u64 + 1);
        let n = match Poisson::new(point.rate * duration) {
            Ok(d) => d.sample(&mut rng) as usize,
            Err(_) => 0,
        };
        let mut events = Vec::with_capacity(n);
        for _ in 0..n {
            let t = ((rng.random::<f64>() * duration) / TIME_QUANTUM).round() * TIME_QUANTUM;
            let Some(ray) = trajectory.observed_ray(&point.bearing, t) else { continue };
            let Some((x, y)) = camera.project_distorted(&ray) else { continue };
            let (x, y) = (x.round(), y.round());
            if camera.contains(x, y) {
                events.push(Event::new(x, y, t, point.polarity));
            }
        }
        events
    });
    let mut events: Vec<Event> = per_point.into_iter().flatten().collect();
    if events.is_empty() {
        return Err(Error::NoEventsOnSensor);
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(events)
}

fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 / rate).collect()
}

/// Gyro readings reporting the trajectory's angular velocity; zero for
/// translational trajectories. Accelerometer channels are zero.
pub fn imu_samples(trajectory: &Trajectory, rate: f64) -> Vec<ImuSample> {
    sample_times(trajectory.duration(), rate)
        .into_iter()
        .map(|t| ImuSample {
            t,
            accel: Vector3::zeros(),
            gyro: if trajectory.is_translational() { Vector3::zeros() } else { trajectory.velocity_at(t) },
        })
        .collect()
}

/// Camera poses in the world frame of the first pose.
pub fn pose_samples(trajectory: &Trajectory, rate: f64) -> Vec<PoseSample> {
    sample_times(trajectory.duration(), rate)
        .into_iter()
        .map(|t| {
            let m = *trajectory.orientation_at(t).matrix();
            PoseSample {
                t,
                position: -trajectory.scene_offset_at(t),
                orientation: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)),
            }
        })
        .collect()
}

/// Writes `events.txt`, `calib.txt`, `imu.txt` and `groundtruth.txt` into `dir`.
pub fn write_dataset(
    dir: &Path,
    events: &[Event],
    camera: &CameraModel,
    imu: &[ImuSample],
    poses: &[PoseSample],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    dataset::write_events(events, open(dataset::EVENTS_FILE)?)?;
    dataset::write_calibration(camera, open(dataset::CALIB_FILE)?)?;
    dataset::write_imu(imu, open(dataset::IMU_FILE)?)?;
    dataset::write_poses(poses, open(dataset::POSES_FILE)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::pinhole(200.0, 200.0, 120.0, 90.0, 240, 180).unwrap()
    }

    #[test]
    fn scene_is_reproducible() {
        let a = generate_scene(100, (10.0, 20.0), 1.0, 7).unwrap();
        assert_eq!(a, generate_scene(100, (10.0, 20.0), 1.0, 7).unwrap());
        assert_ne!(a, generate_scene(100, (10.0, 20.0), 1.0, 8).unwrap());
        assert!(a.points.iter().all(|p| (p.bearing.norm() - 1.0).abs() < 1e-12 && p.bearing.z >= 0.5f64.cos() - 1e-12));
        assert!(a.points.iter().all(|p| (10.0..=20.0).contains(&p.rate)));
        assert_eq!(a.points[0].polarity, Polarity::Positive);
        assert_eq!(a.points[1].polarity, Polarity::Negative);
    }

    #[test]
    fn zero_fov_is_optical_axis() {
        let s = generate_scene(10, (1.0, 1.0), 0.0, 1).unwrap();
        assert!(s.points.iter().all(|p| p.bearing == Vector3::z()));
    }

    #[test]
    fn invalid_scene_inputs() {
        assert!(generate_scene(0, (1.0, 2.0), 1.0, 0).is_err());
        assert!(generate_scene(1, (0.0, 2.0), 1.0, 0).is_err());
        assert!(generate_scene(1, (3.0, 2.0), 1.0, 0).is_err());
    }

    #[test]
    fn events_sorted_and_on_sensor() {
        let scene = generate_scene(200, (100.0, 200.0), 1.0, 3).unwrap();
        let motion = WarpParams::ConstOmega { omega: Vector3::new(0.3, -0.2, 1.0) };
        let ev = simulate_events(&scene, &motion, 0.2, &cam()).unwrap();
        assert!(ev.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(ev.iter().all(|e| cam().contains(e.x, e.y) && e.x.fract() == 0.0 && (0.0..=0.2).contains(&e.t)));
    }

    #[test]
    fn execution_mode_does_not_change_output() {
        let scene = generate_scene(300, (50.0, 60.0), 1.0, 11).unwrap();
        let traj = Trajectory::constant(WarpParams::ConstOmega { omega: Vector3::new(0.0, 1.0, 0.0) }, 0.1).unwrap();
        let a = simulate_trajectory(&scene, &traj, &cam(), Execution::Parallel).unwrap();
        let b = simulate_trajectory(&scene, &traj, &cam(), Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_off_sensor_is_an_error() {
        let scene = SceneModel {
            points: vec![ScenePoint { bearing: -Vector3::z(), rate: 100.0, polarity: Polarity::Positive }],
            seed: 0,
        };
        let motion = WarpParams::ConstOmega { omega: Vector3::zeros() };
        assert!(matches!(simulate_events(&scene, &motion, 1.0, &cam()), Err(Error::NoEventsOnSensor)));
    }

    #[test]
    fn piecewise_orientation_is_continuous() {
        let w1 = WarpParams::ConstOmega { omega: Vector3::new(0.0, 0.0, 1.0) };
        let w2 = WarpParams::ConstOmega { omega: Vector3::new(1.0, 0.0, 0.0) };
        let traj = Trajectory::new(vec![Segment { motion: w1, duration: 0.5 }, Segment { motion: w2, duration: 0.5 }]).unwrap();
        let a = traj.orientation_at(0.5 - 1e-9).matrix().clone_owned();
        let b = traj.orientation_at(0.5).matrix().clone_owned();
        assert!((a - b).norm() < 1e-8);
        assert_eq!(traj.velocity_at(0.75), Vector3::new(1.0, 0.0, 0.0));
        assert!((traj.duration() - 1.0).abs() < 1e-15);
        let mixed = Trajectory::new(vec![
            Segment { motion: w1, duration: 0.5 },
            Segment { motion: WarpParams::LinearVel { v: Vector3::x() }, duration: 0.5 },
        ]);
        assert!(mixed.is_err());
    }

    #[test]
    fn translational_ray_is_unit_depth_shift() {
        let traj = Trajectory::constant(WarpParams::LinearVel { v: Vector3::new(0.5, 0.0, 0.0) }, 1.0).unwrap();
        let ray = traj.observed_ray(&Vector3::z(), 0.4).unwrap();
        assert!((ray - Vector3::new(0.2, 0.0, 1.0)).norm() < 1e-15);
        let poses = pose_samples(&traj, 10.0);
        assert_eq!(poses.len(), 11);
        assert!((poses[10].position - Vector3::new(-0.5, 0.0, 0.0)).norm() < 1e-12);
    }
}
