use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use stppp_core::camera::{CameraModel, Distortion};
use stppp_core::dataset::{self, load_dataset, GtFrame};
use stppp_core::evaluation::{self, Units, METRICS_HEADER};
use stppp_core::prior::{fit_gamma_prior, CountHistogram};
use stppp_core::simulator::{self, Segment, Trajectory};
use stppp_core::types::packetize;
use stppp_core::{
    Aligner, Event, Execution, MotionModel, Objective, PacketLoss, PriorParams, WarpParams,
};

use crate::config::{parse_list, PriorSource, RunConfig};
use crate::error::CliError;
use crate::{BenchArgs, EvalArgs, SynthArgs};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn resolve_prior(cfg: &RunConfig, events: &[Event], camera: &CameraModel) -> Result<PriorParams, CliError> {
    match cfg.prior {
        PriorSource::Fixed { r, q } => Ok(PriorParams::new(r, q)?),
        PriorSource::Fit if cfg.objective != Objective::Nb => Ok(stppp_core::LossConfig::default().prior),
        PriorSource::Fit => {
            let n = events.len().min(cfg.packet_size);
            Ok(fit_gamma_prior(&CountHistogram::from_events(&events[..n], camera))?)
        }
    }
}

pub fn align(dir: &Path, out: Option<&Path>, render_dir: Option<&Path>, cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(dir, cfg.width, cfg.height)?;
    let packets = packetize(&data.events, cfg.packet_size)?;
    if packets.is_empty() {
        return Err(CliError::input(format!(
            "{} events is fewer than one packet of {}",
            data.events.len(),
            cfg.packet_size
        )));
    }
    let prior = resolve_prior(cfg, &data.events, &data.camera)?;
    let aligner = Aligner::new(data.camera, cfg.model, cfg.loss(prior), cfg.optim())?
        .with_pad(cfg.pad)
        .with_packet_size(cfg.packet_size);
    let estimates = aligner.run_packets(&packets)?;
    evaluation::write_estimates(&estimates, cfg.model, output(out)?)?;

    if let Some(dir) = render_dir {
        std::fs::create_dir_all(dir)?;
        for (i, (packet, est)) in packets.iter().zip(&estimates).enumerate() {
            if !est.final_loss.is_finite() {
                continue;
            }
            let (pos, neg) = aligner.render(packet, &est.params);
            pos.write_pgm(create(&dir.join(format!("packet_{i:05}_pos.pgm")))?)?;
            neg.write_pgm(create(&dir.join(format!("packet_{i:05}_neg.pgm")))?)?;
        }
    }
    let flagged = estimates.iter().filter(|e| !e.final_loss.is_finite()).count();
    eprintln!("{} packets aligned, {flagged} failed", estimates.len());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let lag = args.imu_lag_ms.unwrap_or(cfg.imu_lag_ms) * 1e-3;
    let frame: GtFrame = match &args.gt_frame {
        Some(f) => f.parse().map_err(|e: stppp_core::Error| CliError::usage(e.to_string()))?,
        None => cfg.gt_frame,
    };
    let mut methods = Vec::new();
    for spec in &args.estimates {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--estimates expects METHOD=PATH, got '{spec}'")))?;
        methods.push((name.to_owned(), Path::new(path).to_owned()));
    }
    let gt_path = |explicit: &Option<std::path::PathBuf>, file: &str| -> Result<std::path::PathBuf, CliError> {
        match (explicit, &args.dataset) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(d)) => Ok(d.join(file)),
            (None, None) => Err(CliError::usage(format!("need --dataset or an explicit path for {file}"))),
        }
    };
    let sequence = args.sequence.clone().unwrap_or_else(|| {
        args.dataset
            .as_ref()
            .and_then(|d| d.file_name())
            .map_or_else(|| "sequence".to_owned(), |n| n.to_string_lossy().into_owned())
    });

    let mut imu = None;
    let mut poses = None;
    let mut rows = Vec::new();
    for (method, path) in &methods {
        let (model, estimates) = evaluation::read_estimates(open(path)?)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let metrics = if model == MotionModel::Translation {
            if poses.is_none() {
                poses = Some(dataset::parse_poses(open(&gt_path(&args.groundtruth, dataset::POSES_FILE)?)?)?);
            }
            let series = dataset::gt_linear_velocity(poses.as_ref().expect("loaded"), frame)?;
            let (est, gt) = paired(&estimates, |t| evaluation::interpolate(&series, t))?;
            let s = evaluation::fit_scale(&est, &gt)?;
            eprintln!("{method}: scale {s}");
            let scaled: Vec<Vector3<f64>> = est.iter().map(|v| v * s).collect();
            evaluation::metrics_from_pairs(&scaled, &gt, Units::Linear)?
        } else {
            if imu.is_none() {
                imu = Some(dataset::parse_imu(open(&gt_path(&args.imu, dataset::IMU_FILE)?)?)?);
            }
            let imu = imu.as_ref().expect("loaded");
            evaluation::compute_metrics(&estimates, |t| evaluation::gt_velocity_at(imu, t, lag), Units::Angular)?
        };
        rows.push(metrics.csv_row(&sequence, method));
    }
    let mut out = output(args.output.as_deref())?;
    writeln!(out, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

type Pairs = (Vec<Vector3<f64>>, Vec<Vector3<f64>>);

/// Mid-packet estimates and ground truth for every successful packet.
fn paired<F>(estimates: &[stppp_core::VelocityEstimate], gt: F) -> Result<Pairs, CliError>
where
    F: Fn(f64) -> stppp_core::Result<Vector3<f64>>,
{
    let (mut est, mut truth, mut gaps) = (Vec::new(), Vec::new(), Vec::new());
    for e in estimates.iter().filter(|e| e.final_loss.is_finite()) {
        match gt(e.t_mid) {
            Ok(g) => {
                est.push(e.velocity_at_mid());
                truth.push(g);
            }
            Err(stppp_core::Error::OutOfRange { .. }) => gaps.push(e.t_mid),
            Err(other) => return Err(other.into()),
        }
    }
    if !gaps.is_empty() {
        return Err(stppp_core::Error::Coverage(gaps).into());
    }
    Ok((est, truth))
}

pub fn fit_prior(dir: Option<&Path>, counts: Option<&Path>, out: Option<&Path>, cfg: &RunConfig) -> Result<(), CliError> {
    let hist = match (dir, counts) {
        (_, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let values = text
                .split_whitespace()
                .map(|s| s.parse::<u64>().map_err(|_| CliError::input(format!("not a count: '{s}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            CountHistogram::from_counts(values)
        }
        (Some(dir), None) => {
            let data = load_dataset(dir, cfg.width, cfg.height)?;
            let n = data.events.len().min(cfg.packet_size);
            CountHistogram::from_events(&data.events[..n], &data.camera)
        }
        (None, None) => return Err(CliError::usage("need --dataset or --counts")),
    };
    let prior = fit_gamma_prior(&hist)?;
    let mut w = output(out)?;
    writeln!(w, "{}", serde_json::to_string_pretty(&prior).expect("plain struct"))?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Distortion,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            fx: 200.0,
            fy: 200.0,
            cx: 120.0,
            cy: 90.0,
            distortion: Distortion::default(),
            width: stppp_core::camera::DEFAULT_WIDTH,
            height: stppp_core::camera::DEFAULT_HEIGHT,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub model: MotionModel,
    pub params: Vec<f64>,
    pub duration: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub points: usize,
    pub rate_min: f64,
    pub rate_max: f64,
    pub fov_deg: f64,
    pub camera: CameraSpec,
    pub segments: Vec<SegmentSpec>,
    pub imu_rate: f64,
    pub pose_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            points: 5000,
            rate_min: 300.0,
            rate_max: 600.0,
            fov_deg: 120.0,
            camera: CameraSpec::default(),
            segments: vec![SegmentSpec { model: MotionModel::Rotation, params: vec![0.5, -0.3, 1.0], duration: 0.2 }],
            imu_rate: simulator::DEFAULT_IMU_RATE,
            pose_rate: simulator::DEFAULT_POSE_RATE,
        }
    }
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut spec: SynthSpec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.points {
        spec.points = n;
    }
    if let Some(r) = args.rate_min {
        spec.rate_min = r;
    }
    if let Some(r) = args.rate_max {
        spec.rate_max = r;
    }
    if let Some(f) = args.fov_deg {
        spec.fov_deg = f;
    }
    if let (Some(model), Some(params)) = (&args.model, &args.params) {
        let model = model.parse().map_err(|e: stppp_core::Error| CliError::usage(e.to_string()))?;
        let duration = args.duration.unwrap_or(spec.segments.first().map_or(0.2, |s| s.duration));
        spec.segments = vec![SegmentSpec { model, params: parse_list(params)?, duration }];
    } else if let Some(d) = args.duration {
        match spec.segments.as_mut_slice() {
            [only] => only.duration = d,
            _ => return Err(CliError::usage("--duration alone needs a single-segment trajectory")),
        }
    }

    let c = &spec.camera;
    let camera = CameraModel::new(c.fx, c.fy, c.cx, c.cy, c.distortion, c.width, c.height)?;
    let segments = spec
        .segments
        .iter()
        .map(|s| Ok(Segment { motion: WarpParams::from_slice(s.model, &s.params)?, duration: s.duration }))
        .collect::<stppp_core::Result<Vec<_>>>()?;
    let trajectory = Trajectory::new(segments)?;
    let scene = simulator::generate_scene(
        spec.points,
        (spec.rate_min, spec.rate_max),
        spec.fov_deg.to_radians(),
        spec.seed,
    )?;
    let events = simulator::simulate_trajectory(&scene, &trajectory, &camera, Execution::default())?;
    let imu = simulator::imu_samples(&trajectory, spec.imu_rate);
    let poses = simulator::pose_samples(&trajectory, spec.pose_rate);
    simulator::write_dataset(&args.output, &events, &camera, &imu, &poses)?;
    eprintln!("{} events over {} s written to {}", events.len(), trajectory.duration(), args.output.display());
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Synthetic stream with at least `n` events under a moderate rotation.
fn bench_stream(n: usize, seed: u64, camera: &CameraModel) -> Result<(Vec<Event>, WarpParams), CliError> {
    let scene = simulator::generate_scene(5000, (300.0, 600.0), 120f64.to_radians(), seed)?;
    let motion = WarpParams::ConstOmega { omega: Vector3::new(0.5, -1.2, 2.0).normalize() * 200f64.to_radians() };
    let mut duration = 2.0 * n as f64 / scene.total_rate();
    loop {
        let events = simulator::simulate_events(&scene, &motion, duration, camera)?;
        if events.len() >= n {
            return Ok((events, motion));
        }
        duration *= 2.0;
    }
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let cfg = args.run.resolve()?;
    let sizes = parse_list(&args.sizes)?
        .into_iter()
        .map(|s| if s >= 2.0 && s.fract() == 0.0 { Ok(s as usize) } else { Err(CliError::usage(format!("bad packet size {s}"))) })
        .collect::<Result<Vec<_>, _>>()?;
    let objectives = args
        .objectives
        .split(',')
        .map(|o| o.trim().parse::<Objective>().map_err(|e| CliError::usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if args.reps == 0 || sizes.is_empty() {
        return Err(CliError::usage("need at least one size and one repetition"));
    }
    let largest = *sizes.iter().max().expect("non-empty");
    let (camera, events, params) = match &args.dataset {
        Some(dir) => {
            let data = load_dataset(dir, cfg.width, cfg.height)?;
            (data.camera, data.events, WarpParams::zero(cfg.model))
        }
        None => {
            let camera = CameraModel::pinhole(200.0, 200.0, 120.0, 90.0, cfg.width, cfg.height)?;
            let (events, motion) = bench_stream(largest, args.seed, &camera)?;
            let params = if cfg.model == MotionModel::Rotation { motion } else { WarpParams::zero(cfg.model) };
            (camera, events, params)
        }
    };
    if events.len() < largest {
        return Err(CliError::input(format!("dataset has {} events, fewer than {largest}", events.len())));
    }
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let prior = resolve_prior(&cfg, &events, &camera)?;
    let lut = stppp_core::BearingLut::build(&camera)?;

    let mut out = output(args.output.as_deref())?;
    writeln!(out, "objective,N_e,ns_per_eval")?;
    for &n in &sizes {
        let packet = packetize(&events[..n], n)?.remove(0);
        for &objective in &objectives {
            let loss = stppp_core::LossConfig { objective, ..cfg.loss(prior) };
            let mut f = PacketLoss::new(&packet, &lut, &camera, cfg.model, &loss, cfg.pad, exec)?;
            let theta = params.to_normalized(packet.duration());
            for _ in 0..3 {
                f.evaluate(&theta)?;
            }
            let times = (0..args.reps)
                .map(|i| {
                    let mut th = theta.clone();
                    th[0] += 1e-4 * i as f64;
                    let t0 = Instant::now();
                    f.evaluate(&th).map(|_| t0.elapsed().as_nanos() as f64)
                })
                .collect::<stppp_core::Result<Vec<_>>>()?;
            writeln!(out, "{},{n},{:.0}", objective.name(), median(times))?;
        }
    }
    out.flush()?;
    Ok(())
}
