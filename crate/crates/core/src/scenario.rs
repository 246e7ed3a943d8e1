//! Scenario configuration and the file-based pipeline stages behind the
//! `roslac` subcommands.
//!
//! A run directory holds every artifact of a scenario:
//!
//! | file               | stage         |
//! |--------------------|---------------|
//! | `config.json`      | all (defaults materialized) |
//! | `world.json`       | `gen-world`   |
//! | `truth_map.magmap` | `gen-world`   |
//! | `dataset.jsonl`    | `gen-dataset` |
//! | `fingerprints.csv` | `gen-dataset` |
//! | `truth.json`       | `gen-dataset` |
//! | `map.magmap`       | `build-map`   |
//! | `frames.csv`, `theta.csv`, `summary.json` | `run` |
//! | `report.json`      | `eval`        |

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorOutput, RunSummary, SolverConfig};
use crate::eval::{self, Report, TrajectoryPair};
use crate::geom::StateMask;
use crate::gpr::{self, Fingerprint, KernelParams};
use crate::magmap::{self, DipoleSource, FieldModel, GridSpec, MagneticGridMap};
use crate::sim::{self, CalibrationParams, DatasetFrame, NoiseConfig, SensorExtrinsics, Theta, TrajectorySpec};

pub const CONFIG_FILE: &str = "config.json";
pub const WORLD_FILE: &str = "world.json";
pub const TRUTH_MAP_FILE: &str = "truth_map.magmap";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const FINGERPRINT_FILE: &str = "fingerprints.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const MAP_FILE: &str = "map.magmap";
pub const FRAMES_FILE: &str = "frames.csv";
pub const THETA_FILE: &str = "theta.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub grid: GridSpec,
    pub earth_field: Vector3<f64>,
    /// Explicit anomalies; when empty, `random_dipoles` are drawn from `seed`.
    pub dipoles: Vec<DipoleSource>,
    pub random_dipoles: usize,
    /// Burial depth below the map plane, m.
    pub depth_range: [f64; 2],
    /// Dipole moment magnitude, µT·m³.
    pub moment_range: [f64; 2],
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                origin: Vector2::new(0.0, 0.0),
                resolution: 0.1,
                nx: 151,
                ny: 101,
                plane_height: 0.0,
            },
            earth_field: Vector3::new(20.0, 0.0, -40.0),
            dipoles: Vec::new(),
            random_dipoles: 6,
            depth_range: [1.0, 1.5],
            moment_range: [100.0, 150.0],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionMode {
    #[default]
    Random,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionConfig {
    pub mode: DistortionMode,
    /// Explicit per-sensor distortions; overrides `mode` when non-empty.
    pub calibrations: Vec<CalibrationParams>,
    pub seed: u64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            mode: DistortionMode::Random,
            calibrations: Vec::new(),
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapSource {
    /// Regression over the fingerprint survey.
    #[default]
    Gpr,
    /// The rasterized true field.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    /// Lattice spacing of the fingerprint survey, m.
    pub spacing: f64,
    /// Reading noise of the survey sensor, µT.
    pub sigma: f64,
    /// Extra coverage around the trajectory bounding box, m.
    pub margin: f64,
    pub seed: u64,
    pub kernel: KernelParams,
    pub map_source: MapSource,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            spacing: 0.4,
            sigma: 0.2,
            margin: 1.0,
            seed: 23,
            kernel: KernelParams {
                lengthscale: 0.7,
                ..KernelParams::default()
            },
            map_source: MapSource::Gpr,
        }
    }
}

/// Everything needed to reproduce a scenario end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    pub rig: Vec<SensorExtrinsics>,
    pub distortion: DistortionConfig,
    pub noise: NoiseConfig,
    pub trajectory: TrajectorySpec,
    pub survey: SurveyConfig,
    pub solver: SolverConfig,
}

impl Default for ScenarioConfig {
    /// 30 m lawnmower through a 15 m × 10 m world with six buried
    /// anomalies, eight sensors, 0.2 µT reading noise and a 0.5 m window.
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            rig: sim::default_rig(),
            distortion: DistortionConfig::default(),
            noise: NoiseConfig::default(),
            trajectory: TrajectorySpec {
                waypoints: TrajectorySpec::lawnmower(Vector2::new(3.0, 3.0), 9.0, 1.5, 3),
                speed: 0.5,
                frame_rate: 10.0,
                height: 0.0,
            },
            survey: SurveyConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// Reseeds distortions, odometry and reading noise, and the survey;
    /// the world stays fixed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise.rng_seed = seed;
        self.distortion.seed = seed.wrapping_add(1);
        self.survey.seed = seed.wrapping_add(2);
        self
    }

    /// The same scenario with exact, noiseless sensors.
    pub fn clean(mut self) -> Self {
        self.noise = NoiseConfig {
            rng_seed: self.noise.rng_seed,
            ..NoiseConfig::noiseless()
        };
        self.distortion.mode = DistortionMode::Identity;
        self.distortion.calibrations.clear();
        self.survey.sigma = 0.0;
        self.survey.map_source = MapSource::Truth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.world.grid.validate()?;
        let w = &self.world;
        if w.dipoles.is_empty() && w.random_dipoles > 0 {
            let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0] >= 0.0 && r[1].is_finite();
            if !ordered(w.depth_range) || !ordered(w.moment_range) {
                return Err(Error::Config("depth and moment ranges must be ordered and non-negative".into()));
            }
        }
        FieldModel {
            earth_field: w.earth_field,
            dipoles: w.dipoles.clone(),
        }
        .validate()?;
        if self.rig.is_empty() {
            return Err(Error::Config("rig has no sensors".into()));
        }
        for e in &self.rig {
            e.validate()?;
        }
        let c = &self.distortion.calibrations;
        if !c.is_empty() && c.len() != self.rig.len() {
            return Err(Error::Config(format!("{} distortions for {} sensors", c.len(), self.rig.len())));
        }
        for cal in c {
            cal.validate()?;
        }
        self.noise.validate()?;
        if !(self.survey.spacing > 0.0 && self.survey.sigma >= 0.0 && self.survey.margin >= 0.0) {
            return Err(Error::Config("survey spacing must be positive, sigma and margin non-negative".into()));
        }
        self.survey.kernel.validate()?;
        self.solver.validate()?;
        sim::generate_trajectory(&self.trajectory, Some(&self.world.grid))?;
        Ok(())
    }
}

/// Ablation switches of the `run` stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFlags {
    pub no_calib: bool,
    pub no_window: bool,
    /// Correct readings with the true distortion before estimation.
    pub precalibrated: bool,
    pub window_m: Option<f64>,
    pub state_mask: Option<StateMask>,
}

impl RunFlags {
    pub fn apply(&self, solver: &SolverConfig) -> SolverConfig {
        let mut s = *solver;
        if let Some(w) = self.window_m {
            s.window_m = w;
        }
        if let Some(m) = self.state_mask {
            s.state_mask = m;
        }
        if self.no_calib {
            s.calibrate = false;
        }
        if self.no_window {
            s.window_m = 0.0;
        }
        s
    }
}

/// Ground truth needed by `run` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub rig: Vec<SensorExtrinsics>,
    pub calibrations: Vec<CalibrationParams>,
    pub frame_rate: f64,
}

impl Truth {
    pub fn thetas(&self) -> Vec<Theta> {
        self.calibrations.iter().map(|c| c.theta()).collect()
    }
}

/// Everything the simulator produces for one scenario.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub frames: Vec<DatasetFrame>,
    pub fingerprints: Vec<Fingerprint>,
    pub truth: Truth,
}

fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// Field model of the scenario: explicit dipoles, or dipoles drawn one per
/// cell of a 3 × 2 partition of the grid.
pub fn build_field(cfg: &WorldConfig) -> Result<FieldModel> {
    if !cfg.dipoles.is_empty() || cfg.random_dipoles == 0 {
        let f = FieldModel {
            earth_field: cfg.earth_field,
            dipoles: cfg.dipoles.clone(),
        };
        f.validate()?;
        return Ok(f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = &cfg.grid;
    let max = g.max_corner();
    let (cols, rows) = (3usize, 2usize);
    let cw = (max.x - g.origin.x) / cols as f64;
    let ch = (max.y - g.origin.y) / rows as f64;
    let mut dipoles = Vec::with_capacity(cfg.random_dipoles);
    for k in 0..cfg.random_dipoles {
        let cell = k % (cols * rows);
        let (ci, cj) = (cell % cols, cell / cols);
        let x = g.origin.x + cw * (ci as f64 + rng.random_range(0.2..0.8));
        let y = g.origin.y + ch * (cj as f64 + rng.random_range(0.2..0.8));
        let depth = rng.random_range(cfg.depth_range[0]..=cfg.depth_range[1]);
        let magnitude = rng.random_range(cfg.moment_range[0]..=cfg.moment_range[1]);
        let dir = loop {
            let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                break v / n;
            }
        };
        dipoles.push(DipoleSource {
            position: Vector3::new(x, y, g.plane_height - depth),
            moment: dir * magnitude,
        });
    }
    let f = FieldModel {
        earth_field: cfg.earth_field,
        dipoles,
    };
    f.validate()?;
    Ok(f)
}

pub fn true_calibrations(cfg: &ScenarioConfig) -> Vec<CalibrationParams> {
    if !cfg.distortion.calibrations.is_empty() {
        return cfg.distortion.calibrations.clone();
    }
    match cfg.distortion.mode {
        DistortionMode::Identity => vec![CalibrationParams::identity(); cfg.rig.len()],
        DistortionMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.distortion.seed);
            cfg.rig.iter().map(|_| CalibrationParams::random(&mut rng)).collect()
        }
    }
}

/// Simulates the dataset and the fingerprint survey.
pub fn simulate(cfg: &ScenarioConfig, field: &FieldModel) -> Result<Simulation> {
    let poses = sim::generate_trajectory(&cfg.trajectory, Some(&cfg.world.grid))?;
    let calibrations = true_calibrations(cfg);
    let frames = sim::simulate_dataset(field, &poses, cfg.trajectory.frame_rate, &cfg.rig, &calibrations, &cfg.noise)?;

    let g = &cfg.world.grid;
    let (lo, hi) = cfg.trajectory.waypoints.iter().fold(
        (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY)),
        |(lo, hi), w| (lo.inf(w), hi.sup(w)),
    );
    let margin = Vector2::repeat(cfg.survey.margin);
    let lo = (lo - margin).sup(&g.origin);
    let hi = (hi + margin).inf(&g.max_corner());
    let fingerprints =
        sim::survey_fingerprints(field, lo, hi, cfg.survey.spacing, g.plane_height, cfg.survey.sigma, cfg.survey.seed)?;

    Ok(Simulation {
        frames,
        fingerprints,
        truth: Truth {
            rig: cfg.rig.clone(),
            calibrations,
            frame_rate: cfg.trajectory.frame_rate,
        },
    })
}

/// Dense map over the scenario grid.
pub fn build_map(cfg: &ScenarioConfig, field: &FieldModel, fingerprints: &[Fingerprint]) -> Result<MagneticGridMap> {
    match cfg.survey.map_source {
        MapSource::Truth => magmap::rasterize(field, &cfg.world.grid),
        MapSource::Gpr => gpr::fit(fingerprints, cfg.survey.kernel)?.build_grid(&cfg.world.grid),
    }
}

/// Runs the estimator, applying the true distortion first when `flags.precalibrated`.
pub fn run_estimator(
    frames: &[DatasetFrame],
    map: &MagneticGridMap,
    truth: &Truth,
    solver: &SolverConfig,
    flags: &RunFlags,
) -> Result<EstimatorOutput> {
    let solver = flags.apply(solver);
    if flags.precalibrated {
        let mut corrected = frames.to_vec();
        sim::apply_calibration(&mut corrected, &truth.calibrations);
        estimator::run(&corrected, map, &truth.rig, &solver)
    } else {
        estimator::run(frames, map, &truth.rig, &solver)
    }
}

/// Scores an estimator run against the simulator's ground truth.
pub fn evaluate(output: &EstimatorOutput, frames: &[DatasetFrame], truth: &Truth, precalibrated: bool) -> Result<Report> {
    let estimated: Vec<(f64, _)> = output.frames.iter().map(|f| (f.timestamp, f.pose)).collect();
    evaluate_poses(
        &estimated,
        output.final_theta(),
        frames,
        truth,
        precalibrated,
        output.fallback_count(),
        output.mean_frame_ms(),
    )
}

fn evaluate_poses(
    estimated: &[(f64, crate::geom::PoseState)],
    final_theta: &[Theta],
    frames: &[DatasetFrame],
    truth: &Truth,
    precalibrated: bool,
    fallback_frames: usize,
    mean_frame_ms: f64,
) -> Result<Report> {
    let reference: Vec<(f64, _)> = frames.iter().map(|f| (f.timestamp, f.gt_pose())).collect();
    let pair = TrajectoryPair::associate(estimated, &reference, 0.5 / truth.frame_rate);
    let target = if precalibrated {
        vec![CalibrationParams::identity().theta(); truth.calibrations.len()]
    } else {
        truth.thetas()
    };
    Report::new(&pair, final_theta, &target, fallback_frames, mean_frame_ms)
}

/// In-memory pipeline: world, simulation, map, estimation and evaluation.
pub fn run_scenario(cfg: &ScenarioConfig, flags: &RunFlags) -> Result<(EstimatorOutput, Report)> {
    cfg.validate()?;
    let field = build_field(&cfg.world)?;
    let sim = simulate(cfg, &field)?;
    let map = build_map(cfg, &field, &sim.fingerprints)?;
    let out = run_estimator(&sim.frames, &map, &sim.truth, &cfg.solver, flags)?;
    let report = evaluate(&out, &sim.frames, &sim.truth, flags.precalibrated)?;
    Ok((out, report))
}

/// Writes `world.json` and the rasterized true field.
pub fn cmd_gen_world(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let field = build_field(&cfg.world)?;
    let map = magmap::rasterize(&field, &cfg.world.grid)?;
    ensure_dir(out)?;
    cfg.save(out.join(CONFIG_FILE))?;
    write_json(out.join(WORLD_FILE), &field)?;
    map.save(out.join(TRUTH_MAP_FILE))
}

fn load_field(cfg: &ScenarioConfig, out: &Path) -> Result<FieldModel> {
    let path = out.join(WORLD_FILE);
    if path.exists() {
        let f: FieldModel = read_json(&path)?;
        f.validate()?;
        Ok(f)
    } else {
        build_field(&cfg.world)
    }
}

/// Writes the dataset, the fingerprint survey and the ground truth.
pub fn cmd_gen_dataset(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let field = load_field(cfg, out)?;
    let sim = simulate(cfg, &field)?;
    ensure_dir(out)?;
    cfg.save(out.join(CONFIG_FILE))?;
    sim::write_dataset(&sim.frames, out.join(DATASET_FILE))?;
    gpr::write_fingerprints(out.join(FINGERPRINT_FILE), &sim.fingerprints)?;
    write_json(out.join(TRUTH_FILE), &sim.truth)
}

/// Fits the regression map to `fingerprints.csv` and writes `map.magmap`.
pub fn cmd_build_map(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let map = match cfg.survey.map_source {
        MapSource::Truth => magmap::rasterize(&load_field(cfg, out)?, &cfg.world.grid)?,
        MapSource::Gpr => {
            let fps = gpr::read_fingerprints(out.join(FINGERPRINT_FILE))?;
            gpr::fit(&fps, cfg.survey.kernel)?.build_grid(&cfg.world.grid)?
        }
    };
    map.save(out.join(MAP_FILE))
}

/// Runs the estimator on `dataset.jsonl` against `map.magmap`.
pub fn cmd_run(cfg: &ScenarioConfig, out: &Path, flags: &RunFlags) -> Result<EstimatorOutput> {
    cfg.validate()?;
    let solver = flags.apply(&cfg.solver);
    solver.validate()?;
    let frames = sim::read_dataset(out.join(DATASET_FILE))?;
    let map = MagneticGridMap::load(out.join(MAP_FILE))?;
    let truth: Truth = read_json(out.join(TRUTH_FILE))?;
    let output = run_estimator(&frames, &map, &truth, &cfg.solver, flags)?;
    estimator::write_frames_csv(&output, out.join(FRAMES_FILE))?;
    estimator::write_theta_csv(&output, out.join(THETA_FILE))?;
    let summary = RunOutcome {
        summary: RunSummary::new(&output, &solver),
        flags: *flags,
    };
    write_json(out.join(SUMMARY_FILE), &summary)?;
    Ok(output)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunOutcome {
    #[serde(flatten)]
    summary: RunSummary,
    flags: RunFlags,
}

/// Scores `frames.csv` and `summary.json` against the dataset ground truth.
pub fn cmd_eval(out: &Path) -> Result<Report> {
    let frames = sim::read_dataset(out.join(DATASET_FILE))?;
    let truth: Truth = read_json(out.join(TRUTH_FILE))?;
    let outcome: RunOutcome = read_json(out.join(SUMMARY_FILE))?;
    let rows = eval::read_frames_csv(out.join(FRAMES_FILE))?;
    let estimated: Vec<(f64, _)> = rows.iter().map(|r| (r.t, r.pose())).collect();
    let final_theta: Vec<Theta> = outcome.summary.final_calibration.iter().map(|c| c.theta()).collect();
    let mean_ms = rows.iter().map(|r| r.ms).sum::<f64>() / rows.len() as f64;
    let fallbacks = rows.iter().filter(|r| r.fallback != 0).count();
    let report = evaluate_poses(
        &estimated,
        &final_theta,
        &frames,
        &truth,
        outcome.flags.precalibrated,
        fallbacks,
        mean_ms,
    )?;
    report.write(out.join(REPORT_FILE))?;
    Ok(report)
}

/// All stages in sequence.
pub fn cmd_pipeline(cfg: &ScenarioConfig, out: &Path, flags: &RunFlags) -> Result<Report> {
    cfg.validate()?;
    flags.apply(&cfg.solver).validate()?;
    cmd_gen_world(cfg, out)?;
    cmd_gen_dataset(cfg, out)?;
    cmd_build_map(cfg, out)?;
    cmd_run(cfg, out, flags)?;
    cmd_eval(out)
}
