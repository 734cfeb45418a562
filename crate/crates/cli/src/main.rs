//! `lidar-bias`: range-bias model, waveform simulator, calibration fit,
//! point-cloud correction and corridor demo.
//!
//! Machine-readable output goes to stdout or `--out`; diagnostics go to
//! stderr. Exit codes: 0 success, 1 numeric or model failure, 2 usage error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use lidar_bias::calibration::{
    fit_scale_factors, isocurve_grid, read_records, symmetric_average, Observation, RobustLoss, SetupGeometry,
};
use lidar_bias::cloud::{correct_cloud, read_csv, read_ply, write_csv, write_ply, CorrectionOptions, PointCloud};
use lidar_bias::corridor::{demo_pipeline, NormalSource, Scenario};
use lidar_bias::waveform::{self, TimeWindow};
use lidar_bias::{bias_error, DomainPolicy, Error, PulseParams, SensorModel, SurfaceTarget, Vec3};

#[derive(Parser)]
#[command(
    name = "lidar-bias",
    version,
    about = "LIDAR range bias versus depth and incidence angle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the return waveform of a tilted plane.
    #[command(allow_negative_numbers = true)]
    SimulateWaveform {
        /// Range to the plane, meters.
        #[arg(long = "d")]
        depth: f64,
        #[arg(long)]
        theta_deg: f64,
        #[command(flatten)]
        sensor: SensorArg,
        #[arg(long, value_enum, default_value_t = Mode::TwoD)]
        mode: Mode,
        #[arg(long, default_value_t = waveform::DEFAULT_SAMPLES)]
        samples: usize,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the bias e(d, θ) in meters.
    #[command(allow_negative_numbers = true)]
    Bias {
        #[arg(long = "d")]
        depth: f64,
        #[arg(long)]
        theta_deg: f64,
        #[command(flatten)]
        sensor: SensorArg,
    },
    /// Tabulate e(d, θ) over a grid.
    Isocurves {
        #[command(flatten)]
        sensor: SensorArg,
        /// `min:max`, meters.
        #[arg(long, default_value = "0.5:30")]
        d_range: Range,
        /// `min:max`, degrees.
        #[arg(long, default_value = "0:85")]
        theta_range: Range,
        /// `depths x angles`.
        #[arg(long, default_value = "60x86")]
        resolution: Resolution,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the two scale factors to calibration records.
    Fit {
        /// Records CSV `sensor,d_m,theta_deg,error_m,dispersion_m`, optionally
        /// with an `interferometer_m` column.
        #[arg(long)]
        data: PathBuf,
        /// Beam half-aperture, degrees.
        #[arg(long)]
        alpha_deg: f64,
        #[arg(long, default_value = "fitted")]
        name: String,
        #[arg(long, value_enum, default_value_t = Loss::Huber)]
        loss: Loss,
        #[arg(long, default_value_t = 0.0)]
        delta_z: f64,
        #[arg(long, default_value_t = 0.0)]
        delta_x: f64,
        #[arg(long, default_value_t = 0.0)]
        delta_c: f64,
        /// Output config; stdout when omitted.
        #[arg(long)]
        out_config: Option<PathBuf>,
    },
    /// Remove the modelled bias from a point cloud.
    Correct {
        /// `.ply` or `.csv` cloud.
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        sensor: SensorArg,
        /// Neighbours for normal estimation.
        #[arg(long, default_value_t = lidar_bias::cloud::DEFAULT_NEIGHBOURS)]
        k: usize,
        #[arg(long, default_value_t = 85.0)]
        max_incidence_deg: f64,
        /// Sensor origin `x,y,z` for CSV input.
        #[arg(long, default_value = "0,0,0")]
        origin: Origin,
        /// `.ply` or `.csv` output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the corridor mapping demo and report the map bend.
    CorridorDemo {
        #[arg(long, value_enum, default_value_t = Preset::TwoD)]
        preset: Preset,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        correction: Switch,
        #[arg(long, value_enum, default_value_t = Normals::Estimated)]
        normals: Normals,
        #[arg(long, default_value_t = lidar_bias::cloud::DEFAULT_NEIGHBOURS)]
        k: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct SensorArg {
    /// Preset name (lms151, rs-lidar-16, hdl-32e) or config file path.
    #[arg(long, default_value = "lms151")]
    sensor_config: String,
}

impl SensorArg {
    fn load(&self) -> Result<SensorModel, Failure> {
        let path = Path::new(&self.sensor_config);
        if path.exists() {
            return Ok(SensorModel::load(path)?);
        }
        SensorModel::preset(&self.sensor_config).ok_or_else(|| {
            Failure::Usage(format!(
                "`{}` is neither a file nor a preset (lms151, rs-lidar-16, hdl-32e)",
                self.sensor_config
            ))
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "2d")]
    TwoD,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Huber,
    #[value(name = "ls")]
    LeastSquares,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Normals {
    Exact,
    Estimated,
}

#[derive(Clone, Copy, Debug)]
struct Range(f64, f64);

impl FromStr for Range {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or("expected `min:max`")?;
        let v = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
        Ok(Range(v(a)?, v(b)?))
    }
}

#[derive(Clone, Copy, Debug)]
struct Resolution(usize, usize);

impl FromStr for Resolution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once('x').ok_or("expected `NxM`")?;
        let v = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a count"));
        Ok(Resolution(v(a)?, v(b)?))
    }
}

#[derive(Clone, Copy, Debug)]
struct Origin(Vec3);

impl FromStr for Origin {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
            .collect::<Result<Vec<_>, _>>()?;
        match v.as_slice() {
            [x, y, z] => Ok(Origin(Vec3::new(*x, *y, *z))),
            _ => Err("expected `x,y,z`".into()),
        }
    }
}

enum Failure {
    Usage(String),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => Failure::Usage(e.to_string()),
            other => Failure::Model(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Model(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cloud_format(path: &Path) -> Result<&'static str, Failure> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => Ok("ply"),
        Some("csv") => Ok("csv"),
        _ => Err(Failure::Usage(format!("{}: expected a .ply or .csv file", path.display()))),
    }
}

fn angle(deg: f64) -> Result<f64, Failure> {
    if deg.is_finite() {
        Ok(deg.to_radians())
    } else {
        Err(Failure::Usage(format!("angle must be finite, got {deg}")))
    }
}

fn run(command: Command) -> Outcome {
    let pulse = PulseParams::reference();
    match command {
        Command::SimulateWaveform {
            depth,
            theta_deg,
            sensor,
            mode,
            samples,
            out,
        } => {
            let model = sensor.load()?;
            let target = SurfaceTarget::new(depth, angle(theta_deg)?)?;
            let beam = model.beam()?;
            let window = TimeWindow::around_peak(&target, &pulse);
            let w = match mode {
                Mode::TwoD => waveform::return_waveform_2d(&target, &pulse, &beam, window, samples)?,
                Mode::Full => waveform::return_waveform_full(&target, &pulse, &beam, window, samples)?,
            };
            let mut sink = output(out.as_deref())?;
            w.write_csv(&mut sink)?;
            sink.flush()?;
            let peak = waveform::peak_time(&w)?;
            eprintln!(
                "peak at {peak:e} s, round trip {:e} s, shift {:e} s",
                target.round_trip(),
                peak - target.round_trip()
            );
        }
        Command::Bias {
            depth,
            theta_deg,
            sensor,
        } => {
            let model = sensor.load()?;
            let eval = bias_error(depth, angle(theta_deg)?, &model, &pulse, DomainPolicy::Clamp)?;
            if eval.clamped {
                eprintln!(
                    "warning: (d = {depth} m, θ = {theta_deg}°) is outside the validity domain; evaluated at d = {} m, θ = {:.3}°",
                    eval.depth,
                    eval.incidence.to_degrees()
                );
            }
            println!("{:.6}", eval.value);
        }
        Command::Isocurves {
            sensor,
            d_range,
            theta_range,
            resolution,
            out,
        } => {
            let model = sensor.load()?;
            let grid = isocurve_grid(
                &model,
                &pulse,
                (d_range.0, d_range.1),
                (theta_range.0, theta_range.1),
                (resolution.0, resolution.1),
            )?;
            let mut sink = output(out.as_deref())?;
            grid.write_csv(&mut sink)?;
            sink.flush()?;
            eprintln!("max |e| = {:.6} m", grid.max_abs());
        }
        Command::Fit {
            data,
            alpha_deg,
            name,
            loss,
            delta_z,
            delta_x,
            delta_c,
            out_config,
        } => {
            let geometry = SetupGeometry::new(delta_z, delta_x, delta_c)?;
            let records = read_records(File::open(&data)?)?;
            let averaged = symmetric_average(&records, &geometry)?;
            let unpaired = averaged.iter().filter(|a| !a.paired).count();
            if unpaired > 0 {
                eprintln!("warning: {unpaired} (d, θ) groups lack a ±θ partner");
            }
            let obs: Vec<Observation> = averaged.iter().map(|a| a.observation()).collect();
            let loss = match loss {
                Loss::Huber => RobustLoss::default(),
                Loss::LeastSquares => RobustLoss::LeastSquares,
            };
            let alpha = angle(alpha_deg)?;
            let fit = fit_scale_factors(&obs, alpha, &pulse, loss)?;
            let config = fit.to_config(&name, alpha)?;
            let mut sink = output(out_config.as_deref())?;
            sink.write_all(config.as_bytes())?;
            sink.flush()?;
            eprintln!(
                "s1 = {}, s2 = {:e}, residual RMS {:.6} m over {} points, {} iterations, {} down-weighted{}",
                fit.s1,
                fit.s2,
                fit.residual_rms,
                obs.len(),
                fit.iterations,
                fit.downweighted(),
                if fit.converged { "" } else { ", NOT converged" }
            );
        }
        Command::Correct {
            input,
            sensor,
            k,
            max_incidence_deg,
            origin,
            out,
        } => {
            let model = sensor.load()?;
            let (in_fmt, out_fmt) = (cloud_format(&input)?, cloud_format(&out)?);
            let file = File::open(&input)?;
            let cloud: PointCloud = if in_fmt == "ply" {
                read_ply(file)?
            } else {
                read_csv(file, origin.0)?
            };
            let options = CorrectionOptions {
                neighbours: k,
                max_incidence: angle(max_incidence_deg)?,
            };
            let (corrected, report) = correct_cloud(&cloud, &model, &pulse, &options)?;
            let sink = BufWriter::new(File::create(&out)?);
            if out_fmt == "ply" {
                write_ply(&corrected, sink)?;
            } else {
                write_csv(&corrected, sink)?;
            }
            eprint!("{}", report.to_text());
        }
        Command::CorridorDemo {
            preset,
            correction,
            normals,
            k,
            out_dir,
        } => {
            let scenario = match preset {
                Preset::TwoD => Scenario::planar_default(),
                Preset::ThreeD => Scenario::volumetric_default(),
            };
            let source = (correction == Switch::On).then_some(match normals {
                Normals::Exact => NormalSource::Exact,
                Normals::Estimated => NormalSource::Estimated { neighbours: k },
            });
            let outcome = demo_pipeline(&scenario, &pulse, source)?;
            std::fs::create_dir_all(&out_dir)?;
            let create = |name: &str| -> io::Result<BufWriter<File>> { Ok(BufWriter::new(File::create(out_dir.join(name))?)) };
            write_ply(&outcome.world_before, create("map_uncorrected.ply")?)?;
            outcome.uncorrected.write_csv(create("bins_uncorrected.csv")?)?;
            let mut summary = String::new();
            for line in outcome.uncorrected.to_key_values().lines() {
                summary.push_str(&format!("uncorrected.{line}\n"));
            }
            if let (Some(after), Some(world)) = (&outcome.corrected, &outcome.world_after) {
                write_ply(world, create("map_corrected.ply")?)?;
                after.write_csv(create("bins_corrected.csv")?)?;
                for line in after.to_key_values().lines() {
                    summary.push_str(&format!("corrected.{line}\n"));
                }
                if outcome.uncorrected.rms_dev > 0.0 {
                    summary.push_str(&format!("rms_ratio = {:?}\n", after.rms_dev / outcome.uncorrected.rms_dev));
                }
                summary.push_str(&format!("closure_error_m = {:?}\n", outcome.closure_error.unwrap_or(0.0)));
                summary.push_str(&format!("skipped_points = {}\n", outcome.skipped));
            }
            let mut metrics = create("metrics.txt")?;
            metrics.write_all(summary.as_bytes())?;
            metrics.flush()?;
            print!("{summary}");
        }
    }
    Ok(())
}
