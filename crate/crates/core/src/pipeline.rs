//! End-to-end run: load or synthesize events, denoise, gate, track, measure.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use log::{info, warn};

use crate::blink::{gate_stream, GateOutcome};
use crate::config::RunConfig;
use crate::deform::{
    calibrate, highpass_detrend, series_stats, to_metric, Calibration, DisplacementSeries,
    VibrationStats, REFERENCE_SAMPLES,
};
use crate::denoise::{denoise_two_stage, DenoiseMasks};
use crate::error::{Error, Result};
use crate::event::{EventStream, GroundTruthLabel};
use crate::io::{read_events, write_atomic, write_events, write_pixel_series, write_series, write_trajectory, EventFileFormat};
use crate::synth::{eval_filter, synth_scene, FilterScore};
use crate::tracker::{track, CenterTrajectory, TrackOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub name: &'static str,
    pub events_in: usize,
    pub events_out: usize,
    pub wall: Duration,
    /// Present when the input carries ground-truth labels.
    pub score: Option<FilterScore>,
}

/// Spread of a tracked center around its own mean, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerReport {
    pub marker_id: u32,
    pub samples: usize,
    pub stale: usize,
    pub mean: (f64, f64),
    pub std: (f64, f64),
    pub max_dev: (f64, f64),
}

impl MarkerReport {
    pub fn from_trajectory(traj: &CenterTrajectory) -> Self {
        let fresh: Vec<_> = traj.fresh_samples().collect();
        let n = fresh.len().max(1) as f64;
        let mu = fresh.iter().map(|s| s.u).sum::<f64>() / n;
        let mv = fresh.iter().map(|s| s.v).sum::<f64>() / n;
        let su = (fresh.iter().map(|s| (s.u - mu).powi(2)).sum::<f64>() / n).sqrt();
        let sv = (fresh.iter().map(|s| (s.v - mv).powi(2)).sum::<f64>() / n).sqrt();
        let du = fresh.iter().fold(0.0f64, |m, s| m.max((s.u - mu).abs()));
        let dv = fresh.iter().fold(0.0f64, |m, s| m.max((s.v - mv).abs()));
        Self {
            marker_id: traj.marker_id,
            samples: traj.samples.len(),
            stale: traj.samples.len() - fresh.len(),
            mean: (mu, mv),
            std: (su, sv),
            max_dev: (du, dv),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementReport {
    pub marker_id: u32,
    /// Mean of the last few samples, meters (pixels when uncalibrated).
    pub final_displacement: (f64, f64),
    pub stats: Option<VibrationStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub complete: bool,
    pub failed_stage: Option<&'static str>,
    pub failure: Option<String>,
    pub input_events: usize,
    pub width: u16,
    pub height: u16,
    pub stages: Vec<StageReport>,
    /// Input to gate output, when labeled.
    pub overall: Option<FilterScore>,
    pub markers: Vec<MarkerReport>,
    pub calibration: Option<Calibration>,
    /// Meters per pixel applied to the series; `None` leaves them in pixels.
    pub magnification: Option<f64>,
    pub displacements: Vec<DisplacementReport>,
    pub warnings: Vec<String>,
    /// The run configuration without its output directory, so runs into
    /// different directories echo the same text.
    pub config_echo: String,
}

impl RunReport {
    fn new(config: &RunConfig) -> Self {
        Self {
            complete: false,
            failed_stage: None,
            failure: None,
            input_events: 0,
            width: 0,
            height: 0,
            stages: vec![],
            overall: None,
            markers: vec![],
            calibration: None,
            magnification: None,
            displacements: vec![],
            warnings: vec![],
            config_echo: RunConfig {
                output: None,
                ..config.clone()
            }
            .to_text(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Sectioned `key = value` text. Wall-clock lines are omitted when
    /// `timing` is false so two runs can be compared byte for byte.
    pub fn to_text(&self, timing: bool) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "[run]");
        let _ = writeln!(o, "complete = {}", self.complete);
        if let Some(stage) = self.failed_stage {
            let _ = writeln!(o, "failed_stage = {stage}");
        }
        if let Some(msg) = &self.failure {
            let _ = writeln!(o, "failure = {msg}");
        }
        let _ = writeln!(o, "input_events = {}", self.input_events);
        let _ = writeln!(o, "sensor = {}x{}", self.width, self.height);
        for s in &self.stages {
            let _ = writeln!(o, "\n[stage.{}]", s.name);
            let _ = writeln!(o, "events_in = {}\nevents_out = {}", s.events_in, s.events_out);
            if timing {
                let _ = writeln!(o, "wall_ms = {:.3}", s.wall.as_secs_f64() * 1e3);
            }
            if let Some(score) = &s.score {
                write_score(&mut o, score);
            }
        }
        if let Some(score) = &self.overall {
            let _ = writeln!(o, "\n[filter.overall]");
            write_score(&mut o, score);
        }
        for m in &self.markers {
            let _ = writeln!(o, "\n[marker.{}]", m.marker_id);
            let _ = writeln!(o, "samples = {}\nstale = {}", m.samples, m.stale);
            let _ = writeln!(o, "mean_px = {:.4}, {:.4}", m.mean.0, m.mean.1);
            let _ = writeln!(o, "std_px = {:.4}, {:.4}", m.std.0, m.std.1);
            let _ = writeln!(o, "max_dev_px = {:.4}, {:.4}", m.max_dev.0, m.max_dev.1);
        }
        if let Some(c) = &self.calibration {
            let _ = writeln!(o, "\n[calibration]");
            let _ = writeln!(o, "rod_length_m = {}", c.rod_length);
            let _ = writeln!(o, "pixel_separation = {:.4}", c.pixel_separation);
            let _ = writeln!(o, "separation_std = {:.4}", c.separation_std);
            let _ = writeln!(o, "mm_per_px = {:.6}", c.magnification * 1e3);
            let _ = writeln!(o, "samples = {}", c.samples);
        }
        let unit = if self.magnification.is_some() { "mm" } else { "px" };
        let scale = if self.magnification.is_some() { 1e3 } else { 1.0 };
        for d in &self.displacements {
            let _ = writeln!(o, "\n[displacement.{}]", d.marker_id);
            let (x, y) = d.final_displacement;
            let _ = writeln!(o, "final_{unit} = {:.4}, {:.4}", x * scale, y * scale);
            if let Some(s) = &d.stats {
                let _ = writeln!(o, "mean_{unit} = {:.4}", s.mean * scale);
                let _ = writeln!(o, "range_{unit} = {:.4}", s.range * scale);
                let _ = writeln!(o, "std_{unit} = {:.4}", s.std_dev * scale);
                let _ = writeln!(o, "oscillations = {}", s.oscillation_count);
                let _ = writeln!(o, "dominant_hz = {:.4}", s.dominant_freq);
                let _ = writeln!(o, "spectral_peak_hz = {:.4}", s.spectral_peak_freq);
                let _ = writeln!(o, "frequency_mismatch = {}", s.frequency_mismatch);
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(o, "\n[warnings]");
            for (i, w) in self.warnings.iter().enumerate() {
                let _ = writeln!(o, "w{i} = {w}");
            }
        }
        o
    }
}

fn write_score(o: &mut String, s: &FilterScore) {
    let _ = writeln!(o, "noise_removal_rate = {:.6}", s.noise_removal_rate);
    let _ = writeln!(o, "signal_loss_rate = {:.6}", s.signal_loss_rate);
    let _ = writeln!(o, "motion_removal_rate = {:.6}", s.motion_removal_rate);
    let _ = writeln!(
        o,
        "noise = {}/{}\nsignal_removed = {}/{}\nmotion_removed = {}/{}",
        s.noise_removed, s.noise_total, s.signal_removed, s.signal_total, s.motion_removed, s.motion_total
    );
}

/// Everything a run produces, for callers that want more than the report.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub input: EventStream,
    pub labels: Option<Vec<GroundTruthLabel>>,
    /// Masks over `input`.
    pub denoise: DenoiseMasks,
    /// Mask over the denoised events.
    pub gate: Option<GateOutcome>,
    pub track: TrackOutput,
    pub series: Vec<DisplacementSeries>,
}

impl RunOutcome {
    pub fn denoised(&self) -> EventStream {
        self.input.select(&self.denoise.kept)
    }

    /// Events handed to the tracker.
    pub fn gated(&self) -> EventStream {
        let d = self.denoised();
        match &self.gate {
            Some(g) => d.select(&g.kept),
            None => d,
        }
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed()))
}

fn select_labels(labels: &Option<Vec<GroundTruthLabel>>, mask: &[bool]) -> Option<Vec<GroundTruthLabel>> {
    labels.as_ref().map(|l| {
        l.iter()
            .zip(mask)
            .filter_map(|(l, &k)| k.then_some(*l))
            .collect()
    })
}

/// Runs every stage. On a stage error the report is written (if an output
/// directory is set) with `complete = false` and the error is returned.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome> {
    let mut report = RunReport::new(config);
    if let Some(dir) = &config.output {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("config.txt"), report.config_echo.as_bytes())?;
    }
    match run_stages(config, &mut report) {
        Ok(outcome) => Ok(outcome),
        Err((stage, err)) => {
            let err = err.in_stage(stage);
            report.failed_stage = Some(stage);
            report.failure = Some(err.to_string());
            if let Some(dir) = &config.output {
                write_atomic(&dir.join("report.txt"), report.to_text(false).as_bytes())?;
            }
            Err(err)
        }
    }
}

type StageResult<T> = std::result::Result<T, (&'static str, Error)>;

fn at<T>(stage: &'static str, r: Result<T>) -> StageResult<T> {
    r.map_err(|e| (stage, e))
}

fn run_stages(config: &RunConfig, report: &mut RunReport) -> StageResult<RunOutcome> {
    let out_dir = config.output.as_deref();

    let ((input, labels), wall) = at(
        "load",
        timed(|| match &config.input {
            Some(path) => {
                let file = read_events(path, EventFileFormat::from_path(path))?;
                Ok((file.stream, file.labels))
            }
            None => {
                let s = synth_scene(&config.scene)?;
                Ok((s.stream, Some(s.labels)))
            }
        }),
    )?;
    let meta = input.meta();
    report.input_events = input.len();
    report.width = meta.width;
    report.height = meta.height;
    report.stages.push(StageReport {
        name: "load",
        events_in: input.len(),
        events_out: input.len(),
        wall,
        score: None,
    });
    info!("loaded {} events ({}x{})", input.len(), meta.width, meta.height);
    if config.write_intermediate {
        if let Some(dir) = out_dir {
            at("load", write_events(&dir.join("input.evdf"), &input, None, EventFileFormat::BinaryPacked))?;
        }
    }

    let (masks, wall) = at(
        "denoise",
        timed(|| {
            denoise_two_stage(
                input.events(),
                meta.width,
                meta.height,
                &config.denoise,
            )
        }),
    )?;
    let denoise_score = match &labels {
        Some(l) => Some(at("denoise", eval_filter(l, &masks.kept))?),
        None => None,
    };
    let denoised = input.select(&masks.kept);
    let denoised_labels = select_labels(&labels, &masks.kept);
    report.stages.push(StageReport {
        name: "denoise",
        events_in: input.len(),
        events_out: denoised.len(),
        wall,
        score: denoise_score,
    });
    if config.write_intermediate {
        if let Some(dir) = out_dir {
            at(
                "denoise",
                write_events(&dir.join("denoised.evdf"), &denoised, None, EventFileFormat::BinaryPacked),
            )?;
        }
    }

    let (gate, gated) = if config.gate_enabled {
        let (outcome, wall) = at("gate", timed(|| gate_stream(denoised.events(), &config.gate)))?;
        let score = match &denoised_labels {
            Some(l) => Some(at("gate", eval_filter(l, &outcome.kept))?),
            None => None,
        };
        let gated = denoised.select(&outcome.kept);
        report.stages.push(StageReport {
            name: "gate",
            events_in: denoised.len(),
            events_out: gated.len(),
            wall,
            score,
        });
        if config.write_intermediate {
            if let Some(dir) = out_dir {
                at("gate", write_events(&dir.join("gated.evdf"), &gated, None, EventFileFormat::BinaryPacked))?;
            }
        }
        (Some(outcome), gated)
    } else {
        (None, denoised.clone())
    };
    if let Some(l) = &labels {
        let mut overall = masks.kept.clone();
        if let Some(g) = &gate {
            let mut it = g.kept.iter();
            for k in overall.iter_mut().filter(|k| **k) {
                *k = *it.next().unwrap_or(&false);
            }
        }
        report.overall = Some(at("gate", eval_filter(l, &overall))?);
    }

    let (tracked, wall) = at("track", timed(|| track(gated.events(), &config.tracker, config.markers)))?;
    report.stages.push(StageReport {
        name: "track",
        events_in: gated.len(),
        events_out: tracked.admitted,
        wall,
        score: None,
    });
    report.warnings.extend(tracked.warnings.iter().cloned());
    report.markers = tracked.trajectories.iter().map(MarkerReport::from_trajectory).collect();
    if let Some(dir) = out_dir {
        for t in &tracked.trajectories {
            at(
                "track",
                write_trajectory(&dir.join(format!("trajectory_{}.csv", t.marker_id)), t),
            )?;
        }
    }

    let start = Instant::now();
    let series = at("measure", measure(config, &tracked.trajectories, report))?;
    report.stages.push(StageReport {
        name: "measure",
        events_in: gated.len(),
        events_out: gated.len(),
        wall: start.elapsed(),
        score: None,
    });
    if let Some(dir) = out_dir {
        for (t, s) in tracked.trajectories.iter().zip(&series) {
            let path = dir.join(format!("series_{}.csv", t.marker_id));
            if report.magnification.is_some() {
                at("measure", write_series(&path, s))?;
            } else {
                at("measure", write_pixel_series(&path, s))?;
            }
        }
    }

    for w in &report.warnings {
        warn!("{w}");
    }
    report.complete = true;
    if let Some(dir) = out_dir {
        at("measure", write_atomic(&dir.join("report.txt"), report.to_text(false).as_bytes()))?;
    }
    Ok(RunOutcome {
        report: report.clone(),
        input,
        labels,
        denoise: masks,
        gate,
        track: tracked,
        series,
    })
}

fn window(traj: &CenterTrajectory, span_us: u64) -> CenterTrajectory {
    let t0 = traj.fresh_samples().next().map_or(0, |s| s.t);
    CenterTrajectory {
        marker_id: traj.marker_id,
        samples: traj
            .samples
            .iter()
            .filter(|s| s.t < t0.saturating_add(span_us))
            .copied()
            .collect(),
    }
}

/// Calibration, metric series, optional detrend and vibration statistics.
fn measure(config: &RunConfig, trajs: &[CenterTrajectory], report: &mut RunReport) -> Result<Vec<DisplacementSeries>> {
    let m = &config.measure;
    let magnification = if trajs.len() >= 2 {
        let span = m.calibration_window_us;
        let cal = calibrate(&window(&trajs[0], span), &window(&trajs[1], span), m.rod_length)?;
        report.calibration = Some(cal);
        Some(cal.magnification)
    } else if m.magnification > 0.0 {
        Some(m.magnification)
    } else {
        None
    };
    report.magnification = magnification;
    let mut out = Vec::with_capacity(trajs.len());
    for t in trajs {
        let series = match report.calibration {
            Some(ref cal) => to_metric(t, cal)?,
            None => {
                let unit = Calibration::from_separation(magnification.unwrap_or(1.0), 1.0)?;
                to_metric(t, &unit)?
            }
        };
        let series = if m.cutoff_hz > 0.0 {
            highpass_detrend(&series, m.cutoff_hz)?
        } else {
            series
        };
        let tail = series.samples.len().min(REFERENCE_SAMPLES).max(1) as f64;
        let last = &series.samples[series.samples.len().saturating_sub(REFERENCE_SAMPLES)..];
        let final_displacement = (
            last.iter().map(|s| s.dx).sum::<f64>() / tail,
            last.iter().map(|s| s.dy).sum::<f64>() / tail,
        );
        let stats = match series_stats(&series, m.axis) {
            Ok(s) => Some(s),
            Err(e) => {
                report.warnings.push(format!("marker {}: no vibration statistics: {e}", t.marker_id));
                None
            }
        };
        report.displacements.push(DisplacementReport {
            marker_id: t.marker_id,
            final_displacement,
            stats,
        });
        out.push(series);
    }
    Ok(out)
}

/// Reads the echoed configuration of a previous run.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    crate::config::parse_config(&text)
}
