//! Run configuration: flat `key = value` text grouped under `[section]`
//! headers. Every key has a default; unknown keys are rejected. The same
//! keys can be set from the command line as `section.key=value`.
//!
//! ```text
//! [run]
//! seed = 7
//! markers = 2
//!
//! [denoise]
//! n_th = 5
//!
//! [led.0]
//! x = 390.5
//! y = 360
//! ```
//!
//! `led.N` sections describe synthetic LEDs; the first one present replaces
//! the default pair.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::blink::BlinkGateParams;
use crate::denoise::DenoiseParams;
use crate::error::{Error, Result};
use crate::synth::{Axis, LedSpec, NoiseSpec, SceneSpec, TrajectorySpec};
use crate::tracker::TrackerParams;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureParams {
    /// Distance between the two marker centers on the structure, meters.
    pub rod_length: f64,
    /// Leading span of the trajectories used for calibration, microseconds.
    pub calibration_window_us: u64,
    /// High-pass cutoff; `0` disables detrending.
    pub cutoff_hz: f64,
    /// Meters per pixel used when fewer than two markers are tracked; `0`
    /// leaves displacements in pixels.
    pub magnification: f64,
    pub axis: Axis,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            rod_length: 1.0,
            calibration_window_us: 100_000,
            cutoff_hz: 0.0,
            magnification: 0.0,
            axis: Axis::X,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Event file to process; a synthetic scene is rendered when absent.
    pub input: Option<PathBuf>,
    /// Directory for run artifacts; nothing is written when absent.
    pub output: Option<PathBuf>,
    pub write_intermediate: bool,
    pub markers: usize,
    pub denoise: DenoiseParams,
    pub gate_enabled: bool,
    pub gate: BlinkGateParams,
    pub tracker: TrackerParams,
    pub measure: MeasureParams,
    /// Scene rendered when there is no input. Its seed mirrors `seed`.
    pub scene: SceneSpec,
}

/// Two 10 px LEDs, 500 px apart, with the standard noise level.
pub fn default_scene() -> SceneSpec {
    let mut scene = SceneSpec::new(
        vec![
            LedSpec::new(0, (390.0, 360.0), 10.0),
            LedSpec::new(1, (890.0, 360.0), 10.0),
        ],
        1_000_000,
    );
    scene.noise = NoiseSpec {
        background_rate: 5_000.0,
        hot_pixel_count: 5,
        hot_pixel_rate: 1_000.0,
    };
    scene
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input: None,
            output: None,
            write_intermediate: false,
            markers: 2,
            denoise: DenoiseParams::default(),
            gate_enabled: true,
            gate: BlinkGateParams::default(),
            tracker: TrackerParams::default(),
            measure: MeasureParams::default(),
            scene: default_scene(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{section}.{key} = {value:?}: {e}")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{section}.{key} = {value:?}: expected a boolean"))),
    }
}

fn parse_axis(section: &str, key: &str, value: &str) -> Result<Axis> {
    match value {
        "x" | "X" | "u" => Ok(Axis::X),
        "y" | "Y" | "v" => Ok(Axis::Y),
        _ => Err(Error::Config(format!("{section}.{key} = {value:?}: expected x or y"))),
    }
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::X => "x",
        Axis::Y => "y",
    }
}

/// Trajectory fields are kept flat so any key can be set independently.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TrajectoryKeys {
    kind: &'static str,
    step_dx: f64,
    step_dy: f64,
    step_at_us: u64,
    step_ramp_us: u64,
    sine_amplitude: f64,
    sine_freq: f64,
    sine_axis: Axis,
}

impl TrajectoryKeys {
    fn from_spec(t: &TrajectorySpec) -> Self {
        let mut k = TrajectoryKeys {
            kind: "static",
            step_dx: 0.0,
            step_dy: 0.0,
            step_at_us: 0,
            step_ramp_us: 0,
            sine_amplitude: 0.0,
            sine_freq: 50.0,
            sine_axis: Axis::X,
        };
        match *t {
            TrajectorySpec::Static => {}
            TrajectorySpec::Step {
                offset_px,
                at_us,
                ramp_us,
            } => {
                k.kind = "step";
                (k.step_dx, k.step_dy) = offset_px;
                k.step_at_us = at_us;
                k.step_ramp_us = ramp_us;
            }
            TrajectorySpec::Sinusoid {
                amplitude_px,
                freq_hz,
                axis,
            } => {
                k.kind = "sinusoid";
                k.sine_amplitude = amplitude_px;
                k.sine_freq = freq_hz;
                k.sine_axis = axis;
            }
        }
        k
    }

    fn to_spec(self) -> TrajectorySpec {
        match self.kind {
            "step" => TrajectorySpec::Step {
                offset_px: (self.step_dx, self.step_dy),
                at_us: self.step_at_us,
                ramp_us: self.step_ramp_us,
            },
            "sinusoid" => TrajectorySpec::Sinusoid {
                amplitude_px: self.sine_amplitude,
                freq_hz: self.sine_freq,
                axis: self.sine_axis,
            },
            _ => TrajectorySpec::Static,
        }
    }
}

/// Incremental builder used by the text parser and CLI overrides.
pub struct ConfigBuilder {
    config: RunConfig,
    trajectory: TrajectoryKeys,
    leds_replaced: bool,
}

impl Default for ConfigBuilder {
    fn default() -> Self {
        Self::from_config(RunConfig::default())
    }
}

impl ConfigBuilder {
    pub fn from_config(config: RunConfig) -> Self {
        let trajectory = TrajectoryKeys::from_spec(&config.scene.trajectory);
        Self {
            config,
            trajectory,
            leds_replaced: false,
        }
    }

    pub fn build(mut self) -> Result<RunConfig> {
        self.config.scene.trajectory = self.trajectory.to_spec();
        self.config.scene.seed = self.config.seed;
        let c = &self.config;
        c.denoise.validate().map_err(config_err)?;
        c.gate.validate().map_err(config_err)?;
        c.tracker.validate().map_err(config_err)?;
        if c.markers == 0 {
            return Err(Error::Config("run.markers must be >= 1".into()));
        }
        if !(c.measure.rod_length > 0.0) || c.measure.cutoff_hz < 0.0 || c.measure.magnification < 0.0 {
            return Err(Error::Config(
                "measure.rod_length must be > 0; cutoff_hz and magnification >= 0".into(),
            ));
        }
        Ok(self.config)
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let path = path.trim();
        let (section, key) = path
            .rsplit_once('.')
            .ok_or_else(|| Error::Config(format!("override key {path:?} needs a section")))?;
        self.set(section, key, value.trim())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(Error::Config(format!("line {}: key {key:?} outside a section", i + 1)));
            }
            self.set(&section, key, value)?;
        }
        Ok(())
    }

    fn led_mut(&mut self, index: usize) -> &mut LedSpec {
        if !self.leds_replaced {
            self.config.scene.leds.clear();
            self.leds_replaced = true;
        }
        let leds = &mut self.config.scene.leds;
        while leds.len() <= index {
            let id = leds.len() as u32;
            leds.push(LedSpec::new(id, (0.0, 0.0), 10.0));
        }
        &mut leds[index]
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let c = &mut self.config;
        let unknown = || Error::Config(format!("unknown key `{section}.{key}`"));
        match section {
            "run" => match key {
                "seed" => c.seed = parse(section, key, value)?,
                "input" => c.input = (!value.is_empty()).then(|| PathBuf::from(value)),
                "output" => c.output = (!value.is_empty()).then(|| PathBuf::from(value)),
                "write_intermediate" => c.write_intermediate = parse_bool(section, key, value)?,
                "markers" => c.markers = parse(section, key, value)?,
                _ => return Err(unknown()),
            },
            "denoise" => {
                let d = &mut c.denoise;
                match key {
                    "n_th" => d.n_th = parse(section, key, value)?,
                    "t_x" => d.t_x = parse(section, key, value)?,
                    "t_y" => d.t_y = parse(section, key, value)?,
                    "t_t" => d.t_t = parse(section, key, value)?,
                    "bin_width" => d.bin_width = parse(section, key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "gate" => {
                let g = &mut c.gate;
                match key {
                    "enabled" => c.gate_enabled = parse_bool(section, key, value)?,
                    "f_led" => g.f_led = parse(section, key, value)?,
                    "f_th" => g.f_th = parse(section, key, value)?,
                    "warmup_reversals" => g.warmup_reversals = parse(section, key, value)?,
                    "buffer_cap" => g.buffer_cap = parse(section, key, value)?,
                    "keep_undecided" => g.keep_undecided = parse(section, key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "tracker" => {
                let t = &mut c.tracker;
                match key {
                    "d_th" => t.d_th = parse(section, key, value)?,
                    "t_su" => t.t_su = parse(section, key, value)?,
                    "var_floor" => t.var_floor = parse(section, key, value)?,
                    "sample_period" => t.sample_period = parse(section, key, value)?,
                    "min_seed_events" => t.min_seed_events = parse(section, key, value)?,
                    "seed_window" => t.seed_window = parse(section, key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "measure" => {
                let m = &mut c.measure;
                match key {
                    "rod_length" => m.rod_length = parse(section, key, value)?,
                    "calibration_window_us" => m.calibration_window_us = parse(section, key, value)?,
                    "cutoff_hz" => m.cutoff_hz = parse(section, key, value)?,
                    "magnification" => m.magnification = parse(section, key, value)?,
                    "axis" => m.axis = parse_axis(section, key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "synth" => {
                let s = &mut c.scene;
                let tr = &mut self.trajectory;
                match key {
                    "duration_us" => s.duration_us = parse(section, key, value)?,
                    "width" => s.width = parse(section, key, value)?,
                    "height" => s.height = parse(section, key, value)?,
                    "jitter_us" => s.jitter_us = parse(section, key, value)?,
                    "motion_step_us" => s.motion_step_us = parse(section, key, value)?,
                    "halo_probability" => s.halo_probability = parse(section, key, value)?,
                    "background_rate" => s.noise.background_rate = parse(section, key, value)?,
                    "hot_pixel_count" => s.noise.hot_pixel_count = parse(section, key, value)?,
                    "hot_pixel_rate" => s.noise.hot_pixel_rate = parse(section, key, value)?,
                    "trajectory" => {
                        tr.kind = match value {
                            "static" => "static",
                            "step" => "step",
                            "sinusoid" => "sinusoid",
                            _ => {
                                return Err(Error::Config(format!(
                                    "synth.trajectory = {value:?}: expected static, step or sinusoid"
                                )))
                            }
                        }
                    }
                    "step_dx" => tr.step_dx = parse(section, key, value)?,
                    "step_dy" => tr.step_dy = parse(section, key, value)?,
                    "step_at_us" => tr.step_at_us = parse(section, key, value)?,
                    "step_ramp_us" => tr.step_ramp_us = parse(section, key, value)?,
                    "sine_amplitude" => tr.sine_amplitude = parse(section, key, value)?,
                    "sine_freq" => tr.sine_freq = parse(section, key, value)?,
                    "sine_axis" => tr.sine_axis = parse_axis(section, key, value)?,
                    _ => return Err(unknown()),
                }
            }
            s if s.starts_with("led.") => {
                let index: usize = s[4..]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad LED section [{s}]")))?;
                let led = self.led_mut(index);
                match key {
                    "x" => led.center.0 = parse(section, key, value)?,
                    "y" => led.center.1 = parse(section, key, value)?,
                    "radius" => led.radius = parse(section, key, value)?,
                    "blink_hz" => led.blink_hz = parse(section, key, value)?,
                    "duty_on" => led.duty.0 = parse(section, key, value)?,
                    "duty_off" => led.duty.1 = parse(section, key, value)?,
                    "events_per_edge" => led.events_per_edge_per_pixel = parse(section, key, value)?,
                    "halo_radius" => led.halo_radius = parse(section, key, value)?,
                    _ => return Err(unknown()),
                }
            }
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidParam(msg) => Error::Config(msg),
        e => e,
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut b = ConfigBuilder::default();
    b.apply_text(text)?;
    b.build()
}

impl RunConfig {
    /// Full configuration with every key; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(o, "[run]");
        let _ = writeln!(o, "seed = {}", self.seed);
        let _ = writeln!(o, "input = {}", path(&self.input));
        let _ = writeln!(o, "output = {}", path(&self.output));
        let _ = writeln!(o, "write_intermediate = {}", self.write_intermediate);
        let _ = writeln!(o, "markers = {}", self.markers);
        let d = &self.denoise;
        let _ = writeln!(o, "\n[denoise]");
        let _ = writeln!(o, "n_th = {}\nt_x = {}\nt_y = {}\nt_t = {}\nbin_width = {}", d.n_th, d.t_x, d.t_y, d.t_t, d.bin_width);
        let g = &self.gate;
        let _ = writeln!(o, "\n[gate]");
        let _ = writeln!(
            o,
            "enabled = {}\nf_led = {}\nf_th = {}\nwarmup_reversals = {}\nbuffer_cap = {}\nkeep_undecided = {}",
            self.gate_enabled, g.f_led, g.f_th, g.warmup_reversals, g.buffer_cap, g.keep_undecided
        );
        let t = &self.tracker;
        let _ = writeln!(o, "\n[tracker]");
        let _ = writeln!(
            o,
            "d_th = {}\nt_su = {}\nvar_floor = {}\nsample_period = {}\nmin_seed_events = {}\nseed_window = {}",
            t.d_th, t.t_su, t.var_floor, t.sample_period, t.min_seed_events, t.seed_window
        );
        let m = &self.measure;
        let _ = writeln!(o, "\n[measure]");
        let _ = writeln!(
            o,
            "rod_length = {}\ncalibration_window_us = {}\ncutoff_hz = {}\nmagnification = {}\naxis = {}",
            m.rod_length,
            m.calibration_window_us,
            m.cutoff_hz,
            m.magnification,
            axis_name(m.axis)
        );
        let s = &self.scene;
        let tr = TrajectoryKeys::from_spec(&s.trajectory);
        let _ = writeln!(o, "\n[synth]");
        let _ = writeln!(
            o,
            "duration_us = {}\nwidth = {}\nheight = {}\njitter_us = {}\nmotion_step_us = {}\nhalo_probability = {}",
            s.duration_us, s.width, s.height, s.jitter_us, s.motion_step_us, s.halo_probability
        );
        let _ = writeln!(
            o,
            "background_rate = {}\nhot_pixel_count = {}\nhot_pixel_rate = {}",
            s.noise.background_rate, s.noise.hot_pixel_count, s.noise.hot_pixel_rate
        );
        let _ = writeln!(
            o,
            "trajectory = {}\nstep_dx = {}\nstep_dy = {}\nstep_at_us = {}\nstep_ramp_us = {}\nsine_amplitude = {}\nsine_freq = {}\nsine_axis = {}",
            tr.kind,
            tr.step_dx,
            tr.step_dy,
            tr.step_at_us,
            tr.step_ramp_us,
            tr.sine_amplitude,
            tr.sine_freq,
            axis_name(tr.sine_axis)
        );
        for (i, led) in s.leds.iter().enumerate() {
            let _ = writeln!(o, "\n[led.{i}]");
            let _ = writeln!(
                o,
                "x = {}\ny = {}\nradius = {}\nblink_hz = {}\nduty_on = {}\nduty_off = {}\nevents_per_edge = {}\nhalo_radius = {}",
                led.center.0,
                led.center.1,
                led.radius,
                led.blink_hz,
                led.duty.0,
                led.duty.1,
                led.events_per_edge_per_pixel,
                led.halo_radius
            );
        }
        o
    }
}
