use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blinktrack::bench::{bench, BenchParams};
use blinktrack::blink::gate_stream;
use blinktrack::config::{ConfigBuilder, RunConfig};
use blinktrack::deform::{calibrate, highpass_detrend, series_stats, to_metric, Calibration};
use blinktrack::denoise::denoise_two_stage;
use blinktrack::io::{
    read_events, read_trajectory, write_events, write_pixel_series, write_series, write_trajectory, EventFile,
    EventFileFormat,
};
use blinktrack::pipeline::{run_pipeline, MarkerReport};
use blinktrack::synth::{eval_filter, synth_scene, FilterScore};
use blinktrack::tracker::track;
use blinktrack::{Error, Result};

#[derive(Parser)]
#[command(name = "blinktrack", version, about = "Blinking-LED marker tracking on event-camera streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Run configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set denoise.n_th=4`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the file, then `--set`, then the subcommand flags.
    fn load(&self, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut b = ConfigBuilder::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            b.apply_text(&text)?;
        }
        for s in &self.set {
            b.apply_override(s)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                b.apply_override(&format!("{key}={v}"))?;
            }
        }
        b.build()
    }
}

fn flag<T: ToString>(key: &'static str, v: &Option<T>) -> (&'static str, Option<String>) {
    (key, v.as_ref().map(T::to_string))
}

#[derive(Subcommand)]
enum Command {
    /// Render a labeled synthetic scene to an event file.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration_us: Option<u64>,
        /// Leave ground-truth labels out of text output.
        #[arg(long)]
        no_labels: bool,
    },
    /// Two-stage noise filter.
    Denoise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        n_th: Option<usize>,
        #[arg(long)]
        t_x: Option<u16>,
        #[arg(long)]
        t_y: Option<u16>,
        #[arg(long)]
        t_t: Option<u64>,
        #[arg(long)]
        bin_width: Option<u64>,
    },
    /// Blink-frequency gate against motion events.
    Gate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        f_led: Option<f64>,
        #[arg(long)]
        f_th: Option<f64>,
        #[arg(long)]
        warmup_reversals: Option<u32>,
    },
    /// Track marker centers and write one trajectory file per marker.
    Track {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        markers: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        d_th: Option<f64>,
        #[arg(long)]
        t_su: Option<u64>,
    },
    /// Convert trajectories to metric displacement series.
    Measure {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trajectory files; the first two calibrate the magnification.
        #[arg(long = "traj", required = true)]
        trajectories: Vec<PathBuf>,
        #[arg(long)]
        rod_length: Option<f64>,
        #[arg(long)]
        cutoff_hz: Option<f64>,
        /// Meters per pixel, used with a single trajectory.
        #[arg(long)]
        magnification: Option<f64>,
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Full run from a configuration.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summary of an event file.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Per-stage throughput on a file or a synthetic stream.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Render the configured scene long enough to reach this many events.
        #[arg(long)]
        events: Option<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Include the tracker stage.
        #[arg(long)]
        track: bool,
    },
}

fn read(path: &Path) -> Result<EventFile> {
    read_events(path, EventFileFormat::from_path(path))
}

fn write(path: &Path, file: &EventFile) -> Result<usize> {
    let format = EventFileFormat::from_path(path);
    write_events(path, &file.stream, file.labels.as_deref(), format)
}

fn keep(file: &EventFile, mask: &[bool]) -> EventFile {
    EventFile {
        stream: file.stream.select(mask),
        labels: file.labels.as_ref().map(|l| {
            l.iter()
                .zip(mask)
                .filter_map(|(l, &k)| k.then_some(*l))
                .collect()
        }),
    }
}

fn print_score(score: &FilterScore) {
    println!("noise_removal_rate = {:.6}", score.noise_removal_rate);
    println!("signal_loss_rate = {:.6}", score.signal_loss_rate);
    println!("motion_removal_rate = {:.6}", score.motion_removal_rate);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            cfg,
            out,
            seed,
            duration_us,
            no_labels,
        } => {
            let config = cfg.load(&[flag("run.seed", &seed), flag("synth.duration_us", &duration_us)])?;
            let scene = synth_scene(&config.scene)?;
            let labels = (!no_labels).then_some(scene.labels.as_slice());
            let bytes = write_events(&out, &scene.stream, labels, EventFileFormat::from_path(&out))?;
            println!("[synth]\nevents = {}\nbytes = {bytes}\nseed = {}", scene.stream.len(), config.seed);
        }
        Command::Denoise {
            cfg,
            input,
            output,
            n_th,
            t_x,
            t_y,
            t_t,
            bin_width,
        } => {
            let config = cfg.load(&[
                flag("denoise.n_th", &n_th),
                flag("denoise.t_x", &t_x),
                flag("denoise.t_y", &t_y),
                flag("denoise.t_t", &t_t),
                flag("denoise.bin_width", &bin_width),
            ])?;
            let file = read(&input)?;
            let meta = file.meta();
            let masks = denoise_two_stage(file.stream.events(), meta.width, meta.height, &config.denoise)?;
            let out = keep(&file, &masks.kept);
            write(&output, &out)?;
            println!(
                "[denoise]\nevents_in = {}\nafter_coarse = {}\nevents_out = {}",
                file.stream.len(),
                masks.coarse.iter().filter(|&&k| k).count(),
                out.stream.len()
            );
            if let Some(l) = &file.labels {
                print_score(&eval_filter(l, &masks.kept)?);
            }
        }
        Command::Gate {
            cfg,
            input,
            output,
            f_led,
            f_th,
            warmup_reversals,
        } => {
            let config = cfg.load(&[
                flag("gate.f_led", &f_led),
                flag("gate.f_th", &f_th),
                flag("gate.warmup_reversals", &warmup_reversals),
            ])?;
            let file = read(&input)?;
            let outcome = gate_stream(file.stream.events(), &config.gate)?;
            let out = keep(&file, &outcome.kept);
            write(&output, &out)?;
            println!(
                "[gate]\nevents_in = {}\nevents_out = {}\nevicted = {}\nundecided = {}",
                file.stream.len(),
                out.stream.len(),
                outcome.evicted,
                outcome.undecided
            );
            if let Some(l) = &file.labels {
                print_score(&eval_filter(l, &outcome.kept)?);
            }
        }
        Command::Track {
            cfg,
            input,
            markers,
            out_dir,
            d_th,
            t_su,
        } => {
            let config = cfg.load(&[
                flag("run.markers", &markers),
                flag("tracker.d_th", &d_th),
                flag("tracker.t_su", &t_su),
            ])?;
            let file = read(&input)?;
            let out = track(file.stream.events(), &config.tracker, config.markers)?;
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            println!("[track]\nadmitted = {}\ndiscarded = {}", out.admitted, out.discarded);
            for t in &out.trajectories {
                let path = out_dir.join(format!("trajectory_{}.csv", t.marker_id));
                write_trajectory(&path, t)?;
                let m = MarkerReport::from_trajectory(t);
                println!(
                    "\n[marker.{}]\nfile = {}\nsamples = {}\nstale = {}\nmean_px = {:.4}, {:.4}\nmax_dev_px = {:.4}, {:.4}",
                    m.marker_id,
                    path.display(),
                    m.samples,
                    m.stale,
                    m.mean.0,
                    m.mean.1,
                    m.max_dev.0,
                    m.max_dev.1
                );
            }
            for w in &out.warnings {
                log::warn!("{w}");
            }
        }
        Command::Measure {
            cfg,
            trajectories,
            rod_length,
            cutoff_hz,
            magnification,
            axis,
            out_dir,
        } => {
            let config = cfg.load(&[
                flag("measure.rod_length", &rod_length),
                flag("measure.cutoff_hz", &cutoff_hz),
                flag("measure.magnification", &magnification),
                flag("measure.axis", &axis),
            ])?;
            let m = &config.measure;
            let trajs = trajectories
                .iter()
                .enumerate()
                .map(|(i, p)| read_trajectory(p, i as u32))
                .collect::<Result<Vec<_>>>()?;
            let cal = if trajs.len() >= 2 {
                let cal = calibrate(&trajs[0], &trajs[1], m.rod_length)?;
                println!(
                    "[calibration]\npixel_separation = {:.4}\nseparation_std = {:.4}\nmm_per_px = {:.6}\n",
                    cal.pixel_separation,
                    cal.separation_std,
                    cal.magnification * 1e3
                );
                Some(cal)
            } else if m.magnification > 0.0 {
                Some(Calibration::from_separation(m.magnification, 1.0)?)
            } else {
                None
            };
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            for t in &trajs {
                let unit = Calibration::from_separation(1.0, 1.0)?;
                let mut series = to_metric(t, cal.as_ref().unwrap_or(&unit))?;
                if m.cutoff_hz > 0.0 {
                    series = highpass_detrend(&series, m.cutoff_hz)?;
                }
                let path = out_dir.join(format!("series_{}.csv", t.marker_id));
                if cal.is_some() {
                    write_series(&path, &series)?;
                } else {
                    write_pixel_series(&path, &series)?;
                }
                println!("[series.{}]\nfile = {}\nsamples = {}", t.marker_id, path.display(), series.samples.len());
                match series_stats(&series, m.axis) {
                    Ok(s) => {
                        let (unit, scale) = if cal.is_some() { ("mm", 1e3) } else { ("px", 1.0) };
                        println!(
                            "range_{unit} = {:.4}\nstd_{unit} = {:.4}\noscillations = {}\ndominant_hz = {:.4}\nspectral_peak_hz = {:.4}",
                            s.range * scale,
                            s.std_dev * scale,
                            s.oscillation_count,
                            s.dominant_freq,
                            s.spectral_peak_freq
                        );
                    }
                    Err(e) => log::warn!("marker {}: {e}", t.marker_id),
                }
                println!();
            }
        }
        Command::Pipeline {
            cfg,
            input,
            output,
            seed,
        } => {
            let config = cfg.load(&[
                ("run.input", input.map(|p| p.display().to_string())),
                ("run.output", output.map(|p| p.display().to_string())),
                flag("run.seed", &seed),
            ])?;
            let outcome = run_pipeline(&config)?;
            print!("{}", outcome.report.to_text(true));
        }
        Command::Stats { input } => {
            let file = read(&input)?;
            let meta = file.meta();
            let events = file.stream.events();
            let on = events.iter().filter(|e| e.polarity == blinktrack::Polarity::On).count();
            let span = match (events.first(), events.last()) {
                (Some(a), Some(b)) => b.t - a.t,
                _ => 0,
            };
            println!(
                "[stats]\nevents = {}\nsensor = {}x{}\nduration_us = {}\nspan_us = {span}\non = {on}\noff = {}",
                events.len(),
                meta.width,
                meta.height,
                meta.duration,
                events.len() - on
            );
            if span > 0 {
                println!("rate_per_s = {:.1}", events.len() as f64 * 1e6 / span as f64);
            }
            if let Some(labels) = &file.labels {
                let mut counts = std::collections::BTreeMap::new();
                for l in labels {
                    *counts.entry(l.class().name()).or_insert(0usize) += 1;
                }
                println!("\n[labels]");
                for (k, v) in counts {
                    println!("{k} = {v}");
                }
            }
        }
        Command::Bench {
            cfg,
            input,
            events,
            repeats,
            track,
        } => {
            let mut config = cfg.load(&[])?;
            let stream = match (input, events) {
                (Some(path), _) => read(&path)?.stream,
                (None, target) => {
                    let target = target.unwrap_or(1_000_000);
                    let probe = synth_scene(&config.scene)?.stream;
                    let per_us = probe.len().max(1) as f64 / config.scene.duration_us as f64;
                    config.scene.duration_us = ((target as f64 / per_us) * 1.02).ceil() as u64;
                    synth_scene(&config.scene)?.stream
                }
            };
            let params = BenchParams {
                denoise: config.denoise,
                gate: config.gate_enabled.then_some(config.gate),
                tracker: track.then_some((config.tracker, config.markers)),
                repeats,
                check_scaling: true,
            };
            print!("{}", bench(&stream, &params)?.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
