//! Per-stage throughput measurement.

use std::mem::size_of;
use std::time::Instant;

use crate::blink::{gate_stream, BlinkGateParams, PixelHistory};
use crate::denoise::{denoise_two_stage, DenoiseParams};
use crate::error::{Error, Result};
use crate::event::{validate_stream, Event, EventStream, StreamMeta};
use crate::tracker::{track, TrackerParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchParams {
    pub denoise: DenoiseParams,
    /// Gate stage, skipped when `None`.
    pub gate: Option<BlinkGateParams>,
    /// Tracker stage and the expected marker count, skipped when `None`.
    pub tracker: Option<(TrackerParams, usize)>,
    /// Timed repetitions per stage; the fastest is reported.
    pub repeats: usize,
    pub check_scaling: bool,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            denoise: DenoiseParams::default(),
            gate: Some(BlinkGateParams::default()),
            tracker: None,
            repeats: 3,
            check_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageThroughput {
    pub stage: &'static str,
    pub events_in: usize,
    pub seconds: f64,
    pub events_per_sec: f64,
}

/// Stage time on the stream and on two back-to-back copies of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub stage: &'static str,
    pub base_seconds: f64,
    pub doubled_seconds: f64,
    /// `doubled_seconds / base_seconds`; 2 is exactly linear.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub events: usize,
    pub stages: Vec<StageThroughput>,
    /// Rough upper bound of the working set, bytes.
    pub peak_memory_estimate: usize,
    /// Every timed repetition produced the same masks as an untimed run.
    pub deterministic: bool,
    /// One entry per timed stage when scaling was checked.
    pub scaling: Vec<Scaling>,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<&StageThroughput> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_text(&self) -> String {
        let mut o = format!("[bench]\nevents = {}\n", self.events);
        o += &format!("peak_memory_estimate_bytes = {}\n", self.peak_memory_estimate);
        o += &format!("deterministic = {}\n", self.deterministic);
        for s in &self.stages {
            o += &format!(
                "\n[bench.{}]\nevents_in = {}\nseconds = {:.6}\nevents_per_sec = {:.0}\n",
                s.stage, s.events_in, s.seconds, s.events_per_sec
            );
        }
        for s in &self.scaling {
            o += &format!(
                "\n[bench.scaling.{}]\nbase_seconds = {:.6}\ndoubled_seconds = {:.6}\nratio = {:.3}\n",
                s.stage, s.base_seconds, s.doubled_seconds, s.ratio
            );
        }
        o
    }
}

/// The stream followed by a copy of itself shifted past its end.
pub fn doubled(stream: &EventStream) -> Result<EventStream> {
    let meta = stream.meta();
    let shift = meta.duration;
    let mut events = Vec::with_capacity(stream.len() * 2);
    events.extend_from_slice(stream.events());
    events.extend(stream.events().iter().map(|e| Event { t: e.t + shift, ..*e }));
    validate_stream(events, StreamMeta::new(meta.width, meta.height))
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(Vec<T>, f64)> {
    let mut outs = Vec::with_capacity(repeats);
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = f()?;
        best = best.min(start.elapsed().as_secs_f64());
        outs.push(out);
    }
    Ok((outs, best))
}

fn throughput(stage: &'static str, events_in: usize, seconds: f64) -> StageThroughput {
    StageThroughput {
        stage,
        events_in,
        seconds,
        events_per_sec: if seconds > 0.0 { events_in as f64 / seconds } else { f64::INFINITY },
    }
}

pub fn bench(stream: &EventStream, params: &BenchParams) -> Result<BenchReport> {
    if stream.is_empty() {
        return Err(Error::InvalidParam("bench needs a non-empty stream".into()));
    }
    let meta = stream.meta();
    let (w, h) = (meta.width, meta.height);
    let events = stream.events();
    let n = events.len();
    let mut stages = Vec::new();
    let mut deterministic = true;

    let reference = denoise_two_stage(events, w, h, &params.denoise)?;
    let (runs, secs) = best_of(params.repeats, || denoise_two_stage(events, w, h, &params.denoise))?;
    deterministic &= runs.iter().all(|r| *r == reference);
    stages.push(throughput("denoise", n, secs));
    let denoised = stream.select(&reference.kept);

    let mut gated = denoised.clone();
    let mut gate_pixels = 0;
    if let Some(gp) = &params.gate {
        let reference = gate_stream(denoised.events(), gp)?;
        let (runs, secs) = best_of(params.repeats, || gate_stream(denoised.events(), gp))?;
        deterministic &= runs.iter().all(|r| *r == reference);
        stages.push(throughput("gate", denoised.len(), secs));
        gated = denoised.select(&reference.kept);
        let mut px: Vec<u32> = denoised.events().iter().map(|e| (e.y as u32) << 16 | e.x as u32).collect();
        px.sort_unstable();
        px.dedup();
        gate_pixels = px.len();
    }

    if let Some((tp, markers)) = &params.tracker {
        let reference = track(gated.events(), tp, *markers)?;
        let (runs, secs) = best_of(params.repeats, || track(gated.events(), tp, *markers))?;
        deterministic &= runs.iter().all(|r| *r == reference);
        stages.push(throughput("track", gated.len(), secs));
    }

    // Input and two masks, the denoise timestamp grid, and per-pixel gate
    // histories with up to 64 buffered indices each.
    let gate_cap = params.gate.map_or(0, |g| g.buffer_cap);
    let peak_memory_estimate = n * (size_of::<Event>() + 2)
        + w as usize * h as usize * size_of::<u64>()
        + denoised.len() * size_of::<Event>()
        + gate_pixels * (size_of::<PixelHistory>() + size_of::<usize>() * gate_cap.min(64));

    let mut scaling = Vec::new();
    if params.check_scaling {
        let twice = doubled(stream)?;
        let mut scaled = |stage: &'static str, secs: f64| {
            scaling.push(Scaling {
                stage,
                base_seconds: secs_of(&stages, stage),
                doubled_seconds: secs,
                ratio: secs / secs_of(&stages, stage),
            })
        };
        let (runs, secs) = best_of(params.repeats, || denoise_two_stage(twice.events(), w, h, &params.denoise))?;
        scaled("denoise", secs);
        let mut s2 = twice.select(&runs[0].kept);
        if let Some(gp) = &params.gate {
            let (runs, secs) = best_of(params.repeats, || gate_stream(s2.events(), gp))?;
            scaled("gate", secs);
            s2 = s2.select(&runs[0].kept);
        }
        if let Some((tp, markers)) = &params.tracker {
            let (_, secs) = best_of(params.repeats, || track(s2.events(), tp, *markers))?;
            scaled("track", secs);
        }
    }

    Ok(BenchReport {
        events: n,
        stages,
        peak_memory_estimate,
        deterministic,
        scaling,
    })
}

fn secs_of(stages: &[StageThroughput], name: &str) -> f64 {
    stages.iter().find(|s| s.stage == name).map_or(0.0, |s| s.seconds)
}
