//! Labeled synthetic event streams: blinking LED disks, rigid marker motion
//! and two kinds of sensor noise.
//!
//! At every blink edge each pixel whose center lies inside an LED disk emits
//! `events_per_edge_per_pixel` events of the edge polarity, delayed by a
//! uniform latency in `[0, jitter_us)`. While an LED is lit, pixels entering
//! or leaving its disk because of marker motion emit `MOTION` events with the
//! polarity of the local brightness change. Background noise is uniform in
//! space and time; hot pixels fire as independent Poisson processes. All
//! polarities of noise events are random.
//!
//! Randomness comes from one ChaCha8 stream per source (stream 0 background,
//! 1 hot pixels, `2 + k` for the k-th LED), all keyed by the scene seed.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::event::{
    validate_labeled, Event, GroundTruthLabel, LabelClass, LabeledStream, Polarity, StreamMeta,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LedSpec {
    /// Sub-pixel (column, row) of the disk center at zero displacement.
    pub center: (f64, f64),
    pub radius: f64,
    pub blink_hz: f64,
    /// Light:dark time ratio within one blink period.
    pub duty: (u32, u32),
    pub events_per_edge_per_pixel: u32,
    pub marker_id: u32,
    /// Outer radius of a sparse halo ring; `0` disables it.
    pub halo_radius: f64,
}

impl LedSpec {
    /// A 100 Hz, 2:3 duty LED emitting one event per pixel and edge.
    pub fn new(marker_id: u32, center: (f64, f64), radius: f64) -> Self {
        Self {
            center,
            radius,
            blink_hz: 100.0,
            duty: (2, 3),
            events_per_edge_per_pixel: 1,
            marker_id,
            halo_radius: 0.0,
        }
    }

    pub fn period_us(&self) -> f64 {
        1e6 / self.blink_hz
    }

    pub fn on_us(&self) -> f64 {
        self.period_us() * self.duty.0 as f64 / (self.duty.0 + self.duty.1) as f64
    }

    fn validate(&self) -> Result<()> {
        let ok = self.blink_hz > 0.0
            && self.radius > 0.0
            && self.duty.0 > 0
            && self.duty.1 > 0
            && self.events_per_edge_per_pixel >= 1
            && self.halo_radius >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid LED spec {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Axis {
    #[default]
    X,
    Y,
}

/// Rigid motion shared by every LED of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TrajectorySpec {
    #[default]
    Static,
    /// Moves by `offset_px` starting at `at_us`, linearly over `ramp_us`
    /// (`0` jumps instantly).
    Step {
        offset_px: (f64, f64),
        at_us: u64,
        ramp_us: u64,
    },
    Sinusoid {
        amplitude_px: f64,
        freq_hz: f64,
        axis: Axis,
    },
}

impl TrajectorySpec {
    /// Displacement from the rest position at time `t_us`.
    pub fn offset(&self, t_us: f64) -> (f64, f64) {
        match *self {
            TrajectorySpec::Static => (0.0, 0.0),
            TrajectorySpec::Step {
                offset_px,
                at_us,
                ramp_us,
            } => {
                let at = at_us as f64;
                let frac = if t_us < at {
                    0.0
                } else if ramp_us == 0 {
                    1.0
                } else {
                    ((t_us - at) / ramp_us as f64).min(1.0)
                };
                (offset_px.0 * frac, offset_px.1 * frac)
            }
            TrajectorySpec::Sinusoid {
                amplitude_px,
                freq_hz,
                axis,
            } => {
                let d = amplitude_px * (2.0 * PI * freq_hz * t_us * 1e-6).sin();
                match axis {
                    Axis::X => (d, 0.0),
                    Axis::Y => (0.0, d),
                }
            }
        }
    }

    pub fn is_static(&self) -> bool {
        match *self {
            TrajectorySpec::Static => true,
            TrajectorySpec::Step { offset_px, .. } => offset_px == (0.0, 0.0),
            TrajectorySpec::Sinusoid { amplitude_px, .. } => amplitude_px == 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let TrajectorySpec::Sinusoid { freq_hz, .. } = *self {
            if !(freq_hz > 0.0) {
                return Err(Error::InvalidParam("sinusoid freq_hz must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    /// Events per second over the whole sensor.
    pub background_rate: f64,
    pub hot_pixel_count: u32,
    /// Events per second per hot pixel.
    pub hot_pixel_rate: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        background_rate: 0.0,
        hot_pixel_count: 0,
        hot_pixel_rate: 0.0,
    };
}

/// Everything needed to render one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub leds: Vec<LedSpec>,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub duration_us: u64,
    pub width: u16,
    pub height: u16,
    pub seed: u64,
    /// Upper bound of the uniform per-event latency.
    pub jitter_us: u64,
    /// Time step used to rasterize motion between blink edges.
    pub motion_step_us: u64,
    /// Emission probability per halo pixel and edge.
    pub halo_probability: f64,
}

impl SceneSpec {
    pub fn new(leds: Vec<LedSpec>, duration_us: u64) -> Self {
        Self {
            leds,
            trajectory: TrajectorySpec::Static,
            noise: NoiseSpec::NONE,
            duration_us,
            width: 1280,
            height: 720,
            seed: 0,
            jitter_us: 200,
            motion_step_us: 50,
            halo_probability: 0.1,
        }
    }

    /// Ground-truth center of `led` at time `t_us`.
    pub fn true_center(&self, led: &LedSpec, t_us: f64) -> (f64, f64) {
        let (dx, dy) = self.trajectory.offset(t_us);
        (led.center.0 + dx, led.center.1 + dy)
    }
}

/// Pixels whose centers lie inside the closed disk, row-major order.
pub fn disk_pixels(center: (f64, f64), radius: f64) -> Vec<(u16, u16)> {
    ring_pixels(center, -1.0, radius)
}

/// Pixels with `inner < distance <= outer`, row-major order.
fn ring_pixels(center: (f64, f64), inner: f64, outer: f64) -> Vec<(u16, u16)> {
    let (cx, cy) = center;
    let x0 = (cx - outer).ceil().max(0.0) as i64;
    let x1 = (cx + outer).floor() as i64;
    let y0 = (cy - outer).ceil().max(0.0) as i64;
    let y1 = (cy + outer).floor() as i64;
    let inner2 = if inner < 0.0 { -1.0 } else { inner * inner };
    let outer2 = outer * outer;
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if d2 <= outer2 && d2 > inner2 && x <= u16::MAX as i64 && y <= u16::MAX as i64 {
                out.push((x as u16, y as u16));
            }
        }
    }
    out
}

struct Emitter {
    out: Vec<(Event, GroundTruthLabel)>,
    duration: u64,
}

impl Emitter {
    fn push(&mut self, t: u64, (x, y): (u16, u16), polarity: Polarity, label: GroundTruthLabel) {
        if t < self.duration {
            self.out.push((Event::new(t, x, y, polarity), label));
        }
    }
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_in_bounds(spec: &SceneSpec, led: &LedSpec, t: u64) -> Result<()> {
    let (cx, cy) = spec.true_center(led, t as f64);
    let r = led.radius.max(led.halo_radius);
    let inside = cx - r >= 0.0
        && cy - r >= 0.0
        && cx + r <= (spec.width as f64 - 1.0)
        && cy + r <= (spec.height as f64 - 1.0);
    if inside {
        Ok(())
    } else {
        Err(Error::LedOutOfBounds {
            marker_id: led.marker_id,
            t_us: t,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tick {
    Motion,
    Rising,
    Falling,
}

fn led_timeline(spec: &SceneSpec, led: &LedSpec) -> Vec<(u64, Tick)> {
    let period = led.period_us();
    let on = led.on_us();
    let mut ticks = Vec::new();
    let mut k = 0u64;
    loop {
        let rise = (k as f64 * period).round() as u64;
        if rise >= spec.duration_us {
            break;
        }
        ticks.push((rise, Tick::Rising));
        let fall = (k as f64 * period + on).round() as u64;
        if fall < spec.duration_us {
            ticks.push((fall, Tick::Falling));
        }
        k += 1;
    }
    if !spec.trajectory.is_static() {
        let step = spec.motion_step_us.max(1);
        ticks.extend((1..).map(|i| (i * step, Tick::Motion)).take_while(|&(t, _)| t < spec.duration_us));
    }
    // Motion updates at a shared instant run before the edge itself.
    ticks.sort_unstable();
    ticks
}

fn render_led(spec: &SceneSpec, led: &LedSpec, rng: &mut ChaCha8Rng, em: &mut Emitter) -> Result<()> {
    let n = led.events_per_edge_per_pixel;
    let jitter = spec.jitter_us;
    let blink = GroundTruthLabel::blink(led.marker_id);
    let motion = GroundTruthLabel::motion(led.marker_id);
    let moving = !spec.trajectory.is_static();
    let latency = |rng: &mut ChaCha8Rng| if jitter > 0 { rng.gen_range(0..jitter) } else { 0 };

    // Most recent emission per pixel; keeps each pixel's own events causal
    // when motion and edge latencies overlap.
    let mut last_emit: HashMap<(u16, u16), u64> = HashMap::new();
    let mut emit = |em: &mut Emitter, t: u64, px: (u16, u16), pol: Polarity, label: GroundTruthLabel| {
        let t = match last_emit.get(&px) {
            Some(&last) if moving && t <= last => last + 1,
            _ => t,
        };
        if moving {
            last_emit.insert(px, t);
        }
        em.push(t, px, pol, label);
    };

    let mut lit: Option<Vec<(u16, u16)>> = None;
    let mut prev_t = 0u64;
    if spec.trajectory.is_static() {
        check_in_bounds(spec, led, 0)?;
    }
    for (t, tick) in led_timeline(spec, led) {
        if moving {
            check_in_bounds(spec, led, t)?;
        }
        let center = spec.true_center(led, t as f64);
        if let Some(old) = lit.as_mut() {
            if moving {
                let new = disk_pixels(center, led.radius);
                let span = t - prev_t;
                for (set_a, set_b, pol) in [(&new, &*old, Polarity::On), (&*old, &new, Polarity::Off)] {
                    for px in set_a.iter().filter(|p| set_b.binary_search_by_key(&(p.1, p.0), |q| (q.1, q.0)).is_err()) {
                        for _ in 0..n {
                            let base = if span > 0 { prev_t + 1 + rng.gen_range(0..span) } else { t };
                            let when = base + latency(rng);
                            emit(em, when, *px, pol, motion);
                        }
                    }
                }
                *old = new;
            }
        }
        match tick {
            Tick::Motion => {}
            Tick::Rising | Tick::Falling => {
                let pol = if tick == Tick::Rising { Polarity::On } else { Polarity::Off };
                let disk = disk_pixels(center, led.radius);
                for &px in &disk {
                    for _ in 0..n {
                        let when = t + latency(rng);
                        emit(em, when, px, pol, blink);
                    }
                }
                if led.halo_radius > led.radius {
                    for px in ring_pixels(center, led.radius, led.halo_radius) {
                        if rng.gen_bool(spec.halo_probability.clamp(0.0, 1.0)) {
                            let when = t + latency(rng);
                            emit(em, when, px, pol, blink);
                        }
                    }
                }
                lit = (tick == Tick::Rising).then_some(disk);
            }
        }
        prev_t = t;
    }
    Ok(())
}

fn random_polarity(rng: &mut ChaCha8Rng) -> Polarity {
    if rng.gen_bool(0.5) {
        Polarity::On
    } else {
        Polarity::Off
    }
}

fn render_noise(spec: &SceneSpec, em: &mut Emitter) -> Result<()> {
    let noise = spec.noise;
    if noise.background_rate < 0.0 || noise.hot_pixel_rate < 0.0 {
        return Err(Error::InvalidParam("noise rates must be >= 0".into()));
    }
    let seconds = spec.duration_us as f64 * 1e-6;
    let mean = noise.background_rate * seconds;
    if mean > 0.0 {
        let mut rng = scene_rng(spec.seed, 0);
        let count = Poisson::new(mean)
            .map_err(|e| Error::InvalidParam(format!("background rate: {e}")))?
            .sample(&mut rng) as u64;
        for _ in 0..count {
            let t = rng.gen_range(0..spec.duration_us);
            let px = (rng.gen_range(0..spec.width), rng.gen_range(0..spec.height));
            let pol = random_polarity(&mut rng);
            em.push(t, px, pol, GroundTruthLabel::background());
        }
    }
    if noise.hot_pixel_count > 0 && noise.hot_pixel_rate > 0.0 {
        let mut rng = scene_rng(spec.seed, 1);
        let gap = Exp::new(noise.hot_pixel_rate * 1e-6)
            .map_err(|e| Error::InvalidParam(format!("hot pixel rate: {e}")))?;
        for _ in 0..noise.hot_pixel_count {
            let px = (rng.gen_range(0..spec.width), rng.gen_range(0..spec.height));
            let mut t = gap.sample(&mut rng);
            while (t as u64) < spec.duration_us {
                let pol = random_polarity(&mut rng);
                em.push(t as u64, px, pol, GroundTruthLabel::thermal());
                t += gap.sample(&mut rng);
            }
        }
    }
    Ok(())
}

/// Renders a labeled, time-sorted event stream. Identical specs produce
/// identical streams.
pub fn synth_scene(spec: &SceneSpec) -> Result<LabeledStream> {
    if spec.duration_us == 0 {
        return Err(Error::InvalidParam("duration must be > 0".into()));
    }
    spec.trajectory.validate()?;
    let mut em = Emitter {
        out: Vec::new(),
        duration: spec.duration_us,
    };
    for (k, led) in spec.leds.iter().enumerate() {
        led.validate()?;
        let mut rng = scene_rng(spec.seed, 2 + k as u64);
        render_led(spec, led, &mut rng, &mut em)?;
    }
    render_noise(spec, &mut em)?;
    let (events, labels): (Vec<_>, Vec<_>) = em.out.into_iter().unzip();
    validate_labeled(events, labels, StreamMeta::new(spec.width, spec.height))
}

/// Label-aware removal statistics of a keep/remove decision.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterScore {
    pub noise_total: usize,
    pub noise_removed: usize,
    pub signal_total: usize,
    pub signal_removed: usize,
    pub motion_total: usize,
    pub motion_removed: usize,
    pub noise_removal_rate: f64,
    pub signal_loss_rate: f64,
    pub motion_removal_rate: f64,
}

fn rate(removed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        removed as f64 / total as f64
    }
}

pub fn eval_filter(labels: &[GroundTruthLabel], kept: &[bool]) -> Result<FilterScore> {
    if labels.len() != kept.len() {
        return Err(Error::LengthMismatch {
            what: "kept mask",
            got: kept.len(),
            expected: labels.len(),
        });
    }
    let mut s = FilterScore::default();
    for (l, &k) in labels.iter().zip(kept) {
        let (total, removed) = match l.class() {
            LabelClass::BlinkSignal => (&mut s.signal_total, &mut s.signal_removed),
            LabelClass::Motion => (&mut s.motion_total, &mut s.motion_removed),
            LabelClass::BackgroundNoise | LabelClass::ThermalNoise => {
                (&mut s.noise_total, &mut s.noise_removed)
            }
        };
        *total += 1;
        if !k {
            *removed += 1;
        }
    }
    s.noise_removal_rate = rate(s.noise_removed, s.noise_total);
    s.signal_loss_rate = rate(s.signal_removed, s.signal_total);
    s.motion_removal_rate = rate(s.motion_removed, s.motion_total);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_led_scene(duration_us: u64) -> SceneSpec {
        SceneSpec::new(vec![LedSpec::new(0, (100.3, 80.6), 6.0)], duration_us)
    }

    #[test]
    fn one_period_has_one_burst_per_edge() {
        let ls = synth_scene(&static_led_scene(10_000)).unwrap();
        let disk = disk_pixels((100.3, 80.6), 6.0).len();
        let on: Vec<&Event> = ls.stream.events().iter().filter(|e| e.polarity == Polarity::On).collect();
        let off: Vec<&Event> = ls.stream.events().iter().filter(|e| e.polarity == Polarity::Off).collect();
        assert_eq!(on.len(), disk);
        assert_eq!(off.len(), disk);
        assert!(on.iter().all(|e| e.t < 200));
        assert!(off.iter().all(|e| (4000..4200).contains(&e.t)));
        assert!(ls.labels.iter().all(|l| *l == GroundTruthLabel::blink(0)));
    }

    #[test]
    fn background_count_is_poisson() {
        let mut spec = SceneSpec::new(vec![], 1_000_000);
        spec.noise.background_rate = 1000.0;
        spec.seed = 11;
        let ls = synth_scene(&spec).unwrap();
        let n = ls.len_f64();
        // mean 1000, sigma sqrt(1000)
        assert!((n - 1000.0).abs() <= 4.0 * 1000f64.sqrt(), "{n}");
        assert!(ls.labels.iter().all(|l| l.class() == LabelClass::BackgroundNoise));
    }

    #[test]
    fn disabled_sources_emit_nothing_extra() {
        let ls = synth_scene(&static_led_scene(50_000)).unwrap();
        assert!(ls.labels.iter().all(|l| l.class() == LabelClass::BlinkSignal));
    }

    #[test]
    fn hot_pixels_are_thermal_and_fixed() {
        let mut spec = SceneSpec::new(vec![], 500_000);
        spec.noise = NoiseSpec {
            background_rate: 0.0,
            hot_pixel_count: 2,
            hot_pixel_rate: 1000.0,
        };
        let ls = synth_scene(&spec).unwrap();
        let mut pixels: Vec<(u16, u16)> = ls.stream.events().iter().map(|e| (e.x, e.y)).collect();
        pixels.sort_unstable();
        pixels.dedup();
        assert_eq!(pixels.len(), 2);
        assert!(ls.labels.iter().all(|l| l.class() == LabelClass::ThermalNoise));
        assert!((ls.len_f64() - 1000.0).abs() < 4.0 * 1000f64.sqrt());
    }

    #[test]
    fn same_seed_same_stream() {
        let mut spec = static_led_scene(100_000);
        spec.noise.background_rate = 5000.0;
        spec.trajectory = TrajectorySpec::Sinusoid {
            amplitude_px: 2.0,
            freq_hz: 7.0,
            axis: Axis::Y,
        };
        let a = synth_scene(&spec).unwrap();
        let b = synth_scene(&spec).unwrap();
        assert_eq!(a, b);
        spec.seed = 1;
        assert_ne!(a, synth_scene(&spec).unwrap());
    }

    #[test]
    fn static_pixels_alternate_at_blink_period() {
        let mut spec = static_led_scene(100_000);
        spec.leds[0].events_per_edge_per_pixel = 3;
        let ls = synth_scene(&spec).unwrap();
        let mut per_pixel: HashMap<(u16, u16), Vec<Event>> = HashMap::new();
        for e in ls.stream.events() {
            per_pixel.entry((e.x, e.y)).or_default().push(*e);
        }
        for evs in per_pixel.values() {
            assert_eq!(evs[0].polarity, Polarity::On);
            // first event of each run of equal polarity = a reversal
            let starts: Vec<&Event> = evs
                .iter()
                .enumerate()
                .filter(|(i, e)| *i == 0 || evs[i - 1].polarity != e.polarity)
                .map(|(_, e)| e)
                .collect();
            assert_eq!(starts.len(), 20);
            for w in starts.windows(3) {
                let dt = w[2].t as i64 - w[0].t as i64;
                assert!((dt - 10_000).abs() < 200, "{dt}");
            }
        }
        // 2 x disk x events per edge per period
        let disk = disk_pixels((100.3, 80.6), 6.0).len();
        assert_eq!(ls.stream.len(), 10 * 2 * disk * 3);
    }

    #[test]
    fn motion_events_only_while_lit() {
        let mut spec = static_led_scene(200_000);
        spec.trajectory = TrajectorySpec::Sinusoid {
            amplitude_px: 3.0,
            freq_hz: 5.0,
            axis: Axis::X,
        };
        let ls = synth_scene(&spec).unwrap();
        let motion: Vec<&Event> = ls
            .stream
            .events()
            .iter()
            .zip(&ls.labels)
            .filter(|(_, l)| l.class() == LabelClass::Motion)
            .map(|(e, _)| e)
            .collect();
        assert!(!motion.is_empty());
        // lit window is [0, 4000) of each 10 ms period, plus latency spread
        for e in &motion {
            let phase = e.t % 10_000;
            assert!(phase < 4_000 + 400, "motion event at phase {phase}");
        }
    }

    #[test]
    fn leaving_the_sensor_is_an_error() {
        let mut spec = SceneSpec::new(vec![LedSpec::new(3, (20.0, 20.0), 5.0)], 100_000);
        spec.trajectory = TrajectorySpec::Step {
            offset_px: (-30.0, 0.0),
            at_us: 40_000,
            ramp_us: 0,
        };
        match synth_scene(&spec).unwrap_err() {
            Error::LedOutOfBounds { marker_id, t_us } => {
                assert_eq!(marker_id, 3);
                assert_eq!(t_us, 40_000);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn eval_filter_counts() {
        let labels = [
            GroundTruthLabel::background(),
            GroundTruthLabel::thermal(),
            GroundTruthLabel::background(),
            GroundTruthLabel::blink(0),
            GroundTruthLabel::blink(0),
            GroundTruthLabel::blink(1),
        ];
        let s = eval_filter(&labels, &[false, false, true, false, true, true]).unwrap();
        assert!((s.noise_removal_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.signal_loss_rate - 1.0 / 3.0).abs() < 1e-15);

        let all = eval_filter(&labels, &[true; 6]).unwrap();
        assert_eq!(
            (all.noise_removal_rate, all.signal_loss_rate, all.motion_removal_rate),
            (0.0, 0.0, 0.0)
        );
        let none = eval_filter(&labels, &[false; 6]).unwrap();
        assert_eq!((none.noise_removal_rate, none.signal_loss_rate), (1.0, 1.0));
        assert!(eval_filter(&labels, &[true; 5]).is_err());
    }

    trait Len {
        fn len_f64(&self) -> f64;
    }
    impl Len for LabeledStream {
        fn len_f64(&self) -> f64 {
            self.stream.len() as f64
        }
    }
}
