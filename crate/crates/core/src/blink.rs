//! Motion-event rejection by per-pixel polarity-reversal frequency.
//!
//! At each pixel the event sequence is cut into segments at polarity
//! reversals. Reversal `k` (for `k >= 3`) yields a frequency estimate from
//! the interval to reversal `k - 2`, which has the same direction, i.e. one
//! blink period. Estimates at `k = 3, 5, 7, ...` each close a group of two
//! segments; the group is kept iff its estimate falls inside
//! `[f_led - f_th, f_led + f_th]`. Segments seen before the warm-up completes
//! join the first group. Segments still open when the stream ends are kept
//! unless `keep_undecided` is off.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::event::{Event, Polarity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlinkGateParams {
    pub f_led: f64,
    /// Half-width of the accepted frequency band, Hz.
    pub f_th: f64,
    /// Reversals per direction needed before the first decision.
    pub warmup_reversals: u32,
    /// Per-pixel cap on undecided events; overflow evicts (removes) the oldest.
    pub buffer_cap: usize,
    /// Fate of events still undecided when the stream ends.
    pub keep_undecided: bool,
}

impl Default for BlinkGateParams {
    fn default() -> Self {
        Self::for_frequency(100.0)
    }
}

impl BlinkGateParams {
    /// Band of +-20 % around `f_led`.
    pub fn for_frequency(f_led: f64) -> Self {
        Self {
            f_led,
            f_th: 0.2 * f_led,
            warmup_reversals: 2,
            buffer_cap: 4096,
            keep_undecided: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_led > 0.0) || !(self.f_th > 0.0) || !(self.f_th < self.f_led) {
            return Err(Error::InvalidParam(format!(
                "blink gate needs f_led > 0 and 0 < f_th < f_led, got {} / {}",
                self.f_led, self.f_th
            )));
        }
        if self.warmup_reversals < 2 || self.buffer_cap == 0 {
            return Err(Error::InvalidParam(
                "warmup_reversals must be >= 2 and buffer_cap >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn in_band(&self, f: f64) -> bool {
        f >= self.f_led - self.f_th && f <= self.f_led + self.f_th
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReversalDirection {
    /// Positive to negative.
    OnToOff,
    /// Negative to positive.
    OffToOn,
}

#[derive(Debug, Clone, Default)]
struct Segment {
    /// Reversal that opened the segment; 0 for the events before the first.
    index: u64,
    events: VecDeque<usize>,
}

/// Reversal record and undecided events of one pixel.
#[derive(Debug, Clone, Default)]
pub struct PixelHistory {
    pub last_polarity: Option<Polarity>,
    pub last_of_reversal_t: Option<u64>,
    pub prev_of_reversal_t: Option<u64>,
    pub last_fo_reversal_t: Option<u64>,
    pub prev_fo_reversal_t: Option<u64>,
    reversals: u64,
    pending: VecDeque<Segment>,
    buffered: usize,
}

impl PixelHistory {
    pub fn reversal_count(&self) -> u64 {
        self.reversals
    }

    /// Event indices not yet classified, oldest first.
    pub fn buffered_events(&self) -> impl Iterator<Item = usize> + '_ {
        self.pending.iter().flat_map(|s| s.events.iter().copied())
    }

    /// Records the polarity of `e` (same pixel, time order) and returns the
    /// reversal it completes, if any.
    pub fn observe(&mut self, e: &Event) -> Option<ReversalDirection> {
        let dir = match (self.last_polarity, e.polarity) {
            (Some(Polarity::On), Polarity::Off) => Some(ReversalDirection::OnToOff),
            (Some(Polarity::Off), Polarity::On) => Some(ReversalDirection::OffToOn),
            _ => None,
        };
        if let Some(d) = dir {
            self.record_reversal(d, e.t);
        }
        self.last_polarity = Some(e.polarity);
        dir
    }

    fn record_reversal(&mut self, dir: ReversalDirection, t: u64) {
        let (last, prev) = match dir {
            ReversalDirection::OnToOff => (&mut self.last_of_reversal_t, &mut self.prev_of_reversal_t),
            ReversalDirection::OffToOn => (&mut self.last_fo_reversal_t, &mut self.prev_fo_reversal_t),
        };
        *prev = *last;
        *last = Some(t);
        self.reversals += 1;
    }
}

/// `10^6 / (t_recent - t_previous)` Hz for the two most recent reversals of
/// `direction`, or `None` with fewer than two on record.
pub fn reversal_frequency(history: &PixelHistory, direction: ReversalDirection) -> Option<f64> {
    let (last, prev) = match direction {
        ReversalDirection::OnToOff => (history.last_of_reversal_t, history.prev_of_reversal_t),
        ReversalDirection::OffToOn => (history.last_fo_reversal_t, history.prev_fo_reversal_t),
    };
    let dt = last?.checked_sub(prev?)?;
    (dt > 0).then(|| 1e6 / dt as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateOutcome {
    pub kept: Vec<bool>,
    /// Events dropped because a pixel buffer overflowed.
    pub evicted: usize,
    /// Events the stream ended on before they were judged; kept unless
    /// `keep_undecided` is off.
    pub undecided: usize,
}

struct Gate<'a> {
    params: &'a BlinkGateParams,
    kept: Vec<bool>,
    evicted: usize,
}

impl Gate<'_> {
    fn push(&mut self, h: &mut PixelHistory, index: usize, e: &Event) {
        if let Some(dir) = h.observe(e) {
            let k = h.reversals;
            h.pending.push_back(Segment {
                index: k,
                ..Default::default()
            });
            let first_valid = 2 * self.params.warmup_reversals as u64 - 1;
            if k >= first_valid && (k - first_valid) % 2 == 0 {
                let pass = reversal_frequency(h, dir).is_some_and(|f| self.params.in_band(f));
                self.judge(h, k, pass);
            }
        }
        if h.pending.is_empty() {
            h.pending.push_back(Segment::default());
        }
        h.pending.back_mut().unwrap().events.push_back(index);
        h.buffered += 1;

        while h.buffered > self.params.buffer_cap {
            let front = h.pending.front_mut().unwrap();
            match front.events.pop_front() {
                Some(old) => {
                    self.kept[old] = false;
                    self.evicted += 1;
                    h.buffered -= 1;
                }
                None => {
                    h.pending.pop_front();
                }
            }
        }
    }

    /// Classifies every segment opened before reversal `k`.
    fn judge(&mut self, h: &mut PixelHistory, k: u64, pass: bool) {
        while h.pending.front().is_some_and(|s| s.index < k) {
            let seg = h.pending.pop_front().unwrap();
            h.buffered -= seg.events.len();
            for i in seg.events {
                self.kept[i] = pass;
            }
        }
    }
}

/// Keep mask of the blink gate. `events` must be time-sorted.
pub fn gate_stream(events: &[Event], params: &BlinkGateParams) -> Result<GateOutcome> {
    params.validate()?;
    let mut gate = Gate {
        params,
        kept: vec![true; events.len()],
        evicted: 0,
    };
    let mut pixels: HashMap<u32, PixelHistory> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        let key = (e.y as u32) << 16 | e.x as u32;
        let h = pixels.entry(key).or_default();
        gate.push(h, i, e);
    }
    let undecided = pixels.values().map(|h| h.buffered).sum();
    if !params.keep_undecided {
        for i in pixels.values().flat_map(|h| h.buffered_events()) {
            gate.kept[i] = false;
        }
    }
    Ok(GateOutcome {
        kept: gate.kept,
        evicted: gate.evicted,
        undecided,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{validate_labeled, GroundTruthLabel, LabelClass, StreamMeta};
    use crate::synth::{eval_filter, synth_scene, LedSpec, SceneSpec};
    use proptest::prelude::*;

    fn ev(t: u64, x: u16, y: u16, on: bool) -> Event {
        Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off })
    }

    fn history_with(of: &[u64], fo: &[u64]) -> PixelHistory {
        let mut h = PixelHistory::default();
        for &t in of {
            h.record_reversal(ReversalDirection::OnToOff, t);
        }
        for &t in fo {
            h.record_reversal(ReversalDirection::OffToOn, t);
        }
        h
    }

    #[test]
    fn frequency_from_two_reversals() {
        let h = history_with(&[4000, 14_000], &[]);
        assert_eq!(reversal_frequency(&h, ReversalDirection::OnToOff), Some(100.0));
        assert_eq!(reversal_frequency(&h, ReversalDirection::OffToOn), None);
        let one = history_with(&[4000], &[]);
        assert_eq!(reversal_frequency(&one, ReversalDirection::OnToOff), None);
        let slow = history_with(&[], &[7, 1_000_007]);
        assert_eq!(reversal_frequency(&slow, ReversalDirection::OffToOn), Some(1.0));
    }

    #[test]
    fn observe_reports_polarity_changes_only() {
        let mut h = PixelHistory::default();
        let dirs: Vec<_> = [(0, true), (5, true), (9, false), (12, false), (20, true)]
            .iter()
            .map(|&(t, on)| h.observe(&ev(t, 1, 1, on)))
            .collect();
        use ReversalDirection::*;
        assert_eq!(dirs, [None, None, Some(OnToOff), None, Some(OffToOn)]);
        assert_eq!(h.reversal_count(), 2);
        assert_eq!(h.last_of_reversal_t, Some(9));
        assert_eq!(h.last_fo_reversal_t, Some(20));
        assert_eq!(h.last_polarity, Some(Polarity::On));
    }

    /// Ideal 100 Hz, 2:3 blink at one pixel: on at k*10 ms, off 4 ms later.
    fn ideal_pixel(periods: u64) -> Vec<Event> {
        (0..periods)
            .flat_map(|k| [ev(k * 10_000, 3, 3, true), ev(k * 10_000 + 4000, 3, 3, false)])
            .collect()
    }

    #[test]
    fn jitter_free_blink_recovers_exact_frequency() {
        let p = BlinkGateParams::default();
        let mut gate = Gate {
            params: &p,
            kept: vec![true; 40],
            evicted: 0,
        };
        let mut h = PixelHistory::default();
        for (i, e) in ideal_pixel(20).iter().enumerate() {
            gate.push(&mut h, i, e);
        }
        assert_eq!(reversal_frequency(&h, ReversalDirection::OnToOff), Some(100.0));
        assert_eq!(reversal_frequency(&h, ReversalDirection::OffToOn), Some(100.0));
        assert!(gate.kept.iter().all(|&k| k));
    }

    #[test]
    fn off_band_groups_are_removed() {
        // 40 Hz blink at one pixel
        let evs: Vec<Event> = (0..20)
            .flat_map(|k| [ev(k * 25_000, 0, 0, true), ev(k * 25_000 + 10_000, 0, 0, false)])
            .collect();
        let out = gate_stream(&evs, &BlinkGateParams::default()).unwrap();
        // only the segment after the last group's closing reversal stays
        assert_eq!(out.kept.iter().filter(|&&k| k).count(), 1);
        assert_eq!(out.undecided, 1);
    }

    #[test]
    fn motion_reversal_removes_its_group() {
        // 100 Hz blink with an extra on/off pair squeezed into the dark phase
        let mut evs = ideal_pixel(6);
        evs.push(ev(56_000, 3, 3, true));
        evs.push(ev(57_000, 3, 3, false));
        evs.extend((6..12).flat_map(|k| [ev(k * 10_000, 3, 3, true), ev(k * 10_000 + 4000, 3, 3, false)]));
        let out = gate_stream(&evs, &BlinkGateParams::default()).unwrap();
        let removed: Vec<u64> = evs.iter().zip(&out.kept).filter(|(_, &k)| !k).map(|(e, _)| e.t).collect();
        // 333 Hz and 143 Hz groups go, with the blink edges that share them
        assert_eq!(removed, vec![54_000, 56_000, 57_000, 60_000]);
    }

    #[test]
    fn lone_events_are_kept_as_undecided() {
        let evs = [ev(5, 1, 1, true), ev(9, 2, 1, false), ev(100, 1, 1, true)];
        let out = gate_stream(&evs, &BlinkGateParams::default()).unwrap();
        assert_eq!(out.kept, vec![true; 3]);
        assert_eq!(out.undecided, 3);
        assert!(gate_stream(&[], &BlinkGateParams::default()).unwrap().kept.is_empty());
    }

    #[test]
    fn undecided_can_be_dropped() {
        let p = BlinkGateParams {
            keep_undecided: false,
            ..Default::default()
        };
        let evs = ideal_pixel(6);
        let out = gate_stream(&evs, &p).unwrap();
        // 11 reversals; the estimate at the 11th settles all but the last event
        let kept = out.kept.iter().filter(|&&k| k).count();
        assert_eq!(out.undecided, 1);
        assert_eq!(kept, evs.len() - 1);
        assert!(out.kept[..kept].iter().all(|&k| k));
    }

    #[test]
    fn overflow_evicts_oldest() {
        let evs: Vec<Event> = (0..10).map(|t| ev(t, 0, 0, true)).collect();
        let p = BlinkGateParams {
            buffer_cap: 4,
            ..Default::default()
        };
        let out = gate_stream(&evs, &p).unwrap();
        assert_eq!(out.evicted, 6);
        assert_eq!(out.kept, [vec![false; 6], vec![true; 4]].concat());
    }

    #[test]
    fn invalid_params() {
        for p in [
            BlinkGateParams { f_th: 0.0, ..Default::default() },
            BlinkGateParams { f_th: 100.0, ..Default::default() },
            BlinkGateParams { f_led: -1.0, ..Default::default() },
            BlinkGateParams { warmup_reversals: 1, ..Default::default() },
        ] {
            assert!(gate_stream(&[], &p).is_err());
        }
    }

    #[test]
    fn static_led_loses_nothing_after_warmup() {
        let mut spec = SceneSpec::new(vec![LedSpec::new(0, (60.4, 50.2), 8.0)], 500_000);
        spec.width = 128;
        spec.height = 128;
        spec.seed = 9;
        let ls = synth_scene(&spec).unwrap();
        let p = BlinkGateParams {
            f_th: 20.0,
            ..Default::default()
        };
        let out = gate_stream(ls.stream.events(), &p).unwrap();
        let score = eval_filter(&ls.labels, &out.kept).unwrap();
        assert_eq!(score.signal_removed, 0);
    }

    #[test]
    fn motion_only_events_are_not_kept_as_blink() {
        // edge events of a slowly sweeping bright bar: one reversal pair per pixel
        let mut evs = Vec::new();
        let mut labels = Vec::new();
        for x in 0..50u16 {
            evs.push(ev(x as u64 * 1000, x, 5, true));
            evs.push(ev(x as u64 * 1000 + 30_000, x, 5, false));
            labels.extend([GroundTruthLabel::motion(0); 2]);
        }
        let ls = validate_labeled(evs, labels, StreamMeta::new(64, 16)).unwrap();
        let out = gate_stream(ls.stream.events(), &BlinkGateParams::default()).unwrap();
        // no pixel ever completes a frequency estimate: all kept by the trailing rule
        assert_eq!(out.undecided, 100);
        assert!(ls.labels.iter().all(|l| l.class() == LabelClass::Motion));
    }

    fn arb_pixel_events() -> impl Strategy<Value = Vec<Event>> {
        prop::collection::vec((0u64..200_000, 0u16..4, 0u16..3, any::<bool>()), 0..300).prop_map(|v| {
            let mut evs: Vec<Event> = v.into_iter().map(|(t, x, y, p)| ev(t, x, y, p)).collect();
            evs.sort_by_key(|e| e.t);
            evs
        })
    }

    proptest! {
        #[test]
        fn per_pixel_independence(evs in arb_pixel_events()) {
            let p = BlinkGateParams::default();
            let whole = gate_stream(&evs, &p).unwrap().kept;
            for x in 0..4u16 {
                for y in 0..3u16 {
                    let idx: Vec<usize> = (0..evs.len()).filter(|&i| evs[i].x == x && evs[i].y == y).collect();
                    let sub: Vec<Event> = idx.iter().map(|&i| evs[i]).collect();
                    let k = gate_stream(&sub, &p).unwrap().kept;
                    for (j, &i) in idx.iter().enumerate() {
                        prop_assert_eq!(k[j], whole[i]);
                    }
                }
            }
        }

        #[test]
        fn wider_band_keeps_more(evs in arb_pixel_events(), th in 1.0f64..60.0, extra in 0.0f64..30.0) {
            let narrow = BlinkGateParams { f_th: th, ..Default::default() };
            let wide = BlinkGateParams { f_th: (th + extra).min(99.0), ..Default::default() };
            let a = gate_stream(&evs, &narrow).unwrap().kept;
            let b = gate_stream(&evs, &wide).unwrap().kept;
            prop_assert!(a.iter().zip(&b).all(|(&n, &w)| !n || w));
        }

        #[test]
        fn deterministic(evs in arb_pixel_events()) {
            let p = BlinkGateParams::default();
            prop_assert_eq!(gate_stream(&evs, &p).unwrap(), gate_stream(&evs, &p).unwrap());
        }
    }
}
