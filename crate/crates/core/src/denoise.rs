//! Two-stage observation-noise filter.
//!
//! Stage one drops every event whose timestamp bin holds fewer than `n_th`
//! events in the whole stream. Stage two keeps an event only if some other
//! surviving event lies within `t_x` columns, `t_y` rows and `t_t`
//! microseconds of it (closed bounds, polarity ignored).

use crate::error::{Error, Result};
use crate::event::{bin_timestamps, Event};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiseParams {
    /// Minimum population of a timestamp bin.
    pub n_th: usize,
    pub t_x: u16,
    pub t_y: u16,
    /// Temporal neighborhood half-width, microseconds.
    pub t_t: u64,
    /// Timestamp bin width, microseconds.
    pub bin_width: u64,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self {
            n_th: 5,
            t_x: 2,
            t_y: 2,
            t_t: 300,
            bin_width: 100,
        }
    }
}

impl DenoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_th < 1 || self.t_x < 1 || self.t_y < 1 || self.t_t < 1 || self.bin_width < 1 {
            return Err(Error::InvalidParam(format!(
                "denoise parameters must all be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Keep mask of the count-per-bin filter. `events` must be time-sorted.
pub fn coarse_count_filter(events: &[Event], params: &DenoiseParams) -> Result<Vec<bool>> {
    params.validate()?;
    let bins = bin_timestamps(events, params.bin_width)?;
    let mut keep = vec![false; events.len()];
    let mut start = 0;
    while start < bins.len() {
        let mut end = start + 1;
        while end < bins.len() && bins[end] == bins[start] {
            end += 1;
        }
        let pass = end - start >= params.n_th;
        keep[start..end].fill(pass);
        start = end;
    }
    Ok(keep)
}

/// Most recent timestamp seen at each pixel during a sweep.
struct LastSeen {
    width: usize,
    height: usize,
    times: Vec<u64>,
}

const NEVER: u64 = u64::MAX;

impl LastSeen {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            times: vec![NEVER; width * height],
        }
    }

    fn reset(&mut self) {
        self.times.fill(NEVER);
    }

    /// True if any pixel in the window around `e` was seen within `t_t`.
    fn any_within(&self, e: &Event, p: &DenoiseParams) -> bool {
        let x0 = (e.x as usize).saturating_sub(p.t_x as usize);
        let x1 = (e.x as usize + p.t_x as usize).min(self.width - 1);
        let y0 = (e.y as usize).saturating_sub(p.t_y as usize);
        let y1 = (e.y as usize + p.t_y as usize).min(self.height - 1);
        for y in y0..=y1 {
            let row = &self.times[y * self.width + x0..=y * self.width + x1];
            if row.iter().any(|&t| t != NEVER && t.abs_diff(e.t) <= p.t_t) {
                return true;
            }
        }
        false
    }

    fn mark(&mut self, e: &Event) {
        self.times[e.y as usize * self.width + e.x as usize] = e.t;
    }
}

/// Keep mask of the neighbor-support filter over the events with
/// `active[i] == true`; inactive events are neither kept nor used as
/// neighbors. `events` must be time-sorted.
///
/// A forward sweep finds support from earlier events (the latest earlier
/// event per pixel is the closest in time), a backward sweep from later ones.
pub fn spatiotemporal_mask(
    events: &[Event],
    active: &[bool],
    width: u16,
    height: u16,
    params: &DenoiseParams,
) -> Result<Vec<bool>> {
    params.validate()?;
    assert_eq!(events.len(), active.len(), "active mask length");
    let mut keep = vec![false; events.len()];
    if events.is_empty() {
        return Ok(keep);
    }
    let mut seen = LastSeen::new(width.max(1) as usize, height.max(1) as usize);
    for (i, e) in events.iter().enumerate() {
        if active[i] {
            keep[i] = seen.any_within(e, params);
            seen.mark(e);
        }
    }
    seen.reset();
    for (i, e) in events.iter().enumerate().rev() {
        if active[i] {
            keep[i] = keep[i] || seen.any_within(e, params);
            seen.mark(e);
        }
    }
    Ok(keep)
}

/// Spatiotemporal filter over the whole stream.
pub fn spatiotemporal_filter(
    events: &[Event],
    width: u16,
    height: u16,
    params: &DenoiseParams,
) -> Result<Vec<bool>> {
    spatiotemporal_mask(events, &vec![true; events.len()], width, height, params)
}

/// Masks of both stages, indexing the original stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiseMasks {
    pub coarse: Vec<bool>,
    pub kept: Vec<bool>,
}

impl DenoiseMasks {
    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn removed_count(&self) -> usize {
        self.kept.len() - self.kept_count()
    }
}

/// Coarse filter, then spatiotemporal refinement against the survivors.
pub fn denoise_two_stage(
    events: &[Event],
    width: u16,
    height: u16,
    params: &DenoiseParams,
) -> Result<DenoiseMasks> {
    let coarse = coarse_count_filter(events, params)?;
    let kept = spatiotemporal_mask(events, &coarse, width, height, params)?;
    Ok(DenoiseMasks { coarse, kept })
}

/// Splits `events` by `mask` into (kept, removed), order preserved.
pub fn partition(events: &[Event], mask: &[bool]) -> (Vec<Event>, Vec<Event>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (e, &k) in events.iter().zip(mask) {
        if k {
            kept.push(*e);
        } else {
            removed.push(*e);
        }
    }
    (kept, removed)
}
