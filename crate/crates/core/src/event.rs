//! Event data model, stream ordering contract and timestamp binning.
//!
//! Timestamps are integer microseconds throughout. Pixel coordinates use the
//! convention that pixel `(x, y)` has its center at the continuous position
//! `(x, y)`, so arithmetic means of event coordinates are sub-pixel centers
//! directly.

use std::fmt;

use crate::error::{Error, Result};

/// Sign of the brightness change that produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    /// Brightness decrease, encoded as `0`.
    Off,
    /// Brightness increase, encoded as `1`.
    On,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }
}

/// One asynchronous brightness-change sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMeta {
    pub width: u16,
    pub height: u16,
    /// Span of the stream from the time origin: last timestamp + 1, or 0 when empty.
    pub duration: u64,
    pub count: usize,
}

impl StreamMeta {
    pub fn new(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            duration: 0,
            count: 0,
        }
    }
}

/// Provenance class of a synthetic event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelClass {
    BlinkSignal,
    Motion,
    BackgroundNoise,
    ThermalNoise,
}

impl LabelClass {
    pub fn is_noise(self) -> bool {
        matches!(self, LabelClass::BackgroundNoise | LabelClass::ThermalNoise)
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelClass::BlinkSignal => "BLINK_SIGNAL",
            LabelClass::Motion => "MOTION",
            LabelClass::BackgroundNoise => "BACKGROUND_NOISE",
            LabelClass::ThermalNoise => "THERMAL_NOISE",
        }
    }
}

/// Ground-truth label. Marker-bound classes always carry a marker id and
/// noise classes never do; the constructors enforce this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroundTruthLabel {
    class: LabelClass,
    marker_id: Option<u32>,
}

impl GroundTruthLabel {
    pub fn blink(marker_id: u32) -> Self {
        Self {
            class: LabelClass::BlinkSignal,
            marker_id: Some(marker_id),
        }
    }

    pub fn motion(marker_id: u32) -> Self {
        Self {
            class: LabelClass::Motion,
            marker_id: Some(marker_id),
        }
    }

    pub fn background() -> Self {
        Self {
            class: LabelClass::BackgroundNoise,
            marker_id: None,
        }
    }

    pub fn thermal() -> Self {
        Self {
            class: LabelClass::ThermalNoise,
            marker_id: None,
        }
    }

    pub fn class(&self) -> LabelClass {
        self.class
    }

    pub fn marker_id(&self) -> Option<u32> {
        self.marker_id
    }

    /// Parses the text form used in the CSV label column, e.g. `BLINK_SIGNAL:0`.
    pub fn parse(text: &str) -> Option<Self> {
        let (name, id) = match text.split_once(':') {
            Some((n, id)) => (n, Some(id.parse::<u32>().ok()?)),
            None => (text, None),
        };
        match (name, id) {
            ("BLINK_SIGNAL", Some(id)) => Some(Self::blink(id)),
            ("MOTION", Some(id)) => Some(Self::motion(id)),
            ("BACKGROUND_NOISE", None) => Some(Self::background()),
            ("THERMAL_NOISE", None) => Some(Self::thermal()),
            _ => None,
        }
    }
}

impl fmt::Display for GroundTruthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.marker_id {
            Some(id) => write!(f, "{}:{}", self.class.name(), id),
            None => f.write_str(self.class.name()),
        }
    }
}

/// A time-sorted, bounds-checked event sequence with its metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    meta: StreamMeta,
}

impl EventStream {
    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            events: Vec::new(),
            meta: StreamMeta::new(width, height),
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn meta(&self) -> StreamMeta {
        self.meta
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Keeps events whose mask entry is `true`. Sorted order is preserved, so
    /// the result is still valid.
    pub fn select(&self, mask: &[bool]) -> EventStream {
        assert_eq!(mask.len(), self.events.len(), "mask length");
        let events: Vec<Event> = self
            .events
            .iter()
            .zip(mask)
            .filter_map(|(e, &keep)| keep.then_some(*e))
            .collect();
        EventStream {
            meta: derived_meta(&events, self.meta.width, self.meta.height),
            events,
        }
    }
}

/// An event stream with one ground-truth label per event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledStream {
    pub stream: EventStream,
    pub labels: Vec<GroundTruthLabel>,
}

impl LabeledStream {
    pub fn select(&self, mask: &[bool]) -> LabeledStream {
        LabeledStream {
            stream: self.stream.select(mask),
            labels: self
                .labels
                .iter()
                .zip(mask)
                .filter_map(|(l, &keep)| keep.then_some(*l))
                .collect(),
        }
    }
}

fn derived_meta(events: &[Event], width: u16, height: u16) -> StreamMeta {
    StreamMeta {
        width,
        height,
        duration: events.last().map_or(0, |e| e.t + 1),
        count: events.len(),
    }
}

fn check_bounds(events: &[Event], width: u16, height: u16) -> Result<()> {
    for (index, e) in events.iter().enumerate() {
        if e.x >= width || e.y >= height {
            return Err(Error::OutOfBounds {
                index,
                x: e.x.into(),
                y: e.y.into(),
                width,
                height,
            });
        }
    }
    Ok(())
}

/// Bounds-checks and stably sorts `events` by timestamp; `meta.count` and
/// `meta.duration` are recomputed from the data.
pub fn validate_stream(mut events: Vec<Event>, meta: StreamMeta) -> Result<EventStream> {
    check_bounds(&events, meta.width, meta.height)?;
    if !events.windows(2).all(|w| w[0].t <= w[1].t) {
        events.sort_by_key(|e| e.t);
    }
    Ok(EventStream {
        meta: derived_meta(&events, meta.width, meta.height),
        events,
    })
}

/// Same as [`validate_stream`], permuting labels along with their events.
pub fn validate_labeled(
    events: Vec<Event>,
    labels: Vec<GroundTruthLabel>,
    meta: StreamMeta,
) -> Result<LabeledStream> {
    if labels.len() != events.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            got: labels.len(),
            expected: events.len(),
        });
    }
    check_bounds(&events, meta.width, meta.height)?;
    let mut pairs: Vec<(Event, GroundTruthLabel)> = events.into_iter().zip(labels).collect();
    if !pairs.windows(2).all(|w| w[0].0.t <= w[1].0.t) {
        pairs.sort_by_key(|(e, _)| e.t);
    }
    let (events, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(LabeledStream {
        stream: EventStream {
            meta: derived_meta(&events, meta.width, meta.height),
            events,
        },
        labels,
    })
}

/// Returns `floor(t / bin_width) * bin_width` for every event, index-aligned
/// with the input. The events themselves keep their raw timestamps.
pub fn bin_timestamps(events: &[Event], bin_width: u64) -> Result<Vec<u64>> {
    if bin_width == 0 {
        return Err(Error::InvalidParam("bin_width must be >= 1".into()));
    }
    Ok(events.iter().map(|e| e.t / bin_width * bin_width).collect())
}
