//! Event, label and series file formats.
//!
//! Text events are one `t,x,y,s` record per line with an optional fifth
//! label column. A leading `# width=W height=H` comment carries the sensor
//! geometry; other `#` lines are ignored.
//!
//! Binary events start with a 16-byte header (`EVDF`, version `u32`, width
//! `u16`, height `u16`, 4 reserved bytes) followed by 13-byte little-endian
//! records: `t: u64, x: u16, y: u16, s: u8`. Binary files carry no labels.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::deform::DisplacementSeries;
use crate::error::{Error, Result};
use crate::event::{validate_labeled, validate_stream, Event, EventStream, GroundTruthLabel, Polarity, StreamMeta};
use crate::tracker::{CenterSample, CenterTrajectory};

pub const MAGIC: &[u8; 4] = b"EVDF";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 13;
pub const SERIES_HEADER: &str = "t_us,u_px,v_px,dx_mm,dy_mm";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFileFormat {
    TextCsv,
    BinaryPacked,
}

impl EventFileFormat {
    /// `.csv` and `.txt` are text, anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") || ext.eq_ignore_ascii_case("txt") => {
                EventFileFormat::TextCsv
            }
            _ => EventFileFormat::BinaryPacked,
        }
    }
}

/// Result of [`read_events`].
#[derive(Debug, Clone)]
pub struct EventFile {
    pub stream: EventStream,
    pub labels: Option<Vec<GroundTruthLabel>>,
}

impl EventFile {
    pub fn meta(&self) -> StreamMeta {
        self.stream.meta()
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_events(path: &Path, format: EventFileFormat) -> Result<EventFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        EventFileFormat::TextCsv => decode_csv(path, &bytes),
        EventFileFormat::BinaryPacked => decode_binary(path, &bytes),
    }
}

/// Writes `stream` (and labels, text format only) and returns the byte count.
pub fn write_events(
    path: &Path,
    stream: &EventStream,
    labels: Option<&[GroundTruthLabel]>,
    format: EventFileFormat,
) -> Result<usize> {
    let bytes = match format {
        EventFileFormat::TextCsv => encode_csv(stream, labels)?.into_bytes(),
        EventFileFormat::BinaryPacked => encode_binary(stream),
    };
    write_atomic(path, &bytes)?;
    Ok(bytes.len())
}

pub fn encode_csv(stream: &EventStream, labels: Option<&[GroundTruthLabel]>) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != stream.len() {
            return Err(Error::LengthMismatch {
                what: "labels",
                got: l.len(),
                expected: stream.len(),
            });
        }
    }
    let meta = stream.meta();
    let mut out = String::with_capacity(24 * stream.len() + 32);
    let _ = writeln!(out, "# width={} height={}", meta.width, meta.height);
    for (i, e) in stream.events().iter().enumerate() {
        let _ = write!(out, "{},{},{},{}", e.t, e.x, e.y, e.polarity.bit());
        if let Some(l) = labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn encode_binary(stream: &EventStream) -> Vec<u8> {
    let meta = stream.meta();
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&meta.width.to_le_bytes());
    out.extend_from_slice(&meta.height.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity.bit());
    }
    out
}

fn parse_geometry(line: &str) -> Option<(u16, u16)> {
    let mut width = None;
    let mut height = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("width=") {
            width = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("height=") {
            height = v.parse().ok();
        }
    }
    Some((width?, height?))
}

pub fn decode_csv(path: &Path, bytes: &[u8]) -> Result<EventFile> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.into(),
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut geometry = None;
    let mut events = Vec::new();
    let mut labels: Vec<GroundTruthLabel> = Vec::new();
    let mut labeled: Option<bool> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if geometry.is_none() && events.is_empty() {
                geometry = parse_geometry(line);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(parse_err(lineno, format!("expected 4 or 5 fields, got {}", fields.len())));
        }
        let has_label = fields.len() == 5;
        match labeled {
            None => labeled = Some(has_label),
            Some(prev) if prev != has_label => {
                return Err(parse_err(lineno, "label column present on some lines only".into()))
            }
            _ => {}
        }
        if fields[0].starts_with('-') {
            return Err(parse_err(lineno, format!("negative timestamp {}", fields[0])));
        }
        let t: u64 = fields[0]
            .parse()
            .map_err(|e| parse_err(lineno, format!("timestamp {:?}: {e}", fields[0])))?;
        let x: u16 = fields[1]
            .parse()
            .map_err(|e| parse_err(lineno, format!("x {:?}: {e}", fields[1])))?;
        let y: u16 = fields[2]
            .parse()
            .map_err(|e| parse_err(lineno, format!("y {:?}: {e}", fields[2])))?;
        let polarity = fields[3]
            .parse::<u8>()
            .ok()
            .and_then(Polarity::from_bit)
            .ok_or_else(|| parse_err(lineno, format!("polarity {:?} is not 0 or 1", fields[3])))?;
        events.push(Event::new(t, x, y, polarity));
        if has_label {
            let l = GroundTruthLabel::parse(fields[4])
                .ok_or_else(|| parse_err(lineno, format!("unknown label {:?}", fields[4])))?;
            labels.push(l);
        }
    }
    let (width, height) = geometry.unwrap_or_else(|| inferred_geometry(&events));
    let meta = StreamMeta::new(width, height);
    if labeled == Some(true) {
        let ls = validate_labeled(events, labels, meta)?;
        Ok(EventFile {
            stream: ls.stream,
            labels: Some(ls.labels),
        })
    } else {
        Ok(EventFile {
            stream: validate_stream(events, meta)?,
            labels: None,
        })
    }
}

/// Smallest sensor that contains every event, used for header-less CSV.
fn inferred_geometry(events: &[Event]) -> (u16, u16) {
    let w = events.iter().map(|e| e.x).max().map_or(1, |m| m.saturating_add(1));
    let h = events.iter().map(|e| e.y).max().map_or(1, |m| m.saturating_add(1));
    (w, h)
}

pub fn decode_binary(path: &Path, bytes: &[u8]) -> Result<EventFile> {
    let err = |offset: usize, msg: String| Error::Binary {
        path: path.into(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(0, format!("file shorter than the {HEADER_LEN}-byte header")));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(err(4, format!("unsupported format version {version}")));
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]);
    let height = u16::from_le_bytes([bytes[10], bytes[11]]);
    let body = &bytes[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        let offset = HEADER_LEN + body.len() / RECORD_LEN * RECORD_LEN;
        return Err(err(offset, "truncated record".into()));
    }
    let mut events = Vec::with_capacity(body.len() / RECORD_LEN);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let polarity = Polarity::from_bit(rec[12]).ok_or_else(|| {
            err(HEADER_LEN + i * RECORD_LEN + 12, format!("polarity byte {}", rec[12]))
        })?;
        events.push(Event::new(t, x, y, polarity));
    }
    Ok(EventFile {
        stream: validate_stream(events, StreamMeta::new(width, height))?,
        labels: None,
    })
}

/// One row of a series file. Metric columns are empty for raw trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: u64,
    pub u: f64,
    pub v: f64,
    pub dx_mm: Option<f64>,
    pub dy_mm: Option<f64>,
}

fn encode_rows(rows: impl Iterator<Item = SeriesRow>) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.t, r.u, r.v, opt(r.dx_mm), opt(r.dy_mm));
    }
    out
}

/// Displacement series: pixel columns hold displacement from the reference,
/// metric columns hold millimeters.
pub fn write_series(path: &Path, series: &DisplacementSeries) -> Result<usize> {
    let text = encode_rows(series.samples.iter().map(|s| SeriesRow {
        t: s.t,
        u: s.du,
        v: s.dv,
        dx_mm: Some(s.dx * 1e3),
        dy_mm: Some(s.dy * 1e3),
    }));
    write_atomic(path, text.as_bytes())?;
    Ok(text.len())
}

/// Displacement series without a metric scale: metric columns empty.
pub fn write_pixel_series(path: &Path, series: &DisplacementSeries) -> Result<usize> {
    let text = encode_rows(series.samples.iter().map(|s| SeriesRow {
        t: s.t,
        u: s.du,
        v: s.dv,
        dx_mm: None,
        dy_mm: None,
    }));
    write_atomic(path, text.as_bytes())?;
    Ok(text.len())
}

/// Raw center trajectory: absolute pixel centers, metric columns empty.
/// Stale samples are left out.
pub fn write_trajectory(path: &Path, traj: &CenterTrajectory) -> Result<usize> {
    let text = encode_rows(traj.fresh_samples().map(|s| SeriesRow {
        t: s.t,
        u: s.u,
        v: s.v,
        dx_mm: None,
        dy_mm: None,
    }));
    write_atomic(path, text.as_bytes())?;
    Ok(text.len())
}

/// Reads a file written by [`write_trajectory`].
pub fn read_trajectory(path: &Path, marker_id: u32) -> Result<CenterTrajectory> {
    Ok(CenterTrajectory {
        marker_id,
        samples: read_series(path)?
            .into_iter()
            .map(|r| CenterSample {
                t: r.t,
                u: r.u,
                v: r.v,
                stale: false,
            })
            .collect(),
    })
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SERIES_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header {SERIES_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(parse_err(lineno, format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str, name: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("{name} {s:?}: {e}")))
        };
        let opt = |s: &str, name: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, name).map(Some)
            }
        };
        rows.push(SeriesRow {
            t: f[0]
                .parse()
                .map_err(|e| parse_err(lineno, format!("t_us {:?}: {e}", f[0])))?,
            u: num(f[1], "u_px")?,
            v: num(f[2], "v_px")?,
            dx_mm: opt(f[3], "dx_mm")?,
            dy_mm: opt(f[4], "dy_mm")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{DisplacementSample, DisplacementSeries};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_event() -> EventStream {
        validate_stream(
            vec![Event::new(1000, 5, 7, Polarity::On)],
            StreamMeta::new(1280, 720),
        )
        .unwrap()
    }

    fn random_stream(n: usize, seed: u64) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = (0..n)
            .map(|_| {
                Event::new(
                    rng.gen_range(0..3_000_000),
                    rng.gen_range(0..1280),
                    rng.gen_range(0..720),
                    if rng.gen() { Polarity::On } else { Polarity::Off },
                )
            })
            .collect();
        validate_stream(events, StreamMeta::new(1280, 720)).unwrap()
    }

    #[test]
    fn csv_line_decodes() {
        let f = decode_csv(Path::new("x.csv"), b"1000,5,7,1\n").unwrap();
        assert_eq!(f.stream.events(), &[Event::new(1000, 5, 7, Polarity::On)]);
        assert!(f.labels.is_none());
        assert_eq!((f.meta().width, f.meta().height), (6, 8));
    }

    #[test]
    fn csv_line_encodes() {
        let text = encode_csv(&one_event(), None).unwrap();
        assert_eq!(text.lines().nth(1), Some("1000,5,7,1"));
    }

    #[test]
    fn binary_sizes() {
        assert_eq!(encode_binary(&one_event()).len(), 29);
        assert_eq!(encode_binary(&EventStream::empty(1280, 720)).len(), 16);
    }

    #[test]
    fn header_only_binary_is_empty_stream() {
        let bytes = encode_binary(&EventStream::empty(640, 480));
        let f = decode_binary(Path::new("e.evdf"), &bytes).unwrap();
        assert!(f.stream.is_empty());
        assert_eq!((f.meta().width, f.meta().height), (640, 480));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode_binary(&one_event());
        bytes[0] = b'X';
        let err = decode_binary(Path::new("e.evdf"), &bytes).unwrap_err();
        assert!(matches!(err, Error::Binary { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_record_reports_offset() {
        let mut bytes = encode_binary(&random_stream(3, 1));
        bytes.pop();
        match decode_binary(Path::new("e.evdf"), &bytes).unwrap_err() {
            Error::Binary { offset, .. } => assert_eq!(offset, 16 + 2 * 13),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_csv_reports_line() {
        let text = b"# width=10 height=10\n1,2,3,1\n5,1,x,0\n";
        match decode_csv(Path::new("e.csv"), text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let neg = decode_csv(Path::new("e.csv"), b"-5,1,1,0\n").unwrap_err();
        assert!(neg.to_string().contains("negative timestamp"));
        let oob = decode_csv(Path::new("e.csv"), b"# width=10 height=10\n5,10,1,0\n").unwrap_err();
        assert!(matches!(oob, Error::OutOfBounds { .. }));
    }

    #[test]
    fn csv_labels_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        let stream = random_stream(50, 4);
        let labels: Vec<GroundTruthLabel> = (0..50)
            .map(|i| match i % 4 {
                0 => GroundTruthLabel::blink(1),
                1 => GroundTruthLabel::motion(0),
                2 => GroundTruthLabel::background(),
                _ => GroundTruthLabel::thermal(),
            })
            .collect();
        write_events(&path, &stream, Some(&labels), EventFileFormat::TextCsv).unwrap();
        let back = read_events(&path, EventFileFormat::TextCsv).unwrap();
        assert_eq!(back.stream, stream);
        assert_eq!(back.labels.as_deref(), Some(&labels[..]));
    }

    #[test]
    fn large_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let stream = random_stream(100_000, 7);
        for (name, fmt) in [
            ("big.csv", EventFileFormat::TextCsv),
            ("big.evdf", EventFileFormat::BinaryPacked),
        ] {
            let path = dir.path().join(name);
            let n = write_events(&path, &stream, None, fmt).unwrap();
            assert_eq!(n as u64, fs::metadata(&path).unwrap().len());
            let back = read_events(&path, EventFileFormat::from_path(&path)).unwrap();
            assert_eq!(back.stream, stream, "{name}");
        }
    }

    #[test]
    fn series_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let empty = DisplacementSeries {
            reference: (0.0, 0.0),
            magnification: 1e-3,
            samples: vec![],
        };
        write_series(&path, &empty).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{SERIES_HEADER}\n"));

        let samples: Vec<DisplacementSample> = (0..3)
            .map(|i| {
                let du = 0.123456789123 * i as f64;
                let dv = -1.0 / 3.0 * i as f64;
                DisplacementSample::from_pixels(1000 * i, du, dv, 2.0e-3)
            })
            .collect();
        let series = DisplacementSeries {
            reference: (10.0, 20.0),
            magnification: 2.0e-3,
            samples,
        };
        write_series(&path, &series).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 4);
        let rows = read_series(&path).unwrap();
        for (r, s) in rows.iter().zip(&series.samples) {
            assert_eq!(r.t, s.t);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1e-12);
            assert!(close(r.u, s.du) && close(r.v, s.dv));
            assert!(close(r.dx_mm.unwrap(), s.dx * 1e3));
            assert!(close(r.dy_mm.unwrap(), s.dy * 1e3));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn csv_and_binary_decode_identically(seed in any::<u64>(), n in 0usize..300) {
            let stream = random_stream(n, seed);
            let a = decode_csv(Path::new("a.csv"), encode_csv(&stream, None).unwrap().as_bytes()).unwrap();
            let b = decode_binary(Path::new("a.evdf"), &encode_binary(&stream)).unwrap();
            prop_assert_eq!(&a.stream, &stream);
            prop_assert_eq!(&b.stream, &stream);
        }
    }
}
