//! Waveform records, abnormality masks and their on-disk formats.
//!
//! Three formats are supported:
//!
//! * CSV waveforms: a `t,v` header followed by one `time,value` row per grid
//!   point. Missing points have an empty value field. A `# segment` comment
//!   line immediately before a row forces that row to open a new recorded
//!   section.
//! * Binary waveforms: a 16-byte header (`DCWF` magic, `u16` version,
//!   `u16` reserved, `f32` sampling rate, `u32` length) followed by
//!   little-endian `f32` samples, NaN marking missing points.
//! * Mask files: a `length=<N>` header followed by `start,end` rows of
//!   half-open regions.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_RATE: f64 = 125.0;

const BINARY_MAGIC: &[u8; 4] = b"DCWF";
const BINARY_VERSION: u16 = 1;
const SEGMENT_MARKER: &str = "# segment";

/// A uniformly sampled signal split into contiguous recorded sections.
///
/// Missing grid points keep their slot so that windows cut from the record
/// have a fixed length; their stored value is `0.0` and `missing` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    pub values: Vec<f64>,
    pub sampling_rate: f64,
    pub segment_starts: Vec<usize>,
    pub missing: Vec<bool>,
}

impl WaveformRecord {
    /// A single fully-present segment.
    pub fn new(values: Vec<f64>, sampling_rate: f64) -> Self {
        let n = values.len();
        WaveformRecord {
            values,
            sampling_rate,
            segment_starts: if n == 0 { Vec::new() } else { vec![0] },
            missing: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sampling_rate
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Half-open `[start, end)` ranges of the contiguous sections.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        self.segment_starts
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, self.segment_starts.get(i + 1).copied().unwrap_or(n)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate
            )));
        }
        if self.values.len() != self.missing.len() {
            return Err(Error::Shape(format!(
                "{} values but {} missing flags",
                self.values.len(),
                self.missing.len()
            )));
        }
        if !self.values.is_empty() {
            if self.segment_starts.first() != Some(&0) {
                return Err(Error::InvalidInput("segment starts must begin at 0".into()));
            }
            let increasing = self.segment_starts.windows(2).all(|w| w[0] < w[1]);
            let in_range = self.segment_starts.iter().all(|&s| s < self.values.len());
            if !increasing || !in_range {
                return Err(Error::InvalidInput(
                    "segment starts must be strictly increasing and inside the record".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-timepoint abnormality flags with the equivalent sorted region list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkMask {
    flags: Vec<bool>,
    regions: Vec<(usize, usize)>,
}

impl MarkMask {
    pub fn empty(len: usize) -> Self {
        MarkMask {
            flags: vec![false; len],
            regions: Vec::new(),
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        let regions = regions_of(&flags);
        MarkMask { flags, regions }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn regions(&self) -> &[(usize, usize)] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn marked_count(&self) -> usize {
        self.regions.iter().map(|(s, e)| e - s).sum()
    }

    pub fn marked_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            0.0
        } else {
            self.marked_count() as f64 / self.flags.len() as f64
        }
    }

    pub fn any_in(&self, start: usize, end: usize) -> bool {
        self.flags[start..end].iter().any(|&f| f)
    }

    pub fn union(&self, other: &MarkMask) -> Result<MarkMask> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "mask lengths {} and {} differ",
                self.len(),
                other.len()
            )));
        }
        Ok(MarkMask::from_flags(
            self.flags
                .iter()
                .zip(&other.flags)
                .map(|(a, b)| *a || *b)
                .collect(),
        ))
    }
}

fn regions_of(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut regions = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                regions.push((s, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        regions.push((s, flags.len()));
    }
    regions
}

/// Builds a mask from half-open regions; overlapping regions are unioned.
pub fn mask_from_regions(regions: &[(usize, usize)], length: usize) -> Result<MarkMask> {
    let mut flags = vec![false; length];
    for &(start, end) in regions {
        if start > end || end > length {
            return Err(Error::Bounds(format!(
                "region ({start}, {end}) outside [0, {length})"
            )));
        }
        flags[start..end].iter_mut().for_each(|f| *f = true);
    }
    Ok(MarkMask::from_flags(flags))
}

fn parse_field(field: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} {:?} is not a number", field.trim()),
    })
}

struct Row {
    time: f64,
    value: Option<f64>,
    forced_segment: bool,
}

/// Reads `time,value` rows and resamples them onto the uniform grid of
/// `expected_rate` by nearest-timestamp assignment.
///
/// A time step larger than `gap_factor / expected_rate` between consecutive
/// rows opens a new segment. Grid points without a row inside half a sample
/// period are missing.
pub fn parse_waveform<R: BufRead>(
    reader: R,
    expected_rate: f64,
    gap_factor: f64,
) -> Result<WaveformRecord> {
    if !(expected_rate > 0.0) {
        return Err(Error::InvalidInput(format!(
            "expected rate must be positive, got {expected_rate}"
        )));
    }
    if !(gap_factor > 1.0) {
        return Err(Error::InvalidInput(format!(
            "gap factor must exceed 1, got {gap_factor}"
        )));
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut pending_segment = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if trimmed == SEGMENT_MARKER {
                pending_segment = true;
            }
            continue;
        }
        let (t_field, v_field) = trimmed.split_once(',').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected `time,value`".into(),
        })?;
        if lineno == 1 && t_field.trim().parse::<f64>().is_err() {
            // header row
            continue;
        }
        let time = parse_field(t_field, lineno, "timestamp")?;
        let value = if v_field.trim().is_empty() {
            None
        } else {
            Some(parse_field(v_field, lineno, "value")?)
        };
        if let Some(prev) = rows.last() {
            if !(time > prev.time) {
                return Err(Error::Ordering { line: lineno, time });
            }
        }
        rows.push(Row {
            time,
            value,
            forced_segment: std::mem::take(&mut pending_segment),
        });
    }

    let Some(first) = rows.first() else {
        return Ok(WaveformRecord::new(Vec::new(), expected_rate));
    };
    let origin = first.time;
    let period = 1.0 / expected_rate;
    let gap_limit = gap_factor * period;
    let last_index = ((rows.last().map_or(origin, |r| r.time) - origin) * expected_rate).round();
    let n = last_index as usize + 1;

    let mut values = vec![0.0; n];
    let mut missing = vec![true; n];
    // distance of the row currently occupying each grid point
    let mut best = vec![f64::INFINITY; n];
    let mut segment_starts = vec![0usize];
    let mut prev_time = origin;
    for (i, row) in rows.iter().enumerate() {
        let pos = (row.time - origin) * expected_rate;
        let index = (pos.round() as usize).min(n - 1);
        let dist = (pos - index as f64).abs();
        if i > 0 && (row.forced_segment || row.time - prev_time > gap_limit) {
            if *segment_starts.last().unwrap() < index {
                segment_starts.push(index);
            }
        }
        prev_time = row.time;
        if dist <= 0.5 && dist < best[index] {
            best[index] = dist;
            match row.value {
                Some(v) => {
                    values[index] = v;
                    missing[index] = false;
                }
                None => {
                    values[index] = 0.0;
                    missing[index] = true;
                }
            }
        }
    }

    let record = WaveformRecord {
        values,
        sampling_rate: expected_rate,
        segment_starts,
        missing,
    };
    record.validate()?;
    Ok(record)
}

pub fn read_waveform(path: &Path, expected_rate: f64, gap_factor: f64) -> Result<WaveformRecord> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_waveform(BufReader::new(file), expected_rate, gap_factor)
}

/// Serializes a record as CSV; values use the shortest exact representation
/// so parsing the output reproduces the record bit for bit.
pub fn format_waveform<W: Write>(record: &WaveformRecord, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,v")?;
    let mut next_segment = record.segment_starts.iter().skip(1).peekable();
    for (i, (&v, &m)) in record.values.iter().zip(&record.missing).enumerate() {
        if next_segment.peek() == Some(&&i) {
            writeln!(out, "{SEGMENT_MARKER}")?;
            next_segment.next();
        }
        let t = i as f64 / record.sampling_rate;
        if m {
            writeln!(out, "{t},")?;
        } else {
            writeln!(out, "{t},{v}")?;
        }
    }
    out.flush()
}

pub fn write_waveform(record: &WaveformRecord, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    format_waveform(record, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn write_waveform_binary(record: &WaveformRecord, path: &Path) -> Result<()> {
    let len = u32::try_from(record.len())
        .map_err(|_| Error::InvalidInput("record too long for the binary format".into()))?;
    let mut buf = Vec::with_capacity(16 + 4 * record.len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(record.sampling_rate as f32).to_le_bytes());
    buf.extend_from_slice(&len.to_le_bytes());
    for (&v, &m) in record.values.iter().zip(&record.missing) {
        let x = if m { f32::NAN } else { v as f32 };
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_waveform_binary(path: &Path) -> Result<WaveformRecord> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != BINARY_MAGIC {
        return Err(Error::Format("not a binary waveform file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BINARY_VERSION {
        return Err(Error::VersionMismatch {
            found: version.into(),
            expected: BINARY_VERSION.into(),
        });
    }
    let rate = f32::from_le_bytes(bytes[8..12].try_into().unwrap()) as f64;
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 4 * len {
        return Err(Error::Format(format!(
            "header declares {len} samples but payload holds {}",
            (bytes.len() - 16) / 4
        )));
    }
    let raw: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut record = WaveformRecord::new(raw.iter().map(|&x| x as f64).collect(), rate);
    for (i, x) in raw.iter().enumerate() {
        if x.is_nan() {
            record.values[i] = 0.0;
            record.missing[i] = true;
        }
    }
    record.validate()?;
    Ok(record)
}

pub fn format_mask<W: Write>(mask: &MarkMask, mut out: W) -> std::io::Result<()> {
    writeln!(out, "length={}", mask.len())?;
    for (s, e) in mask.regions() {
        writeln!(out, "{s},{e}")?;
    }
    out.flush()
}

pub fn write_mask(mask: &MarkMask, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    format_mask(mask, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn parse_mask<R: BufRead>(reader: R) -> Result<MarkMask> {
    let mut length: Option<usize> = None;
    let mut regions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(n) = line.strip_prefix("length=") {
            length = Some(n.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad length {n:?}"),
            })?);
            continue;
        }
        let parse = |f: &str| {
            f.trim().parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad index {f:?}"),
            })
        };
        let (s, e) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected `start,end`".into(),
        })?;
        regions.push((parse(s)?, parse(e)?));
    }
    let length = length.ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing `length=<N>` header".into(),
    })?;
    mask_from_regions(&regions, length)
}

pub fn read_mask(path: &Path) -> Result<MarkMask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_mask(BufReader::new(file))
}
