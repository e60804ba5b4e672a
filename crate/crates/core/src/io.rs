//! File formats: the `PNRW1` binary waveform container and comma-separated
//! tables.
//!
//! `PNRW1` layout, little-endian throughout:
//!
//! | offset | size | field                                     |
//! |--------|------|-------------------------------------------|
//! | 0      | 5    | magic `PNRW1`                             |
//! | 5      | 8    | sample period, femtoseconds (u64)         |
//! | 13     | 4    | samples per trace (u32)                   |
//! | 17     | 8    | trace count (u64)                         |
//! | 25     | 8    | mean photon number label (f64, NaN = none)|
//! | 33     | ..   | traces, consecutive f32 volts             |
//!
//! The header carries no time origin; traces read back start at `t0 = 0`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::edge::EdgePair;
use crate::error::{Error, Result};
use crate::pca::WeightPoint;
use crate::waveform::{Source, Trace, TraceSet};

pub const MAGIC: &[u8; 5] = b"PNRW1";
pub const HEADER_LEN: u64 = 33;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformHeader {
    pub sample_period_fs: u64,
    pub samples_per_trace: u32,
    pub trace_count: u64,
    pub label: Option<f64>,
}

impl WaveformHeader {
    pub fn sample_period(&self) -> f64 {
        self.sample_period_fs as f64 / 1e15
    }

    pub fn payload_len(&self) -> u64 {
        self.trace_count * self.samples_per_trace as u64 * 4
    }

    fn to_bytes(self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..5].copy_from_slice(MAGIC);
        b[5..13].copy_from_slice(&self.sample_period_fs.to_le_bytes());
        b[13..17].copy_from_slice(&self.samples_per_trace.to_le_bytes());
        b[17..25].copy_from_slice(&self.trace_count.to_le_bytes());
        b[25..33].copy_from_slice(&self.label.unwrap_or(f64::NAN).to_le_bytes());
        b
    }
}

fn period_to_fs(sample_period: f64) -> Result<u64> {
    let fs = (sample_period * 1e15).round();
    if !(fs >= 1.0 && fs < u64::MAX as f64) {
        return Err(Error::invalid(format!(
            "sample period {sample_period} s is not representable in femtoseconds"
        )));
    }
    Ok(fs as u64)
}

/// Reads until `buf` is full or the input ends; returns the bytes read.
fn fill(reader: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match reader.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

fn parse(offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Sequential reader over a `PNRW1` stream.
pub struct WaveformReader<R: Read> {
    inner: R,
    header: WaveformHeader,
    next: u64,
    buf: Vec<u8>,
}

impl WaveformReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> WaveformReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN as usize];
        let got = fill(&mut inner, &mut h)?;
        if got >= 5 && &h[0..5] != MAGIC {
            return Err(parse(0, "bad magic, expected PNRW1"));
        }
        if got < HEADER_LEN as usize {
            return Err(parse(got as u64, "file ends inside the header"));
        }
        let u64_at = |i: usize| u64::from_le_bytes(h[i..i + 8].try_into().expect("8 bytes"));
        let sample_period_fs = u64_at(5);
        let samples_per_trace = u32::from_le_bytes(h[13..17].try_into().expect("4 bytes"));
        let trace_count = u64_at(17);
        let label = f64::from_le_bytes(h[25..33].try_into().expect("8 bytes"));
        if sample_period_fs == 0 {
            return Err(parse(5, "sample period is zero"));
        }
        if samples_per_trace == 0 {
            return Err(parse(13, "samples per trace is zero"));
        }
        let label = if label.is_nan() {
            None
        } else if label.is_finite() && label >= 0.0 {
            Some(label)
        } else {
            return Err(parse(25, format!("invalid photon-number label {label}")));
        };
        Ok(Self {
            inner,
            header: WaveformHeader {
                sample_period_fs,
                samples_per_trace,
                trace_count,
                label,
            },
            next: 0,
            buf: vec![0u8; samples_per_trace as usize * 4],
        })
    }

    pub fn header(&self) -> &WaveformHeader {
        &self.header
    }

    /// Next trace, or `None` after the last one. Record ids count from 0.
    pub fn next_trace(&mut self) -> Result<Option<Trace>> {
        if self.next >= self.header.trace_count {
            return Ok(None);
        }
        let start = HEADER_LEN + self.next * self.buf.len() as u64;
        let got = fill(&mut self.inner, &mut self.buf)?;
        if got < self.buf.len() {
            return Err(parse(
                start + got as u64,
                format!(
                    "payload ends inside trace {} of {}",
                    self.next, self.header.trace_count
                ),
            ));
        }
        let mut samples = Vec::with_capacity(self.header.samples_per_trace as usize);
        for (j, c) in self.buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(parse(start + 4 * j as u64, "non-finite sample"));
            }
            samples.push(v);
        }
        let trace = Trace::new(samples, self.header.sample_period(), 0.0, self.next)?;
        self.next += 1;
        Ok(Some(trace))
    }

    /// Fails if bytes remain after the declared payload.
    pub fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        if fill(&mut self.inner, &mut probe)? > 0 {
            let end = HEADER_LEN + self.header.payload_len();
            return Err(parse(end, "trailing bytes after the declared payload"));
        }
        Ok(())
    }
}

/// Reads a whole `PNRW1` stream into memory.
pub fn read_waveforms(reader: impl Read, source: Source) -> Result<TraceSet> {
    let mut r = WaveformReader::new(reader)?;
    let mut traces = Vec::new();
    while let Some(t) = r.next_trace()? {
        traces.push(t);
    }
    let label = r.header().label;
    r.finish()?;
    if traces.is_empty() {
        return Err(Error::EmptyResult("waveform file holds no traces".into()));
    }
    TraceSet::new(traces, label, source)
}

pub fn read_waveform_file(path: impl AsRef<Path>, source: Source) -> Result<TraceSet> {
    read_waveforms(BufReader::new(File::open(path)?), source)
}

/// Incremental `PNRW1` writer; the trace count is patched in by
/// [`WaveformWriter::finish`].
pub struct WaveformWriter<W: Write + Seek> {
    inner: W,
    header: WaveformHeader,
}

impl WaveformWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, sample_period: f64, samples_per_trace: usize, label: Option<f64>) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), sample_period, samples_per_trace, label)
    }
}

impl<W: Write + Seek> WaveformWriter<W> {
    pub fn new(mut inner: W, sample_period: f64, samples_per_trace: usize, label: Option<f64>) -> Result<Self> {
        let samples_per_trace = u32::try_from(samples_per_trace)
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid("samples per trace must be in 1..=u32::MAX"))?;
        if let Some(l) = label {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::invalid(format!("invalid photon-number label {l}")));
            }
        }
        let header = WaveformHeader {
            sample_period_fs: period_to_fs(sample_period)?,
            samples_per_trace,
            trace_count: 0,
            label,
        };
        inner.write_all(&header.to_bytes())?;
        Ok(Self { inner, header })
    }

    pub fn write_trace(&mut self, trace: &Trace) -> Result<()> {
        if trace.len() != self.header.samples_per_trace as usize {
            return Err(Error::invalid(format!(
                "trace has {} samples, file expects {}",
                trace.len(),
                self.header.samples_per_trace
            )));
        }
        if period_to_fs(trace.sample_period())? != self.header.sample_period_fs {
            return Err(Error::invalid("trace sample period differs from the file's"));
        }
        for v in trace.samples() {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        self.header.trace_count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(17))?;
        self.inner.write_all(&self.header.trace_count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_waveform_file(path: impl AsRef<Path>, set: &TraceSet) -> Result<()> {
    let period = set
        .sample_period()
        .ok_or_else(|| Error::invalid("cannot write an empty trace set"))?;
    let mut w = WaveformWriter::create(path, period, set.trace_len(), set.mean_photon_number())?;
    for t in set.traces() {
        w.write_trace(t)?;
    }
    w.finish()?;
    Ok(())
}

/// Float formatting for tables: 15 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.14e}")
}

fn csv_writer<W: Write>(mut out: W, comments: &[String], columns: &[&str]) -> Result<csv::Writer<W>> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "# {}", columns.join(","))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(out))
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    parse(offset, e.to_string())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
    let raw = rec
        .get(i)
        .ok_or_else(|| parse(offset, format!("missing column {}", i + 1)))?;
    raw.parse()
        .map_err(|_| parse(offset, format!("cannot parse {raw:?} in column {}", i + 1)))
}

/// Writes `trace_id,x,y` rows.
pub fn write_point_table<W: Write>(out: W, points: &[WeightPoint], columns: [&str; 3], comments: &[String]) -> Result<()> {
    let mut w = csv_writer(out, comments, &columns)?;
    for p in points {
        w.write_record([p.trace_id.to_string(), fmt_f64(p.w1), fmt_f64(p.w2)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `trace_id,x,y` rows written by [`write_point_table`].
pub fn read_point_table<R: Read>(input: R) -> Result<Vec<WeightPoint>> {
    let mut out = Vec::new();
    for rec in csv_reader(input).records() {
        let rec = rec.map_err(csv_error)?;
        let p = WeightPoint {
            trace_id: field(&rec, 0)?,
            w1: field(&rec, 1)?,
            w2: field(&rec, 2)?,
        };
        if !(p.w1.is_finite() && p.w2.is_finite()) {
            let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
            return Err(parse(offset, "non-finite coordinate"));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_edge_table<W: Write>(out: W, edges: &[EdgePair], comments: &[String]) -> Result<()> {
    let points: Vec<WeightPoint> = edges.iter().map(|e| e.to_point()).collect();
    write_point_table(out, &points, ["trace_id", "t_rise", "t_fall"], comments)
}

pub fn read_edge_table<R: Read>(input: R) -> Result<Vec<EdgePair>> {
    Ok(read_point_table(input)?
        .into_iter()
        .map(|p| EdgePair {
            t_rise: p.w1,
            t_fall: p.w2,
            trace_id: p.trace_id,
        })
        .collect())
}

/// Writes `trace_id,true_n` rows.
pub fn write_labels<W: Write>(out: W, labels: &[(u64, u32)], comments: &[String]) -> Result<()> {
    let mut w = csv_writer(out, comments, &["trace_id", "true_n"])?;
    for (id, n) in labels {
        w.write_record([id.to_string(), n.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(input: R) -> Result<Vec<(u64, u32)>> {
    let mut out = Vec::new();
    for rec in csv_reader(input).records() {
        let rec = rec.map_err(csv_error)?;
        out.push((field(&rec, 0)?, field(&rec, 1)?));
    }
    Ok(out)
}

/// Generic numeric table: one row per line, all columns numeric.
pub fn write_table<W: Write>(out: W, columns: &[&str], rows: &[Vec<f64>], comments: &[String]) -> Result<()> {
    let mut w = csv_writer(out, comments, columns)?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::invalid("row width differs from the column count"));
        }
        w.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Imports traces from delimited text, one trace per line of comma-separated
/// volts. All lines must have the same length.
pub fn import_delimited_traces<R: Read>(input: R, sample_period: f64, label: Option<f64>) -> Result<TraceSet> {
    let mut traces = Vec::new();
    let mut width = None;
    for rec in csv_reader(input).records() {
        let rec = rec.map_err(csv_error)?;
        let offset = rec.position().map(|p| p.byte()).unwrap_or(0);
        let mut samples = Vec::with_capacity(rec.len());
        for i in 0..rec.len() {
            let v: f32 = field(&rec, i)?;
            if !v.is_finite() {
                return Err(parse(offset, format!("non-finite sample in column {}", i + 1)));
            }
            samples.push(v);
        }
        match width {
            None => width = Some(samples.len()),
            Some(w) if w != samples.len() => {
                return Err(parse(offset, format!("expected {w} samples, found {}", samples.len())));
            }
            _ => {}
        }
        let id = traces.len() as u64;
        traces.push(Trace::new(samples, sample_period, 0.0, id)?);
    }
    if traces.is_empty() {
        return Err(Error::EmptyResult("no traces in delimited input".into()));
    }
    TraceSet::new(traces, label, Source::Measured)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample_set() -> TraceSet {
        let traces = (0..3)
            .map(|i| Trace::new(vec![0.1 * i as f32, -0.25, 1e-7, 3.0], 8e-12, 0.0, i).unwrap())
            .collect();
        TraceSet::new(traces, Some(1.5), Source::Synthetic).unwrap()
    }

    fn to_bytes(set: &TraceSet) -> Vec<u8> {
        let mut w = WaveformWriter::new(Cursor::new(Vec::new()), 8e-12, set.trace_len(), set.mean_photon_number()).unwrap();
        for t in set.traces() {
            w.write_trace(t).unwrap();
        }
        w.finish().unwrap().into_inner()
    }

    #[test]
    fn header_layout() {
        let b = to_bytes(&sample_set());
        assert_eq!(&b[0..5], b"PNRW1");
        assert_eq!(u64::from_le_bytes(b[5..13].try_into().unwrap()), 8000);
        assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(b[17..25].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(b[25..33].try_into().unwrap()), 1.5);
        assert_eq!(b.len() as u64, HEADER_LEN + 3 * 4 * 4);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let set = sample_set();
        let back = read_waveforms(Cursor::new(to_bytes(&set)), Source::Synthetic).unwrap();
        assert_eq!(back.mean_photon_number(), Some(1.5));
        assert_eq!(back.sample_period(), Some(8e-12));
        for (a, b) in set.traces().iter().zip(back.traces()) {
            let ab: Vec<u32> = a.samples().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.samples().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let b = to_bytes(&sample_set());
        let cut = &b[..b.len() - 6];
        match read_waveforms(Cursor::new(cut), Source::Measured) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("{other:?}"),
        }
        match read_waveforms(Cursor::new(&b[..20]), Source::Measured) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut b = to_bytes(&sample_set());
        b[0] = b'X';
        assert!(matches!(
            read_waveforms(Cursor::new(&b), Source::Measured),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut b = to_bytes(&sample_set());
        let end = b.len() as u64;
        b.push(0);
        match read_waveforms(Cursor::new(&b), Source::Measured) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, end),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unlabeled_is_nan() {
        let set = TraceSet::new(sample_set().into_traces(), None, Source::Measured).unwrap();
        let mut w = WaveformWriter::new(Cursor::new(Vec::new()), 8e-12, 4, None).unwrap();
        for t in set.traces() {
            w.write_trace(t).unwrap();
        }
        let b = w.finish().unwrap().into_inner();
        assert!(f64::from_le_bytes(b[25..33].try_into().unwrap()).is_nan());
        let back = read_waveforms(Cursor::new(b), Source::Measured).unwrap();
        assert_eq!(back.mean_photon_number(), None);
    }

    #[test]
    fn point_table_round_trip() {
        let pts = vec![
            WeightPoint { w1: 1.0 / 3.0, w2: -2.5e-9, trace_id: 7 },
            WeightPoint { w1: 0.0, w2: 123456.789012345, trace_id: 9 },
        ];
        let mut buf = Vec::new();
        write_point_table(&mut buf, &pts, ["trace_id", "w1", "w2"], &["fit".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# fit\n# trace_id,w1,w2\n7,3.33333333333333e-1,"));
        let back = read_point_table(Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a.trace_id, b.trace_id);
            assert!((a.w1 - b.w1).abs() <= 1e-14 * a.w1.abs());
            assert!((a.w2 - b.w2).abs() <= 1e-14 * a.w2.abs());
        }
    }

    #[test]
    fn malformed_table_row() {
        let err = read_point_table(Cursor::new("# x\n1,2.0,3.0\n2,abc,4\n")).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 14),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn delimited_import() {
        let set = import_delimited_traces(Cursor::new("# volts\n0,0.1,0.2\n0,0.3,0.1\n"), 1e-9, None).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.trace_len(), 3);
        assert!(import_delimited_traces(Cursor::new("0,1\n0,1,2\n"), 1e-9, None).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![(0, 1), (1, 0), (2, 4)];
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels, &[]).unwrap();
        assert_eq!(read_labels(Cursor::new(buf)).unwrap(), labels);
    }
}
