//! Text formats: signal CSV (`t_sec,fhr_bpm`, empty field = missing) and
//! mask JSONL.

use crate::error::{Error, Result};
use crate::noise::{ClassMap, CorruptionRecord, MaskLine, Run};
use crate::training::{Dataset, Parent};
use serde::{Deserialize, Serialize};
use crate::signal::{FhrSignal, Sample, MAX_BPM, MIN_BPM};
use std::io::{BufRead, Write};

pub const CSV_HEADER: &str = "t_sec,fhr_bpm";

/// Parses a signal CSV. The sample rate is taken from the spacing of the
/// first two timestamps (1 s or 0.25 s).
pub fn read_signal_csv<R: BufRead>(reader: R, id: &str) -> Result<FhrSignal> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))??;
    if header.trim_end_matches('\r').trim() != CSV_HEADER {
        return Err(Error::Parse(format!("expected header {CSV_HEADER:?}, found {header:?}")));
    }
    let mut times = Vec::new();
    let mut samples: Vec<Sample> = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = n + 2;
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("line {row}: expected two fields")))?;
        if v.contains(',') {
            return Err(Error::Parse(format!("line {row}: expected two fields")));
        }
        let t: f64 = t.trim().parse().map_err(|_| Error::Parse(format!("line {row}: bad time {t:?}")))?;
        let v = v.trim();
        let s = if v.is_empty() {
            None
        } else {
            Some(v.parse::<f64>().map_err(|_| Error::Parse(format!("line {row}: bad value {v:?}")))?)
        };
        times.push(t);
        samples.push(s);
    }
    let rate = match times.as_slice() {
        [a, b, ..] => {
            let dt = b - a;
            if (dt - 1.0).abs() < 1e-6 {
                1
            } else if (dt - 0.25).abs() < 1e-6 {
                4
            } else {
                return Err(Error::InvalidRate(0, "1 or 4"));
            }
        }
        _ => 1,
    };
    FhrSignal::new(id, rate, samples)
}

/// Writes samples at `rate_hz`. Values are clamped to the representable
/// bpm range here and only here.
pub fn write_signal_csv<W: Write>(mut w: W, samples: &[Sample], rate_hz: u32) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for (i, s) in samples.iter().enumerate() {
        let t = i as f64 / rate_hz as f64;
        match s {
            Some(v) => writeln!(w, "{t},{}", v.clamp(MIN_BPM, MAX_BPM))?,
            None => writeln!(w, "{t},")?,
        }
    }
    Ok(())
}

pub fn write_masks_jsonl<W: Write>(mut w: W, lines: &[MaskLine]) -> Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_masks_jsonl<R: BufRead>(reader: R) -> Result<Vec<MaskLine>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// One parent of a dataset file: clean and corrupted bpm plus runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetLine {
    pub id: String,
    pub clean: Vec<f64>,
    pub corrupted: Vec<Sample>,
    pub runs: ClassMap<Vec<Run>>,
}

pub fn write_dataset_jsonl<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    for p in &ds.parents {
        let line = DatasetLine {
            id: p.id.clone(),
            clean: p.record.clean.clone(),
            corrupted: p.record.corrupted.clone(),
            runs: ClassMap::from_array(p.record.runs.clone()),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_dataset_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut parents = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DatasetLine = serde_json::from_str(&line)?;
        let len = d.clean.len();
        let runs = d.runs.into_array();
        if d.corrupted.len() != len || runs.iter().flatten().any(|r| r.end > len || r.start > r.end) {
            return Err(Error::Shape(format!("dataset line {}: inconsistent lengths", n + 1)));
        }
        if len != crate::signal::SEGMENT10_LEN {
            return Err(Error::Shape(format!("dataset line {}: expected {} samples", n + 1, crate::signal::SEGMENT10_LEN)));
        }
        parents.push(Parent::from_record(d.id, CorruptionRecord { clean: d.clean, corrupted: d.corrupted, runs }));
    }
    if parents.is_empty() {
        return Err(Error::Parse("empty dataset".into()));
    }
    Ok(Dataset { parents })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let samples = vec![Some(140.25), None, Some(141.0), Some(99.123456789)];
        let mut buf = Vec::new();
        write_signal_csv(&mut buf, &samples, 1).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_sec,fhr_bpm\n0,140.25\n1,\n"));
        let s = read_signal_csv(buf.as_slice(), "x").unwrap();
        assert_eq!(s.samples(), samples.as_slice());
        assert_eq!(s.rate_hz(), 1);
    }

    #[test]
    fn dataset_roundtrip() {
        let clean = crate::synth::clean_segments(3, &crate::synth::SynthConfig::default(), 1);
        let ds = crate::training::build_dataset(&clean, &crate::noise::InjectionConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset_jsonl(&mut buf, &ds).unwrap();
        assert_eq!(read_dataset_jsonl(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(read_signal_csv("a,b\n".as_bytes(), "x"), Err(Error::Parse(_))));
        assert!(matches!(read_signal_csv("t_sec,fhr_bpm\n0,abc\n".as_bytes(), "x"), Err(Error::Parse(_))));
        assert!(matches!(read_signal_csv("t_sec,fhr_bpm\n0,400\n".as_bytes(), "x"), Err(Error::OutOfRange(_))));
        let four = "t_sec,fhr_bpm\n0,140\n0.25,140\n0.5,140\n0.75,140\n";
        assert_eq!(read_signal_csv(four.as_bytes(), "x").unwrap().rate_hz(), 4);
    }
}
