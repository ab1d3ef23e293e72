//! FHR signal representation, 4 Hz → 1 Hz resampling, ten-minute
//! segmentation and the fixed bpm ↔ unit-range normalisation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One FHR sample in bpm; `None` marks a missing sample.
pub type Sample = Option<f64>;

/// Ten minutes at 1 Hz.
pub const SEGMENT10_LEN: usize = 600;
/// One minute at 1 Hz.
pub const SEGMENT1_LEN: usize = 60;
/// Minutes per ten-minute segment.
pub const MINUTES_PER_SEGMENT: usize = SEGMENT10_LEN / SEGMENT1_LEN;

/// Physiological range accepted on ingest.
pub const MIN_BPM: f64 = 30.0;
pub const MAX_BPM: f64 = 300.0;

/// `bpm / 240` maps the FHR range onto `[0, 1]`.
pub const NORM_SCALE_BPM: f64 = 240.0;
/// Upper clamp applied before scaling. Above 240 bpm only doubled
/// artefacts occur; they keep their value so that halving them restores the
/// original exactly.
pub const NORM_CEILING_BPM: f64 = 600.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleMethod {
    /// Mean of each 4-sample block, ignoring missing samples.
    #[default]
    BlockMean,
    /// First sample of each block.
    Decimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FhrSignal {
    id: String,
    rate_hz: u32,
    samples: Vec<Sample>,
}

impl FhrSignal {
    pub fn new(id: impl Into<String>, rate_hz: u32, samples: Vec<Sample>) -> Result<Self> {
        if rate_hz != 1 && rate_hz != 4 {
            return Err(Error::InvalidRate(rate_hz, "1 or 4"));
        }
        if samples.is_empty() {
            return Err(Error::TooShort { len: 0, min: 1 });
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.filter(|v| !(MIN_BPM..=MAX_BPM).contains(v)).map(|v| (i, v)))
        {
            return Err(Error::OutOfRange(format!(
                "sample {i} = {v} bpm outside [{MIN_BPM}, {MAX_BPM}]"
            )));
        }
        Ok(Self {
            id: id.into(),
            rate_hz,
            samples,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn downsample(&self) -> Result<FhrSignal> {
        self.downsample_with(DownsampleMethod::BlockMean)
    }

    /// 4 Hz → 1 Hz. Output length is `floor(len / 4)`; an all-missing block
    /// stays missing.
    pub fn downsample_with(&self, method: DownsampleMethod) -> Result<FhrSignal> {
        if self.rate_hz != 4 {
            return Err(Error::InvalidRate(self.rate_hz, "4"));
        }
        let out: Vec<Sample> = self
            .samples
            .chunks_exact(4)
            .map(|block| match method {
                DownsampleMethod::Decimate => block[0],
                DownsampleMethod::BlockMean => {
                    let present: Vec<f64> = block.iter().flatten().copied().collect();
                    if present.is_empty() {
                        None
                    } else {
                        Some(present.iter().sum::<f64>() / present.len() as f64)
                    }
                }
            })
            .collect();
        if out.is_empty() {
            return Err(Error::TooShort {
                len: self.samples.len(),
                min: 4,
            });
        }
        FhrSignal::new(self.id.clone(), 1, out)
    }

    /// Non-overlapping ten-minute segments; the trailing remainder is dropped.
    pub fn segment(&self) -> Result<Vec<Segment10>> {
        if self.rate_hz != 1 {
            return Err(Error::InvalidRate(self.rate_hz, "1"));
        }
        if self.samples.len() < SEGMENT10_LEN {
            return Err(Error::TooShort {
                len: self.samples.len(),
                min: SEGMENT10_LEN,
            });
        }
        Ok(self
            .samples
            .chunks_exact(SEGMENT10_LEN)
            .enumerate()
            .map(|(i, chunk)| Segment10 {
                values: chunk.to_vec(),
                source_id: self.id.clone(),
                start_index: i * SEGMENT10_LEN,
            })
            .collect())
    }
}

/// Exactly 600 samples of a 1 Hz signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment10 {
    values: Vec<Sample>,
    source_id: String,
    start_index: usize,
}

impl Segment10 {
    pub fn new(values: Vec<Sample>, source_id: impl Into<String>, start_index: usize) -> Result<Self> {
        if values.len() != SEGMENT10_LEN {
            return Err(Error::Shape(format!(
                "ten-minute segment needs {SEGMENT10_LEN} samples, got {}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            source_id: source_id.into(),
            start_index,
        })
    }

    /// A segment from fully present bpm values.
    pub fn from_bpm(values: &[f64], source_id: impl Into<String>, start_index: usize) -> Result<Self> {
        Self::new(values.iter().map(|v| Some(*v)).collect(), source_id, start_index)
    }

    pub fn values(&self) -> &[Sample] {
        &self.values
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    /// The one-minute slice starting at `offset` (a multiple of 60).
    pub fn minute(&self, offset: usize) -> Result<Segment1> {
        if !offset.is_multiple_of(SEGMENT1_LEN) || offset + SEGMENT1_LEN > SEGMENT10_LEN {
            return Err(Error::Shape(format!("invalid one-minute offset {offset}")));
        }
        Ok(Segment1 {
            values: self.values[offset..offset + SEGMENT1_LEN].to_vec(),
            offset,
            source_id: self.source_id.clone(),
            parent_start: self.start_index,
        })
    }

    pub fn minutes(&self) -> impl Iterator<Item = Segment1> + '_ {
        (0..MINUTES_PER_SEGMENT).map(move |m| self.minute(m * SEGMENT1_LEN).unwrap())
    }
}

/// Exactly 60 samples sliced from a [`Segment10`].
#[derive(Clone, Debug, PartialEq)]
pub struct Segment1 {
    values: Vec<Sample>,
    offset: usize,
    source_id: String,
    parent_start: usize,
}

impl Segment1 {
    pub fn values(&self) -> &[Sample] {
        &self.values
    }

    /// Offset within the parent segment, in `{0, 60, …, 540}`.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn minute_index(&self) -> usize {
        self.offset / SEGMENT1_LEN
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn parent_start(&self) -> usize {
        self.parent_start
    }
}

/// Normalised samples plus an explicit missing-sample mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSegment {
    pub values: Vec<f64>,
    pub missing_mask: Vec<bool>,
}

#[inline]
pub fn normalize_bpm(bpm: f64) -> f64 {
    bpm.clamp(0.0, NORM_CEILING_BPM) / NORM_SCALE_BPM
}

#[inline]
pub fn denormalize_value(v: f64) -> f64 {
    v * NORM_SCALE_BPM
}

/// Maps bpm samples to unit range; missing samples become `0.0` with the
/// mask set.
pub fn normalize(samples: &[Sample]) -> NormalizedSegment {
    let values = samples.iter().map(|s| s.map_or(0.0, normalize_bpm)).collect();
    let missing_mask = samples.iter().map(Option::is_none).collect();
    NormalizedSegment {
        values,
        missing_mask,
    }
}

impl NormalizedSegment {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn denormalize(&self) -> Vec<Sample> {
        self.values
            .iter()
            .zip(&self.missing_mask)
            .map(|(v, m)| (!m).then(|| denormalize_value(*v)))
            .collect()
    }

    /// Slice `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> NormalizedSegment {
        NormalizedSegment {
            values: self.values[start..start + len].to_vec(),
            missing_mask: self.missing_mask[start..start + len].to_vec(),
        }
    }
}

impl From<&Segment10> for NormalizedSegment {
    fn from(s: &Segment10) -> Self {
        normalize(s.values())
    }
}

impl From<&Segment1> for NormalizedSegment {
    fn from(s: &Segment1) -> Self {
        normalize(s.values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig4(v: Vec<Sample>) -> FhrSignal {
        FhrSignal::new("t", 4, v).unwrap()
    }

    #[test]
    fn downsample_block_means() {
        let s = sig4([Some(140.0); 4].into_iter().chain([Some(160.0); 4]).collect());
        assert_eq!(s.downsample().unwrap().samples(), &[Some(140.0), Some(160.0)]);
        let s = sig4(vec![Some(140.0), None, Some(140.0), Some(140.0)]);
        assert_eq!(s.downsample().unwrap().samples(), &[Some(140.0)]);
    }

    #[test]
    fn downsample_all_missing_block() {
        let s = sig4(vec![None, None, None, None, Some(150.0), Some(150.0), Some(150.0), Some(150.0)]);
        assert_eq!(s.downsample().unwrap().samples(), &[None, Some(150.0)]);
    }

    #[test]
    fn downsample_rejects_1hz() {
        let s = FhrSignal::new("t", 1, vec![Some(140.0)]).unwrap();
        assert!(matches!(s.downsample(), Err(Error::InvalidRate(1, _))));
    }

    #[test]
    fn decimation_alternative() {
        let s = sig4(vec![Some(140.0), Some(150.0), Some(160.0), Some(170.0)]);
        let d = s.downsample_with(DownsampleMethod::Decimate).unwrap();
        assert_eq!(d.samples(), &[Some(140.0)]);
    }

    #[test]
    fn ingest_validation() {
        assert!(matches!(FhrSignal::new("t", 2, vec![Some(140.0)]), Err(Error::InvalidRate(..))));
        assert!(matches!(FhrSignal::new("t", 1, vec![]), Err(Error::TooShort { .. })));
        assert!(matches!(FhrSignal::new("t", 1, vec![Some(20.0)]), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn segmentation_tiling() {
        let s = FhrSignal::new("t", 1, vec![Some(140.0); 1800]).unwrap();
        let segs = s.segment().unwrap();
        assert_eq!(segs.iter().map(Segment10::start_index).collect::<Vec<_>>(), vec![0, 600, 1200]);
        let s = FhrSignal::new("t", 1, vec![Some(140.0); 650]).unwrap();
        assert_eq!(s.segment().unwrap().len(), 1);
        let s = FhrSignal::new("t", 1, vec![Some(140.0); 599]).unwrap();
        assert!(matches!(s.segment(), Err(Error::TooShort { len: 599, min: 600 })));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&[Some(120.0), Some(240.0), Some(0.0), None]);
        assert_eq!(n.values, vec![0.5, 1.0, 0.0, 0.0]);
        assert_eq!(n.missing_mask, vec![false, false, false, true]);
    }

    #[test]
    fn minutes_match_parent_slices() {
        let vals: Vec<f64> = (0..600).map(|i| 100.0 + (i % 97) as f64).collect();
        let seg = Segment10::from_bpm(&vals, "p", 0).unwrap();
        for m in seg.minutes() {
            assert_eq!(m.values(), &seg.values()[m.offset()..m.offset() + 60]);
        }
        assert!(seg.minute(30).is_err());
    }

    proptest! {
        #[test]
        fn segmentation_is_a_partition(len in 600usize..3000, base in 60.0f64..200.0) {
            let samples: Vec<Sample> = (0..len).map(|i| Some(base + (i % 13) as f64)).collect();
            let s = FhrSignal::new("p", 1, samples.clone()).unwrap();
            let segs = s.segment().unwrap();
            let joined: Vec<Sample> = segs.iter().flat_map(|s| s.values().to_vec()).collect();
            prop_assert_eq!(&joined[..], &samples[..(len / 600) * 600]);
        }

        #[test]
        fn normalize_roundtrip(v in proptest::collection::vec(proptest::option::of(30.0f64..300.0), 1..200)) {
            let back = normalize(&v).denormalize();
            for (a, b) in v.iter().zip(&back) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                    (None, None) => {}
                    _ => prop_assert!(false, "mask mismatch"),
                }
            }
        }

        #[test]
        fn downsample_preserves_constants(c in 30.0f64..300.0, blocks in 1usize..50) {
            let s = FhrSignal::new("c", 4, vec![Some(c); blocks * 4]).unwrap();
            let d = s.downsample().unwrap();
            prop_assert!(d.samples().iter().all(|v| (v.unwrap() - c).abs() < 1e-12));
        }
    }
}
