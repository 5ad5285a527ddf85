//! Recordings, windowing, splitting and dataset I/O.

mod csvio;
mod split;
mod synth;

pub use csvio::{load_csv, load_dir, read_meta, save_csv, save_dir, write_dataset_csv, write_meta};
pub use split::{split, split_indices, SplitSpec};
pub use synth::{synth_dataset, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub id: String,
    pub amputee: bool,
    pub dash_score: Option<f64>,
    pub remaining_forearm_pct: Option<f64>,
    pub phantom_intensity: Option<u8>,
}

impl SubjectMeta {
    pub fn new(id: impl Into<String>) -> Self {
        SubjectMeta {
            id: id.into(),
            amputee: false,
            dash_score: None,
            remaining_forearm_pct: None,
            phantom_intensity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.dash_score {
            if !(0.0..=100.0).contains(&d) {
                return Err(Error::Config(format!("DASH score {d} outside [0, 100]")));
            }
        }
        if let Some(p) = self.phantom_intensity {
            if p > 5 {
                return Err(Error::Config(format!(
                    "phantom limb intensity {p} outside [0, 5]"
                )));
            }
        }
        Ok(())
    }
}

/// Multichannel raw EMG with per-sample labels and repetition ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub channels: Vec<Vec<f64>>,
    pub sampling_rate: f64,
    pub labels: Vec<usize>,
    pub repetitions: Vec<u32>,
    pub subject: SubjectMeta,
}

impl Recording {
    pub fn new(
        channels: Vec<Vec<f64>>,
        sampling_rate: f64,
        labels: Vec<usize>,
        repetitions: Vec<u32>,
        subject: SubjectMeta,
    ) -> Result<Self> {
        let rec = Recording {
            channels,
            sampling_rate,
            labels,
            repetitions,
            subject,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::ChannelMismatch("recording has no channels".into()));
        }
        if !(self.sampling_rate.is_finite() && self.sampling_rate > 0.0) {
            return Err(Error::Config(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate
            )));
        }
        let n = self.channels[0].len();
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.len() != n {
                return Err(Error::ChannelMismatch(format!(
                    "channel {c} has {} samples, channel 0 has {n}",
                    ch.len()
                )));
            }
            if let Some(index) = ch.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput { index });
            }
        }
        if self.labels.len() != n || self.repetitions.len() != n {
            return Err(Error::ChannelMismatch(format!(
                "{n} samples but {} labels and {} repetition ids",
                self.labels.len(),
                self.repetitions.len()
            )));
        }
        self.subject.validate()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples in `duration_ms`, rounded down.
    pub fn ms_to_samples(&self, duration_ms: f64) -> usize {
        (self.sampling_rate * duration_ms / 1000.0).floor() as usize
    }

    pub fn channel_slices(&self, seg: &Segment) -> Vec<&[f64]> {
        self.channels
            .iter()
            .map(|ch| &ch[seg.start..seg.start + seg.len])
            .collect()
    }
}

/// One multichannel window of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub label: usize,
    pub repetition: u32,
}

/// Most frequent value; ties go to the smallest.
pub fn majority<T: Ord + Copy>(values: &[T]) -> Option<T> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(T, usize)> = None;
    for run in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, n)| run.len() > n) {
            best = Some((run[0], run.len()));
        }
    }
    best.map(|(v, _)| v)
}

/// Number of windows `segment` emits for a signal of length `n`.
pub fn window_count(n: usize, window: usize, shift: usize) -> usize {
    if window == 0 || shift == 0 || window > n {
        0
    } else {
        (n - window) / shift + 1
    }
}

/// Sliding windows of `window` samples every `shift` samples. A trailing partial
/// window is dropped.
pub fn segment(rec: &Recording, window: usize, shift: usize) -> Result<Vec<Segment>> {
    if window == 0 || shift == 0 {
        return Err(Error::Config(format!(
            "window and shift must be at least 1 (window {window}, shift {shift})"
        )));
    }
    let n = rec.len();
    if window > n {
        return Err(Error::EmptyOutput(format!(
            "window of {window} samples exceeds recording length {n}"
        )));
    }
    Ok((0..window_count(n, window, shift))
        .map(|i| {
            let start = i * shift;
            let range = start..start + window;
            Segment {
                start,
                len: window,
                label: majority(&rec.labels[range.clone()]).unwrap_or(0),
                repetition: majority(&rec.repetitions[range]).unwrap_or(0),
            }
        })
        .collect())
}

/// Where a dataset row came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub recording: usize,
    pub start: usize,
    pub repetition: u32,
}

/// Fixed-width rows (preprocessed vectors or TD features) with labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowedDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
    pub provenance: Vec<Provenance>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn push(&mut self, input: Vec<f64>, label: usize, subject: &str, prov: Provenance) {
        self.inputs.push(input);
        self.labels.push(label);
        self.subjects.push(subject.to_string());
        self.provenance.push(prov);
    }

    pub fn extend(&mut self, other: WindowedDataset) {
        self.inputs.extend(other.inputs);
        self.labels.extend(other.labels);
        self.subjects.extend(other.subjects);
        self.provenance.extend(other.provenance);
    }

    pub fn subset(&self, indices: &[usize]) -> WindowedDataset {
        WindowedDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.len();
        if self.labels.len() != n || self.subjects.len() != n || self.provenance.len() != n {
            return Err(Error::Shape(
                "dataset columns have different lengths".into(),
            ));
        }
        let w = self.width();
        for (i, row) in self.inputs.iter().enumerate() {
            if row.len() != w {
                return Err(Error::Shape(format!(
                    "row {i} has width {}, expected {w}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput { index: i });
            }
        }
        Ok(())
    }
}

/// Segments every recording and maps each window through `row`.
/// Rows keep recording order, then window order.
pub fn build_dataset<F>(
    recordings: &[Recording],
    window: usize,
    shift: usize,
    row: F,
) -> Result<WindowedDataset>
where
    F: Fn(&[&[f64]]) -> Result<Vec<f64>> + Sync,
{
    use rayon::prelude::*;

    let mut ds = WindowedDataset::default();
    for (r, rec) in recordings.iter().enumerate() {
        let segs = segment(rec, window, shift)?;
        let rows = segs
            .par_iter()
            .map(|seg| row(&rec.channel_slices(seg)))
            .collect::<Result<Vec<_>>>()?;
        for (seg, input) in segs.iter().zip(rows) {
            ds.push(
                input,
                seg.label,
                &rec.subject.id,
                Provenance {
                    recording: r,
                    start: seg.start,
                    repetition: seg.repetition,
                },
            );
        }
    }
    if ds.is_empty() {
        return Err(Error::EmptyOutput("no windows produced".into()));
    }
    Ok(ds)
}

/// MPP/MZP rows for every window of every recording.
pub fn preprocess_dataset(
    recordings: &[Recording],
    window: usize,
    shift: usize,
) -> Result<WindowedDataset> {
    build_dataset(recordings, window, shift, crate::signal::preprocess_window)
}

/// Column names of a preprocessed row: `mpp_1..C, mzp_1..C`.
pub fn preprocess_header(channels: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=channels).map(|c| format!("mpp_{c}")).collect();
    h.extend((1..=channels).map(|c| format!("mzp_{c}")));
    h
}

/// Per-feature z-score statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    /// Features with (near) zero spread get unit scale so they map to 0.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyOutput(
                "cannot fit normalization on no rows".into(),
            ));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(ZScore { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize) -> Recording {
        Recording::new(
            vec![(0..n).map(|i| i as f64).collect()],
            1000.0,
            vec![0; n],
            vec![1; n],
            SubjectMeta::new("s1"),
        )
        .unwrap()
    }

    #[test]
    fn segment_offsets() {
        let segs = segment(&ramp(100), 40, 20).unwrap();
        let starts: Vec<usize> = segs.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0, 20, 40, 60]);
    }

    #[test]
    fn segment_edge_counts() {
        assert_eq!(segment(&ramp(50), 50, 7).unwrap().len(), 1);
        assert_eq!(segment(&ramp(1000), 100, 10).unwrap().len(), 91);
        assert!(matches!(
            segment(&ramp(10), 11, 1),
            Err(Error::EmptyOutput(_))
        ));
        assert!(matches!(segment(&ramp(10), 5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn majority_ties_to_lower() {
        assert_eq!(majority(&[2, 1, 2, 1]), Some(1));
        assert_eq!(majority(&[3, 3, 0]), Some(3));
        assert_eq!(majority::<usize>(&[]), None);
    }

    #[test]
    fn window_label_is_majority() {
        let mut rec = ramp(10);
        rec.labels = vec![0, 0, 1, 1, 1, 2, 2, 2, 2, 2];
        let segs = segment(&rec, 4, 2).unwrap();
        let labels: Vec<usize> = segs.iter().map(|s| s.label).collect();
        // [0,0,1,1] tie -> 0, [1,1,1,2] -> 1, [1,2,2,2] -> 2, [2,2,2,2] -> 2
        assert_eq!(labels, vec![0, 1, 2, 2]);
    }

    #[test]
    fn recording_validation() {
        let bad = Recording::new(
            vec![vec![0.0; 4], vec![0.0; 3]],
            1000.0,
            vec![0; 4],
            vec![0; 4],
            SubjectMeta::new("x"),
        );
        assert!(matches!(bad, Err(Error::ChannelMismatch(_))));
        let mut meta = SubjectMeta::new("x");
        meta.dash_score = Some(120.0);
        let bad = Recording::new(vec![vec![0.0; 4]], 1000.0, vec![0; 4], vec![0; 4], meta);
        assert!(matches!(bad, Err(Error::Config(_))));
        let bad = Recording::new(
            vec![vec![0.0; 4]],
            0.0,
            vec![0; 4],
            vec![0; 4],
            SubjectMeta::new("x"),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn zscore_constant_feature() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let z = ZScore::fit(&rows).unwrap();
        assert_eq!(z.apply(&[2.0, 5.0]), vec![0.0, 0.0]);
        assert_eq!(z.apply(&[3.0, 7.0]), vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn segment_count_formula(n in 1usize..500, window in 1usize..200, shift in 1usize..100) {
            let rec = ramp(n);
            match segment(&rec, window, shift) {
                Ok(segs) => {
                    prop_assert!(window <= n);
                    prop_assert_eq!(segs.len(), (n - window) / shift + 1);
                    for s in &segs {
                        prop_assert!(s.start + s.len <= n);
                        prop_assert_eq!(s.start % shift, 0);
                    }
                }
                Err(_) => prop_assert!(window > n),
            }
        }
    }
}
