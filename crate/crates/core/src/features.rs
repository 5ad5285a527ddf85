//! Hudgins time-domain features: MAV, WL, ZC, SSC.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{build_dataset, Recording, WindowedDataset};
use crate::error::{Error, Result};

pub const FEATURES_PER_CHANNEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdFeatures {
    pub mav: f64,
    pub wl: f64,
    pub zc: usize,
    pub ssc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TdThresholds {
    pub zc: f64,
    pub ssc: f64,
}

pub fn td_features(x: &[f64], thr: TdThresholds) -> Result<TdFeatures> {
    if x.len() < 3 {
        return Err(Error::InvalidWindow(format!(
            "TD features need at least 3 samples, got {}",
            x.len()
        )));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let mav = x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64;
    let wl = x.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    let zc = x
        .windows(2)
        .filter(|p| p[0] * p[1] < 0.0 && (p[0] - p[1]).abs() > thr.zc)
        .count();
    let ssc = x
        .windows(3)
        .filter(|p| (p[1] - p[0]) * (p[1] - p[2]) > thr.ssc)
        .count();
    Ok(TdFeatures { mav, wl, zc, ssc })
}

/// Channel-major `[mav, wl, zc, ssc] x C` row for one multichannel window.
pub fn td_row(channels: &[&[f64]], thr: TdThresholds) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(FEATURES_PER_CHANNEL * channels.len());
    for ch in channels {
        let f = td_features(ch, thr)?;
        row.extend([f.mav, f.wl, f.zc as f64, f.ssc as f64]);
    }
    Ok(row)
}

/// Window and shift in samples for a millisecond protocol at `rate` Hz.
pub fn ms_window(rate: f64, window_ms: f64, increment_ms: f64) -> Result<(usize, usize)> {
    let window = (rate * window_ms / 1000.0).floor() as usize;
    let shift = (rate * increment_ms / 1000.0).floor() as usize;
    if window < 3 || shift < 1 {
        return Err(Error::Config(format!(
            "{window_ms} ms / {increment_ms} ms at {rate} Hz gives window {window}, shift {shift}; need >= 3 and >= 1"
        )));
    }
    Ok((window, shift))
}

/// TD feature rows for every window of one recording, windowed in milliseconds.
pub fn extract_feature_matrix(
    rec: &Recording,
    window_ms: f64,
    increment_ms: f64,
    thr: TdThresholds,
) -> Result<WindowedDataset> {
    let (window, shift) = ms_window(rec.sampling_rate, window_ms, increment_ms)?;
    feature_dataset(std::slice::from_ref(rec), window, shift, thr)
}

/// TD feature rows for every window of every recording, windowed in samples.
pub fn feature_dataset(
    recordings: &[Recording],
    window: usize,
    shift: usize,
    thr: TdThresholds,
) -> Result<WindowedDataset> {
    build_dataset(recordings, window, shift, |chs| td_row(chs, thr))
}

pub fn feature_header(channels: usize) -> Vec<String> {
    (1..=channels)
        .flat_map(|c| ["mav", "wl", "zc", "ssc"].map(|f| format!("ch{c}_{f}")))
        .collect()
}

/// Feature matrix as CSV with a `ch{c}_{mav|wl|zc|ssc},...,label` header.
pub fn write_feature_csv(path: &Path, ds: &WindowedDataset) -> Result<()> {
    let channels = ds.width() / FEATURES_PER_CHANNEL;
    crate::dataio::write_dataset_csv(path, &feature_header(channels), ds)
}
