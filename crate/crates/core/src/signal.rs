//! Spectral moments of a single-channel window and the MPP/MZP transform.
//!
//! The moments are computed in the time domain:
//!
//! ```text
//! mu0 = sqrt(sum x[j]^2)          over T samples
//! mu2 = sqrt(sum (dx[j])^2)       over T-1 first differences
//! mu4 = sqrt(sum (d2x[j])^2)      over T-2 second differences
//! ```
//!
//! From these, `psi = mu4 / mu2` (peak rate), `phi = mu2 / mu0` (zero-crossing
//! rate), and the two network inputs `mpp = mu0 * psi`, `mzp = mu0 * phi`.
//! Everything here is `f64` and pure.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratios whose denominator falls below this evaluate to zero.
pub const RATIO_EPS: f64 = 1e-12;

/// Minimum window length: the second difference must have at least one term.
pub const MIN_WINDOW: usize = 3;

/// A single-channel segment of samples.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub samples: &'a [f64],
    pub channel: usize,
}

impl<'a> Window<'a> {
    pub fn new(samples: &'a [f64], channel: usize) -> Self {
        Window { samples, channel }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentSet {
    pub mu0: f64,
    pub mu2: f64,
    pub mu4: f64,
    pub psi: f64,
    pub phi: f64,
    pub mpp: f64,
    pub mzp: f64,
}

/// Forward transform of a window together with its per-bin energy `|X[k]|^2 / T`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub energy: Vec<f64>,
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteInput { index }),
        None => Ok(()),
    }
}

/// Forward first difference, `out[j] = x[j+1] - x[j]`. Output is one shorter.
pub fn diff(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidWindow(format!(
            "difference needs at least 2 samples, got {}",
            x.len()
        )));
    }
    Ok(x.windows(2).map(|p| p[1] - p[0]).collect())
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Zeroth, second and fourth order moments. Only `mu0`, `mu2`, `mu4` are set.
pub fn compute_moments(x: &[f64]) -> Result<MomentSet> {
    if x.len() < MIN_WINDOW {
        return Err(Error::InvalidWindow(format!(
            "moments need at least {MIN_WINDOW} samples, got {}",
            x.len()
        )));
    }
    check_finite(x)?;
    let d1 = diff(x)?;
    let d2 = diff(&d1)?;
    Ok(MomentSet {
        mu0: energy(x).sqrt(),
        mu2: energy(&d1).sqrt(),
        mu4: energy(&d2).sqrt(),
        ..MomentSet::default()
    })
}

fn guarded_ratio(num: f64, den: f64) -> f64 {
    if den < RATIO_EPS {
        0.0
    } else {
        num / den
    }
}

/// Fills `psi`, `phi`, `mpp` and `mzp` from the three moments.
pub fn mpp_mzp(m: MomentSet) -> MomentSet {
    let psi = guarded_ratio(m.mu4, m.mu2);
    let phi = guarded_ratio(m.mu2, m.mu0);
    MomentSet {
        psi,
        phi,
        mpp: m.mu0 * psi,
        mzp: m.mu0 * phi,
        ..m
    }
}

/// Full moment set of one channel window.
pub fn moment_set(x: &[f64]) -> Result<MomentSet> {
    compute_moments(x).map(mpp_mzp)
}

/// Preprocessed network input for one multichannel window, laid out as
/// `[MPP_1 .. MPP_C, MZP_1 .. MZP_C]`.
pub fn preprocess_window(channels: &[&[f64]]) -> Result<Vec<f64>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::ChannelMismatch("no channels".into()))?;
    let t = first.len();
    if let Some((c, w)) = channels.iter().enumerate().find(|(_, w)| w.len() != t) {
        return Err(Error::ChannelMismatch(format!(
            "channel {c} has {} samples, channel 0 has {t}",
            w.len()
        )));
    }
    let sets = channels
        .iter()
        .map(|w| moment_set(w))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(2 * sets.len());
    out.extend(sets.iter().map(|m| m.mpp));
    out.extend(sets.iter().map(|m| m.mzp));
    Ok(out)
}

/// Unnormalized forward DFT. Used to check the time-domain moment definitions
/// against the Parseval relation.
pub fn dft(x: &[f64]) -> Spectrum {
    let mut bins: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !bins.is_empty() {
        FftPlanner::new()
            .plan_fft_forward(bins.len())
            .process(&mut bins);
    }
    let t = x.len() as f64;
    let energy = bins.iter().map(|b| b.norm_sqr() / t).collect();
    Spectrum { bins, energy }
}
