//! Synthetic multichannel EMG for desk-scale verification.
//!
//! Each class is band-limited Gaussian noise whose per-channel amplitude follows
//! a class-specific envelope profile with a slow modulation on top. Classes
//! therefore differ in channel power, which both MPP/MZP and TD features see.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::{Recording, SubjectMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub channels: usize,
    pub sampling_rate: f64,
    pub seed: u64,
    /// Windows of `window`/`shift` samples each class recording yields.
    pub windows_per_class: usize,
    pub window: usize,
    pub shift: usize,
    /// Largest to smallest channel amplitude across the profile.
    pub envelope_ratio: f64,
    /// Repetition ids are assigned in equal contiguous blocks.
    pub repetitions: u32,
    /// Center of the noise band in Hz.
    pub band_center_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 5,
            channels: 4,
            sampling_rate: 2000.0,
            seed: 0,
            windows_per_class: 200,
            window: 300,
            shift: 50,
            envelope_ratio: 10.0,
            repetitions: 5,
            band_center_hz: 150.0,
        }
    }
}

impl SynthConfig {
    pub fn samples_per_class(&self) -> usize {
        self.window + self.shift * self.windows_per_class.saturating_sub(1)
    }

    /// Amplitude of `channel` for `class`: geometric levels between 1 and the
    /// envelope ratio, rotated by class so every class has a distinct profile.
    pub fn amplitude(&self, class: usize, channel: usize) -> f64 {
        let level = (class + channel) % self.classes;
        self.envelope_ratio
            .powf(level as f64 / (self.classes - 1) as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("need at least 1 channel".into()));
        }
        if self.windows_per_class == 0 || self.window < 3 || self.shift == 0 {
            return Err(Error::Config(
                "windows_per_class >= 1, window >= 3 and shift >= 1 required".into(),
            ));
        }
        if !(self.sampling_rate > 0.0 && self.envelope_ratio >= 1.0) {
            return Err(Error::Config(
                "sampling rate must be positive and envelope ratio >= 1".into(),
            ));
        }
        if !(self.band_center_hz > 0.0 && self.band_center_hz < self.sampling_rate / 2.0) {
            return Err(Error::Config("band center must lie below Nyquist".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("need at least 1 repetition".into()));
        }
        Ok(())
    }
}

/// Second-order band-pass section (constant 0 dB peak gain).
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center_hz: f64, q: f64, rate: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

const WARMUP: usize = 256;
const MODULATION_HZ: f64 = 0.5;
const MODULATION_DEPTH: f64 = 0.1;

/// One recording per class, labelled with the class index.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let n = cfg.samples_per_class();
    let block = n.div_ceil(cfg.repetitions as usize);
    let mut subject = SubjectMeta::new("synth");
    subject.amputee = false;

    (0..cfg.classes)
        .map(|class| {
            let channels = (0..cfg.channels)
                .map(|c| {
                    // Slightly different band per channel.
                    let center = cfg.band_center_hz * (1.0 + 0.05 * c as f64);
                    let mut filter = BandPass::new(center, 1.0, cfg.sampling_rate);
                    let amp = cfg.amplitude(class, c);
                    let phase: f64 = rng.random_range(0.0..2.0 * PI);
                    for _ in 0..WARMUP {
                        filter.step(StandardNormal.sample(&mut rng));
                    }
                    (0..n)
                        .map(|j| {
                            let t = j as f64 / cfg.sampling_rate;
                            let env = amp
                                * (1.0
                                    + MODULATION_DEPTH
                                        * (2.0 * PI * MODULATION_HZ * t + phase).sin());
                            env * filter.step(StandardNormal.sample(&mut rng))
                        })
                        .collect()
                })
                .collect();
            let repetitions = (0..n).map(|j| (j / block) as u32 + 1).collect();
            Recording::new(
                channels,
                cfg.sampling_rate,
                vec![class; n],
                repetitions,
                subject.clone(),
            )
        })
        .collect()
}
