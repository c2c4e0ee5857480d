//! Points in the unit hypercube and their native-unit counterparts.

use serde::{Deserialize, Serialize};

use crate::error::{CpboError, Result};

/// A configuration normalized to the unit hypercube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(pub Vec<f64>);

impl Config {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        for (index, &value) in coords.iter().enumerate() {
            if !value.is_finite() {
                return Err(CpboError::NonFinite("config coordinate"));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(CpboError::OutOfBounds {
                    index,
                    value,
                    low: 0.0,
                    high: 1.0,
                });
            }
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Bitwise identity, used to key unique productions.
    pub fn identity_key(&self) -> Vec<u64> {
        self.0.iter().map(|v| v.to_bits()).collect()
    }

    pub fn clamped(mut coords: Vec<f64>) -> Self {
        for v in &mut coords {
            *v = v.clamp(0.0, 1.0);
        }
        Self(coords)
    }
}

/// One native-unit axis: `[low, high]` and an optional grid step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub low: f64,
    pub high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Axis {
    pub fn new(low: f64, high: f64) -> Self {
        Self {
            low,
            high,
            step: None,
        }
    }

    pub fn with_step(low: f64, high: f64, step: f64) -> Self {
        Self {
            low,
            high,
            step: Some(step),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite()) || self.low >= self.high {
            return Err(CpboError::InvalidParameter(format!(
                "axis bounds must be finite with low < high, got [{}, {}]",
                self.low, self.high
            )));
        }
        if let Some(step) = self.step {
            if !(step.is_finite() && step > 0.0) {
                return Err(CpboError::InvalidParameter(format!(
                    "axis resolution must be positive, got {step}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_native(&self, unit: f64) -> f64 {
        self.low + unit * (self.high - self.low)
    }

    pub fn to_unit(&self, native: f64) -> f64 {
        ((native - self.low) / (self.high - self.low)).clamp(0.0, 1.0)
    }

    /// Nearest grid point `low + k * step` inside the bounds; ties go to the
    /// lower value.
    pub fn snap(&self, native: f64) -> f64 {
        let Some(step) = self.step else {
            return native.clamp(self.low, self.high);
        };
        let max_k = ((self.high - self.low) / step + 1e-9).floor();
        let pos = ((native - self.low) / step).clamp(0.0, max_k);
        let lower = pos.floor();
        let frac = pos - lower;
        let k = if frac > 0.5 + 1e-12 { lower + 1.0 } else { lower };
        let k = k.min(max_k);
        // round away accumulated float error so grid values print cleanly
        let v = self.low + k * step;
        let scale = 1e9;
        (v * scale).round() / scale
    }
}

/// Native-space box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bounds(pub Vec<Axis>);

impl Bounds {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(CpboError::InvalidParameter("bounds must have at least one axis".into()));
        }
        self.0.iter().try_for_each(Axis::validate)
    }

    pub fn to_native(&self, x: &Config) -> Vec<f64> {
        self.0
            .iter()
            .zip(x.coords())
            .map(|(a, &u)| a.to_native(u))
            .collect()
    }

    pub fn to_unit(&self, native: &[f64]) -> Result<Config> {
        if native.len() != self.dim() {
            return Err(CpboError::DimensionMismatch {
                expected: self.dim(),
                got: native.len(),
            });
        }
        Ok(Config(
            self.0.iter().zip(native).map(|(a, &v)| a.to_unit(v)).collect(),
        ))
    }

    pub fn snap_native(&self, native: &[f64]) -> Vec<f64> {
        self.0.iter().zip(native).map(|(a, &v)| a.snap(v)).collect()
    }

    /// Unit-cube point moved onto the native resolution grid.
    pub fn snap_unit(&self, x: &Config) -> (Vec<f64>, Config) {
        let native = self.snap_native(&self.to_native(x));
        let unit = Config(self.0.iter().zip(&native).map(|(a, &v)| a.to_unit(v)).collect());
        (native, unit)
    }

    pub fn check_native(&self, native: &[f64]) -> Result<()> {
        if native.len() != self.dim() {
            return Err(CpboError::DimensionMismatch {
                expected: self.dim(),
                got: native.len(),
            });
        }
        for (index, (a, &value)) in self.0.iter().zip(native).enumerate() {
            if !(value >= a.low && value <= a.high) {
                return Err(CpboError::OutOfBounds {
                    index,
                    value,
                    low: a.low,
                    high: a.high,
                });
            }
        }
        Ok(())
    }
}
