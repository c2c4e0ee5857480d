//! Synthetic utility functions, their normalization onto `[0, 1]`, and the
//! initial-design generators.

mod design;
pub mod functions;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub use design::{latin_hypercube, sobol, uniform};

use crate::error::{CpboError, Result};
use crate::space::{Axis, Bounds, Config};

/// Whether the raw form is to be minimized or maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

pub type RawFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct BenchmarkFunction {
    pub name: String,
    pub bounds: Bounds,
    pub sense: Sense,
    /// Known optimizer in native coordinates, when catalogued.
    pub optimum: Option<Vec<f64>>,
    raw: RawFn,
}

impl fmt::Debug for BenchmarkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkFunction")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("sense", &self.sense)
            .finish()
    }
}

impl BenchmarkFunction {
    pub fn new(
        name: impl Into<String>,
        bounds: Bounds,
        sense: Sense,
        optimum: Option<Vec<f64>>,
        raw: RawFn,
    ) -> Result<Self> {
        bounds.validate()?;
        if let Some(opt) = &optimum {
            bounds.check_native(opt)?;
        }
        Ok(Self {
            name: name.into(),
            bounds,
            sense,
            optimum,
            raw,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Raw textbook value at a native-space point.
    pub fn evaluate_raw(&self, x: &[f64]) -> Result<f64> {
        self.bounds.check_native(x)?;
        Ok((self.raw)(x))
    }

    fn raw_unit(&self, x: &[f64]) -> f64 {
        let native: Vec<f64> = self
            .bounds
            .0
            .iter()
            .zip(x)
            .map(|(a, &u)| a.to_native(u))
            .collect();
        (self.raw)(&native)
    }

    /// Raw value with the sign flipped so that larger is better.
    fn gain_unit(&self, x: &[f64]) -> f64 {
        match self.sense {
            Sense::Minimize => -self.raw_unit(x),
            Sense::Maximize => self.raw_unit(x),
        }
    }

    /// Affine rescaling onto `[0, 1]` with the optimum at 1.
    ///
    /// Extremes come from a dense grid with `grid_resolution` points per axis
    /// for `d <= 3`, or from at least 2^16 Sobol points plus the box corners
    /// for higher dimensions. Both are followed by a short pattern-search
    /// polish, and the catalogued optimum is always included.
    pub fn normalize(&self, grid_resolution: usize) -> Result<NormalizedUtility> {
        if grid_resolution < 2 {
            return Err(CpboError::InvalidParameter(format!(
                "grid resolution must be at least 2, got {grid_resolution}"
            )));
        }
        let dim = self.dim();
        let mut lo = (f64::INFINITY, vec![]);
        let mut hi = (f64::NEG_INFINITY, vec![]);
        let mut visit = |x: &[f64]| {
            let g = self.gain_unit(x);
            if g < lo.0 {
                lo = (g, x.to_vec());
            }
            if g > hi.0 {
                hi = (g, x.to_vec());
            }
        };
        if dim <= 3 {
            let axis: Vec<f64> = (0..grid_resolution)
                .map(|i| i as f64 / (grid_resolution - 1) as f64)
                .collect();
            let total = grid_resolution.pow(dim as u32);
            let mut x = vec![0.0; dim];
            for flat in 0..total {
                let mut rem = flat;
                for c in x.iter_mut() {
                    *c = axis[rem % grid_resolution];
                    rem /= grid_resolution;
                }
                visit(&x);
            }
        } else {
            let n = grid_resolution.max(1 << 16);
            for p in sobol(n, dim, 0)? {
                visit(&p.0);
            }
            for corner in 0..(1usize << dim) {
                let x: Vec<f64> = (0..dim).map(|d| ((corner >> d) & 1) as f64).collect();
                visit(&x);
            }
        }
        let step = 0.5 / (grid_resolution - 1) as f64;
        let (min_gain, _) = pattern_search(|x| -self.gain_unit(x), lo.1, step);
        let (max_gain, _) = pattern_search(|x| self.gain_unit(x), hi.1, step);
        let mut min_gain = -min_gain;
        let mut max_gain = max_gain;
        if let Some(opt) = &self.optimum {
            let unit = self.bounds.to_unit(opt)?;
            let g = self.gain_unit(&unit.0);
            max_gain = max_gain.max(g);
            min_gain = min_gain.min(g);
        }
        if !(max_gain - min_gain > 0.0) || !max_gain.is_finite() || !min_gain.is_finite() {
            return Err(CpboError::Degenerate(format!(
                "benchmark `{}` has equal estimated extremes",
                self.name
            )));
        }
        Ok(NormalizedUtility {
            base: self.clone(),
            min_gain,
            max_gain,
        })
    }

    /// Normalization with the default grid density for the dimension.
    pub fn normalize_default(&self) -> Result<NormalizedUtility> {
        let res = match self.dim() {
            1 => 100_001,
            2 => 1001,
            3 => 201,
            _ => 1 << 16,
        };
        self.normalize(res)
    }
}

/// Coordinate pattern search maximizing `f` inside the unit cube.
fn pattern_search(f: impl Fn(&[f64]) -> f64, start: Vec<f64>, initial_step: f64) -> (f64, Vec<f64>) {
    let mut x = start;
    let mut best = f(&x);
    let mut step = initial_step;
    while step > 1e-10 {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [-1.0, 1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + dir * step).clamp(0.0, 1.0);
                let v = f(&y);
                if v > best {
                    best = v;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, x)
}

/// A benchmark rescaled to a `[0, 1]` utility, larger is better.
#[derive(Debug, Clone)]
pub struct NormalizedUtility {
    pub base: BenchmarkFunction,
    min_gain: f64,
    max_gain: f64,
}

impl NormalizedUtility {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Estimated raw extremes `(min_est, max_est)` of the raw function.
    pub fn raw_extremes(&self) -> (f64, f64) {
        match self.base.sense {
            Sense::Minimize => (-self.max_gain, -self.min_gain),
            Sense::Maximize => (self.min_gain, self.max_gain),
        }
    }

    /// Utility at a unit-cube point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.base.gain_unit(x) - self.min_gain) / (self.max_gain - self.min_gain)
    }

    pub fn eval_config(&self, x: &Config) -> f64 {
        self.eval(&x.0)
    }

    /// Unit-cube location of the catalogued optimizer.
    pub fn optimizer(&self) -> Option<Config> {
        self.base
            .optimum
            .as_ref()
            .and_then(|o| self.base.bounds.to_unit(o).ok())
    }
}

fn square(low: f64, high: f64, dim: usize) -> Bounds {
    Bounds(vec![Axis::new(low, high); dim])
}

/// Benchmark lookup by name.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, BenchmarkFunction>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::catalogue()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The built-in catalogue of two- and six-dimensional benchmarks.
    pub fn catalogue() -> Self {
        use functions::*;
        let mut r = Self::empty();
        let specs: Vec<(&str, Bounds, Vec<f64>, fn(&[f64]) -> f64)> = vec![
            (
                "branin",
                Bounds(vec![Axis::new(-5.0, 10.0), Axis::new(0.0, 15.0)]),
                vec![-PI, 12.275],
                branin,
            ),
            (
                "sixhump",
                Bounds(vec![Axis::new(-3.0, 3.0), Axis::new(-2.0, 2.0)]),
                vec![0.089_842_013_683_013_31, -0.712_656_403_270_413_5],
                six_hump_camel,
            ),
            ("bohachevsky", square(-100.0, 100.0, 2), vec![0.0, 0.0], bohachevsky),
            ("levy13", square(-10.0, 10.0, 2), vec![1.0, 1.0], levy13),
            (
                "bukin6",
                Bounds(vec![Axis::new(-15.0, -5.0), Axis::new(-3.0, 3.0)]),
                vec![-10.0, 1.0],
                bukin6,
            ),
            (
                "crosstray",
                square(-10.0, 10.0, 2),
                vec![1.349_406_608_602_084, 1.349_406_608_602_084],
                cross_in_tray,
            ),
            ("ackley", square(-32.768, 32.768, 2), vec![0.0, 0.0], ackley),
            ("alpine1_6", square(-10.0, 10.0, 6), vec![0.0; 6], alpine1),
            ("levy6", square(-10.0, 10.0, 6), vec![1.0; 6], levy),
        ];
        for (name, bounds, opt, f) in specs {
            let bf = BenchmarkFunction::new(name, bounds, Sense::Minimize, Some(opt), Arc::new(f))
                .expect("catalogue entries are valid");
            r.register(bf);
        }
        r
    }

    /// Registration hook for additional functions.
    pub fn register(&mut self, f: BenchmarkFunction) {
        self.entries.insert(f.name.clone(), f);
    }

    pub fn get(&self, name: &str) -> Result<&BenchmarkFunction> {
        let key = canonical_name(name);
        self.entries
            .get(&key)
            .or_else(|| self.entries.get(name))
            .ok_or_else(|| CpboError::UnknownBenchmark(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn canonical_name(name: &str) -> String {
    let n: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    match n.as_str() {
        "sixhumpcamel" | "sixhumpcamelback" | "camel" => "sixhump".into(),
        "crossintray" => "crosstray".into(),
        "alpine1" | "alpine16" | "alpine16d" | "alpine6" => "alpine1_6".into(),
        "levy6d" => "levy6".into(),
        "boha" => "bohachevsky".into(),
        _ => n,
    }
}

/// Looks up and normalizes a catalogued benchmark.
pub fn utility(name: &str) -> Result<NormalizedUtility> {
    Registry::catalogue().get(name)?.normalize_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_accepts_common_spellings() {
        let r = Registry::catalogue();
        assert_eq!(r.get("Branin").unwrap().name, "branin");
        assert_eq!(r.get("six-hump-camel").unwrap().name, "sixhump");
        assert_eq!(r.get("levy6").unwrap().dim(), 6);
        assert!(r.get("rosenbrock").is_err());
    }

    #[test]
    fn evaluate_raw_checks_inputs() {
        let r = Registry::catalogue();
        let b = r.get("branin").unwrap();
        assert!((b.evaluate_raw(&[-PI, 12.275]).unwrap() - 0.397_887).abs() < 1e-6);
        assert!(matches!(
            b.evaluate_raw(&[0.0]),
            Err(CpboError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            b.evaluate_raw(&[11.0, 0.0]),
            Err(CpboError::OutOfBounds { index: 0, .. })
        ));
        let camel = r.get("sixhump").unwrap();
        assert_eq!(camel.evaluate_raw(&[0.0, 0.0]).unwrap(), 0.0);
        let ackley = r.get("ackley").unwrap();
        assert!(ackley.evaluate_raw(&[0.0, 0.0]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn optimizer_maps_to_one() {
        let u = utility("branin").unwrap();
        let opt = u.optimizer().unwrap();
        assert_eq!(u.eval_config(&opt), 1.0);
    }

    #[test]
    fn ackley_corner_in_range() {
        let u = utility("ackley").unwrap();
        for corner in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            let v = u.eval(&corner);
            assert!((-1e-9..=1.0 + 1e-9).contains(&v), "{v}");
        }
    }

    #[test]
    fn degenerate_function_rejected() {
        let f = BenchmarkFunction::new(
            "flat",
            square(0.0, 1.0, 2),
            Sense::Minimize,
            None,
            Arc::new(|_: &[f64]| 3.0),
        )
        .unwrap();
        assert!(matches!(f.normalize(11), Err(CpboError::Degenerate(_))));
        assert!(f.normalize(1).is_err());
    }

    #[test]
    fn maximize_sense_keeps_orientation() {
        let f = BenchmarkFunction::new(
            "ramp",
            square(0.0, 2.0, 1),
            Sense::Maximize,
            None,
            Arc::new(|x: &[f64]| x[0]),
        )
        .unwrap();
        let u = f.normalize(101).unwrap();
        assert!((u.eval(&[1.0]) - 1.0).abs() < 1e-12);
        assert!(u.eval(&[0.0]).abs() < 1e-12);
    }
}
