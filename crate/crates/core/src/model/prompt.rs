use ndarray::{s, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::model::config::{InjectionMode, ModelConfig};

/// Trainable prompt tensor.
///
/// Shallow prompts are `l×d`. Deep prompts stack one `l×d` prefix per layer
/// into an `(L·l)×d` matrix, layer `i` occupying rows `i·l .. (i+1)·l`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPrompt {
    values: Mat,
    injection: InjectionMode,
    prompt_len: usize,
}

impl SoftPrompt {
    pub fn new(values: Mat, injection: InjectionMode, prompt_len: usize) -> Result<Self> {
        if prompt_len == 0 || values.nrows() % prompt_len != 0 {
            return Err(Error::Shape(format!(
                "{} prompt rows is not a multiple of prompt length {prompt_len}",
                values.nrows()
            )));
        }
        if injection == InjectionMode::Shallow && values.nrows() != prompt_len {
            return Err(Error::Shape(format!(
                "shallow prompt needs {prompt_len} rows, got {}",
                values.nrows()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("prompt contains non-finite values".into()));
        }
        Ok(Self {
            values,
            injection,
            prompt_len,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            values: Mat::zeros((config.prompt_rows(), config.hidden)),
            injection: config.injection,
            prompt_len: config.prompt_len,
        }
    }

    pub fn filled(config: &ModelConfig, value: f64) -> Self {
        let mut p = Self::zeros(config);
        p.values.fill(value);
        p
    }

    /// Seeded `uniform(-0.5, 0.5) / sqrt(d)` initialization.
    pub fn random(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (config.hidden as f64).sqrt();
        let values = Mat::from_shape_fn((config.prompt_rows(), config.hidden), |_| {
            rng.random_range(-0.5..0.5) * scale
        });
        Self {
            values,
            injection: config.injection,
            prompt_len: config.prompt_len,
        }
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Mat {
        &mut self.values
    }

    pub fn into_values(self) -> Mat {
        self.values
    }

    pub fn injection(&self) -> InjectionMode {
        self.injection
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn hidden(&self) -> usize {
        self.values.ncols()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Prefix for one layer (deep) or the whole prompt (shallow, `layer == 0`).
    pub fn layer(&self, layer: usize) -> ArrayView2<'_, f64> {
        let l = self.prompt_len;
        self.values.slice(s![layer * l..(layer + 1) * l, ..])
    }

    pub fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        let want = (config.prompt_rows(), config.hidden);
        if self.injection != config.injection
            || self.prompt_len != config.prompt_len
            || self.values.dim() != want
        {
            return Err(Error::Shape(format!(
                "prompt {:?} {:?} does not match config {:?} {:?}",
                self.injection,
                self.values.dim(),
                config.injection,
                want
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &SoftPrompt) -> Result<f64> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::Shape(format!(
                "prompt shapes {:?} and {:?} differ",
                self.values.dim(),
                other.values.dim()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}
