use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A named dense array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: true,
            grad: Some(vec![0.0; n]),
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(name, shape);
        for v in &mut t.data {
            *v = rng.random_range(-bound..=bound);
        }
        t
    }

    /// A tensor that never receives a gradient or an optimizer update.
    pub fn frozen(name: impl Into<String>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn check(&self) -> Result<()> {
        let n: usize = self.shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                layer: 0,
                detail: alloc::format!("{}: shape {:?} holds {} values", self.name, self.shape, self.data.len()),
            });
        }
        if let Some(g) = &self.grad {
            if g.len() != n {
                return Err(Error::Shape {
                    layer: 0,
                    detail: alloc::format!("{}: gradient length {}", self.name, g.len()),
                });
            }
        }
        Ok(())
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if self.requires_grad {
            self.grad_mut().fill(0.0);
        }
    }
}

/// Per-sample feature map laid out as `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        Self {
            channels,
            frames,
            bins,
            data: vec![0.0; channels * frames * bins],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize, f: usize) -> usize {
        (c * self.frames + t) * self.bins + f
    }

    pub fn row(&self, c: usize, t: usize) -> &[f64] {
        let s = self.idx(c, t, 0);
        &self.data[s..s + self.bins]
    }

    pub fn row_mut(&mut self, c: usize, t: usize) -> &mut [f64] {
        let s = self.idx(c, t, 0);
        &mut self.data[s..s + self.bins]
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.frames != other.frames || self.bins != other.bins {
            return Err(Error::Shape {
                layer: 0,
                detail: alloc::format!(
                    "cannot concatenate {}x{} with {}x{}",
                    self.frames,
                    self.bins,
                    other.frames,
                    other.bins
                ),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(FeatureMap {
            channels: self.channels + other.channels,
            frames: self.frames,
            bins: self.bins,
            data,
        })
    }

    /// Splits the channel axis at `at`.
    pub fn split(mut self, at: usize) -> (FeatureMap, FeatureMap) {
        let tail = self.data.split_off(at * self.frames * self.bins);
        let rest = FeatureMap {
            channels: self.channels - at,
            frames: self.frames,
            bins: self.bins,
            data: tail,
        };
        self.channels = at;
        (self, rest)
    }
}
