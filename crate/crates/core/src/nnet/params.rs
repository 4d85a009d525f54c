use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::NetConfig;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Index of a parameter tensor inside a [`ParamLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Gaussian with standard deviation `1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

/// Ordered directory of named tensors packed into one flat buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl ParamLayout {
    pub(crate) fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let len = shape.iter().product();
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            len,
            init,
        });
        self.total += len;
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_values(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub(crate) fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let s = &self.specs[id.0];
        s.offset..s.offset + s.len
    }
}

/// Network parameters: the configuration, the layout and the packed values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    config: NetConfig,
    layout: Arc<ParamLayout>,
    values: Vec<T>,
}

impl<T: Real> ParamStore<T> {
    pub(crate) fn initialise(config: NetConfig, layout: Arc<ParamLayout>, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut values = Vec::with_capacity(layout.num_values());
        for spec in layout.specs() {
            match spec.init {
                Init::Zeros => values.extend(std::iter::repeat(T::zero()).take(spec.len)),
                Init::Ones => values.extend(std::iter::repeat(T::one()).take(spec.len)),
                Init::FanIn(fan_in) => {
                    let sd = 1.0 / (fan_in as f64).sqrt();
                    values.extend((0..spec.len).map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::lit(sd * z)
                    }));
                }
            }
        }
        Self {
            config,
            layout,
            values,
        }
    }

    pub(crate) fn from_parts(
        config: NetConfig,
        layout: Arc<ParamLayout>,
        values: Vec<T>,
    ) -> Result<Self> {
        if values.len() != layout.num_values() {
            return Err(Error::LengthMismatch {
                expected: layout.num_values(),
                got: values.len(),
            });
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[self.layout.range(id)]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        let r = self.layout.range(id);
        &mut self.values[r]
    }

    pub fn by_name(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let id = self.layout.find(name)?;
        Some(self.get_mut(id))
    }

    /// All values in layout order.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// Iterate `(name, shape, values)` in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.layout.specs().iter().map(move |s| {
            (
                s.name.as_str(),
                s.shape.as_slice(),
                &self.values[s.offset..s.offset + s.len],
            )
        })
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Convert to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            config: self.config.clone(),
            layout: Arc::clone(&self.layout),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// A zeroed gradient buffer with the same layout.
    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.values.len()]
    }
}
