use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};
use crate::rng::Seed;

/// Name and shape of one parameter tensor inside a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A `rows x cols` window into a flat parameter (or gradient) vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a, F>(&self, buf: &'a [F]) -> ArrayView2<'a, F> {
        ArrayView2::from_shape((self.rows, self.cols), &buf[self.range()]).expect("slot in bounds")
    }

    pub fn mat_mut<'a, F>(&self, buf: &'a mut [F]) -> ArrayViewMut2<'a, F> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut buf[self.range()])
            .expect("slot in bounds")
    }

    pub fn vec<'a, F>(&self, buf: &'a [F]) -> ArrayView1<'a, F> {
        ArrayView1::from(&buf[self.range()])
    }

    pub fn vec_mut<'a, F>(&self, buf: &'a mut [F]) -> ArrayViewMut1<'a, F> {
        ArrayViewMut1::from(&mut buf[self.range()])
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Gaussian with standard deviation `1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
    /// `l` stacked identity blocks scaled by `scale`, for `rows x cols` with
    /// either `rows = l * cols` or `cols = l * rows`.
    StackedIdentity(f64),
}

/// Collects parameter descriptors while the architecture is being built.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    inits: Vec<Init>,
    len: usize,
}

impl LayoutBuilder {
    pub(crate) fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        let shape = if rows == 1 { vec![cols] } else { vec![rows, cols] };
        self.specs.push(ParamSpec {
            name: name.into(),
            shape,
        });
        self.inits.push(init);
        self.len += rows * cols;
        slot
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub(crate) fn initialize<F: Real>(self, seed: Seed) -> NetParams<F> {
        let mut values = vec![F::zero(); self.len];
        let mut offset = 0;
        for (i, (spec, init)) in self.specs.iter().zip(&self.inits).enumerate() {
            let n = spec.size();
            let dst = &mut values[offset..offset + n];
            let mut rng = seed.derive(i as u64).stream();
            match *init {
                Init::Zeros => {}
                Init::Ones => dst.iter_mut().for_each(|v| *v = F::one()),
                Init::FanIn(fan_in) => {
                    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = F::from_f64(std * rng.normal()).unwrap());
                }
                Init::Normal(std) => {
                    dst.iter_mut().for_each(|v| *v = F::from_f64(std * rng.normal()).unwrap());
                }
                Init::StackedIdentity(scale) => {
                    let (rows, cols) = match spec.shape.as_slice() {
                        [r, c] => (*r, *c),
                        [c] => (1, *c),
                        _ => unreachable!(),
                    };
                    for r in 0..rows {
                        for c in 0..cols {
                            let hit = if rows >= cols { r % cols == c } else { c % rows == r };
                            if hit {
                                dst[r * cols + c] = F::from_f64(scale).unwrap();
                            }
                        }
                    }
                }
            }
            offset += n;
        }
        NetParams {
            values,
            layout: self.specs,
        }
    }
}

/// Flat parameter vector plus the layout it was created with.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<F> {
    pub values: Vec<F>,
    layout: Vec<ParamSpec>,
}

impl<F: Real> NetParams<F> {
    pub fn from_parts(values: Vec<F>, layout: Vec<ParamSpec>) -> Result<Self> {
        let expected: usize = layout.iter().map(ParamSpec::size).sum();
        if expected != values.len() {
            return Err(Error::shape(
                format!("{expected} parameters from layout"),
                values.len(),
            ));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<F> {
        vec![F::zero(); self.values.len()]
    }

    /// Offset and size of a named tensor.
    pub fn find(&self, name: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for spec in &self.layout {
            if spec.name == name {
                return Some((offset, spec.size()));
            }
            offset += spec.size();
        }
        None
    }

    pub fn cast<G: Real>(&self) -> NetParams<G> {
        NetParams {
            values: self
                .values
                .iter()
                .map(|v| G::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Overwrites every entry with `N(0, scale^2)` noise.
    pub fn randomize(&mut self, seed: Seed, scale: f64) {
        let mut rng = seed.stream();
        for v in &mut self.values {
            *v = F::from_f64(scale * rng.normal()).unwrap();
        }
    }
}
