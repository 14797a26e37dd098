//! Dense `(N, H, W, C)` tensors, row-major with channels fastest.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        let shape = Shape { n, h, w, c };
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::config(format!("shape {shape} has a zero dimension")));
        }
        Ok(shape)
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions over all samples.
    pub fn positions(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn offset(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        ((n * self.h + h) * self.w + w) * self.c + c
    }

    /// Inverse of [`Shape::offset`].
    pub fn index_of(&self, flat: usize) -> [usize; 4] {
        let c = flat % self.c;
        let rest = flat / self.c;
        let w = rest % self.w;
        let rest = rest / self.w;
        [rest / self.h, rest % self.h, w, c]
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [n, h, w, c] => Shape::new(n, h, w, c),
            _ => Err(Error::data(format!(
                "expected a 4-d (N, H, W, C) shape, got {dims:?}"
            ))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.h, self.w, self.c)
    }
}

macro_rules! tensor_type {
    ($(#[$meta:meta])* $name:ident, $elem:ty) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            shape: Shape,
            data: Vec<$elem>,
        }

        impl $name {
            pub fn new(shape: Shape, data: Vec<$elem>) -> Result<Self> {
                if data.len() != shape.len() {
                    return Err(Error::data(format!(
                        "shape {shape} needs {} elements, got {}",
                        shape.len(),
                        data.len()
                    )));
                }
                Ok($name { shape, data })
            }

            pub fn filled(shape: Shape, value: $elem) -> Self {
                $name { shape, data: vec![value; shape.len()] }
            }

            pub fn shape(&self) -> Shape {
                self.shape
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            pub fn get(&self, n: usize, h: usize, w: usize, c: usize) -> $elem {
                self.data[self.shape.offset(n, h, w, c)]
            }

            /// The channel vector at one spatial position.
            pub fn vector(&self, n: usize, h: usize, w: usize) -> &[$elem] {
                let start = self.shape.offset(n, h, w, 0);
                &self.data[start..start + self.shape.c]
            }

            /// Iterates over per-position channel vectors in raster order.
            pub fn vectors(&self) -> std::slice::ChunksExact<'_, $elem> {
                self.data.chunks_exact(self.shape.c)
            }

            /// Copies out channel `c` as an `(N, H, W)` row-major buffer.
            pub fn channel(&self, c: usize) -> Vec<$elem> {
                self.vectors().map(|v| v[c]).collect()
            }
        }
    };
}

tensor_type!(
    /// Continuous latent features.
    LatentTensor,
    f32
);

tensor_type!(
    /// Quantization indices, one per latent element.
    TokenTensor,
    u16
);

impl LatentTensor {
    /// Position of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<[usize; 4]> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| self.shape.index_of(i))
    }
}

impl TokenTensor {
    pub fn max_index(&self) -> Option<u16> {
        self.data.iter().copied().max()
    }
}
