use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Location of one named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRef {
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamRef {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn slice<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.range()]
    }

    pub fn slice_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.range()]
    }

    pub fn vec<'a>(&self, buf: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(self.slice(buf))
    }

    pub fn vec_mut<'a>(&self, buf: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(self.slice_mut(buf))
    }

    /// Row-major matrix view; higher-rank tensors fold trailing axes into columns.
    pub fn mat<'a>(&self, buf: &'a [f64]) -> ArrayView2<'a, f64> {
        let rows = self.shape[0];
        ArrayView2::from_shape((rows, self.len() / rows), self.slice(buf)).expect("parameter shape")
    }

    pub fn mat_mut<'a>(&self, buf: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        let rows = self.shape[0];
        let cols = self.len() / rows;
        ArrayViewMut2::from_shape((rows, cols), self.slice_mut(buf)).expect("parameter shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Ordered registry of named tensors packed into one flat `Vec<f64>`.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    specs: Vec<(ParamSpec, ParamRef, Init)>,
    total: usize,
}

impl ParamLayout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamRef {
        let r = ParamRef {
            offset: self.total,
            shape: shape.to_vec(),
        };
        self.total += r.len();
        self.specs.push((
            ParamSpec {
                name: name.into(),
                shape: shape.to_vec(),
            },
            r.clone(),
            init,
        ));
        r
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn specs(&self) -> impl Iterator<Item = &ParamSpec> {
        self.specs.iter().map(|(s, _, _)| s)
    }

    pub fn get(&self, name: &str) -> Option<&ParamRef> {
        self.specs.iter().find(|(s, _, _)| s.name == name).map(|(_, r, _)| r)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ParamRef)> {
        self.specs.iter().map(|(s, r, _)| (s.name.as_str(), r))
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; self.total];
        for (_, r, init) in &self.specs {
            for v in r.slice_mut(&mut out) {
                *v = match *init {
                    Init::Uniform(b) => rng.gen_range(-b..=b),
                    Init::Const(c) => c,
                };
            }
        }
        out
    }
}
