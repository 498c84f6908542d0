use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// N observed n×p matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSample {
    n: usize,
    p: usize,
    obs: Vec<DMatrix<f64>>,
}

impl MatrixSample {
    pub fn new(obs: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = obs.first() else {
            return Err(Error::Shape("a sample needs at least one observation".into()));
        };
        let (n, p) = first.shape();
        if n == 0 || p == 0 {
            return Err(Error::Shape("observations must have positive dimensions".into()));
        }
        if let Some((i, x)) = obs.iter().enumerate().find(|(_, x)| x.shape() != (n, p)) {
            return Err(Error::Shape(format!(
                "observation {i} is {}x{}, expected {n}x{p}",
                x.nrows(),
                x.ncols()
            )));
        }
        if obs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain("observations must be finite".into()));
        }
        Ok(Self { n, p, obs })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    pub fn obs(&self) -> &[DMatrix<f64>] {
        &self.obs
    }

    pub fn into_obs(self) -> Vec<DMatrix<f64>> {
        self.obs
    }

    /// Every observation transposed (p×n).
    pub fn transposed(&self) -> Self {
        Self {
            n: self.p,
            p: self.n,
            obs: self.obs.iter().map(|x| x.transpose()).collect(),
        }
    }
}

impl std::ops::Index<usize> for MatrixSample {
    type Output = DMatrix<f64>;

    fn index(&self, i: usize) -> &DMatrix<f64> {
        &self.obs[i]
    }
}
