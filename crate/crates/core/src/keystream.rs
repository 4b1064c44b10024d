//! Chaotic sequence generation and the sort-based permutation it induces.
//!
//! The 2D map is iterated in binary64 with a fixed operation order and no
//! fused multiply-add, so every platform produces the same bits and hence the
//! same permutation.

use thiserror::Error;

pub const DEFAULT_BURN_IN: usize = 500;

/// States with magnitude above this are treated as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeystreamError {
    #[error("chaos parameter `{0}` is not finite")]
    NonFiniteParameter(&'static str),
    #[error("chaotic orbit diverged at step {0}")]
    Divergence(usize),
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("index lists are not bijections of equal length")]
    NotBijective,
}

/// Initial condition `(x0, y0)` and control parameters of
/// `x' = a1 x + a2 y`, `y' = b1 + b2 x^2 + b3 y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChaosParams {
    pub x0: f64,
    pub y0: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl ChaosParams {
    /// The published reference configuration.
    pub const REFERENCE: ChaosParams = ChaosParams {
        x0: 0.0394,
        y0: 0.001,
        a1: -0.95,
        a2: -1.3,
        b1: -0.45,
        b2: 2.4,
        b3: 1.05,
    };

    pub fn from_array(v: [f64; 7]) -> Self {
        ChaosParams {
            x0: v[0],
            y0: v[1],
            a1: v[2],
            a2: v[3],
            b1: v[4],
            b2: v[5],
            b3: v[6],
        }
    }

    /// `[x0, y0, a1, a2, b1, b2, b3]`.
    pub fn to_array(&self) -> [f64; 7] {
        [self.x0, self.y0, self.a1, self.a2, self.b1, self.b2, self.b3]
    }

    pub fn validate(&self) -> Result<(), KeystreamError> {
        const NAMES: [&str; 7] = ["x0", "y0", "a1", "a2", "b1", "b2", "b3"];
        for (name, v) in NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(KeystreamError::NonFiniteParameter(name));
            }
        }
        Ok(())
    }

    #[inline]
    fn step(&self, x: f64, y: f64) -> (f64, f64) {
        let t1 = self.a1 * x;
        let t2 = self.a2 * y;
        let nx = t1 + t2;
        let s1 = x * x;
        let s2 = self.b2 * s1;
        let s3 = self.b1 + s2;
        let u = self.b3 * y;
        let ny = s3 + u;
        (nx, ny)
    }
}

/// Iterates `burn_in + count` times from `(x0, y0)` and keeps the last `count`
/// states. Steps are numbered from 1.
pub fn iterate_chaos(
    params: &ChaosParams,
    count: usize,
    burn_in: usize,
) -> Result<(Vec<f64>, Vec<f64>), KeystreamError> {
    params.validate()?;
    if count == 0 {
        return Err(KeystreamError::ZeroLength);
    }
    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    let (mut x, mut y) = (params.x0, params.y0);
    for step in 1..=burn_in + count {
        (x, y) = params.step(x, y);
        if !(x.is_finite() && y.is_finite()) || x.abs() > DIVERGENCE_BOUND || y.abs() > DIVERGENCE_BOUND {
            return Err(KeystreamError::Divergence(step));
        }
        if step > burn_in {
            xs.push(x);
            ys.push(y);
        }
    }
    Ok((xs, ys))
}

/// `u[i]` is the index of the `(i+1)`-th smallest element; ties keep index order.
pub fn rank_permutation(seq: &[f64]) -> Vec<usize> {
    // -0.0 and 0.0 compare equal and fall back to index order
    let key = |v: f64| if v == 0.0 { 0.0 } else { v };
    let mut idx: Vec<usize> = (0..seq.len()).collect();
    idx.sort_by(|&a, &b| key(seq[a]).total_cmp(&key(seq[b])));
    idx
}

/// A bijection on `0..len` stored with its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationVector {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl PermutationVector {
    pub fn from_forward(forward: Vec<usize>) -> Result<Self, KeystreamError> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (i, &f) in forward.iter().enumerate() {
            if f >= n || inverse[f] != usize::MAX {
                return Err(KeystreamError::NotBijective);
            }
            inverse[f] = i;
        }
        Ok(PermutationVector { forward, inverse })
    }

    pub fn from_inverse(inverse: Vec<usize>) -> Result<Self, KeystreamError> {
        let p = Self::from_forward(inverse)?;
        Ok(PermutationVector {
            forward: p.inverse,
            inverse: p.forward,
        })
    }

    pub fn identity(len: usize) -> Self {
        PermutationVector {
            forward: (0..len).collect(),
            inverse: (0..len).collect(),
        }
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

/// `w(i) = v(u(i))`.
pub fn compose_w(u: &[usize], v: &[usize]) -> Result<PermutationVector, KeystreamError> {
    if u.len() != v.len() {
        return Err(KeystreamError::NotBijective);
    }
    PermutationVector::from_forward(u.to_vec())?;
    PermutationVector::from_forward(v.to_vec())?;
    PermutationVector::from_forward(u.iter().map(|&i| v[i]).collect())
}

/// The permutation relation vector for a plaintext of `len` elements.
pub fn derive_permutation(
    params: &ChaosParams,
    len: usize,
    burn_in: usize,
) -> Result<PermutationVector, KeystreamError> {
    let (xs, ys) = iterate_chaos(params, len, burn_in)?;
    let u = rank_permutation(&xs);
    let v = rank_permutation(&ys);
    compose_w(&u, &v)
}
