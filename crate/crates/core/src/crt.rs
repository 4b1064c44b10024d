//! Exact CRT arithmetic over arbitrary-precision integers.
//!
//! A [`CrtBasis`] holds pairwise-coprime moduli `m_1..m_t` together with the
//! cofactors `m/m_i` and the inverses `e_i` so that reconstruction is a single
//! weighted sum `x = sum(e_i * (m/m_i) * q_i) mod m`. The products
//! `e_i * (m/m_i)` are the basis idempotents; the attack relies on their gcd
//! structure with `m`.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrtError {
    #[error("basis needs at least one modulus")]
    Empty,
    #[error("modulus at position {0} is below 2")]
    ModulusTooSmall(usize),
    #[error("moduli at positions {0} and {1} share the factor {2}")]
    NotCoprime(usize, usize, BigUint),
    #[error("expected {expected} remainders, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("subset index {0} is out of range or repeated")]
    BadIndex(usize),
    #[error("subset must not be empty")]
    EmptySubset,
    #[error("{0} has no inverse modulo {1}")]
    NotInvertible(BigUint, BigUint),
    #[error("modulus must be nonzero")]
    ZeroModulus,
}

/// gcd with the conventions gcd(0, n) = n and gcd(0, 0) = 0.
pub fn gcd(a: &BigUint, b: &BigUint) -> BigUint {
    a.gcd(b)
}

/// Extended Euclid: returns `(g, x, y)` with `a*x + b*y = g = gcd(a, b)`.
pub fn egcd(a: &BigInt, b: &BigInt) -> (BigInt, BigInt, BigInt) {
    let ext = a.extended_gcd(b);
    (ext.gcd, ext.x, ext.y)
}

/// Least nonnegative inverse of `a` modulo `m`.
pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Result<BigUint, CrtError> {
    if m.is_zero() {
        return Err(CrtError::ZeroModulus);
    }
    if m.is_one() {
        return Ok(BigUint::zero());
    }
    let a_int = BigInt::from_biguint(Sign::Plus, a % m);
    let m_int = BigInt::from_biguint(Sign::Plus, m.clone());
    let (g, x, _) = egcd(&a_int, &m_int);
    if !g.is_one() {
        return Err(CrtError::NotInvertible(a.clone(), m.clone()));
    }
    let x = x.mod_floor(&m_int);
    Ok(x.to_biguint().expect("mod_floor by a positive modulus is nonnegative"))
}

/// `gcd(|c - 1|, n)`, the quantity read off each cipher-element by the attack.
/// For `c = 0` this is `gcd(1, n) = 1`.
pub fn gcd_minus_one(c: &BigUint, n: &BigUint) -> BigUint {
    if c.is_zero() {
        BigUint::one()
    } else {
        gcd(&(c - 1u32), n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrtBasis {
    moduli: Vec<BigUint>,
    cofactors: Vec<BigUint>,
    inverses: Vec<BigUint>,
    idempotents: Vec<BigUint>,
    product: BigUint,
}

impl CrtBasis {
    /// Builds the basis, rejecting empty lists, moduli below 2 and any pair
    /// with a common factor.
    pub fn new(moduli: &[BigUint]) -> Result<Self, CrtError> {
        if moduli.is_empty() {
            return Err(CrtError::Empty);
        }
        for (i, m) in moduli.iter().enumerate() {
            if *m < BigUint::from(2u32) {
                return Err(CrtError::ModulusTooSmall(i));
            }
        }
        for i in 0..moduli.len() {
            for j in i + 1..moduli.len() {
                let g = gcd(&moduli[i], &moduli[j]);
                if !g.is_one() {
                    return Err(CrtError::NotCoprime(i, j, g));
                }
            }
        }

        let product: BigUint = moduli.iter().product();
        let mut cofactors = Vec::with_capacity(moduli.len());
        let mut inverses = Vec::with_capacity(moduli.len());
        let mut idempotents = Vec::with_capacity(moduli.len());
        for m in moduli {
            let cofactor = &product / m;
            let inverse = mod_inverse(&cofactor, m)?;
            idempotents.push(&inverse * &cofactor);
            cofactors.push(cofactor);
            inverses.push(inverse);
        }

        Ok(CrtBasis {
            moduli: moduli.to_vec(),
            cofactors,
            inverses,
            idempotents,
            product,
        })
    }

    pub fn from_u64(moduli: &[u64]) -> Result<Self, CrtError> {
        let big: Vec<BigUint> = moduli.iter().map(|&m| BigUint::from(m)).collect();
        Self::new(&big)
    }

    pub fn moduli(&self) -> &[BigUint] {
        &self.moduli
    }

    /// `m / m_i` for each modulus.
    pub fn cofactors(&self) -> &[BigUint] {
        &self.cofactors
    }

    /// `e_i` in `[0, m_i)` with `e_i * (m/m_i) = 1 (mod m_i)`.
    pub fn inverses(&self) -> &[BigUint] {
        &self.inverses
    }

    /// `e_i * (m/m_i)`, unreduced.
    pub fn idempotents(&self) -> &[BigUint] {
        &self.idempotents
    }

    pub fn product(&self) -> &BigUint {
        &self.product
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    /// The unique `x` in `[0, m)` with `x = q_i (mod m_i)` for every `i`.
    pub fn solve(&self, remainders: &[BigUint]) -> Result<BigUint, CrtError> {
        self.check_len(remainders.len())?;
        let mut acc = BigUint::zero();
        for ((q, m), idem) in remainders.iter().zip(&self.moduli).zip(&self.idempotents) {
            acc += idem * (q % m);
        }
        Ok(acc % &self.product)
    }

    /// [`solve`](Self::solve) for machine-word remainders, the cipher's hot path.
    pub fn solve_small(&self, remainders: &[u64]) -> Result<BigUint, CrtError> {
        self.check_len(remainders.len())?;
        let mut acc = BigUint::zero();
        for ((&q, m), idem) in remainders.iter().zip(&self.moduli).zip(&self.idempotents) {
            let q = BigUint::from(q);
            if q < *m {
                acc += idem * q;
            } else {
                acc += idem * (q % m);
            }
        }
        Ok(acc % &self.product)
    }

    /// `(x mod m_1, ..., x mod m_t)`.
    pub fn split(&self, x: &BigUint) -> Vec<BigUint> {
        let x = x % &self.product;
        self.moduli.iter().map(|m| &x % m).collect()
    }

    /// For a subset `S` of 0-based indices returns
    /// `(gcd(sum_S e_i m~_i - 1, m), gcd(sum_S e_i m~_i, m))`.
    ///
    /// The first component always equals the product of the moduli in `S`;
    /// the second is a multiple of the product of the complement.
    pub fn subset_gcd_identity(&self, subset: &[usize]) -> Result<(BigUint, BigUint), CrtError> {
        if subset.is_empty() {
            return Err(CrtError::EmptySubset);
        }
        let mut seen = vec![false; self.len()];
        let mut sum = BigUint::zero();
        for &i in subset {
            if i >= self.len() || seen[i] {
                return Err(CrtError::BadIndex(i));
            }
            seen[i] = true;
            sum += &self.idempotents[i];
        }
        // sum >= 1: each idempotent is positive since e_i m~_i = 1 (mod m_i).
        let minus_one = gcd(&(&sum - 1u32), &self.product);
        let plain = gcd(&sum, &self.product);
        Ok((minus_one, plain))
    }

    fn check_len(&self, actual: usize) -> Result<(), CrtError> {
        if actual != self.len() {
            return Err(CrtError::LengthMismatch {
                expected: self.len(),
                actual,
            });
        }
        Ok(())
    }
}
