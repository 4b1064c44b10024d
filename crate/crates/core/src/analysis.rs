//! Structural defects of the cipher: data expansion, insensitivity to
//! plaintext and key changes, the cost of coprime key generation, and the
//! pairwise-sum histogram that leaks `n`.

use std::fmt;

use num_bigint::BigUint;
use num_traits::Zero;
use thiserror::Error;

use crate::attack::SumMultiset;
use crate::cipher::{encrypt, Cipher, CipherError, Ciphertext, ExpansionRatio, Plaintext, SecretKey};

pub const DEFAULT_PRIME_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("plain-element {value} at position {index} plus {d} leaves the byte range")]
    RangeViolation { index: usize, value: u32, d: u32 },
    #[error("modulus index {0} is out of range")]
    BadIndex(usize),
    #[error("perturbed modulus {0} is invalid or not coprime with the others")]
    NotCoprime(i64),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

/// Pairwise-sum histogram of a ciphertext's distinct values.
pub fn bhat_histogram(ct: &Ciphertext) -> SumMultiset {
    SumMultiset::from_ciphertext(ct)
}

/// Encrypts `P` and `P + d` and returns `(j, c_j - c*_j mod n)` for every block.
pub fn sensitivity_demo(key: &SecretKey, plaintext: &Plaintext, d: u32) -> Result<Vec<(usize, BigUint)>, AnalysisError> {
    if let Some((index, &value)) = plaintext.elements.iter().enumerate().find(|(_, &v)| v + d > 255) {
        return Err(AnalysisError::RangeViolation { index, value, d });
    }
    let shifted = Plaintext::new(plaintext.elements.iter().map(|&v| v + d).collect());
    let cipher = Cipher::new(key, plaintext.len())?;
    let c = cipher.encrypt(&shifted)?;
    let c_star = cipher.encrypt(plaintext)?;
    let n = key.product();
    Ok(c
        .elements
        .iter()
        .zip(&c_star.elements)
        .enumerate()
        .map(|(j, (a, b))| (j, (a + &n - b) % &n))
        .collect())
}

/// Primes up to and including `limit`.
pub fn sieve_primes(limit: usize) -> Vec<usize> {
    if limit < 2 {
        return Vec::new();
    }
    let mut composite = vec![false; limit + 1];
    let mut primes = Vec::new();
    for p in 2..=limit {
        if composite[p] {
            continue;
        }
        primes.push(p);
        let mut m = p * p;
        while m <= limit {
            composite[m] = true;
            m += p;
        }
    }
    primes
}

/// Euler product for the probability that `k` random integers are pairwise
/// coprime, truncated to primes `<= prime_limit`:
/// `prod_p (1 - 1/p)^(k-1) (1 + (k-1)/p)`.
pub fn coprime_probability(k: u32, prime_limit: usize) -> f64 {
    let km1 = k.saturating_sub(1) as f64;
    let log: f64 = sieve_primes(prime_limit)
        .into_iter()
        .map(|p| {
            let inv = 1.0 / p as f64;
            km1 * (-inv).ln_1p() + (km1 * inv).ln_1p()
        })
        .sum();
    log.exp()
}

/// Decrypts the true ciphertext with modulus `index` shifted by `delta` and
/// returns the fraction of plain-elements that come out wrong.
pub fn key_sensitivity_demo(
    key: &SecretKey,
    index: usize,
    delta: i64,
    plaintext: &Plaintext,
) -> Result<f64, AnalysisError> {
    let Some(&original) = key.moduli().get(index) else {
        return Err(AnalysisError::BadIndex(index));
    };
    let perturbed = original as i64 + delta;
    let value = u32::try_from(perturbed).map_err(|_| AnalysisError::NotCoprime(perturbed))?;
    let mut moduli = key.moduli().to_vec();
    moduli[index] = value;
    let wrong = SecretKey::with_min_modulus(moduli, *key.chaos(), 2).map_err(|_| AnalysisError::NotCoprime(perturbed))?;

    let ct = encrypt(key, plaintext)?;
    let recovered = Cipher::new(&wrong, plaintext.len())?.decrypt(&ct)?;
    let mismatched = recovered
        .elements
        .iter()
        .zip(&plaintext.elements)
        .filter(|(a, b)| a != b)
        .count();
    Ok(mismatched as f64 / plaintext.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectReport {
    pub k: usize,
    pub expansion: ExpansionRatio,
    /// `(d, every block difference equals d mod n)`.
    pub sensitivity_cases: Vec<(u32, bool)>,
    pub constant_plaintext_constant_ciphertext: bool,
    pub zero_plaintext_zero_ciphertext: bool,
    pub a_k_estimate: f64,
}

impl DefectReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("k={}\n", self.k));
        out.push_str(&format!("expansion_ratio={}\n", self.expansion.ratio));
        out.push_str(&format!("expansion_lower_bound={}\n", self.expansion.lower_bound));
        out.push_str(&format!("element_ratio={}\n", self.expansion.element_ratio));
        for (d, ok) in &self.sensitivity_cases {
            out.push_str(&format!("sensitivity_d{d}={ok}\n"));
        }
        out.push_str(&format!(
            "constant_plaintext_constant_ciphertext={}\n",
            self.constant_plaintext_constant_ciphertext
        ));
        out.push_str(&format!("zero_plaintext_zero_ciphertext={}\n", self.zero_plaintext_zero_ciphertext));
        out.push_str(&format!("a_k={:.6e}\n", self.a_k_estimate));
        out
    }
}

impl fmt::Display for DefectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.expansion;
        writeln!(f, "Defect report (k = {})", self.k)?;
        writeln!(
            f,
            "  expansion ratio      {} ({:.4}), lower bound {}",
            e.ratio,
            *e.ratio.numer() as f64 / *e.ratio.denom() as f64,
            e.lower_bound
        )?;
        writeln!(f, "  cipher-element ratio {}", e.element_ratio)?;
        for (d, ok) in &self.sensitivity_cases {
            writeln!(
                f,
                "  P + {d}: every block shifts by {d} mod n ... {}",
                if *ok { "yes" } else { "no" }
            )?;
        }
        writeln!(
            f,
            "  constant plaintext -> constant ciphertext ... {}",
            yes_no(self.constant_plaintext_constant_ciphertext)
        )?;
        writeln!(f, "  zero plaintext -> zero ciphertext ... {}", yes_no(self.zero_plaintext_zero_ciphertext))?;
        write!(f, "  A_{} (random moduli pairwise coprime) ~ {:.4e}", self.k, self.a_k_estimate)
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Collects every defect measurement for one key on one plaintext.
pub fn defect_report(
    key: &SecretKey,
    plaintext: &Plaintext,
    shifts: &[u32],
    element_bits: u32,
    prime_limit: usize,
) -> Result<DefectReport, AnalysisError> {
    let mut sensitivity_cases = Vec::with_capacity(shifts.len());
    for &d in shifts {
        let n = key.product();
        let expected = BigUint::from(d) % &n;
        let diffs = sensitivity_demo(key, plaintext, d)?;
        sensitivity_cases.push((d, diffs.iter().all(|(_, v)| *v == expected)));
    }

    let cipher = Cipher::new(key, plaintext.len())?;
    let constant = cipher.encrypt(&Plaintext::new(vec![42; plaintext.len()]))?;
    let zero = cipher.encrypt(&Plaintext::new(vec![0; plaintext.len()]))?;

    Ok(DefectReport {
        k: key.block_size(),
        expansion: key.expansion_ratio(element_bits),
        sensitivity_cases,
        constant_plaintext_constant_ciphertext: constant.elements.iter().all(|c| *c == BigUint::from(42u32)),
        zero_plaintext_zero_ciphertext: zero.elements.iter().all(Zero::is_zero),
        a_k_estimate: coprime_probability(key.block_size() as u32, prime_limit),
    })
}
