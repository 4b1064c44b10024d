//! Chosen-plaintext key recovery.
//!
//! Three stages, each consuming the previous result:
//!
//! 1. **Modulus product.** Encrypt one random binary plaintext. Each block's
//!    cipher-element is `c_S = sum_{i in S} e_i n~_i mod n` for the set `S` of
//!    slots holding a one. Complementary sets satisfy `c_S + c_{S^c} = n + 1`
//!    (the full sum is `1 mod n`), so `n + 1` is the most frequent pairwise
//!    sum of distinct cipher values.
//! 2. **Moduli set.** For the same ciphertext, `gcd(c_S - 1, n)` is the
//!    product of the moduli in `S` and `gcd(c_S, n)` the product of the rest.
//!    Pairwise-coprime minimal elements of that pool, closed under gcd and
//!    exact quotient, are the moduli.
//! 3. **Permutation.** With the moduli known in ascending order the cipher
//!    degrades to a position permutation. Encrypting the base-`2^l` digits of
//!    every position index, `ceil(log2(L) / l)` queries in total, reveals
//!    where each position lands. The unknown order of the moduli inside a
//!    block is absorbed into that permutation.

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cipher::{inverse_confusion, Ciphertext, Plaintext, DEFAULT_ELEMENT_BITS, MIN_MODULUS};
use crate::crt::{gcd, gcd_minus_one, CrtBasis, CrtError};
use crate::keystream::PermutationVector;
use crate::oracle::{checked_query, EncryptionOracle, OracleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("no unique most frequent pairwise sum (candidates for n: {0:?})")]
    AmbiguousMode(Vec<BigUint>),
    #[error("candidate n = {candidate} is not above the cipher-element {offending}")]
    ValidationFailed { candidate: BigUint, offending: BigUint },
    #[error("moduli cannot be separated from this ciphertext: {0}; use a denser or different chosen plaintext")]
    InsufficientInformation(String),
    #[error("recovered indices do not form a permutation; n or the moduli are wrong")]
    NotBijective,
    #[error("ciphertext does not match the equivalent key: {0}")]
    HeaderMismatch(String),
    #[error("inconsistent recovery: {0}")]
    Inconsistent(String),
    #[error("{bits}-bit digits do not fit below the smallest modulus {min_modulus}")]
    ElementBits { bits: u32, min_modulus: u32 },
    #[error(transparent)]
    Crt(#[from] CrtError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Plain-element size `l` in bits.
    pub element_bits: u32,
    /// Probability of a one in the binary chosen plaintext.
    pub density: f64,
    pub seed: u64,
    /// Extra stage-1 queries allowed when the sum histogram is inconclusive.
    pub retries: usize,
    /// Recovered moduli below this are rejected.
    pub min_modulus: u32,
    /// Recover the moduli from the difference of two queries whose
    /// plaintexts differ by a binary text.
    pub differential: bool,
    pub max_closure_rounds: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            element_bits: DEFAULT_ELEMENT_BITS,
            density: 0.5,
            seed: 0,
            retries: 3,
            min_modulus: MIN_MODULUS,
            differential: false,
            max_closure_rounds: 64,
        }
    }
}

/// Distinct cipher values `B` and the histogram of their pairwise sums `B^`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumMultiset {
    distinct: Vec<BigUint>,
    sums: HashMap<BigUint, u64>,
}

impl SumMultiset {
    pub fn from_ciphertext(ct: &Ciphertext) -> Self {
        Self::from_values(ct.elements.iter().cloned())
    }

    pub fn from_values(values: impl IntoIterator<Item = BigUint>) -> Self {
        let distinct: Vec<BigUint> = values.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut sums = HashMap::new();
        for (i, a) in distinct.iter().enumerate() {
            for b in &distinct[i + 1..] {
                *sums.entry(a + b).or_insert(0) += 1;
            }
        }
        SumMultiset { distinct, sums }
    }

    /// Ascending distinct cipher values.
    pub fn distinct(&self) -> &[BigUint] {
        &self.distinct
    }

    pub fn frequency(&self, sum: &BigUint) -> u64 {
        self.sums.get(sum).copied().unwrap_or(0)
    }

    /// Number of distinct sums.
    pub fn support_len(&self) -> usize {
        self.sums.len()
    }

    /// Number of pairs, `C(|B|, 2)`.
    pub fn total_pairs(&self) -> u64 {
        self.sums.values().sum()
    }

    /// All sums with the highest frequency, ascending.
    pub fn modes(&self) -> Vec<BigUint> {
        let Some(&top) = self.sums.values().max() else {
            return Vec::new();
        };
        let mut modes: Vec<BigUint> = self
            .sums
            .iter()
            .filter(|(_, &f)| f == top)
            .map(|(v, _)| v.clone())
            .collect();
        modes.sort();
        modes
    }

    /// `(sum, frequency)` by descending frequency, then ascending sum.
    pub fn rows(&self) -> Vec<(BigUint, u64)> {
        let mut rows: Vec<(BigUint, u64)> = self.sums.iter().map(|(v, &f)| (v.clone(), f)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sum,frequency\n");
        for (v, f) in self.rows() {
            out.push_str(&format!("{v},{f}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NMethod {
    /// Unique most frequent pairwise sum.
    SumMode,
    /// Tied modes, exactly one of which survived range and factor checks.
    VerifiedTie,
    /// `max(C) + 1`, accepted only because stage 2 confirmed its factors.
    /// Low confidence.
    MaxPlusOne,
}

impl NMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            NMethod::SumMode => "sum-mode",
            NMethod::VerifiedTie => "verified-tie",
            NMethod::MaxPlusOne => "max-plus-one",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NEstimate {
    pub n: BigUint,
    pub method: NMethod,
    /// `max(C) + 1`, a lower bound on `n`.
    pub lower_bound: BigUint,
    pub multiset: SumMultiset,
}

fn max_element(ct: &Ciphertext) -> BigUint {
    ct.elements.iter().max().cloned().unwrap_or_default()
}

/// Stage 1 on a single ciphertext of a binary plaintext.
pub fn n_from_ciphertext(
    ct: &Ciphertext,
    k_hint: Option<usize>,
    cfg: &AttackConfig,
) -> Result<NEstimate, AttackError> {
    let multiset = SumMultiset::from_ciphertext(ct);
    let modes = multiset.modes();
    let max_c = max_element(ct);
    let lower_bound = &max_c + 1u32;
    let candidates: Vec<BigUint> = modes.iter().filter(|v| **v > BigUint::one()).map(|v| v - 1u32).collect();
    if candidates.is_empty() {
        return Err(AttackError::AmbiguousMode(candidates));
    }
    let in_range: Vec<&BigUint> = candidates.iter().filter(|n| max_c < **n).collect();

    if modes.len() == 1 {
        return match in_range.first() {
            Some(&n) => Ok(NEstimate {
                n: n.clone(),
                method: NMethod::SumMode,
                lower_bound,
                multiset,
            }),
            None => Err(AttackError::ValidationFailed {
                candidate: candidates[0].clone(),
                offending: max_c,
            }),
        };
    }

    // Tied modes: keep only candidates whose factors check out.
    let verified: Vec<&BigUint> = in_range
        .into_iter()
        .filter(|n| recover_moduli_set(ct, n, k_hint, cfg).is_ok())
        .collect();
    match verified.as_slice() {
        [n] => Ok(NEstimate {
            n: (*n).clone(),
            method: NMethod::VerifiedTie,
            lower_bound,
            multiset,
        }),
        _ => Err(AttackError::AmbiguousMode(candidates)),
    }
}

/// i.i.d. binary plaintext with `P(1) = density`.
pub fn random_binary_plaintext(len: usize, density: f64, rng: &mut impl Rng) -> Plaintext {
    let density = density.clamp(0.0, 1.0);
    Plaintext::new((0..len).map(|_| rng.gen_bool(density) as u32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOne {
    pub estimate: NEstimate,
    pub plaintext: Plaintext,
    pub ciphertext: Ciphertext,
    pub attempts: usize,
}

/// Stage 1 against an oracle: query random binary plaintexts until the sum
/// histogram identifies `n`, with up to `cfg.retries` extra queries, then
/// fall back to a factor-verified `max(C) + 1`.
pub fn recover_n(
    oracle: &mut dyn EncryptionOracle,
    len: usize,
    k_hint: Option<usize>,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<StageOne, AttackError> {
    let mut last = None;
    for attempt in 1..=cfg.retries + 1 {
        let plaintext = random_binary_plaintext(len, cfg.density, rng);
        let ciphertext = checked_query(oracle, &plaintext)?;
        let k = k_hint.or(Some(ciphertext.header.k as usize));
        match n_from_ciphertext(&ciphertext, k, cfg) {
            Ok(estimate) => {
                return Ok(StageOne {
                    estimate,
                    plaintext,
                    ciphertext,
                    attempts: attempt,
                })
            }
            Err(e @ (AttackError::AmbiguousMode(_) | AttackError::ValidationFailed { .. })) => {
                last = Some((e, plaintext, ciphertext, attempt));
            }
            Err(e) => return Err(e),
        }
    }

    let (err, plaintext, ciphertext, attempts) = last.expect("at least one attempt");
    let k = k_hint.or(Some(ciphertext.header.k as usize));
    let guess = max_element(&ciphertext) + 1u32;
    if guess > BigUint::one() && recover_moduli_set(&ciphertext, &guess, k, cfg).is_ok() {
        return Ok(StageOne {
            estimate: NEstimate {
                n: guess.clone(),
                method: NMethod::MaxPlusOne,
                lower_bound: guess,
                multiset: SumMultiset::from_ciphertext(&ciphertext),
            },
            plaintext,
            ciphertext,
            attempts,
        });
    }
    Err(err)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuliRecovery {
    /// Ascending.
    pub moduli: Vec<BigUint>,
    /// Closure rounds run before the coprime set appeared; 0 means the very
    /// first search step succeeded.
    pub closure_rounds: usize,
    /// The initial pool built from the ciphertext, ascending, without 1.
    pub initial_pool: Vec<BigUint>,
}

/// `{gcd(c - 1, n), gcd(c, n), n / gcd(c - 1, n)}` over all cipher-elements,
/// with trivial entries dropped.
pub fn factor_pool(ct: &Ciphertext, n: &BigUint) -> BTreeSet<BigUint> {
    let mut pool = BTreeSet::new();
    for c in &ct.elements {
        let c = c % n;
        let g1 = gcd_minus_one(&c, n);
        let g0 = gcd(&c, n);
        let q = n / &g1;
        for v in [g1, g0, q] {
            if v > BigUint::one() {
                pool.insert(v);
            }
        }
    }
    pool
}

/// Smallest pairwise-coprime elements, picked greedily in ascending order.
fn smallest_coprime(pool: &BTreeSet<BigUint>) -> Vec<BigUint> {
    let mut picked: Vec<BigUint> = Vec::new();
    for v in pool {
        if picked.iter().all(|p| gcd(p, v).is_one()) {
            picked.push(v.clone());
        }
    }
    picked
}

/// One round of closure: add nontrivial pairwise gcds, then exact quotients.
/// Returns whether the pool grew.
fn close_once(pool: &mut BTreeSet<BigUint>) -> bool {
    let before = pool.len();
    let items: Vec<BigUint> = pool.iter().cloned().collect();
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            let g = gcd(a, b);
            if !g.is_one() {
                pool.insert(g);
            }
        }
    }
    let items: Vec<BigUint> = pool.iter().cloned().collect();
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            // ascending, so only b / a can be an exact quotient
            if (b % a).is_zero() {
                let q = b / a;
                if q > BigUint::one() {
                    pool.insert(q);
                }
            }
        }
    }
    pool.len() > before
}

/// Stage 2 on the ciphertext of a binary plaintext.
///
/// With `k_hint` the search stops as soon as `k_hint` coprime elements with
/// product `n` appear. Without it the pool is closed to a fixpoint first.
pub fn recover_moduli_set(
    ct: &Ciphertext,
    n: &BigUint,
    k_hint: Option<usize>,
    cfg: &AttackConfig,
) -> Result<ModuliRecovery, AttackError> {
    if *n <= BigUint::one() {
        return Err(AttackError::InsufficientInformation(format!("n = {n} has no factors")));
    }
    let mut pool = factor_pool(ct, n);
    let initial_pool: Vec<BigUint> = pool.iter().cloned().collect();
    let min = BigUint::from(cfg.min_modulus);

    let mut fixpoint = false;
    for round in 0..=cfg.max_closure_rounds {
        let picked = smallest_coprime(&pool);
        let product: BigUint = picked.iter().product();
        let complete = product == *n && picked.len() >= 2 && picked.iter().all(|m| *m >= min);
        let accept = match k_hint {
            Some(k) => complete && picked.len() == k,
            None => complete && fixpoint,
        };
        if accept {
            return Ok(ModuliRecovery {
                moduli: picked,
                closure_rounds: round,
                initial_pool,
            });
        }
        if fixpoint {
            break;
        }
        fixpoint = !close_once(&mut pool);
    }
    Err(AttackError::InsufficientInformation(format!(
        "closure of {} pool elements yields no coprime factorization of n",
        initial_pool.len()
    )))
}

/// Reduces `c_j - c'_j mod n` blockwise: for plaintexts differing by a binary
/// text this is the ciphertext of that binary text.
pub fn difference_ciphertext(a: &Ciphertext, b: &Ciphertext, n: &BigUint) -> Result<Ciphertext, AttackError> {
    if a.header != b.header || a.elements.len() != b.elements.len() {
        return Err(AttackError::Inconsistent("differential pair has mismatched headers".into()));
    }
    let elements = a
        .elements
        .iter()
        .zip(&b.elements)
        .map(|(x, y)| ((x % n) + n - (y % n)) % n)
        .collect();
    Ok(Ciphertext {
        header: a.header,
        elements,
    })
}

/// Stage 2 from two fresh queries whose plaintexts differ by a binary text.
pub fn recover_moduli_set_differential(
    oracle: &mut dyn EncryptionOracle,
    n: &BigUint,
    len: usize,
    k_hint: Option<usize>,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<ModuliRecovery, AttackError> {
    let top = (1u32 << cfg.element_bits.min(8)) - 1;
    let base = Plaintext::new((0..len).map(|_| rng.gen_range(0..top)).collect());
    let delta = random_binary_plaintext(len, cfg.density, rng);
    let shifted = Plaintext::new(base.elements.iter().zip(&delta.elements).map(|(b, d)| b + d).collect());
    let c_shifted = checked_query(oracle, &shifted)?;
    let c_base = checked_query(oracle, &base)?;
    let diff = difference_ciphertext(&c_shifted, &c_base, n)?;
    recover_moduli_set(&diff, n, k_hint.or(Some(diff.header.k as usize)), cfg)
}

/// `ceil(log2(len) / bits)`: how many base-`2^bits` digits index `len` positions.
pub fn digit_planes(len: usize, bits: u32) -> usize {
    let index_bits = usize::BITS - len.saturating_sub(1).leading_zeros();
    index_bits.div_ceil(bits.max(1)) as usize
}

/// Stage 3: recovers the equivalent permutation `w~` for the moduli taken in
/// the given order. Slot `m` of the result holds the plaintext position that
/// encryption moves there.
pub fn recover_permutation(
    oracle: &mut dyn EncryptionOracle,
    moduli: &[u32],
    len: usize,
    cfg: &AttackConfig,
) -> Result<PermutationVector, AttackError> {
    let k = moduli.len();
    if k == 0 || !len.is_multiple_of(k) {
        return Err(AttackError::Inconsistent(format!("L = {len} is not a multiple of k = {k}")));
    }
    let bits = cfg.element_bits;
    let min_modulus = *moduli.iter().min().expect("k >= 1");
    if bits == 0 || bits > 31 || (1u64 << bits) > min_modulus as u64 {
        return Err(AttackError::ElementBits { bits, min_modulus });
    }
    let mask = (1usize << bits) - 1;
    let mut index = vec![0usize; len];
    for plane in 0..digit_planes(len, bits) {
        let shift = bits as usize * plane;
        let digits = Plaintext::new((0..len).map(|i| ((i >> shift) & mask) as u32).collect());
        let ct = checked_query(oracle, &digits)?;
        if ct.header.k as usize != k {
            return Err(AttackError::Inconsistent(format!(
                "oracle block size {} differs from recovered k = {k}",
                ct.header.k
            )));
        }
        for (slot, digit) in inverse_confusion(&ct.elements, moduli).into_iter().enumerate() {
            if digit as usize > mask {
                return Err(AttackError::NotBijective);
            }
            index[slot] |= (digit as usize) << shift;
        }
    }
    PermutationVector::from_forward(index).map_err(|_| AttackError::NotBijective)
}

/// What the attacker needs to decrypt: `n`, the moduli in ascending order and
/// the equivalent permutation for that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalentKey {
    n: BigUint,
    moduli: Vec<u32>,
    basis: CrtBasis,
    permutation: PermutationVector,
}

impl EquivalentKey {
    /// Moduli are sorted ascending; the permutation must already refer to
    /// that order.
    pub fn new(n: BigUint, mut moduli: Vec<u32>, permutation: PermutationVector) -> Result<Self, AttackError> {
        moduli.sort_unstable();
        let big: Vec<BigUint> = moduli.iter().map(|&m| BigUint::from(m)).collect();
        let basis = CrtBasis::new(&big)?;
        if *basis.product() != n {
            return Err(AttackError::Inconsistent(format!(
                "moduli product {} differs from n = {n}",
                basis.product()
            )));
        }
        if permutation.is_empty() || !permutation.len().is_multiple_of(moduli.len()) {
            return Err(AttackError::Inconsistent(format!(
                "permutation length {} is not a multiple of k = {}",
                permutation.len(),
                moduli.len()
            )));
        }
        Ok(EquivalentKey {
            n,
            moduli,
            basis,
            permutation,
        })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn moduli(&self) -> &[u32] {
        &self.moduli
    }

    pub fn basis(&self) -> &CrtBasis {
        &self.basis
    }

    pub fn permutation(&self) -> &PermutationVector {
        &self.permutation
    }

    pub fn block_size(&self) -> usize {
        self.moduli.len()
    }

    /// Plaintext length `L` the key was recovered for.
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }
}

/// Inverse confusion in ascending-moduli order, then the equivalent inverse
/// permutation.
pub fn equivalent_decrypt(ek: &EquivalentKey, ct: &Ciphertext) -> Result<Plaintext, AttackError> {
    let k = ek.block_size();
    if ct.header.k as usize != k {
        return Err(AttackError::HeaderMismatch(format!("header k = {}, key k = {k}", ct.header.k)));
    }
    if ct.header.len != ek.len() as u64 || ct.elements.len() * k != ek.len() {
        return Err(AttackError::HeaderMismatch(format!(
            "ciphertext holds {} elements for L = {}, key is for L = {}",
            ct.elements.len(),
            ct.header.len,
            ek.len()
        )));
    }
    let h = inverse_confusion(&ct.elements, &ek.moduli);
    let elements = ek.permutation.inverse().iter().map(|&m| h[m]).collect();
    Ok(Plaintext::new(elements))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub queries: usize,
    pub n: BigUint,
    pub n_method: NMethod,
    pub n_lower_bound: BigUint,
    pub stage1_attempts: usize,
    pub moduli: Vec<u32>,
    pub closure_rounds: usize,
    pub digit_planes: usize,
    pub stage_times: [Duration; 3],
}

impl AttackReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_key_value(&self) -> String {
        let moduli: Vec<String> = self.moduli.iter().map(u32::to_string).collect();
        let mut out = String::new();
        out.push_str(&format!("n={}\n", self.n));
        out.push_str(&format!("n_method={}\n", self.n_method.as_str()));
        out.push_str(&format!("n_lower_bound={}\n", self.n_lower_bound));
        out.push_str(&format!("k={}\n", self.moduli.len()));
        out.push_str(&format!("moduli={}\n", moduli.join(",")));
        out.push_str(&format!("queries={}\n", self.queries));
        out.push_str(&format!("stage1_attempts={}\n", self.stage1_attempts));
        out.push_str(&format!("closure_rounds={}\n", self.closure_rounds));
        out.push_str(&format!("digit_planes={}\n", self.digit_planes));
        for (i, t) in self.stage_times.iter().enumerate() {
            out.push_str(&format!("stage{}_ms={:.3}\n", i + 1, t.as_secs_f64() * 1e3));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub key: EquivalentKey,
    pub report: AttackReport,
}

/// Runs all three stages. Uses `1 + ceil(log2(len) / l)` queries when the
/// first binary plaintext is conclusive.
pub fn full_attack(
    oracle: &mut dyn EncryptionOracle,
    len: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome, AttackError> {
    let start_queries = oracle.queries();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let t0 = Instant::now();
    let stage1 = recover_n(oracle, len, None, cfg, &mut rng)?;
    let n = stage1.estimate.n.clone();
    let header_k = stage1.ciphertext.header.k as usize;

    let t1 = Instant::now();
    let recovery = if cfg.differential {
        recover_moduli_set_differential(oracle, &n, len, Some(header_k), cfg, &mut rng)?
    } else {
        recover_moduli_set(&stage1.ciphertext, &n, Some(header_k), cfg)?
    };
    let k = recovery.moduli.len();
    if k != header_k || !len.is_multiple_of(k) {
        return Err(AttackError::Inconsistent(format!(
            "recovered {k} moduli, header says k = {header_k}, L = {len}"
        )));
    }
    let moduli = recovery
        .moduli
        .iter()
        .map(|m| m.to_u32())
        .collect::<Option<Vec<u32>>>()
        .ok_or_else(|| AttackError::Inconsistent("recovered modulus exceeds 32 bits".into()))?;

    let t2 = Instant::now();
    let permutation = recover_permutation(oracle, &moduli, len, cfg)?;
    let t3 = Instant::now();

    let key = EquivalentKey::new(n.clone(), moduli.clone(), permutation)?;
    let report = AttackReport {
        queries: oracle.queries() - start_queries,
        n,
        n_method: stage1.estimate.method,
        n_lower_bound: stage1.estimate.lower_bound,
        stage1_attempts: stage1.attempts,
        moduli,
        closure_rounds: recovery.closure_rounds,
        digit_planes: digit_planes(len, cfg.element_bits),
        stage_times: [t1 - t0, t2 - t1, t3 - t2],
    };
    Ok(AttackOutcome { key, report })
}
