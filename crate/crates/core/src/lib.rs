//! A reference implementation of a CRT-based joint compression-encryption
//! cipher together with a chosen-plaintext attack that recovers an
//! equivalent key from `1 + ceil(log2(L) / l)` queries.
//!
//! - [`crt`]: exact CRT bases, reconstruction and the gcd identities the
//!   attack exploits.
//! - [`keystream`]: the 2D chaotic map and the sort-derived permutation.
//! - [`cipher`]: keys, encryption and decryption.
//! - [`format`]: key, ciphertext-container and equivalent-key files.
//! - [`oracle`]: in-process and subprocess encryption oracles.
//! - [`attack`]: recovery of `n`, the moduli set and the permutation.
//! - [`analysis`]: expansion, sensitivity and coprimality measurements.

pub mod analysis;
pub mod attack;
pub mod cipher;
pub mod crt;
pub mod format;
pub mod keystream;
pub mod oracle;

pub use attack::{full_attack, AttackConfig, AttackError, AttackOutcome, EquivalentKey, SumMultiset};
pub use cipher::{decrypt, encrypt, keygen, CipherError, Ciphertext, Plaintext, SecretKey};
pub use crt::{CrtBasis, CrtError};
pub use keystream::{ChaosParams, PermutationVector};
pub use oracle::{EncryptionOracle, KeyOracle, OracleError, SubprocessOracle};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Crt(#[from] CrtError),
    #[error(transparent)]
    Keystream(#[from] keystream::KeystreamError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error(transparent)]
    Format(#[from] format::FormatError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
