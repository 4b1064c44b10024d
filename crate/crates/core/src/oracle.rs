//! Encryption oracles for the chosen-plaintext attack.
//!
//! An oracle encrypts attacker-chosen plaintexts under a fixed key the
//! attacker never sees. [`KeyOracle`] binds to the in-process cipher;
//! [`SubprocessOracle`] drives an external program that reads raw plaintext
//! bytes on stdin and writes a ciphertext container on stdout.

use std::io::Write;
use std::process::{Command, Stdio};

use thiserror::Error;

use crate::cipher::{Cipher, CipherError, Ciphertext, Plaintext, SecretKey};
use crate::format::{decode_ciphertext, FormatError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle i/o failed: {0}")]
    Io(String),
    #[error("oracle exited with {status}: {stderr}")]
    Failed { status: String, stderr: String },
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
    #[error("oracle rejected the plaintext: {0}")]
    Cipher(#[from] CipherError),
    #[error("oracle output is not a ciphertext container: {0}")]
    Format(#[from] FormatError),
}

pub trait EncryptionOracle {
    /// Encrypts one chosen plaintext. Every call counts as one query.
    fn query(&mut self, plaintext: &Plaintext) -> Result<Ciphertext, OracleError>;

    /// Queries issued so far.
    fn queries(&self) -> usize;
}

/// In-process oracle over a [`SecretKey`].
#[derive(Debug, Clone)]
pub struct KeyOracle {
    key: SecretKey,
    // the permutation only depends on (key, L), so reuse it across queries
    cached: Option<Cipher>,
    queries: usize,
}

impl KeyOracle {
    pub fn new(key: SecretKey) -> Self {
        KeyOracle {
            key,
            cached: None,
            queries: 0,
        }
    }
}

impl EncryptionOracle for KeyOracle {
    fn query(&mut self, plaintext: &Plaintext) -> Result<Ciphertext, OracleError> {
        self.queries += 1;
        let fresh = match &self.cached {
            Some(c) => c.permutation().len() != plaintext.len(),
            None => true,
        };
        if fresh {
            if !plaintext.len().is_multiple_of(self.key.block_size()) {
                return Err(CipherError::LengthNotMultiple {
                    len: plaintext.len(),
                    k: self.key.block_size(),
                }
                .into());
            }
            self.cached = Some(Cipher::new(&self.key, plaintext.len())?);
        }
        let cipher = self.cached.as_ref().expect("cipher prepared above");
        Ok(cipher.encrypt(plaintext)?)
    }

    fn queries(&self) -> usize {
        self.queries
    }
}

/// Oracle backed by an external command.
#[derive(Debug, Clone)]
pub struct SubprocessOracle {
    program: String,
    args: Vec<String>,
    queries: usize,
}

impl SubprocessOracle {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        SubprocessOracle {
            program: program.into(),
            args,
            queries: 0,
        }
    }

    /// Runs `command` through `sh -c`.
    pub fn shell(command: &str) -> Self {
        Self::new("sh", vec!["-c".into(), command.into()])
    }
}

impl EncryptionOracle for SubprocessOracle {
    fn query(&mut self, plaintext: &Plaintext) -> Result<Ciphertext, OracleError> {
        self.queries += 1;
        let input = plaintext
            .to_bytes()
            .ok_or_else(|| OracleError::Protocol("plaintext elements must fit in one byte".into()))?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| OracleError::Io(format!("cannot spawn `{}`: {e}", self.program)))?;

        let mut stdin = child.stdin.take().expect("stdin is piped");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let output = child.wait_with_output().map_err(|e| OracleError::Io(e.to_string()))?;
        let written = writer.join().map_err(|_| OracleError::Io("stdin writer panicked".into()))?;

        if !output.status.success() {
            return Err(OracleError::Failed {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        // a broken pipe after a successful exit means the oracle ignored input
        written.map_err(|e| OracleError::Io(format!("writing plaintext: {e}")))?;
        Ok(decode_ciphertext(&output.stdout)?)
    }

    fn queries(&self) -> usize {
        self.queries
    }
}

/// Issues a query and checks the reply is structurally consistent with the
/// plaintext that was sent.
pub fn checked_query(
    oracle: &mut dyn EncryptionOracle,
    plaintext: &Plaintext,
) -> Result<Ciphertext, OracleError> {
    let ct = oracle.query(plaintext)?;
    let len = plaintext.len() as u64;
    if ct.header.len != len {
        return Err(OracleError::Protocol(format!(
            "sent {len} plain-elements, header reports {}",
            ct.header.len
        )));
    }
    let k = ct.header.k as u64;
    if k == 0 || !len.is_multiple_of(k) || ct.elements.len() as u64 != len / k {
        return Err(OracleError::Protocol(format!(
            "{} cipher-elements for L = {len}, k = {k}",
            ct.elements.len()
        )));
    }
    Ok(ct)
}
