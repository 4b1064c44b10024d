//! On-disk formats: the text key file, the binary ciphertext container and
//! the text equivalent-key file.
//!
//! Container layout (all integers big-endian):
//!
//! ```text
//! "CECR" | 0x01 | L: u64 | k: u16 | width: u8 | L/k elements of `width` bytes
//! ```

use num_bigint::BigUint;
use thiserror::Error;

use crate::attack::{AttackError, EquivalentKey};
use crate::cipher::{CipherError, Ciphertext, CiphertextHeader, SecretKey};
use crate::keystream::{ChaosParams, PermutationVector};

pub const MAGIC: &[u8; 4] = b"CECR";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 8 + 2 + 1;
const INDICES_PER_LINE: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("bad magic, not a ciphertext container")]
    BadMagic,
    #[error("unsupported container version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("container truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid container header: {0}")]
    BadHeader(String),
    #[error("cipher-element {index} does not fit in {width} bytes")]
    ElementTooWide { index: usize, width: u8 },
    #[error(transparent)]
    Key(#[from] CipherError),
    #[error("invalid equivalent key: {0}")]
    EquivalentKey(String),
}

/// Yields `(1-based line number, content)` for non-empty lines with comments removed.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, FormatError> {
    tok.parse().map_err(|_| FormatError::Parse {
        line,
        msg: format!("invalid {what} `{tok}`"),
    })
}

pub fn format_key(key: &SecretKey) -> String {
    let mut out = String::from("# k n_1 .. n_k\n");
    out.push_str(&key.block_size().to_string());
    for m in key.moduli() {
        out.push(' ');
        out.push_str(&m.to_string());
    }
    out.push_str("\n# x0 y0 a1 a2 b1 b2 b3\n");
    let chaos: Vec<String> = key.chaos().to_array().iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&chaos.join(" "));
    out.push('\n');
    out
}

pub fn parse_key(text: &str) -> Result<SecretKey, FormatError> {
    let (moduli, chaos) = parse_key_fields(text)?;
    Ok(SecretKey::new(moduli, chaos)?)
}

/// Parses a key file, allowing moduli down to `min` (toy keys).
pub fn parse_key_with_min(text: &str, min: u32) -> Result<SecretKey, FormatError> {
    let (moduli, chaos) = parse_key_fields(text)?;
    Ok(SecretKey::with_min_modulus(moduli, chaos, min)?)
}

fn parse_key_fields(text: &str) -> Result<(Vec<u32>, ChaosParams), FormatError> {
    let mut lines = content_lines(text);
    let (ln, first) = lines.next().ok_or(FormatError::Missing("moduli line"))?;
    let mut toks = first.split_whitespace();
    let k: usize = parse_num(toks.next().expect("line is non-empty"), ln, "block size")?;
    let moduli = toks
        .map(|t| parse_num::<u32>(t, ln, "modulus"))
        .collect::<Result<Vec<_>, _>>()?;
    if moduli.len() != k {
        return Err(FormatError::Parse {
            line: ln,
            msg: format!("block size {k} but {} moduli", moduli.len()),
        });
    }

    let (ln, second) = lines.next().ok_or(FormatError::Missing("chaos parameter line"))?;
    let values = second
        .split_whitespace()
        .map(|t| parse_num::<f64>(t, ln, "chaos parameter"))
        .collect::<Result<Vec<_>, _>>()?;
    let values: [f64; 7] = values.try_into().map_err(|v: Vec<f64>| FormatError::Parse {
        line: ln,
        msg: format!("expected 7 chaos parameters, got {}", v.len()),
    })?;
    if let Some((ln, _)) = lines.next() {
        return Err(FormatError::Parse {
            line: ln,
            msg: "unexpected content after chaos parameters".into(),
        });
    }
    Ok((moduli, ChaosParams::from_array(values)))
}

pub fn encode_ciphertext(ct: &Ciphertext) -> Result<Vec<u8>, FormatError> {
    let width = ct.header.width_bytes;
    if width == 0 {
        return Err(FormatError::BadHeader("zero element width".into()));
    }
    let w = width as usize;
    let mut out = Vec::with_capacity(HEADER_LEN + ct.elements.len() * w);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&ct.header.len.to_be_bytes());
    out.extend_from_slice(&ct.header.k.to_be_bytes());
    out.push(width);
    for (index, c) in ct.elements.iter().enumerate() {
        let bytes = c.to_bytes_be();
        // to_bytes_be gives [0] for zero
        let bytes = if c.bits() == 0 { &[][..] } else { &bytes[..] };
        if bytes.len() > w {
            return Err(FormatError::ElementTooWide { index, width });
        }
        out.extend(std::iter::repeat_n(0u8, w - bytes.len()));
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

pub fn decode_ciphertext(data: &[u8]) -> Result<Ciphertext, FormatError> {
    if data.len() < HEADER_LEN {
        if data.len() >= 4 && &data[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        return Err(FormatError::Truncated {
            need: HEADER_LEN,
            have: data.len(),
        });
    }
    if &data[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if data[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(data[4]));
    }
    let len = u64::from_be_bytes(data[5..13].try_into().expect("8 bytes"));
    let k = u16::from_be_bytes(data[13..15].try_into().expect("2 bytes"));
    let width = data[15];
    if k == 0 {
        return Err(FormatError::BadHeader("k = 0".into()));
    }
    if width == 0 {
        return Err(FormatError::BadHeader("zero element width".into()));
    }
    if len % k as u64 != 0 {
        return Err(FormatError::BadHeader(format!("L = {len} is not a multiple of k = {k}")));
    }
    let count = len / k as u64;
    let body = &data[HEADER_LEN..];
    let need = count
        .checked_mul(width as u64)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| FormatError::BadHeader("element count overflows".into()))?;
    if body.len() < need {
        return Err(FormatError::Truncated {
            need: HEADER_LEN + need,
            have: data.len(),
        });
    }
    if body.len() > need {
        return Err(FormatError::TrailingBytes(body.len() - need));
    }
    let elements = body
        .chunks_exact(width as usize)
        .map(BigUint::from_bytes_be)
        .collect();
    Ok(Ciphertext {
        header: CiphertextHeader {
            len,
            k,
            width_bytes: width,
        },
        elements,
    })
}

/// `n`, the ascending moduli, `L`, then the equivalent inverse permutation
/// as 0-based indices, 16 per line.
pub fn format_equivalent_key(ek: &EquivalentKey) -> String {
    let mut out = format!("{}\n", ek.n());
    let moduli: Vec<String> = ek.moduli().iter().map(u32::to_string).collect();
    out.push_str(&moduli.join(" "));
    out.push('\n');
    out.push_str(&format!("{}\n", ek.len()));
    for chunk in ek.permutation().inverse().chunks(INDICES_PER_LINE) {
        let line: Vec<String> = chunk.iter().map(usize::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_equivalent_key(text: &str) -> Result<EquivalentKey, FormatError> {
    let mut lines = content_lines(text);
    let (ln, first) = lines.next().ok_or(FormatError::Missing("modulus product line"))?;
    let n: BigUint = parse_num(first, ln, "modulus product")?;
    let (ln, second) = lines.next().ok_or(FormatError::Missing("moduli line"))?;
    let moduli = second
        .split_whitespace()
        .map(|t| parse_num::<u32>(t, ln, "modulus"))
        .collect::<Result<Vec<_>, _>>()?;
    let (ln, third) = lines.next().ok_or(FormatError::Missing("length line"))?;
    let len: usize = parse_num(third, ln, "length")?;
    let mut inverse = Vec::with_capacity(len);
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            inverse.push(parse_num::<usize>(tok, ln, "index")?);
        }
    }
    if inverse.len() != len {
        return Err(FormatError::BadHeader(format!(
            "expected {len} permutation indices, got {}",
            inverse.len()
        )));
    }
    let permutation = PermutationVector::from_inverse(inverse)
        .map_err(|_| FormatError::EquivalentKey(AttackError::NotBijective.to_string()))?;
    EquivalentKey::new(n, moduli, permutation).map_err(|e| FormatError::EquivalentKey(e.to_string()))
}
