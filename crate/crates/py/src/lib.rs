//! Python bindings: `import pycecrt`.

use num_bigint::BigUint;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use cecrt::attack::{self, AttackConfig};
use cecrt::cipher::{self, Plaintext};
use cecrt::format;
use cecrt::keystream::ChaosParams;
use cecrt::oracle::KeyOracle;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ratio_tuple(r: num_rational::Ratio<u64>) -> (u64, u64) {
    (*r.numer(), *r.denom())
}

/// Pairwise-coprime moduli with precomputed CRT coefficients.
#[pyclass(name = "CrtBasis", module = "pycecrt", frozen)]
struct PyCrtBasis(cecrt::CrtBasis);

#[pymethods]
impl PyCrtBasis {
    #[new]
    fn new(moduli: Vec<BigUint>) -> PyResult<Self> {
        cecrt::CrtBasis::new(&moduli).map(Self).map_err(value_err)
    }

    #[getter]
    fn moduli(&self) -> Vec<BigUint> {
        self.0.moduli().to_vec()
    }

    #[getter]
    fn cofactors(&self) -> Vec<BigUint> {
        self.0.cofactors().to_vec()
    }

    #[getter]
    fn inverses(&self) -> Vec<BigUint> {
        self.0.inverses().to_vec()
    }

    #[getter]
    fn idempotents(&self) -> Vec<BigUint> {
        self.0.idempotents().to_vec()
    }

    #[getter]
    fn product(&self) -> BigUint {
        self.0.product().clone()
    }

    fn solve(&self, remainders: Vec<BigUint>) -> PyResult<BigUint> {
        self.0.solve(&remainders).map_err(value_err)
    }

    fn split(&self, x: BigUint) -> Vec<BigUint> {
        self.0.split(&x)
    }

    /// `(gcd(sum - 1, m), gcd(sum, m))` for the idempotent sum over `subset`
    /// (0-based indices).
    fn subset_gcd_identity(&self, subset: Vec<usize>) -> PyResult<(BigUint, BigUint)> {
        self.0.subset_gcd_identity(&subset).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("CrtBasis({:?})", self.0.moduli().iter().map(ToString::to_string).collect::<Vec<_>>())
    }
}

#[pyclass(name = "SecretKey", module = "pycecrt", frozen)]
struct PySecretKey(cipher::SecretKey);

#[pymethods]
impl PySecretKey {
    /// `chaos` is `(x0, y0, a1, a2, b1, b2, b3)`; defaults to the reference
    /// parameters.
    #[new]
    #[pyo3(signature = (moduli, chaos=None))]
    fn new(moduli: Vec<u32>, chaos: Option<[f64; 7]>) -> PyResult<Self> {
        let chaos = chaos.map_or(ChaosParams::REFERENCE, ChaosParams::from_array);
        cipher::SecretKey::new(moduli, chaos).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn reference() -> Self {
        Self(cipher::SecretKey::reference())
    }

    #[staticmethod]
    #[pyo3(signature = (k, bits=(9, 10), seed=0))]
    fn generate(k: usize, bits: (u32, u32), seed: u64) -> PyResult<Self> {
        cipher::keygen(k, bits, seed).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        format::parse_key(text).map(Self).map_err(value_err)
    }

    fn to_text(&self) -> String {
        format::format_key(&self.0)
    }

    #[getter]
    fn moduli(&self) -> Vec<u32> {
        self.0.moduli().to_vec()
    }

    #[getter]
    fn chaos(&self) -> [f64; 7] {
        self.0.chaos().to_array()
    }

    #[getter]
    fn product(&self) -> BigUint {
        self.0.product()
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.0.block_size()
    }

    /// Encrypts raw bytes and returns the serialized ciphertext container.
    fn encrypt<'py>(&self, py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let ct = cipher::encrypt(&self.0, &Plaintext::from_bytes(data)).map_err(value_err)?;
        let bytes = format::encode_ciphertext(&ct).map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn decrypt<'py>(&self, py: Python<'py>, container: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let ct = format::decode_ciphertext(container).map_err(value_err)?;
        let pt = cipher::decrypt(&self.0, &ct).map_err(value_err)?;
        let bytes = pt.to_bytes().ok_or_else(|| value_err("plain-elements exceed one byte"))?;
        Ok(PyBytes::new(py, &bytes))
    }

    /// Cipher-element elements for the given plain-elements, without the container.
    fn encrypt_elements(&self, elements: Vec<u32>) -> PyResult<Vec<BigUint>> {
        cipher::encrypt(&self.0, &Plaintext::new(elements))
            .map(|ct| ct.elements)
            .map_err(value_err)
    }

    #[pyo3(signature = (element_bits=8))]
    fn expansion_ratio(&self, element_bits: u32) -> (u64, u64) {
        ratio_tuple(self.0.expansion_ratio(element_bits).ratio)
    }

    fn __repr__(&self) -> String {
        format!("SecretKey(moduli={:?})", self.0.moduli())
    }
}

/// An attacker's key: `n`, the ascending moduli and the equivalent permutation.
#[pyclass(name = "EquivalentKey", module = "pycecrt", frozen)]
struct PyEquivalentKey(attack::EquivalentKey);

#[pymethods]
impl PyEquivalentKey {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        format::parse_equivalent_key(text).map(Self).map_err(value_err)
    }

    fn to_text(&self) -> String {
        format::format_equivalent_key(&self.0)
    }

    #[getter]
    fn n(&self) -> BigUint {
        self.0.n().clone()
    }

    #[getter]
    fn moduli(&self) -> Vec<u32> {
        self.0.moduli().to_vec()
    }

    #[getter]
    fn permutation(&self) -> Vec<usize> {
        self.0.permutation().forward().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn decrypt<'py>(&self, py: Python<'py>, container: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let ct = format::decode_ciphertext(container).map_err(value_err)?;
        let pt = attack::equivalent_decrypt(&self.0, &ct).map_err(value_err)?;
        let bytes = pt.to_bytes().ok_or_else(|| value_err("plain-elements exceed one byte"))?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn __repr__(&self) -> String {
        format!("EquivalentKey(n={}, moduli={:?}, len={})", self.0.n(), self.0.moduli(), self.0.len())
    }
}

/// Runs the chosen-plaintext attack against an in-process oracle for `key`.
/// Returns the equivalent key and a report dict.
#[pyfunction]
#[pyo3(signature = (key, length, seed=0, element_bits=8, density=0.5, differential=false))]
fn full_attack<'py>(
    py: Python<'py>,
    key: &PySecretKey,
    length: usize,
    seed: u64,
    element_bits: u32,
    density: f64,
    differential: bool,
) -> PyResult<(PyEquivalentKey, Bound<'py, PyDict>)> {
    let cfg = AttackConfig {
        element_bits,
        density,
        seed,
        differential,
        ..AttackConfig::default()
    };
    let mut oracle = KeyOracle::new(key.0.clone());
    let outcome = py
        .detach(|| attack::full_attack(&mut oracle, length, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let r = &outcome.report;
    let report = PyDict::new(py);
    report.set_item("n", r.n.clone())?;
    report.set_item("n_method", r.n_method.as_str())?;
    report.set_item("moduli", r.moduli.clone())?;
    report.set_item("queries", r.queries)?;
    report.set_item("stage1_attempts", r.stage1_attempts)?;
    report.set_item("closure_rounds", r.closure_rounds)?;
    report.set_item("digit_planes", r.digit_planes)?;
    let secs: Vec<f64> = r.stage_times.iter().map(|t| t.as_secs_f64()).collect();
    report.set_item("stage_seconds", secs)?;
    Ok((PyEquivalentKey(outcome.key), report))
}

/// Multiset of pairwise sums of distinct cipher-element values as
/// `[(sum, frequency), ...]`, most frequent first.
#[pyfunction]
fn sum_histogram(container: &[u8]) -> PyResult<Vec<(BigUint, u64)>> {
    let ct = format::decode_ciphertext(container).map_err(value_err)?;
    Ok(cecrt::analysis::bhat_histogram(&ct).rows())
}

#[pyfunction]
#[pyo3(signature = (k, prime_limit=cecrt::analysis::DEFAULT_PRIME_LIMIT))]
fn coprime_probability(py: Python<'_>, k: u32, prime_limit: usize) -> f64 {
    py.detach(|| cecrt::analysis::coprime_probability(k, prime_limit))
}

/// `(numerator, denominator)` of the expansion ratio for a moduli list.
#[pyfunction]
#[pyo3(signature = (moduli, element_bits=8))]
fn expansion_ratio(moduli: Vec<u32>, element_bits: u32) -> (u64, u64) {
    ratio_tuple(cipher::expansion_ratio(&moduli, element_bits).ratio)
}

#[pymodule]
fn pycecrt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCrtBasis>()?;
    m.add_class::<PySecretKey>()?;
    m.add_class::<PyEquivalentKey>()?;
    m.add_function(wrap_pyfunction!(full_attack, m)?)?;
    m.add_function(wrap_pyfunction!(sum_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(coprime_probability, m)?)?;
    m.add_function(wrap_pyfunction!(expansion_ratio, m)?)?;
    Ok(())
}
