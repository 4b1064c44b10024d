//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::HashSet;
use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use cecrt::analysis::coprime_probability;
use cecrt::attack::{equivalent_decrypt, full_attack, AttackConfig};
use cecrt::cipher::{self, Cipher, Plaintext, SecretKey};
use cecrt::crt::{gcd, CrtBasis};
use cecrt::format::{encode_ciphertext, format_key};
use cecrt::keystream::{iterate_chaos, ChaosParams, DEFAULT_BURN_IN};
use cecrt::oracle::KeyOracle;
use cecrt::SumMultiset;

const BIN: &str = env!("CARGO_BIN_EXE_cecrt");
const SIDE: usize = 512 * 512;
const PAPER_N: u64 = 9_041_315_183;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn big(v: u64) -> BigUint {
    BigUint::from(v)
}

fn random_bytes(len: usize, rng: &mut impl Rng) -> Plaintext {
    Plaintext::new((0..len).map(|_| rng.gen_range(0..256)).collect())
}

fn cli(args: &[&str], dir: &std::path::Path) -> Result<String, String> {
    let out = Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("cecrt {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn kv<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

fn paper_key_file() -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(dir.path().join("key.txt"), format_key(&SecretKey::reference())).map_err(|e| e.to_string())?;
    Ok(dir)
}

fn paper_key_recovery() -> Outcome {
    let key = SecretKey::reference();
    let mut oracle = KeyOracle::new(key);
    let start = Instant::now();
    let outcome = full_attack(&mut oracle, SIDE, &AttackConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let r = &outcome.report;
    ensure(r.n == big(PAPER_N), || format!("n = {}", r.n))?;
    ensure(r.moduli == [293, 311, 313, 317], || format!("moduli {:?}", r.moduli))?;
    ensure(r.queries == 4, || format!("{} queries", r.queries))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;

    let dir = paper_key_file()?;
    let text = cli(&["attack", "--key", "key.txt", "--length", &SIDE.to_string()], dir.path())?;
    ensure(kv(&text, "n") == Some("9041315183"), || "CLI n differs".into())?;
    ensure(kv(&text, "moduli") == Some("293,311,313,317"), || "CLI moduli differ".into())?;
    ensure(kv(&text, "queries") == Some("4"), || "CLI query count differs".into())?;
    Ok(format!(
        "n = {}, moduli {{293, 311, 313, 317}}, 4 queries, {:.2} s (CLI agrees)",
        r.n,
        elapsed.as_secs_f64()
    ))
}

fn end_to_end_decryption() -> Outcome {
    let key = SecretKey::reference();
    let mut oracle = KeyOracle::new(key.clone());
    let cfg = AttackConfig {
        seed: 1,
        ..AttackConfig::default()
    };
    let ek = full_attack(&mut oracle, SIDE, &cfg).map_err(|e| e.to_string())?.key;
    let cipher = Cipher::new(&key, SIDE).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatched = 0usize;
    for _ in 0..20 {
        let pt = random_bytes(SIDE, &mut rng);
        let ct = cipher.encrypt(&pt).map_err(|e| e.to_string())?;
        let back = equivalent_decrypt(&ek, &ct).map_err(|e| e.to_string())?;
        mismatched += pt.elements.iter().zip(&back.elements).filter(|(a, b)| a != b).count();
    }
    ensure(mismatched == 0, || format!("{mismatched} mismatched bytes"))?;
    Ok("20 fresh 512x512 ciphertexts, 0 mismatched bytes".into())
}

fn robustness_sweep() -> Outcome {
    const TRIALS: usize = 210;
    const LEN: usize = 6144;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut successes = 0usize;
    let mut failures = Vec::new();
    for trial in 0..TRIALS {
        let k = [2, 3, 4][trial % 3];
        let key = cipher::keygen(k, (9, 12), 1000 + trial as u64).map_err(|e| e.to_string())?;
        let cfg = AttackConfig {
            seed: trial as u64,
            ..AttackConfig::default()
        };
        let mut oracle = KeyOracle::new(key.clone());
        match full_attack(&mut oracle, LEN, &cfg) {
            Ok(outcome) => {
                let mut moduli = key.moduli().to_vec();
                moduli.sort_unstable();
                let pt = random_bytes(LEN, &mut rng);
                let ct = cipher::encrypt(&key, &pt).map_err(|e| e.to_string())?;
                let exact = outcome.key.n() == &key.product()
                    && outcome.key.moduli() == moduli.as_slice()
                    && equivalent_decrypt(&outcome.key, &ct).map_err(|e| e.to_string())? == pt;
                if !exact {
                    return Err(format!("trial {trial}: attack returned a wrong key for {:?}", key.moduli()));
                }
                successes += 1;
            }
            Err(e) => failures.push(format!("trial {trial} {:?}: {e}", key.moduli())),
        }
    }
    let rate = successes as f64 / TRIALS as f64;
    ensure(rate >= 0.99, || format!("success {rate:.3}: {}", failures.join("; ")))?;
    Ok(format!("{successes}/{TRIALS} keys recovered exactly (k in 2..=4, 9-12 bit moduli, L = {LEN})"))
}

/// `t` pairwise-coprime moduli in `2..hi`, rejection-sampled.
fn random_basis(rng: &mut impl Rng, t: usize, hi: u64) -> Vec<u64> {
    let mut moduli: Vec<u64> = Vec::with_capacity(t);
    while moduli.len() < t {
        let m = rng.gen_range(2..hi);
        if moduli.iter().all(|&o| num_integer::gcd(o, m) == 1) {
            moduli.push(m);
        }
    }
    moduli
}

fn check_exhaustive(moduli: &[u64]) -> Result<(), String> {
    let basis = CrtBasis::from_u64(moduli).map_err(|e| e.to_string())?;
    let m: u64 = moduli.iter().product();
    let mut residues = vec![0u64; moduli.len()];
    for x in 0..m {
        for (r, &mi) in residues.iter_mut().zip(moduli) {
            *r = x % mi;
        }
        let got = basis.solve_small(&residues).map_err(|e| e.to_string())?;
        if got != big(x) {
            return Err(format!("basis {moduli:?}: residues of {x} solve to {got}"));
        }
    }
    Ok(())
}

/// Every ascending pairwise-coprime tuple with product at most `bound`.
fn all_bases(bound: u64) -> Vec<Vec<u64>> {
    fn extend(prefix: &mut Vec<u64>, product: u64, bound: u64, out: &mut Vec<Vec<u64>>) {
        let start = prefix.last().map_or(2, |&l| l + 1);
        for m in start..=bound / product {
            if prefix.iter().all(|&p| num_integer::gcd(p, m) == 1) {
                prefix.push(m);
                out.push(prefix.clone());
                extend(prefix, product * m, bound, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), 1, bound, &mut out);
    out
}

fn crt_property_suite() -> Outcome {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // Property 1, both identities, and Property 2
    for _ in 0..N {
        let t = rng.gen_range(1..=8);
        let moduli = random_basis(&mut rng, t, 1 << 16);
        let basis = CrtBasis::from_u64(&moduli).map_err(|e| e.to_string())?;
        let m = basis.product().clone();
        let sum_all: BigUint = basis.idempotents().iter().sum();
        ensure(&sum_all % &m == BigUint::one() % &m, || format!("Property 2 fails for {moduli:?}"))?;

        let size = rng.gen_range(1..=t);
        let mut idx: Vec<usize> = (0..t).collect();
        idx.shuffle(&mut rng);
        let subset = &idx[..size];
        let sum: BigUint = subset.iter().map(|&i| &basis.idempotents()[i]).sum();
        let prod_s: BigUint = subset.iter().map(|&i| big(moduli[i])).product();
        let complement = &m / &prod_s;
        ensure(gcd(&(&sum - 1u32), &m) == prod_s, || format!("Property 1 (minus one) fails: {moduli:?} {subset:?}"))?;
        ensure(gcd(&sum, &complement) == complement, || format!("Property 1 (complement) fails: {moduli:?} {subset:?}"))?;
        let (first, second) = basis.subset_gcd_identity(subset).map_err(|e| e.to_string())?;
        ensure(first == prod_s && (&second % &complement).is_zero(), || {
            format!("subset_gcd_identity disagrees for {moduli:?} {subset:?}")
        })?;
    }

    // Property 3: split is injective on [0, m) for m <= 10^4
    for _ in 0..N {
        let t = rng.gen_range(1..=4);
        let moduli = loop {
            let cand = random_basis(&mut rng, t, 100);
            if cand.iter().product::<u64>() <= 10_000 {
                break cand;
            }
        };
        let basis = CrtBasis::from_u64(&moduli).map_err(|e| e.to_string())?;
        let m: u64 = moduli.iter().product();
        let images: HashSet<Vec<BigUint>> = (0..m).map(|x| basis.split(&big(x))).collect();
        ensure(images.len() as u64 == m, || format!("split not injective for {moduli:?}"))?;
    }

    // Fact 1 and Proposition 1
    for _ in 0..N {
        let a = big(rng.gen_range(0..1u64 << 50));
        let (b, c) = loop {
            let (b, c) = (rng.gen_range(1..=1_000_000u64), rng.gen_range(1..=1_000_000u64));
            if num_integer::gcd(b, c) == 1 {
                break (big(b), big(c));
            }
        };
        ensure(gcd(&a, &(&b * &c)) == gcd(&a, &b) * gcd(&a, &c), || format!("Fact 1 fails: {a} {b} {c}"))?;

        let b = big(rng.gen_range(1..1u64 << 40));
        let a = &b * rng.gen_range(1..1u64 << 20);
        ensure(gcd(&(&a - 1u32), &b).is_one(), || format!("Proposition 1 fails: a = {a}, b = {b}"))?;
    }

    // solve against a scan of [0, m): every small basis in two orders, then random ones up to 10^5
    let small = all_bases(1_000);
    for moduli in &small {
        check_exhaustive(moduli)?;
        let mut rev = moduli.clone();
        rev.reverse();
        check_exhaustive(&rev)?;
    }
    let mut large = 0;
    while large < 100 {
        let t = rng.gen_range(2..=5);
        let moduli = random_basis(&mut rng, t, 400);
        let m: u64 = moduli.iter().product();
        if (1_000..=100_000).contains(&m) {
            check_exhaustive(&moduli)?;
            large += 1;
        }
    }
    Ok(format!(
        "{N} instances each of Properties 1-3, Fact 1, Proposition 1; solve matches scan on {} bases with m <= 1000 and {large} with m <= 1e5",
        small.len() * 2
    ))
}

fn expansion_ratio() -> Outcome {
    let dir = paper_key_file()?;
    let text = cli(&["analyze", "--expansion", "key.txt"], dir.path())?;
    ensure(kv(&text, "expansion_ratio") == Some("9/8"), || format!("CLI printed {text:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let k = rng.gen_range(2..=10);
        let key = cipher::keygen(k, (9, 16), 500 + i).map_err(|e| e.to_string())?;
        let r = key.expansion_ratio(8).ratio;
        let bound = Ratio::new(7 * k as u64 + 1, 8 * k as u64);
        ensure(r > bound, || format!("key {:?}: ratio {r} <= {bound}", key.moduli()))?;
    }
    Ok("paper key 9/8 via CLI; 100 random keys exceed (7 + 1/k)/8".into())
}

fn sensitivity_defect() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..100 {
        let k = rng.gen_range(2..=6);
        let key = cipher::keygen(k, (9, 12), 700 + i).map_err(|e| e.to_string())?;
        let n = key.product();
        let len = k * rng.gen_range(1..=256);
        let d: u32 = rng.gen_range(1..=32);
        let pt = Plaintext::new((0..len).map(|_| rng.gen_range(0..256 - d)).collect());
        let shifted = Plaintext::new(pt.elements.iter().map(|&p| p + d).collect());
        let cipher = Cipher::new(&key, len).map_err(|e| e.to_string())?;
        let a = cipher.encrypt(&pt).map_err(|e| e.to_string())?;
        let b = cipher.encrypt(&shifted).map_err(|e| e.to_string())?;
        let expected = big(d as u64) % &n;
        for (j, (ca, cb)) in a.elements.iter().zip(&b.elements).enumerate() {
            let diff = (cb + &n - ca) % &n;
            ensure(diff == expected, || format!("key {:?}, d = {d}, block {j}: difference {diff}", key.moduli()))?;
        }

        let c: u32 = rng.gen_range(0..256);
        let constant = cipher.encrypt(&Plaintext::new(vec![c; len])).map_err(|e| e.to_string())?;
        ensure(constant.elements.iter().all(|e| *e == big(c as u64)), || format!("constant {c} not preserved"))?;
        let zero = cipher.encrypt(&Plaintext::new(vec![0; len])).map_err(|e| e.to_string())?;
        ensure(zero.elements.iter().all(Zero::is_zero), || "zero plaintext not preserved".into())?;
    }
    Ok("100 (key, plaintext, d) triples shift every block by d; constant and zero plaintexts preserved".into())
}

fn coprimality() -> Outcome {
    let limit = 1_000_000;
    let a3 = coprime_probability(3, limit);
    let a8 = coprime_probability(8, limit);
    let a10 = coprime_probability(10, limit);
    ensure((a3 - 0.286).abs() <= 0.002, || format!("A_3 = {a3}"))?;
    ensure((0.0007..=0.0015).contains(&a8), || format!("A_8 = {a8}"))?;
    ensure(a10 < 1e-4, || format!("A_10 = {a10}"))?;
    Ok(format!("A_3 = {a3:.6}, A_8 = {a8:.3e}, A_10 = {a10:.3e}"))
}

fn histogram_mode() -> Outcome {
    let sets: [&[u32]; 4] = [
        &[311, 313, 317, 293],
        &[419, 323, 649, 501, 302, 449],
        &[573, 593, 443, 577, 341, 428, 293, 541],
        &[323, 273, 263, 349, 625, 409, 436, 451, 389, 479],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut summary = Vec::new();
    for moduli in sets {
        let k = moduli.len();
        let key = SecretKey::new(moduli.to_vec(), ChaosParams::REFERENCE).map_err(|e| e.to_string())?;
        let len = SIDE - SIDE % k;
        let pt = Plaintext::new((0..len).map(|_| rng.gen_range(0..2)).collect());
        let ct = cipher::encrypt(&key, &pt).map_err(|e| e.to_string())?;
        let hist = SumMultiset::from_ciphertext(&ct);
        let target = key.product() + 1u32;
        let modes = hist.modes();
        ensure(modes == [target.clone()], || format!("k = {k}: modes {modes:?}, expected {target}"))?;
        summary.push(format!("k={k}: {}", hist.frequency(&target)));
    }
    Ok(format!("mode is n+1 for every set (mode frequency {})", summary.join(", ")))
}

fn determinism() -> Outcome {
    // digest from an independent binary64 implementation of the same pipeline
    const GOLDEN: &str = "59521a57bf99b78cb92760cfe1faed2c8df9eafc80e65308b25fd933fabfbedd";

    let dir = paper_key_file()?;
    let pt: Vec<u8> = (0..SIDE).map(|i| ((i * 131 + 7 * (i >> 9)) % 256) as u8).collect();
    fs::write(dir.path().join("pt.bin"), &pt).map_err(|e| e.to_string())?;
    cli(&["encrypt", "--key", "key.txt", "-i", "pt.bin", "-o", "a.bin"], dir.path())?;
    cli(&["encrypt", "--key", "key.txt", "-i", "pt.bin", "-o", "b.bin"], dir.path())?;
    let a = fs::read(dir.path().join("a.bin")).map_err(|e| e.to_string())?;
    let b = fs::read(dir.path().join("b.bin")).map_err(|e| e.to_string())?;
    ensure(a == b, || "two encryptions differ".into())?;

    let in_process = encode_ciphertext(
        &cipher::encrypt(&SecretKey::reference(), &Plaintext::from_bytes(&pt)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(in_process == a, || "CLI and library output differ".into())?;

    let digest: String = Sha256::digest(&a).iter().map(|b| format!("{b:02x}")).collect();
    ensure(digest == GOLDEN, || format!("digest {digest}"))?;

    let (xs, ys) = iterate_chaos(&ChaosParams::REFERENCE, 1, DEFAULT_BURN_IN).map_err(|e| e.to_string())?;
    ensure(
        xs[0].to_bits() == 0x3FC2_0BA3_92F7_0D79 && ys[0].to_bits() == 0xBFD4_7CE6_F287_31EA,
        || format!("first kept state {:?}", (xs[0], ys[0])),
    )?;

    let short = Plaintext::new((0..16).map(|i| (i * 29 + 3) % 256).collect());
    let ct = cipher::encrypt(&SecretKey::reference(), &short).map_err(|e| e.to_string())?;
    let golden: Vec<BigUint> = [4_266_495_804u64, 7_605_553_888, 8_553_325_853, 4_735_459_351]
        .into_iter()
        .map(big)
        .collect();
    ensure(ct.elements == golden, || format!("L = 16 ciphertext {:?}", ct.elements))?;
    Ok(format!("repeat encryptions bit-identical, sha256 {}..., golden orbit and L = 16 ciphertext match", &digest[..16]))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("paper key recovery", paper_key_recovery),
        ("end-to-end decryption", end_to_end_decryption),
        ("attack robustness sweep", robustness_sweep),
        ("CRT property suite", crt_property_suite),
        ("expansion ratio", expansion_ratio),
        ("sensitivity defect", sensitivity_defect),
        ("coprimality probability", coprimality),
        ("histogram mode", histogram_mode),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
