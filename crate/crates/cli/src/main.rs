use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use num_bigint::BigUint;

use cecrt::analysis::{bhat_histogram, coprime_probability, defect_report, DEFAULT_PRIME_LIMIT};
use cecrt::attack::{equivalent_decrypt, full_attack, AttackConfig, AttackError};
use cecrt::cipher::{self, Plaintext};
use cecrt::format::{
    decode_ciphertext, encode_ciphertext, format_equivalent_key, format_key, parse_equivalent_key, parse_key,
};
use cecrt::oracle::{EncryptionOracle, KeyOracle, SubprocessOracle};
use cecrt::Error;
use num_traits::One;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_ATTACK: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "cecrt", version, about = "CRT cipher workbench: encrypt, decrypt, attack and analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random key with pairwise-coprime moduli
    Keygen(KeygenArgs),
    /// Encrypt raw bytes into a ciphertext container
    Encrypt(CryptArgs),
    /// Decrypt a ciphertext container back to raw bytes
    Decrypt(DecryptArgs),
    /// Recover an equivalent key with chosen plaintexts
    Attack(AttackArgs),
    /// Defect measurements and histogram export
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct KeygenArgs {
    /// Block size (number of moduli)
    #[arg(short)]
    k: usize,
    /// Modulus bit lengths, inclusive
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [9, 10])]
    bits: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long = "out", default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CryptArgs {
    #[arg(long)]
    key: PathBuf,
    /// Input file, `-` for stdin
    #[arg(short = 'i', long = "input", default_value = "-")]
    input: PathBuf,
    /// Output file, `-` for stdout
    #[arg(short = 'o', long = "out", default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("decrypt_key").required(true).args(["key", "equiv_key"])))]
struct DecryptArgs {
    #[arg(long)]
    key: Option<PathBuf>,
    /// Decrypt with a recovered equivalent key instead
    #[arg(long)]
    equiv_key: Option<PathBuf>,
    #[arg(short = 'i', long = "input", default_value = "-")]
    input: PathBuf,
    #[arg(short = 'o', long = "out", default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("oracle").required(true).args(["key", "oracle_cmd"])))]
struct AttackArgs {
    /// In-process oracle bound to this key file
    #[arg(long)]
    key: Option<PathBuf>,
    /// External oracle: plaintext bytes on stdin, ciphertext container on stdout
    #[arg(long)]
    oracle_cmd: Option<String>,
    /// Plaintext length L
    #[arg(long)]
    length: usize,
    /// Plain-element size l
    #[arg(long, default_value_t = 8)]
    element_bits: u32,
    /// Fraction of ones in the binary chosen plaintext
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    retries: usize,
    /// Recover the moduli from a plaintext pair differing by a binary text
    #[arg(long)]
    differential: bool,
    /// Where to write the equivalent key
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
    /// Where to write the key=value report
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Export the pairwise-sum histogram of a ciphertext as CSV
    #[arg(long, value_name = "CIPHERTEXT")]
    bhat: Option<PathBuf>,
    /// Probability that K random integers are pairwise coprime
    #[arg(long, value_name = "K")]
    ak: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_PRIME_LIMIT)]
    prime_limit: usize,
    /// Expansion ratio of a key
    #[arg(long, value_name = "KEY")]
    expansion: Option<PathBuf>,
    /// Full defect report for a key on a random plaintext
    #[arg(long, value_name = "KEY")]
    defects: Option<PathBuf>,
    /// Plaintext length for --defects
    #[arg(long, default_value_t = 4096)]
    length: usize,
    #[arg(long, default_value_t = 8)]
    element_bits: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file for --bhat, `-` for stdout
    #[arg(short = 'o', long = "out", default_value = "-")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Oracle(_) | Error::Attack(AttackError::Oracle(_)) => EXIT_ORACLE,
            Error::Attack(
                AttackError::AmbiguousMode(_)
                | AttackError::ValidationFailed { .. }
                | AttackError::InsufficientInformation(_)
                | AttackError::NotBijective
                | AttackError::Inconsistent(_),
            ) => EXIT_ATTACK,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn fail<E: Into<Error>>(e: E) -> Failure {
    Failure::from(e.into())
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    if path == Path::new("-") {
        io::stdin().read_to_end(&mut buf).map_err(fail)?;
    } else {
        buf = fs::read(path).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })?;
    }
    Ok(buf)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    String::from_utf8(read_input(path)?).map_err(|_| Failure {
        code: EXIT_DATA,
        message: format!("{} is not UTF-8", path.display()),
    })
}

fn write_output(path: &Path, data: &[u8]) -> Result<(), Failure> {
    if path == Path::new("-") {
        let mut out = io::stdout().lock();
        match out.write_all(data).and_then(|_| out.flush()) {
            // a closed pipe (e.g. `| head`) is not an error
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            r => r.map_err(fail),
        }
    } else {
        fs::write(path, data).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })
    }
}

fn keygen(args: KeygenArgs) -> Result<(), Failure> {
    let key = cipher::keygen(args.k, (args.bits[0], args.bits[1]), args.seed).map_err(fail)?;
    write_output(&args.out, format_key(&key).as_bytes())
}

fn encrypt(args: CryptArgs) -> Result<(), Failure> {
    let key = parse_key(&read_text(&args.key)?).map_err(fail)?;
    let plaintext = Plaintext::from_bytes(&read_input(&args.input)?);
    let ct = cipher::encrypt(&key, &plaintext).map_err(fail)?;
    write_output(&args.out, &encode_ciphertext(&ct).map_err(fail)?)
}

fn decrypt(args: DecryptArgs) -> Result<(), Failure> {
    let ct = decode_ciphertext(&read_input(&args.input)?).map_err(fail)?;
    let (plaintext, n) = match (&args.key, &args.equiv_key) {
        (Some(path), _) => {
            let key = parse_key(&read_text(path)?).map_err(fail)?;
            (cipher::decrypt(&key, &ct).map_err(fail)?, key.product())
        }
        (None, Some(path)) => {
            let ek = parse_equivalent_key(&read_text(path)?).map_err(fail)?;
            (equivalent_decrypt(&ek, &ct).map_err(fail)?, ek.n().clone())
        }
        (None, None) => unreachable!("clap enforces one key source"),
    };
    let oversized = ct.elements.iter().filter(|c| **c >= n).count();
    if oversized > 0 {
        eprintln!("warning: {oversized} cipher-elements are not below n = {n}; reduced modulo the moduli");
    }
    let bytes = plaintext.to_bytes().ok_or_else(|| Failure {
        code: EXIT_DATA,
        message: "decrypted elements do not fit in bytes".into(),
    })?;
    write_output(&args.out, &bytes)
}

fn attack(args: AttackArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&args.density) {
        return Err(usage(format!("--density {} is not in [0, 1]", args.density)));
    }
    let mut oracle: Box<dyn EncryptionOracle> = match (&args.key, &args.oracle_cmd) {
        (Some(path), None) => Box::new(KeyOracle::new(parse_key(&read_text(path)?).map_err(fail)?)),
        (None, Some(cmd)) => Box::new(SubprocessOracle::shell(cmd)),
        _ => unreachable!("clap enforces exactly one oracle"),
    };
    let cfg = AttackConfig {
        element_bits: args.element_bits,
        density: args.density,
        seed: args.seed,
        retries: args.retries,
        differential: args.differential,
        ..AttackConfig::default()
    };
    let outcome = full_attack(oracle.as_mut(), args.length, &cfg).map_err(fail)?;
    let report = &outcome.report;
    let total: f64 = report.stage_times.iter().map(|t| t.as_secs_f64()).sum();

    let mut summary = String::new();
    summary.push_str(&format!("modulus product n: {}", report.n));
    if report.n_method == cecrt::attack::NMethod::MaxPlusOne {
        summary.push_str(" (LOW-CONFIDENCE: max(C)+1 confirmed by factors)");
    }
    summary.push('\n');
    let moduli: Vec<String> = report.moduli.iter().map(u32::to_string).collect();
    summary.push_str(&format!("moduli (ascending): {{{}}}\n", moduli.join(", ")));
    summary.push_str(&format!(
        "oracle queries: {} ({} for n and moduli, {} digit planes)\n",
        report.queries,
        report.queries - report.digit_planes,
        report.digit_planes
    ));
    summary.push_str(&format!("elapsed: {:.3} s\n", total));
    let kv = report.to_key_value();
    print!("{summary}\n{kv}");

    if let Some(path) = &args.out {
        write_output(path, format_equivalent_key(&outcome.key).as_bytes())?;
    }
    if let Some(path) = &args.report {
        write_output(path, kv.as_bytes())?;
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    if args.bhat.is_none() && args.ak.is_none() && args.expansion.is_none() && args.defects.is_none() {
        return Err(usage("analyze needs at least one of --bhat, --ak, --expansion, --defects"));
    }
    if let Some(path) = &args.bhat {
        let ct = decode_ciphertext(&read_input(path)?).map_err(fail)?;
        let hist = bhat_histogram(&ct);
        write_output(&args.out, hist.to_csv().as_bytes())?;
        if let [mode] = hist.modes().as_slice() {
            eprintln!("mode {mode} (n = {} if the plaintext was binary)", mode - BigUint::one());
        }
    }
    if let Some(k) = args.ak {
        if k < 2 || args.prime_limit < 2 {
            return Err(usage("--ak needs k >= 2 and --prime-limit >= 2"));
        }
        println!("k={k}");
        println!("prime_limit={}", args.prime_limit);
        println!("a_k={}", coprime_probability(k, args.prime_limit));
    }
    if let Some(path) = &args.expansion {
        let key = parse_key(&read_text(path)?).map_err(fail)?;
        let r = key.expansion_ratio(args.element_bits);
        println!("expansion_ratio={}", r.ratio);
        println!("expansion_lower_bound={}", r.lower_bound);
        println!("element_ratio={}", r.element_ratio);
    }
    if let Some(path) = &args.defects {
        use rand::{Rng, SeedableRng};
        let key = parse_key(&read_text(path)?).map_err(fail)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
        let pt = Plaintext::new((0..args.length).map(|_| rng.gen_range(0..=248)).collect());
        let report = defect_report(&key, &pt, &[1, 7], args.element_bits, args.prime_limit).map_err(fail)?;
        println!("{report}\n");
        print!("{}", report.to_key_value());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Keygen(a) => keygen(a),
        Command::Encrypt(a) => encrypt(a),
        Command::Decrypt(a) => decrypt(a),
        Command::Attack(a) => attack(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
