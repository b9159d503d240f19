//! Operator command line.
//!
//! Exit codes: 0 success (classify: the tier), 1 verification failure,
//! 64 usage or input error, 65 watermark integrity failure, 66 insufficient
//! capacity, 74 I/O error, 78 configuration error.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use gatekeeper_core::auditlog::{verify_jsonl, SigningKey};
use gatekeeper_core::egress::ControlledCorpus;
use gatekeeper_core::seqio::{parse_fasta, write_fasta, CodingSequence, DEFAULT_SCREENING_K};
use gatekeeper_core::taxonomy::{classify, DatasetDescriptor};
use gatekeeper_core::time::Timestamp;
use gatekeeper_core::watermark::honeytoken::{generate_honeytoken, sha256, CodonUsage, DecoyRequest};
use gatekeeper_core::watermark::{embed, extract, extract_any_length, Bits, Namespace, WatermarkError, WatermarkKey, WatermarkPayload};
use rand::rngs::{OsRng, StdRng};
use rand::{RngCore, SeedableRng};

use crate::config::{config_path, GatewayConfig};
use crate::files::{write_atomic, write_corpus, write_honeytoken_rows};
use crate::keys::{self, read_input};
use crate::service::{Gateway, SystemClock};

pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_CRC: u8 = 65;
pub const EXIT_CAPACITY: u8 = 66;
pub const EXIT_IO: u8 = 74;
pub const EXIT_CONFIG: u8 = 78;

#[derive(Parser)]
#[command(name = "gatekeeper", version, about = "Tiered pathogen-data gateway and operator tools")]
pub struct Cli {
    /// Gateway config file; overrides GATEKEEPER_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Classify a dataset descriptor (JSON); the exit code is the tier.
    Classify { descriptor: PathBuf },
    #[command(subcommand)]
    Watermark(WatermarkCmd),
    #[command(subcommand)]
    Audit(AuditCmd),
    #[command(subcommand)]
    Corpus(CorpusCmd),
    #[command(subcommand)]
    Honeytoken(HoneytokenCmd),
    /// Write a fresh signing key, its public half and a watermark key.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP gateway.
    Serve,
}

#[derive(Subcommand)]
pub enum WatermarkCmd {
    /// Embed a payload into every record of a FASTA file.
    Embed {
        fasta: PathBuf,
        #[arg(long)]
        key: PathBuf,
        /// Payload bytes as hex.
        #[arg(long)]
        payload: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the payload carried by each record.
    Extract {
        fasta: PathBuf,
        #[arg(long)]
        key: PathBuf,
        /// Payload length in bits; omitted, every whole-byte length is tried.
        #[arg(long)]
        bits: Option<usize>,
    },
}

#[derive(Subcommand)]
pub enum AuditCmd {
    Verify {
        log: PathBuf,
        /// Public key, 64 hex digits.
        #[arg(long)]
        key: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum CorpusCmd {
    /// Index FASTA files; each file's stem names its dataset.
    Build {
        #[arg(required = true)]
        fasta: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SCREENING_K)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum HoneytokenCmd {
    Gen(HoneytokenGen),
}

#[derive(Args)]
pub struct HoneytokenGen {
    #[arg(long)]
    key: PathBuf,
    /// Dataset the decoys will be planted in.
    #[arg(long)]
    planted_in: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 120)]
    codons: usize,
    #[arg(long, default_value_t = DEFAULT_SCREENING_K)]
    k: usize,
    /// FASTA whose codon usage the decoys imitate, and whose records they must not collide with.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decoy FASTA output; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Registry rows (JSON lines) output.
    #[arg(long)]
    registry: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn fail(code: u8, message: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

type CliResult = Result<u8, Failure>;

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("gatekeeper: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Classify { descriptor } => cmd_classify(&descriptor),
        Command::Watermark(WatermarkCmd::Embed { fasta, key, payload, out }) => {
            cmd_embed(&fasta, &key, &payload, out.as_deref())
        }
        Command::Watermark(WatermarkCmd::Extract { fasta, key, bits }) => cmd_extract(&fasta, &key, bits),
        Command::Audit(AuditCmd::Verify { log, key }) => cmd_audit_verify(&log, &key),
        Command::Corpus(CorpusCmd::Build { fasta, k, out }) => cmd_corpus_build(&fasta, k, &out),
        Command::Honeytoken(HoneytokenCmd::Gen(args)) => cmd_honeytoken(args),
        Command::Keygen { out } => cmd_keygen(&out),
        Command::Serve => cmd_serve(cli.config.as_deref()),
    }
}

fn input(path: &Path) -> Result<Vec<u8>, Failure> {
    read_input(path).map_err(|e| fail(EXIT_IO, format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(|e| fail(EXIT_IO, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| fail(EXIT_IO, e)),
    }
}

fn cmd_classify(path: &Path) -> CliResult {
    let bytes = input(path)?;
    let d: DatasetDescriptor = serde_json::from_slice(&bytes).map_err(|e| fail(EXIT_USAGE, format!("descriptor: {e}")))?;
    d.validate().map_err(|e| fail(EXIT_USAGE, e))?;
    let result = classify(&d);
    println!("{}", serde_json::to_string(&result).expect("result serializes"));
    Ok(result.tier.level())
}

fn watermark_key(path: &Path) -> Result<WatermarkKey, Failure> {
    keys::read_watermark_key(path).map_err(|e| fail(EXIT_USAGE, e))
}

fn cmd_embed(fasta: &Path, key: &Path, payload: &str, out: Option<&Path>) -> CliResult {
    let key = watermark_key(key)?;
    let bits = Bits::from_hex(payload).map_err(|e| fail(EXIT_USAGE, format!("payload: {e}")))?;
    let payload = WatermarkPayload::new(Namespace::Export, bits).map_err(|e| fail(EXIT_USAGE, e))?;
    let records = parse_fasta(&input(fasta)?).map_err(|e| fail(EXIT_USAGE, e))?;
    let mut marked = Vec::with_capacity(records.len());
    for rec in records {
        let id = rec.id().to_owned();
        let cds = CodingSequence::new(rec).map_err(|e| fail(EXIT_USAGE, format!("{id}: {e}")))?;
        match embed(&cds, &payload, &key) {
            Ok(m) => marked.push(m.into_sequence()),
            Err(e @ WatermarkError::InsufficientCapacity { .. }) => return Err(fail(EXIT_CAPACITY, format!("{id}: {e}"))),
            Err(e) => return Err(fail(EXIT_USAGE, format!("{id}: {e}"))),
        }
    }
    emit(out, &write_fasta(&marked))?;
    Ok(0)
}

fn cmd_extract(fasta: &Path, key: &Path, bits: Option<usize>) -> CliResult {
    let key = watermark_key(key)?;
    let records = parse_fasta(&input(fasta)?).map_err(|e| fail(EXIT_USAGE, e))?;
    let mut code = 0;
    for rec in records {
        let id = rec.id().to_owned();
        let cds = CodingSequence::new(rec).map_err(|e| fail(EXIT_USAGE, format!("{id}: {e}")))?;
        let got = match bits {
            Some(n) => extract(&cds, &key, n),
            None => extract_any_length(&cds, &key),
        };
        match got {
            Ok(p) => println!("{id}\t{:?}\t{}\t{}", p.namespace, p.bits.len(), p.bits.to_hex()),
            Err(WatermarkError::CrcMismatch) => {
                eprintln!("{id}: CrcMismatch");
                code = EXIT_CRC;
            }
            Err(e @ WatermarkError::InsufficientCapacity { .. }) => return Err(fail(EXIT_CAPACITY, format!("{id}: {e}"))),
            Err(e) => return Err(fail(EXIT_USAGE, format!("{id}: {e}"))),
        }
    }
    Ok(code)
}

fn cmd_audit_verify(log: &Path, key: &Path) -> CliResult {
    let key = keys::read_verifying_key(key).map_err(|e| fail(EXIT_USAGE, e))?;
    let report = verify_jsonl(&input(log)?, &key);
    match report.first_bad_index {
        None => {
            println!("ok: {} entries", report.entries);
            Ok(0)
        }
        Some(bad) => {
            println!("FAILED: first_bad_index {bad} ({} entries)", report.entries);
            Ok(EXIT_VERIFY)
        }
    }
}

fn cmd_corpus_build(inputs: &[PathBuf], k: usize, out: &Path) -> CliResult {
    let mut corpus = ControlledCorpus::new(k).map_err(|e| fail(EXIT_USAGE, e))?;
    for path in inputs {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty() && s != "-")
            .ok_or_else(|| fail(EXIT_USAGE, format!("{}: cannot name a dataset after this path", path.display())))?;
        let records = parse_fasta(&input(path)?).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
        corpus.add_dataset(&id, &records).map_err(|e| fail(EXIT_USAGE, e))?;
    }
    write_corpus(&corpus, out, now()).map_err(|e| fail(EXIT_IO, e))?;
    println!("{} datasets, {} distinct {k}-mers", corpus.dataset_ids().count(), corpus.kmer_count());
    Ok(0)
}

fn cmd_honeytoken(a: HoneytokenGen) -> CliResult {
    let key = watermark_key(&a.key)?;
    let (usage, mut taken) = match &a.profile {
        Some(p) => {
            let records = parse_fasta(&input(p)?).map_err(|e| fail(EXIT_USAGE, e))?;
            let cds: Vec<CodingSequence> = records.iter().filter_map(|r| CodingSequence::new(r.clone()).ok()).collect();
            let counts = CodonUsage::observe(&cds);
            let usage = CodonUsage::from_counts(&counts);
            usage.validate().map_err(|e| fail(EXIT_USAGE, e))?;
            (usage, records.iter().map(|r| sha256(r.bases())).collect())
        }
        None => (CodonUsage::uniform(), BTreeSet::new()),
    };
    let mut rng = match a.seed {
        Some(s) => StdRng::seed_from_u64(s),
        None => StdRng::from_entropy(),
    };
    let mut decoys = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..a.count {
        let token_id = format!("rec-{:08x}", rng.next_u32());
        let request = DecoyRequest {
            token_id: &token_id,
            length_codons: a.codons,
            planted_in: &a.planted_in,
            created_at: now(),
            k: a.k,
        };
        let (decoy, record) = generate_honeytoken(&usage, &request, &key, &taken, &mut rng).map_err(|e| fail(EXIT_USAGE, e))?;
        taken.insert(record.sequence_hash);
        decoys.push(decoy.into_sequence());
        rows.push(record.to_row());
    }
    write_honeytoken_rows(&a.registry, &rows).map_err(|e| fail(EXIT_IO, e))?;
    emit(a.out.as_deref(), &write_fasta(&decoys))?;
    Ok(0)
}

fn cmd_keygen(out: &Path) -> CliResult {
    std::fs::create_dir_all(out).map_err(|e| fail(EXIT_IO, format!("{}: {e}", out.display())))?;
    let mut seed = [0u8; 32];
    OsRng.fill_bytes(&mut seed);
    let signing = SigningKey::from_bytes(&seed);
    let wm = WatermarkKey::generate("wm-1", &mut OsRng);
    let write = |name: &str, text: String| write_atomic(&out.join(name), text.as_bytes()).map_err(|e| fail(EXIT_IO, e));
    write("signing.key", keys::signing_key_hex(&signing) + "\n")?;
    write("signing.pub", keys::verifying_key_hex(&signing.verifying_key()) + "\n")?;
    write("watermark.json", keys::watermark_key_json(&wm) + "\n")?;
    println!("wrote signing.key, signing.pub and watermark.json to {}", out.display());
    Ok(0)
}

fn cmd_serve(flag: Option<&Path>) -> CliResult {
    let config = config_path(flag)
        .and_then(|p| GatewayConfig::load(&p))
        .map_err(|e| fail(EXIT_CONFIG, e))?;
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let listen = config.listen.clone();
    let gateway = Gateway::open(config, Arc::new(SystemClock)).map_err(|e| {
        let code = match e {
            crate::error::GatewayError::Config(_) => EXIT_CONFIG,
            _ => EXIT_IO,
        };
        fail(code, e)
    })?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| fail(EXIT_IO, e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| fail(EXIT_IO, format!("{listen}: {e}")))?;
        tracing::info!("listening on {}", listener.local_addr().map_err(|e| fail(EXIT_IO, e))?);
        crate::http::serve(Arc::new(Mutex::new(gateway)), listener, shutdown_signal())
            .await
            .map_err(|e| fail(EXIT_IO, e))
    })?;
    Ok(0)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

fn now() -> Timestamp {
    use crate::service::Clock;
    SystemClock.now()
}
