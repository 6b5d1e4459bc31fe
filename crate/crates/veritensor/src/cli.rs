use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use veritensor_core::commit::{Digest, Hasher};
use veritensor_core::error::ModelError;
use veritensor_core::fixed::QuantConfig;
use veritensor_core::model::{commit_model, decode_proof, encode_proof, prove_inference, toy_weights, verify_inference, ModelConfig};
use veritensor_core::proof::Mode;
use veritensor_core::tensor::QTensor;

use crate::error::CliError;
use crate::modeldir::{write_json, write_model_dir, CommitmentFile, DirStore, COMMITMENT};
use crate::shape::{render, ShapeArgs};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "veritensor", version, about = "Commit, prove and verify integer transformer inference")]
pub struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hash a model directory into a commitment file and print its root.
    Commit {
        #[arg(long)]
        model: PathBuf,
        /// Defaults to commitment.json inside the model directory.
        #[arg(long)]
        commitment: Option<PathBuf>,
    },
    /// Run inference on a committed model and write the proof.
    Prove {
        #[arg(long)]
        model: PathBuf,
        /// Comma separated ids, or @FILE.
        #[arg(long)]
        tokens: String,
        #[arg(long)]
        proof: PathBuf,
        /// Also dump the proof as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check a proof against a commitment; exit 0 on accept, 1 on reject.
    Verify(VerifyArgs),
    /// Print the proof DAG level counts of one component.
    Shape(ShapeArgs),
    /// Run the built-in invariant suite.
    Selftest,
    /// Write a seeded toy model directory and its commitment.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long, default_value_t = 16)]
        q: u32,
        #[arg(long, default_value_t = 8)]
        l: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Replay,
    Spot,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub commitment: PathBuf,
    #[arg(long)]
    pub proof: PathBuf,
    #[arg(long)]
    pub tokens: String,
    /// Expected logits digest as printed by `prove`.
    #[arg(long)]
    pub logits: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Fraction of leaf claims recomputed in spot mode.
    #[arg(long)]
    pub spot: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl VerifyArgs {
    fn mode(&self) -> Result<Mode, CliError> {
        match (self.mode, self.spot) {
            (None | Some(ModeArg::Replay), None) => Ok(Mode::Replay),
            (Some(ModeArg::Replay), Some(_)) => Err(CliError::Usage("--spot needs --mode spot".into())),
            (_, spot) => {
                let fraction = spot.unwrap_or(0.1);
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(CliError::Usage(format!("--spot {fraction} is outside (0, 1]")));
                }
                Ok(Mode::SpotCheck { fraction, seed: self.seed })
            }
        }
    }
}

pub fn parse_tokens(arg: &str) -> Result<Vec<u32>, CliError> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).map_err(|e| CliError::io(Path::new(path), e))?,
        None => arg.to_string(),
    };
    let tokens = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u32>().map_err(|_| CliError::Usage(format!("bad token {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if tokens.is_empty() {
        return Err(CliError::Usage("no tokens given".into()));
    }
    Ok(tokens)
}

pub fn logits_digest(logits: &QTensor) -> Digest {
    let mut h = Hasher::new("VT-LOGITS");
    h.u64(logits.rows() as u64).u64(logits.cols() as u64);
    for &v in logits.data() {
        h.i128(v as i128);
    }
    h.finish()
}

fn commit(model: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let store = DirStore::open(model)?;
    let c = commit_model(store.config(), &store)?;
    if store.manifest.root.is_some_and(|r| r != c.root()) {
        warn!("manifest root differs from the weights on disk");
    }
    let out = out.unwrap_or_else(|| model.join(COMMITMENT));
    CommitmentFile::new(&store.manifest.model_name, &c).write(&out)?;
    info!("{} leaves, commitment written to {}", c.tree.leaf_count(), out.display());
    println!("{}", c.root().to_hex());
    Ok(())
}

fn prove(model: &Path, tokens: &str, proof: &Path, json: Option<PathBuf>) -> Result<(), CliError> {
    let tokens = parse_tokens(tokens)?;
    let store = DirStore::open(model)?;
    let c = commit_model(store.config(), &store)?;
    if store.manifest.root.is_some_and(|r| r != c.root()) {
        warn!("manifest root differs from the weights on disk");
    }
    let (p, stats) = prove_inference(&c, &store, &tokens)?;
    let bytes = encode_proof(&p);
    fs::write(proof, &bytes).map_err(|e| CliError::io(proof, e))?;
    if let Some(json) = json {
        write_json(&json, &p)?;
    }
    info!("{} nodes, {} bytes, peak {} weight bytes resident", stats.nodes, bytes.len(), stats.peak_weight_bytes);
    let argmax: Vec<String> = p.public.argmax.data().iter().map(|v| v.to_string()).collect();
    println!("root {}", c.root().to_hex());
    println!("logits {}", logits_digest(&p.public.logits).to_hex());
    println!("argmax {}", argmax.join(","));
    Ok(())
}

fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    let mode = a.mode()?;
    let tokens = parse_tokens(&a.tokens)?;
    let expected = a
        .logits
        .as_deref()
        .map(|s| Digest::from_hex(s).map_err(|_| CliError::Usage(format!("--logits {s:?} is not a 64-digit hex digest"))))
        .transpose()?;
    let commitment = CommitmentFile::read(&a.commitment)?;
    let bytes = fs::read(&a.proof).map_err(|e| CliError::io(&a.proof, e))?;
    let proof = decode_proof(&bytes).map_err(|e| match e {
        ModelError::Container { at, reason } => CliError::Reject(format!("{at}: {reason}")),
        e => e.into(),
    })?;
    if (proof.public.cfg.quant.q, proof.public.cfg.quant.l) != (commitment.q, commitment.l) {
        return Err(CliError::Reject("model: quantization differs from the commitment".into()));
    }
    let v = verify_inference(&commitment.root, &tokens, &proof, mode);
    if let Some(f) = v.failure.filter(|_| !v.accepted) {
        return Err(CliError::Reject(f.to_string()));
    }
    if expected.is_some_and(|d| d != logits_digest(&proof.public.logits)) {
        return Err(CliError::Reject("public-logits: digest differs from --logits".into()));
    }
    println!("accept");
    Ok(())
}

fn toy(out: &Path, seed: u64, layers: Option<usize>, q: u32, l: u32) -> Result<(), CliError> {
    let mut cfg = ModelConfig::default();
    cfg.quant = QuantConfig { q, l, ..cfg.quant };
    if let Some(n) = layers {
        cfg.n_layers = n;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let w = toy_weights(&cfg, seed)?;
    let c = commit_model(&cfg, &w)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_model_dir(out, "toy", &cfg, &w, Some(c.root()))?;
    CommitmentFile::new("toy", &c).write(&out.join(COMMITMENT))?;
    println!("{}", c.root().to_hex());
    Ok(())
}

fn selftest() -> Result<(), CliError> {
    let checks = selftest::run();
    for c in &checks {
        println!("{} {}: {}", if c.ok { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    match checks.iter().find(|c| !c.ok) {
        Some(c) => Err(CliError::Reject(format!("selftest {}", c.name))),
        None => Ok(()),
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Commit { model, commitment } => commit(&model, commitment),
        Command::Prove { model, tokens, proof, json } => prove(&model, &tokens, &proof, json),
        Command::Verify(a) => verify(&a),
        Command::Shape(a) => {
            print!("{}", render(&a)?);
            Ok(())
        }
        Command::Selftest => selftest(),
        Command::Toy { out, seed, layers, q, l } => toy(&out, seed, layers, q, l),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("VERITENSOR_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Reject(at) => println!("reject {at}"),
                e => eprintln!("error: {e}"),
            }
            e.exit_code()
        }
    }
}
