//! Command-line entry point: `init`, `run`, `seal`, `verify`, `serve`,
//! plus `keystore` maintenance for service operators.

use std::ffi::OsString;
use std::io::ErrorKind;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use veritas_core::claims::ClaimsManifest;
use veritas_core::model::Tier;
use veritas_core::report::linked_runs;
use veritas_core::verify::{KeySource, Verdict};

use crate::client::{FileKeySource, HttpKeySource};
use crate::config::Config;
use crate::observer::{self, Forward, ObserverError};
use crate::sealer;
use crate::service::keystore::{self, PASSPHRASE_ENV};
use crate::service::{self, Service};
use crate::session_dir::SessionDir;
use crate::telemetry::GpuProbe;
use crate::verifier::{self, VerifyFileError};

pub const SERVICE_ENV: &str = "VERITAS_SERVICE";
pub const KEY_SERVICE_ENV: &str = "VERITAS_KEY_SERVICE";

#[derive(Debug, Parser)]
#[command(name = "veritas", version, about = "Attest what an experiment actually did")]
pub struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Start a session in the current directory
    Init {
        #[arg(long, value_parser = parse_tier, default_value = "full")]
        tier: Tier,
        /// Directory whose files are hashed before and after each run
        #[arg(long, default_value = ".")]
        source_root: String,
        /// Attestation service URL stored in the session config
        #[arg(long)]
        service: Option<String>,
        /// Accelerator model to record when none is visible to nvidia-smi
        #[arg(long)]
        gpu_model: Option<String>,
    },
    /// Run a command under observation: veritas run -- python train.py
    Run {
        /// Print a one-line summary to stderr after the run
        #[arg(long)]
        summary: bool,
        #[arg(last = true, required = true, value_name = "COMMAND")]
        command: Vec<OsString>,
    },
    /// Seal the session and write the signed bundle
    Seal {
        #[arg(long, env = SERVICE_ENV)]
        service: Option<String>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Verify a bundle (exit 0 PASS, 1 FAIL, 2 could not verify)
    Verify {
        bundle: PathBuf,
        #[arg(long, env = KEY_SERVICE_ENV, conflicts_with = "key_file")]
        key_service: Option<String>,
        /// Key set exported from the service (GET /v1/keys)
        #[arg(long)]
        key_file: Option<PathBuf>,
        /// Claims manifest: name<TAB>value<TAB>exact|±epsilon per line
        #[arg(long)]
        claims: Option<PathBuf>,
    },
    /// Run the attestation service
    Serve {
        #[arg(long)]
        keystore: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8731")]
        listen: SocketAddr,
        /// Service identifier, used when the keystore is created
        #[arg(long, default_value = "veritas-local")]
        service_id: String,
    },
    /// Keystore maintenance
    Keystore {
        #[command(subcommand)]
        action: KeystoreCmd,
    },
}

#[derive(Debug, Subcommand)]
enum KeystoreCmd {
    /// Create a keystore with one active key
    Init {
        #[arg(long)]
        keystore: PathBuf,
        #[arg(long, default_value = "veritas-local")]
        service_id: String,
    },
    /// Retire the active key and create a new one (stop the service first,
    /// or send it SIGHUP instead)
    Rotate {
        #[arg(long)]
        keystore: PathBuf,
    },
    /// Write the public key set, the format accepted by `verify --key-file`
    Export {
        #[arg(long)]
        keystore: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn parse_tier(s: &str) -> Result<Tier, String> {
    Tier::from_label(s).ok_or_else(|| format!("expected `minimal` or `full`, got `{s}`"))
}

fn passphrase() -> anyhow::Result<Vec<u8>> {
    match std::env::var_os(PASSPHRASE_ENV) {
        Some(p) if !p.is_empty() => Ok(p.into_encoded_bytes()),
        _ => bail!("set {PASSPHRASE_ENV} to the keystore passphrase"),
    }
}

fn cwd() -> anyhow::Result<SessionDir> {
    Ok(SessionDir::at(std::env::current_dir().context("current directory")?))
}

fn init(tier: Tier, source_root: String, service: Option<String>, gpu_model: Option<String>) -> anyhow::Result<()> {
    let dir = cwd()?;
    let root = dir.project().join(&source_root);
    if !root.is_dir() {
        bail!("source root {} is not a directory", root.display());
    }
    let config = Config { tier, source_root, service, gpu_model, ..Config::default() };
    let gpu = match tier {
        Tier::Full if config.gpu_model.is_none() => GpuProbe::detect(),
        _ => None,
    };
    let session = dir.init(&config, gpu.as_ref())?;
    println!(
        "initialized session {} ({} tier) in {}",
        session.session_id(),
        session.tier(),
        dir.path().display()
    );
    Ok(())
}

fn spawn_exit_code(e: &ObserverError) -> u8 {
    match e {
        ObserverError::Spawn { source, .. } if source.kind() == ErrorKind::NotFound => 127,
        ObserverError::Spawn { source, .. } if source.kind() == ErrorKind::PermissionDenied => 126,
        _ => 125,
    }
}

fn run(summary: bool, command: Vec<OsString>) -> ExitCode {
    let dir = match cwd() {
        Ok(d) => d,
        Err(e) => return fail(125, e),
    };
    let prepared = (|| {
        let lock = dir.lock()?;
        let config = dir.config()?;
        let mut session = dir.load()?;
        if session.is_sealed() {
            bail!("session is sealed; start a new session to record more runs");
        }
        session.declare(config.frameworks.clone(), config.seeds.clone())?;
        let gpu = if session.environment().host().is_some() { GpuProbe::detect() } else { None };
        let obs = dir.observer_config(&config, gpu)?;
        Ok((lock, session, obs))
    })();
    let (_lock, mut session, obs) = match prepared {
        Ok(p) => p,
        Err(e) => return fail(125, e),
    };
    let outcome = match observer::run_command(&mut session, &obs, &command, Forward::Std) {
        Ok(o) => o,
        Err(e) => {
            let code = spawn_exit_code(&e);
            return fail(code, e.into());
        }
    };
    if let Err(e) = dir.save(&session) {
        return fail(125, e.into());
    }
    let r = &outcome.record;
    if summary {
        let ms = r.wall_ms();
        eprintln!(
            "veritas: run {} finished in {}.{:03} s, exit code {}, {} metric(s); session has {}",
            r.run_index,
            ms / 1000,
            ms % 1000,
            r.exit_code,
            r.metrics.len(),
            linked_runs(session.run_count())
        );
    }
    ExitCode::from(r.exit_code.clamp(0, 255) as u8)
}

fn seal(service: Option<String>, output: PathBuf) -> anyhow::Result<()> {
    let dir = cwd()?;
    let url = match service {
        Some(s) => s,
        None => dir.config()?.service.ok_or_else(|| anyhow!("no attestation service: pass --service or set {SERVICE_ENV}"))?,
    };
    let out = sealer::seal(&dir, &url, &output)?;
    println!("sealed {} ({})", linked_runs(out.run_count), out.digest);
    println!("HMC {}", out.hmc);
    for f in &out.hmc.flags {
        println!("  {} run {}: {}", f.code, f.run_index, f.detail);
    }
    println!("attested by {} with key {} at {}", out.attestation.service_id, out.attestation.key_id, out.attestation.signed_at.to_rfc3339_millis());
    println!("bundle written to {}", out.output.display());
    Ok(())
}

fn print_verdict(bundle: &Path, v: &Verdict) {
    println!("{}  {}", v.status(), bundle.display());
    for f in &v.failures {
        println!("  {}: {}", f.code, f.detail);
    }
    for n in &v.notes {
        println!("  note: {n}");
    }
}

fn verify(bundle: PathBuf, key_service: Option<String>, key_file: Option<PathBuf>, claims: Option<PathBuf>) -> ExitCode {
    let could_not = |msg: String| {
        eprintln!("COULD NOT VERIFY  {}: {msg}", bundle.display());
        ExitCode::from(2)
    };
    let keys: Box<dyn KeySource> = match (key_service, &key_file) {
        (_, Some(path)) => match FileKeySource::load(path) {
            Ok(k) => Box::new(k),
            Err(e) => return could_not(e.to_string()),
        },
        (Some(url), None) => Box::new(HttpKeySource::new(url)),
        (None, None) => return could_not(format!("no key source: pass --key-service, --key-file or set {KEY_SERVICE_ENV}")),
    };
    let result = match &claims {
        Some(path) => {
            let manifest = match std::fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|t| t.parse::<ClaimsManifest>().map_err(|e| e.to_string()))
            {
                Ok(m) => m,
                Err(e) => return could_not(format!("claims {}: {e}", path.display())),
            };
            verifier::verify_claims_file(&bundle, keys.as_ref(), &manifest)
        }
        None => verifier::verify_bundle_file(&bundle, keys.as_ref()),
    };
    match result {
        Ok(v) => {
            print_verdict(&bundle, &v);
            ExitCode::from(if v.is_pass() { 0 } else { 1 })
        }
        Err(e @ VerifyFileError::Unreadable { .. }) => could_not(e.to_string()),
        Err(VerifyFileError::Verify(e)) => could_not(e.to_string()),
    }
}

fn serve(keystore_path: PathBuf, listen: SocketAddr, service_id: String) -> anyhow::Result<()> {
    let svc = Arc::new(Service::open(&keystore_path, &service_id, &passphrase()?)?);
    let id = svc.service_id();
    let active = svc.active_key().key_id;
    service::serve_forever(svc, listen, |addr| {
        println!("veritas: attestation service {id} listening on http://{addr} (active key {active})");
    })?;
    Ok(())
}

fn keystore_cmd(action: KeystoreCmd) -> anyhow::Result<()> {
    match action {
        KeystoreCmd::Init { keystore, service_id } => {
            let ks = keystore::Keystore::create(&keystore, &service_id, &passphrase()?)?;
            let svc = Service::new(ks, service::audit::AuditLog::open(&service::audit_path(&keystore))?)?;
            println!("created keystore {} with active key {}", keystore.display(), svc.active_key().key_id);
        }
        KeystoreCmd::Rotate { keystore } => {
            if !keystore.exists() {
                bail!("no keystore at {}", keystore.display());
            }
            let svc = Service::open(&keystore, "", &passphrase()?)?;
            let k = svc.rotate_key()?;
            println!("new active key {}", k.key_id);
        }
        KeystoreCmd::Export { keystore, output } => {
            let set = keystore::read_published(&keystore)?;
            let text = serde_json::to_string_pretty(&set)? + "\n";
            match output {
                Some(p) => std::fs::write(&p, text).with_context(|| p.display().to_string())?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn fail(code: u8, e: anyhow::Error) -> ExitCode {
    let mut msg = String::new();
    for cause in e.chain().map(|c| c.to_string()) {
        if !msg.ends_with(&cause) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&cause);
        }
    }
    eprintln!("veritas: {msg}");
    ExitCode::from(code)
}

fn status(r: anyhow::Result<()>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(1, e),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Init { tier, source_root, service, gpu_model } => status(init(tier, source_root, service, gpu_model)),
        Cmd::Run { summary, command } => run(summary, command),
        Cmd::Seal { service, output } => status(seal(service, output)),
        Cmd::Verify { bundle, key_service, key_file, claims } => verify(bundle, key_service, key_file, claims),
        Cmd::Serve { keystore, listen, service_id } => status(serve(keystore, listen, service_id)),
        Cmd::Keystore { action } => status(keystore_cmd(action)),
    }
}
