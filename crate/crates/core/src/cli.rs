//! Command-line front end: `synth`, `analyze` and `verify`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analytics::analyze;
use crate::error::{Error, Result};
use crate::io::{
    config_hash, controllers_from_json, controllers_to_json, read_spec, unix_now, write_records,
    write_summaries, RunManifest, SCHEMA_VERSION,
};
use crate::network::{NetworkSpec, Topology};
use crate::synthesis::{synthesize_ensemble, SynthesisConfig};
use crate::verify::{run_verify, VerifyConfig};

/// Exit code for a failed invariant check.
pub const EXIT_INVARIANT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spinsens",
    version,
    about = "Sensitivity geometry of spin-network state transfer"
)]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "SPINSENS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a controller ensemble by multi-start optimization.
    Synth(SynthArgs),
    /// Compute per-structure sensitivity records and correlation summaries.
    Analyze(AnalyzeArgs),
    /// Run the numerical invariant suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct NetworkArgs {
    /// Network description as JSON; overrides the individual flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value = "ring")]
    pub topology: Topology,
    #[arg(long, default_value_t = 1.0)]
    pub j: f64,
    /// Input spin (1-based).
    #[arg(long = "in")]
    pub in_spin: Option<usize>,
    /// Output spin (1-based).
    #[arg(long = "out")]
    pub out_spin: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
}

impl NetworkArgs {
    fn given(&self) -> bool {
        self.spec.is_some() || self.n.is_some()
    }

    fn resolve(&self) -> Result<NetworkSpec> {
        if let Some(path) = &self.spec {
            return read_spec(path);
        }
        let missing =
            |flag: &str| Error::InvalidSpec(format!("--{flag} is required without --spec"));
        let mut spec = NetworkSpec::new(
            self.n.ok_or_else(|| missing("n"))?,
            self.topology,
            self.j,
            self.in_spin.ok_or_else(|| missing("in"))?,
            self.out_spin.ok_or_else(|| missing("out"))?,
        )?;
        spec.kappa = self.kappa;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, default_value_t = 100)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub tf_min: f64,
    #[arg(long, default_value_t = 50.0)]
    pub tf_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub bias_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub bias_max: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, short = 'o', default_value = "controllers.json")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Controller ensemble written by `synth`.
    pub controllers: PathBuf,
    /// Network flags; when absent the network is read from the manifest
    /// beside the controller file.
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, default_value = "records.csv")]
    pub records: PathBuf,
    #[arg(long, default_value = "summaries.csv")]
    pub summaries: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Fix the network size instead of drawing it from 2..=6.
    #[arg(long)]
    pub n: Option<usize>,
    /// Check closed-form perfect-transfer controllers (n = 2 or 4).
    #[arg(long)]
    pub pst: bool,
    /// Negate the Bloch generator; the fidelity cross-check must then fail.
    #[arg(long)]
    pub inject_sign_error: bool,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let started = unix_now();
    let spec = args.network.resolve()?;
    let config = SynthesisConfig {
        restarts: args.restarts,
        t_f_range: (args.tf_min, args.tf_max),
        bias_range: (args.bias_min, args.bias_max),
        tolerance: args.tol,
        seed: args.seed,
        max_iter: args.max_iter,
        ..SynthesisConfig::default()
    };
    config.validate()?;
    let controllers = synthesize_ensemble(&spec, &config)?;
    write_file(&args.output, controllers_to_json(&controllers)?.as_bytes())?;

    let config_json = serde_json::to_value(&config)?;
    RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "synth".into(),
        config_hash: config_hash("synth", &spec, &config_json)?,
        master_seed: Some(args.seed),
        spec,
        config: config_json,
        inputs: args.network.spec.iter().cloned().collect(),
        outputs: vec![args.output.clone()],
        started_unix: started,
        finished_unix: unix_now(),
    }
    .write_beside(&args.output)?;
    Ok(vec![args.output.clone()])
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let started = unix_now();
    let text = fs::read_to_string(&args.controllers)?;
    let upstream = RunManifest::read_beside(&args.controllers).ok();
    let spec = if args.network.given() {
        args.network.resolve()?
    } else {
        let m = upstream.as_ref().ok_or_else(|| {
            Error::InvalidSpec(format!(
                "no network flags given and no manifest beside {}",
                args.controllers.display()
            ))
        })?;
        m.spec.validate()?;
        m.spec.clone()
    };
    let controllers = controllers_from_json(&text, &spec)?;
    let analysis = analyze(&spec, &controllers)?;
    for (idx, msg) in &analysis.failures {
        eprintln!("warning: controller {idx} skipped: {msg}");
    }

    let mut buf = Vec::new();
    write_records(&mut buf, &analysis.records)?;
    write_file(&args.records, &buf)?;
    let mut buf = Vec::new();
    write_summaries(&mut buf, &analysis.summaries)?;
    write_file(&args.summaries, &buf)?;

    let config_json = serde_json::json!({
        "controllers": text,
        "records": args.records,
        "summaries": args.summaries,
    });
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "analyze".into(),
        config_hash: config_hash("analyze", &spec, &config_json)?,
        master_seed: upstream.and_then(|m| m.master_seed),
        spec,
        config: serde_json::json!({ "upstream_manifest": crate::io::manifest_path(&args.controllers) }),
        inputs: vec![args.controllers.clone()],
        outputs: vec![args.records.clone(), args.summaries.clone()],
        started_unix: started,
        finished_unix: unix_now(),
    };
    manifest.write_beside(&args.records)?;
    manifest.write_beside(&args.summaries)?;
    Ok(vec![args.records.clone(), args.summaries.clone()])
}

/// Prints the report and returns whether every check passed.
pub fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let report = run_verify(&VerifyConfig {
        seed: args.seed,
        instances: args.instances,
        n: args.n,
        pst: args.pst,
        inject_sign_error: args.inject_sign_error,
        ..VerifyConfig::default()
    })?;
    print!("{report}");
    let ok = report.all_passed();
    if !ok {
        for c in report.failures() {
            eprintln!(
                "invariant violated: {} (instance seed {})",
                c.name,
                c.worst_seed.map_or_else(|| "-".into(), |s| s.to_string())
            );
        }
    }
    Ok(ok)
}

/// Parses nothing; runs an already parsed command and maps the outcome to
/// an exit code.
pub fn run(cli: Cli) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    let outcome = pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|out| {
            eprintln!("wrote {}", out[0].display());
            0
        }),
        Command::Analyze(a) => cmd_analyze(a).map(|out| {
            for p in out {
                eprintln!("wrote {}", p.display());
            }
            0
        }),
        Command::Verify(a) => cmd_verify(a).map(|ok| if ok { 0 } else { EXIT_INVARIANT }),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
