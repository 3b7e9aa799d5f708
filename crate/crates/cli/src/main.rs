//! `imlab`: runs inertial-manifold experiments from a JSON config with `--key value`
//! overrides.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use imlab_core::harness::{apply_override, run_scenario, validate_value, Scenario, OVERRIDE_ALIASES};
use serde_json::Value;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "imlab", version, about = "Inertial-manifold laboratory for prepared Navier-Stokes on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as `--dotted.key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Runs the scenarios listed in the config.
    Run(Common),
    /// Validates the config and prints it with defaults resolved.
    Validate(Common),
    Gaps(Common),
    Annulus(Common),
    Stationary(Common),
    Evolve(Common),
    Radius(Common),
    ConeCheck(Common),
    SacCheck(Common),
    Manifold(Common),
    InertialForm(Common),
    Tracking(Common),
    Full2d(Common),
    Full3d(Common),
}

impl Command {
    fn split(self) -> (Option<&'static str>, Common) {
        match self {
            Command::Run(c) => (None, c),
            Command::Validate(c) => (Some("validate"), c),
            Command::Gaps(c) => (Some("gaps"), c),
            Command::Annulus(c) => (Some("annulus"), c),
            Command::Stationary(c) => (Some("stationary"), c),
            Command::Evolve(c) => (Some("evolve"), c),
            Command::Radius(c) => (Some("radius"), c),
            Command::ConeCheck(c) => (Some("cone-check"), c),
            Command::SacCheck(c) => (Some("sac-check"), c),
            Command::Manifold(c) => (Some("manifold"), c),
            Command::InertialForm(c) => (Some("inertial-form"), c),
            Command::Tracking(c) => (Some("tracking"), c),
            Command::Full2d(c) => (Some("full2d"), c),
            Command::Full3d(c) => (Some("full3d"), c),
        }
    }
}

fn build_config(common: &Common, scenario: Option<Scenario>) -> Result<Value, Vec<String>> {
    let mut value = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| vec![format!("config {}: {e}", path.display())])?;
            serde_json::from_str(&text).map_err(|e| vec![format!("config {}: {e}", path.display())])?
        }
        None => Value::Object(Default::default()),
    };
    let mut errors = Vec::new();
    let mut args = common.overrides.iter();
    while let Some(flag) = args.next() {
        let Some(key) = flag.strip_prefix("--") else {
            errors.push(format!("expected `--key value`, found `{flag}`"));
            continue;
        };
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => match args.next() {
                Some(v) => (key.to_string(), v.clone()),
                None => {
                    errors.push(format!("--{key}: missing value"));
                    continue;
                }
            },
        };
        if let Err(e) = apply_override(&mut value, &key, &raw) {
            errors.push(e);
        }
    }
    if matches!(scenario, Some(Scenario::Full3d | Scenario::SacCheck)) && value.pointer("/model/dim").is_none() {
        if let Err(e) = apply_override(&mut value, "model.dim", "3") {
            errors.push(e);
        }
    }
    if let Some(s) = scenario {
        if let Err(e) = apply_override(&mut value, "scenarios", &serde_json::json!([s.name()]).to_string()) {
            errors.push(e);
        }
    }
    if errors.is_empty() {
        Ok(value)
    } else {
        Err(errors)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("IMLAB_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("IMLAB_THREADS: {e}");
                }
            }
            _ => {
                eprintln!("IMLAB_THREADS: `{n}` is not a positive integer");
                return ExitCode::from(EXIT_VALIDATION);
            }
        }
    }
    let (name, common) = cli.command.split();
    let validate_only = name == Some("validate");
    let scenario = name.and_then(Scenario::from_name);
    let config = match build_config(&common, scenario).and_then(validate_value) {
        Ok(c) => c,
        Err(errors) => {
            for e in &errors {
                eprintln!("error: {e}");
            }
            eprintln!("aliases: {}", OVERRIDE_ALIASES.map(|(a, k)| format!("{a}={k}")).join(", "));
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    if validate_only {
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return ExitCode::SUCCESS;
    }
    match run_scenario(&config) {
        Ok(report) => {
            println!("config_hash,{}", report.config_hash);
            for out in &report.outputs {
                for (stage, key, value) in &out.summary {
                    println!("{},{stage},{key},{value}", out.scenario.name());
                }
                for f in &out.files {
                    eprintln!("wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(EXIT_VALIDATION)
            } else if e.is_numerical() {
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
