//! Command-line front end. Every command is deterministic given its flags
//! and seed: rerunning produces byte-identical outputs. Diagnostics go to
//! stderr, data to stdout.
//!
//! Exit status: 0 when the command's contract is satisfied, 1 when a
//! measured quantity violates it (e.g. divergence above tolerance), 2 on
//! operational errors.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{
    generate_toy_checkpoint, load_adapter, load_checkpoint, save_adapter, save_checkpoint,
    LoraAdapter, ModelConfig,
};
use crate::container::{self, Container, Dtype, TensorData};
use crate::error::{Error, Result};
use crate::gauge::{
    apply_gauge_layer, build_gauge_spec, load_gauge_spec, pullback_adapter, pushforward_adapter,
    save_gauge_spec, SiteSet,
};
use crate::linalg::{stream_rng, Matrix};
use crate::safelora::{construct_evasion_gauge, project_residual, SafeSubspace};
use crate::transformer::max_divergence;

#[derive(Parser)]
#[command(
    name = "weightgauge",
    version,
    about = "Behavior-preserving weight-space symmetry transforms for transformer checkpoints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Direction {
    /// Adapter effectively seen on the original weights.
    Pullback,
    /// Adapter to install on the gauged weights.
    Pushforward,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StoragePrecision {
    Bf16,
    F16,
    F32,
}

impl StoragePrecision {
    fn dtype(self) -> Dtype {
        match self {
            StoragePrecision::Bf16 => Dtype::Bf16,
            StoragePrecision::F16 => Dtype::F16,
            StoragePrecision::F32 => Dtype::F32,
        }
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Print tensor names, shapes, dtypes, and per-tensor max-abs.
    Inspect {
        /// Container file to inspect.
        checkpoint: PathBuf,
        /// Emit a machine-readable JSON report instead of a table.
        #[arg(long)]
        json: bool,
    },

    /// Apply a gauge attack to a checkpoint and write the gauged copy.
    Attack {
        /// Input checkpoint container.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Model config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output path for the gauged checkpoint.
        #[arg(long)]
        output: PathBuf,
        /// Where to write the serialized gauge spec (seed + metadata).
        #[arg(long)]
        spec_out: Option<PathBuf>,
        /// Master seed for the per-layer gauge streams.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated subset of vo,mlp,qk. Empty string applies nothing.
        #[arg(long, default_value = "vo,mlp")]
        sites: String,
        /// Emit a JSON report on stdout.
        #[arg(long)]
        json: bool,
    },

    /// Map a LoRA adapter across a stored gauge spec.
    TransformAdapter {
        /// Adapter container to transform.
        #[arg(long)]
        adapter: PathBuf,
        /// Gauge spec JSON written by `attack`.
        #[arg(long)]
        gauge_spec: PathBuf,
        /// Model config JSON the spec was built for.
        #[arg(long)]
        config: PathBuf,
        /// pullback: adapter as seen on the original weights;
        /// pushforward: adapter to install on the gauged weights.
        #[arg(long, value_enum)]
        direction: Direction,
        /// Output adapter path.
        #[arg(long)]
        output: PathBuf,
    },

    /// Measure max forward divergence between two checkpoints.
    Verify {
        /// First checkpoint.
        checkpoint_a: PathBuf,
        /// Second checkpoint.
        checkpoint_b: PathBuf,
        /// Model config JSON (shared by both).
        #[arg(long)]
        config: PathBuf,
        /// Optional adapter installed on the first checkpoint.
        #[arg(long)]
        adapter_a: Option<PathBuf>,
        /// Optional adapter installed on the second checkpoint.
        #[arg(long)]
        adapter_b: Option<PathBuf>,
        /// Pass/fail threshold on the measured divergence.
        /// Defaults to 1e-10, or 1e-2 with --storage-precision.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Number of seeded random probe inputs.
        #[arg(long, default_value_t = 100)]
        n_inputs: usize,
        /// Seed for the probe inputs.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Re-verify after narrowing all weights to this storage precision.
        #[arg(long, value_enum)]
        storage_precision: Option<StoragePrecision>,
        /// Emit a JSON report on stdout.
        #[arg(long)]
        json: bool,
    },

    /// Run the safe-subspace evasion construction on a container holding
    /// `w_base`, `w_tuned`, and `basis.{i}` tensors.
    EvadeSafelora {
        /// Input container with w_base, w_tuned, basis.0..basis.{k-1}.
        #[arg(long)]
        input: PathBuf,
        /// Output container for gauge, safe_component, residual.
        #[arg(long)]
        output: PathBuf,
        /// Optional path for the JSON report; also printed with --json.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Seed for the safe-component draw.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Emit the JSON report on stdout.
        #[arg(long)]
        json: bool,
    },

    /// Generate a seeded random desk-scale checkpoint plus config JSON.
    GenToy {
        /// Model config JSON; the built-in desk-scale default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        output: PathBuf,
        /// Where to write the config that was used.
        #[arg(long)]
        config_out: Option<PathBuf>,
        /// Seed for the weight streams.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Storage dtype: f16, bf16, f32, or f64.
        #[arg(long, default_value = "f64")]
        dtype: String,
    },
}

/// JSON report emitted by `--json` commands.
#[derive(Serialize)]
struct Report {
    command: &'static str,
    seed: u64,
    sites: Option<String>,
    max_divergence: Option<f64>,
    wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual_check: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    safe_fraction: Option<f64>,
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::io(
            format!("input {}", path.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    Ok(())
}

/// Write data to stdout, treating a closed pipe as a clean stop.
fn write_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::io("writing to stdout", e)),
    }
}

fn print_report(report: &Report) -> Result<()> {
    let json =
        serde_json::to_string_pretty(report).map_err(|e| Error::json("serializing report", e))?;
    write_stdout(&format!("{json}\n"))
}

/// Run a parsed command. Returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Inspect { checkpoint, json } => cmd_inspect(&checkpoint, json),
        Command::Attack {
            checkpoint,
            config,
            output,
            spec_out,
            seed,
            sites,
            json,
        } => cmd_attack(&checkpoint, &config, &output, spec_out.as_deref(), seed, &sites, json),
        Command::TransformAdapter {
            adapter,
            gauge_spec,
            config,
            direction,
            output,
        } => cmd_transform_adapter(&adapter, &gauge_spec, &config, direction, &output),
        Command::Verify {
            checkpoint_a,
            checkpoint_b,
            config,
            adapter_a,
            adapter_b,
            tolerance,
            n_inputs,
            seed,
            storage_precision,
            json,
        } => cmd_verify(
            &checkpoint_a,
            &checkpoint_b,
            &config,
            adapter_a.as_deref(),
            adapter_b.as_deref(),
            tolerance,
            n_inputs,
            seed,
            storage_precision,
            json,
        ),
        Command::EvadeSafelora {
            input,
            output,
            report,
            seed,
            json,
        } => cmd_evade_safelora(&input, &output, report.as_deref(), seed, json),
        Command::GenToy {
            config,
            output,
            config_out,
            seed,
            dtype,
        } => cmd_gen_toy(config.as_deref(), &output, config_out.as_deref(), seed, &dtype),
    }
}

fn cmd_inspect(path: &Path, json: bool) -> Result<u8> {
    require_file(path)?;
    let parsed = container::read_container(path)?;
    if json {
        #[derive(Serialize)]
        struct Row<'a> {
            name: &'a str,
            dtype: &'static str,
            shape: &'a [usize],
            max_abs: f64,
        }
        #[derive(Serialize)]
        struct Listing<'a> {
            tensors: Vec<Row<'a>>,
            metadata: &'a std::collections::BTreeMap<String, String>,
        }
        let rows: Vec<Row> = parsed
            .tensors
            .iter()
            .map(|(name, t)| Row {
                name,
                dtype: t.dtype.name(),
                shape: &t.shape,
                max_abs: t.values.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            })
            .collect();
        let listing = Listing {
            tensors: rows,
            metadata: &parsed.metadata,
        };
        let out = serde_json::to_string_pretty(&listing)
            .map_err(|e| Error::json("serializing inspect listing", e))?;
        write_stdout(&format!("{out}\n"))?;
    } else {
        let mut text = String::new();
        for (name, t) in &parsed.tensors {
            let max_abs = t.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            text.push_str(&format!(
                "{name}  {}  [{}]  max|v| = {max_abs:.6e}\n",
                t.dtype.name(),
                shape.join(", ")
            ));
        }
        for (k, v) in &parsed.metadata {
            text.push_str(&format!("__metadata__.{k} = {v}\n"));
        }
        write_stdout(&text)?;
        eprintln!("{} tensors", parsed.tensors.len());
    }
    Ok(0)
}

fn cmd_attack(
    checkpoint: &Path,
    config_path: &Path,
    output: &Path,
    spec_out: Option<&Path>,
    seed: u64,
    sites: &str,
    json: bool,
) -> Result<u8> {
    require_file(checkpoint)?;
    require_file(config_path)?;
    let sites = SiteSet::parse(sites)?;
    let config = ModelConfig::load(config_path)?;
    let mut view = load_checkpoint(checkpoint, &config)?;

    let total = Instant::now();
    let spec = build_gauge_spec(&config, seed, sites)?;
    for layer in 0..config.n_layers {
        let t = Instant::now();
        apply_gauge_layer(&mut view, &spec, layer)?;
        eprintln!("layer {layer}: {:.3} ms", t.elapsed().as_secs_f64() * 1e3);
    }
    let elapsed = total.elapsed().as_secs_f64();
    let params = config.param_count();
    let per_param_ns = elapsed * 1e9 / params as f64;
    eprintln!(
        "transform wall time: {elapsed:.4} s over {params} params \
         ({per_param_ns:.3} ns/param; extrapolated to 70e9 params: ~{:.0} s)",
        per_param_ns * 70e9 / 1e9
    );

    save_checkpoint(&view, output)?;
    if let Some(spec_path) = spec_out {
        save_gauge_spec(&spec, spec_path)?;
    }
    if json {
        print_report(&Report {
            command: "attack",
            seed,
            sites: Some(sites.to_string()),
            max_divergence: None,
            wall_time_seconds: elapsed,
            residual_check: None,
            safe_fraction: None,
        })?;
    }
    Ok(0)
}

fn cmd_transform_adapter(
    adapter_path: &Path,
    spec_path: &Path,
    config_path: &Path,
    direction: Direction,
    output: &Path,
) -> Result<u8> {
    require_file(adapter_path)?;
    require_file(spec_path)?;
    require_file(config_path)?;
    let config = ModelConfig::load(config_path)?;
    let spec = load_gauge_spec(spec_path, &config)?;
    let adapter = load_adapter(adapter_path)?;
    let transformed = match direction {
        Direction::Pullback => pullback_adapter(&adapter, &spec)?,
        Direction::Pushforward => pushforward_adapter(&adapter, &spec)?,
    };
    save_adapter(&transformed, output)?;
    eprintln!(
        "{} of {} targets written to {}",
        match direction {
            Direction::Pullback => "pullback",
            Direction::Pushforward => "pushforward",
        },
        transformed.targets.len(),
        output.display()
    );
    Ok(0)
}

fn load_optional_adapter(path: Option<&Path>) -> Result<Option<LoraAdapter>> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(Some(load_adapter(p)?))
        }
        None => Ok(None),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    path_a: &Path,
    path_b: &Path,
    config_path: &Path,
    adapter_a: Option<&Path>,
    adapter_b: Option<&Path>,
    tolerance: Option<f64>,
    n_inputs: usize,
    seed: u64,
    storage_precision: Option<StoragePrecision>,
    json: bool,
) -> Result<u8> {
    require_file(path_a)?;
    require_file(path_b)?;
    require_file(config_path)?;
    let config = ModelConfig::load(config_path)?;
    let mut view_a = load_checkpoint(path_a, &config)?;
    let mut view_b = load_checkpoint(path_b, &config)?;
    let adapter_a = load_optional_adapter(adapter_a)?;
    let adapter_b = load_optional_adapter(adapter_b)?;

    let tolerance = tolerance.unwrap_or(if storage_precision.is_some() {
        1e-2
    } else {
        1e-10
    });
    if let Some(precision) = storage_precision {
        view_a = view_a.snapped_to(precision.dtype())?;
        view_b = view_b.snapped_to(precision.dtype())?;
        eprintln!(
            "verifying at {} storage precision, tolerance {tolerance:.1e}",
            precision.dtype().name()
        );
    }

    let start = Instant::now();
    let divergence = max_divergence(
        &view_a,
        &view_b,
        adapter_a.as_ref(),
        adapter_b.as_ref(),
        n_inputs,
        seed,
        &config,
    )?;
    let elapsed = start.elapsed().as_secs_f64();

    if json {
        print_report(&Report {
            command: "verify",
            seed,
            sites: None,
            max_divergence: Some(divergence),
            wall_time_seconds: elapsed,
            residual_check: None,
            safe_fraction: None,
        })?;
    } else {
        write_stdout(&format!(
            "max divergence over {n_inputs} inputs: {divergence:.6e}\n"
        ))?;
    }
    if divergence <= tolerance {
        eprintln!("within tolerance {tolerance:.1e}");
        Ok(0)
    } else {
        eprintln!("EXCEEDS tolerance {tolerance:.1e}");
        Ok(1)
    }
}

fn cmd_evade_safelora(
    input: &Path,
    output: &Path,
    report_path: Option<&Path>,
    seed: u64,
    json: bool,
) -> Result<u8> {
    require_file(input)?;
    let parsed = container::read_container(input)?;
    let fetch = |name: &str| -> Result<Matrix> {
        let t = parsed
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if t.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                tensor: name.to_string(),
                expected: vec![0, 0],
                found: t.shape.clone(),
            });
        }
        Matrix::new(t.shape[0], t.shape[1], t.values.clone())
    };
    let w_base = fetch("w_base")?;
    let w_tuned = fetch("w_tuned")?;
    let mut basis = Vec::new();
    while parsed.tensors.contains_key(&format!("basis.{}", basis.len())) {
        basis.push(fetch(&format!("basis.{}", basis.len()))?);
    }
    if basis.is_empty() {
        return Err(Error::MissingTensor("basis.0".to_string()));
    }
    let subspace = SafeSubspace::new(basis)?;

    let start = Instant::now();
    let mut rng = stream_rng(seed, 0, "safelora-evasion");
    let result = construct_evasion_gauge(&w_base, &w_tuned, &subspace, &mut rng)?;
    let residual = crate::linalg::matmul(&result.gauge, &w_tuned)?.sub(&w_base)?;
    let projected = project_residual(&residual, &subspace)?;
    let safe_fraction = {
        let total = residual.frobenius_dot(&residual).sqrt();
        if total == 0.0 {
            1.0
        } else {
            projected.frobenius_dot(&projected).sqrt() / total
        }
    };
    let elapsed = start.elapsed().as_secs_f64();

    let mut out = Container::default();
    let dims = |m: &Matrix| vec![m.rows(), m.cols()];
    for (name, m) in [
        ("gauge", &result.gauge),
        ("safe_component", &result.safe_component),
        ("residual", &residual),
    ] {
        out.tensors.insert(
            name.to_string(),
            TensorData {
                dtype: Dtype::F64,
                shape: dims(m),
                values: m.data().to_vec(),
            },
        );
    }
    container::write_container(output, &out)?;

    let report = Report {
        command: "evade-safelora",
        seed,
        sites: None,
        max_divergence: None,
        wall_time_seconds: elapsed,
        residual_check: Some(result.residual_check),
        safe_fraction: Some(safe_fraction),
    };
    if let Some(p) = report_path {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::json("serializing report", e))?;
        std::fs::write(p, text + "\n")
            .map_err(|e| Error::io(format!("writing report {}", p.display()), e))?;
    }
    if json {
        print_report(&report)?;
    } else {
        write_stdout(&format!(
            "residual_check = {:.6e}, safe fraction = {safe_fraction:.6}\n",
            result.residual_check
        ))?;
    }
    Ok(0)
}

fn cmd_gen_toy(
    config_path: Option<&Path>,
    output: &Path,
    config_out: Option<&Path>,
    seed: u64,
    dtype: &str,
) -> Result<u8> {
    let config = match config_path {
        Some(p) => {
            require_file(p)?;
            ModelConfig::load(p)?
        }
        None => ModelConfig::toy_default(),
    };
    let dtype = match dtype.to_ascii_lowercase().as_str() {
        "f16" => Dtype::F16,
        "bf16" => Dtype::Bf16,
        "f32" => Dtype::F32,
        "f64" => Dtype::F64,
        other => {
            return Err(Error::UnsupportedDtype {
                tensor: "gen-toy output".to_string(),
                dtype: other.to_string(),
            })
        }
    };
    let view = generate_toy_checkpoint(&config, seed, dtype)?;
    save_checkpoint(&view, output)?;
    if let Some(p) = config_out {
        config.save(p)?;
    }
    eprintln!(
        "wrote {} tensors ({} params, {}) to {}",
        view.len(),
        config.param_count(),
        dtype.name(),
        output.display()
    );
    Ok(0)
}
