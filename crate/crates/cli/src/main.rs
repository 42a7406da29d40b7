use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use relu2attn::attn::{resource_report, TransformerNetwork};
use relu2attn::compiler::{certificate, compile_network_with, tune_lambda, BudgetPolicy, CompileOptions, Decomposition};
use relu2attn::json::to_canonical_string;
use relu2attn::par::{configure_threads_from_env, Execution};
use relu2attn::relu::ReluNetwork;
use relu2attn::toolkit::{build_primitive, PrimitiveName, PrimitiveRequest};
use relu2attn::verify::{
    hardmax_sweep, onelayer_sweep, relu_target, softrelu_sweep, sweep_csv, verify_networks, DEFAULT_SAMPLES,
    DEFAULT_SEED,
};
use relu2attn::Error;

/// Compile ReLU networks into attention-only softmax Transformers and check them.
#[derive(Parser)]
#[command(name = "relu2attn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecompositionArg {
    PerLayer,
    Sandwich,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Theory,
    Sensitivity,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gadget {
    Hardmax,
    Softrelu,
    Onelayer,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a ReLU network (JSON) into an attention network plus certificate.
    Compile {
        #[arg(long)]
        relu: PathBuf,
        /// Token layout `d,n`; the network input has `d·n` entries.
        #[arg(long, value_parser = parse_layout)]
        layout: (usize, usize),
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        cx: f64,
        /// Lower each layer's λ on a validation sample while the error stays within ε.
        #[arg(long)]
        tune_lambda: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "per-layer")]
        decomposition: DecompositionArg,
        #[arg(long, value_enum, default_value = "theory")]
        policy: PolicyArg,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Measure an attention network against its ReLU source on uniform samples.
    Verify {
        #[arg(long)]
        relu: PathBuf,
        #[arg(long)]
        attn: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        cx: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Include wall-clock time in the JSON report.
        #[arg(long)]
        timing: bool,
    },
    /// Build a packaged approximator (mult, inv, max, min, clip, sqrt, alpha, sigma, uap1d).
    Primitive {
        #[arg(long)]
        name: String,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        cx: Option<f64>,
        /// Clipping half-width (clip only).
        #[arg(long)]
        c: Option<f64>,
        /// Number of factors (mult only).
        #[arg(long)]
        dim: Option<usize>,
        /// Interpolation knots for the sin(πx) demo (uap1d only).
        #[arg(long)]
        knots: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace measured error against λ or ε and write a CSV table.
    Sweep {
        #[arg(long, value_enum)]
        gadget: Gadget,
        #[arg(long)]
        csv: PathBuf,
        /// Explicit λ values, comma separated.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Linear λ grid `start:end:count`, inclusive.
        #[arg(long)]
        lambda_range: Option<String>,
        /// Explicit ε values for the one-layer sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        /// Extra halvings of the last ε for the one-layer sweep.
        #[arg(long, default_value_t = 0)]
        halvings: usize,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        gap: f64,
        #[arg(long, default_value_t = 10.0)]
        cs: f64,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        units: usize,
        #[arg(long, default_value_t = 1.0)]
        cx: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn parse_layout(s: &str) -> std::result::Result<(usize, usize), String> {
    let (d, n) = s.split_once(',').ok_or("expected `d,n`")?;
    let d: usize = d.trim().parse().map_err(|e| format!("bad d: {e}"))?;
    let n: usize = n.trim().parse().map_err(|e| format!("bad n: {e}"))?;
    Ok((d, n))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::precondition("input", format!("cannot read {}: {e}", path.display())))
        .map_err(Into::into)
}

/// Writes every file through a temporary sibling and renames only after all contents are ready.
fn write_all_atomic(files: &[(&Path, String)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, content) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)
            .map_err(|e| Error::precondition("output", format!("cannot write to {}: {e}", dir.display())))?;
        tmp.write_all(content.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        staged.push((tmp, *path));
    }
    for (tmp, path) in staged {
        tmp.persist(path)
            .map_err(|e| Error::precondition("output", format!("cannot create {}: {}", path.display(), e.error)))?;
    }
    Ok(())
}

fn cert_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".cert.json");
    PathBuf::from(s)
}

fn lambda_grid(list: &[f64], range: Option<&str>) -> Result<Vec<f64>> {
    let mut out = list.to_vec();
    if let Some(r) = range {
        let parts: Vec<&str> = r.split(':').collect();
        let bad = || Error::Parse(format!("--lambda-range expects start:end:count, got `{r}`"));
        if parts.len() != 3 {
            return Err(bad().into());
        }
        let start: f64 = parts[0].parse().map_err(|_| bad())?;
        let end: f64 = parts[1].parse().map_err(|_| bad())?;
        let count: usize = parts[2].parse().map_err(|_| bad())?;
        out.extend((0..count).map(|k| {
            if count == 1 {
                start
            } else {
                start + (end - start) * k as f64 / (count - 1) as f64
            }
        }));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let exec = Execution::Parallel;
    match cli.command {
        Command::Compile {
            relu,
            layout,
            epsilon,
            cx,
            tune_lambda: tune,
            out,
            decomposition,
            policy,
            samples,
            seed,
        } => {
            let net = ReluNetwork::from_json_str(&read(&relu)?)?;
            let options = CompileOptions {
                decomposition: match decomposition {
                    DecompositionArg::PerLayer => Decomposition::PerLayer,
                    DecompositionArg::Sandwich => Decomposition::Sandwich,
                },
                policy: match policy {
                    PolicyArg::Theory => BudgetPolicy::Theory,
                    PolicyArg::Sensitivity => BudgetPolicy::Sensitivity,
                },
                ..CompileOptions::default()
            };
            let compiled = compile_network_with(&net, layout, cx, epsilon, &options)?;
            let rows = compiled.out_rows();
            let attn = if tune {
                tune_lambda(
                    &compiled.network,
                    |x: &_| relu_target(&net, x, rows),
                    cx,
                    epsilon,
                    samples,
                    seed.wrapping_add(1),
                    exec,
                )?
            } else {
                compiled.network.clone()
            };
            let report = verify_networks(&net, &attn, samples, seed, cx, epsilon, exec)?;
            let mut cert = certificate(&compiled, report.measured_max_error, samples, seed);
            if tune {
                let tuned: Vec<f64> = attn.layers().iter().map(|l| l.lambda()).collect();
                cert["tuned_lambda"] = Value::from(tuned);
            }
            cert["resources"] = serde_json::to_value(resource_report(&attn))?;
            write_all_atomic(&[
                (&out, to_canonical_string(&attn.to_json())),
                (&cert_path(&out), to_canonical_string(&cert)),
            ])?;
            println!(
                "compiled {} attention layers (lambda_max {:.6e}); measured max error {:.6e} over {samples} samples (eps {epsilon})",
                attn.layers().len(),
                resource_report(&attn).lambda_max,
                report.measured_max_error
            );
        }
        Command::Verify {
            relu,
            attn,
            samples,
            seed,
            cx,
            epsilon,
            report,
            timing,
        } => {
            let net = ReluNetwork::from_json_str(&read(&relu)?)?;
            let attn = TransformerNetwork::from_json_str(&read(&attn)?)?;
            let mut result = verify_networks(&net, &attn, samples, seed, cx, epsilon, exec)?;
            let elapsed = result.wall_time_ms;
            if !timing {
                result.wall_time_ms = None;
            }
            println!("{:<20} {}", "samples", result.samples);
            println!("{:<20} {}", "seed", result.seed);
            println!("{:<20} {}", "C_X", result.domain.c_x);
            println!("{:<20} {}x{}", "layout", result.domain.layout[0], result.domain.layout[1]);
            println!("{:<20} {:.6e}", "measured_max_error", result.measured_max_error);
            println!("{:<20} {}", "target_eps", result.target_eps);
            println!("{:<20} {}", "pass", result.pass);
            if timing {
                println!("{:<20} {:.3}", "wall_time_ms", elapsed.unwrap_or(0.0));
            }
            if let Some(path) = report {
                write_all_atomic(&[(&path, to_canonical_string(&result))])?;
            }
        }
        Command::Primitive {
            name,
            epsilon,
            cx,
            c,
            dim,
            knots,
            out,
        } => {
            let mut req = PrimitiveRequest::new(PrimitiveName::parse(&name)?, epsilon);
            req.c_x = cx;
            req.c = c;
            req.dim = dim;
            req.knots = knots;
            let prim = build_primitive(&req, exec)?;
            let cert = &prim.certificate;
            write_all_atomic(&[
                (&out, to_canonical_string(&prim.network().to_json())),
                (&cert_path(&out), to_canonical_string(cert)),
            ])?;
            println!(
                "{name}: grid error {:.6e} (bound {:.6e}, {} points) pass={}",
                cert.combined_error, cert.bound, cert.grid_points, cert.pass
            );
        }
        Command::Sweep {
            gadget,
            csv,
            lambdas,
            lambda_range,
            eps,
            halvings,
            n,
            gap,
            cs,
            d,
            units,
            cx,
            samples,
            grid,
            seed,
        } => {
            let rows = match gadget {
                Gadget::Hardmax => {
                    let grid_l = lambda_grid(&lambdas, lambda_range.as_deref())?;
                    hardmax_sweep(n, gap, &grid_l, samples, seed)?
                }
                Gadget::Softrelu => {
                    let grid_l = lambda_grid(&lambdas, lambda_range.as_deref())?;
                    softrelu_sweep(cs, n, &grid_l, grid, seed)?
                }
                Gadget::Onelayer => {
                    let mut list = eps.clone();
                    if let Some(&last) = eps.last() {
                        list.extend((1..=halvings).map(|k| last / 2f64.powi(k as i32)));
                    }
                    onelayer_sweep(d, n, units, cx, &list, samples, seed, exec)?
                }
            };
            write_all_atomic(&[(&csv, sweep_csv(&rows))])?;
            println!("wrote {} rows to {}", rows.len(), csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    configure_threads_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.downcast_ref::<Error>().map_or(1, Error::exit_code);
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
