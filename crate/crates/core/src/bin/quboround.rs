use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use quboround::eval::{accuracy, layer_costs, scatter_sample};
use quboround::io::{self, CompareRow};
use quboround::pipeline::{
    adaround_plan, apply_plan, quantize_adaround, rtn_plan, select_calibration, AdaroundOptions, Calibration,
    DEFAULT_CALIBRATION_FRACTION,
};
use quboround::solve::{InitPolicy, SolveConfig, RNG_NAME};
use quboround::{DenseNetwork, Error, Sample};

const DEFAULT_SEED: u64 = 42;

/// Post-training quantization of dense networks by QUBO-based adaptive rounding.
#[derive(Debug, Parser)]
#[command(name = "quboround", version)]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Adaround,
    Rtn,
}

#[derive(Debug, clap::Args)]
struct CalibrationArgs {
    /// Fraction of the data set used for calibration, sampled with the seed.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_FRACTION)]
    calib_frac: f64,

    /// Separate calibration CSV; overrides --calib-frac.
    #[arg(long)]
    calib_data: Option<PathBuf>,

    /// Seed for calibration sampling and the annealer.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, clap::Args)]
struct SolverArgs {
    /// Annealing restarts per subproblem.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,

    /// Sweeps per restart (default: 100 x subproblem size).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    sweeps: Option<u64>,

    /// Solve subproblems by exhaustive enumeration when they have at most 24 variables.
    #[arg(long)]
    exact: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize a model and write the quantized model file.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
        bits: u8,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[command(flatten)]
        calibration: CalibrationArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rounding plan.
        #[arg(long)]
        plan_out: Option<PathBuf>,
        /// Write every averaged subproblem matrix as CSV into this directory.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Print the accuracy of a float or quantized model on a data set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// The model file is a quantized model.
        #[arg(long)]
        quantized: bool,
    },
    /// Compare round-to-nearest and adaptive rounding across bit widths.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated bit widths.
        #[arg(long, value_delimiter = ',', default_value = "8,4,2,1",
              value_parser = clap::value_parser!(u8).range(1..=8))]
        bits_list: Vec<u8>,
        #[command(flatten)]
        calibration: CalibrationArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cost and accuracy of random, round-to-nearest and adaptive plans.
    Scatter {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
        bits: u8,
        /// Number of random plans.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[command(flatten)]
        calibration: CalibrationArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Invariant(_) => 3,
        Error::InvalidConfig(_) => 1,
        _ => 2,
    }
}

fn load_inputs(model: &PathBuf, data: &PathBuf) -> quboround::Result<(DenseNetwork, Vec<Sample>)> {
    let net = io::load_model(model)?;
    let samples = io::load_dataset(data)?;
    io::check_dataset(&samples, net.input_width(), net.output_width())?;
    Ok((net, samples))
}

fn calibration_set(net: &DenseNetwork, samples: &[Sample], args: &CalibrationArgs) -> quboround::Result<Vec<Sample>> {
    match &args.calib_data {
        Some(path) => {
            let cal = io::load_dataset(path)?;
            io::check_dataset(&cal, net.input_width(), usize::MAX)?;
            Ok(cal)
        }
        None => select_calibration(samples, args.calib_frac, args.seed),
    }
}

fn options(cal: &CalibrationArgs, solver: &SolverArgs) -> AdaroundOptions {
    AdaroundOptions {
        solve: SolveConfig {
            seed: cal.seed,
            restarts: solver.restarts as usize,
            sweeps: solver.sweeps.map(|s| s as usize),
            init: InitPolicy::RtnSeed,
            ..SolveConfig::default()
        },
        exact: solver.exact,
        calibration_fraction: cal.calib_data.is_none().then_some(cal.calib_frac),
    }
}

/// Recomputes the total cost and checks the adaptive plan never exceeds the
/// round-to-nearest one.
fn check_improvement(ada: f64, rtn: f64) -> quboround::Result<()> {
    if ada > rtn {
        return Err(Error::Invariant(format!("adaptive cost {ada} exceeds round-to-nearest cost {rtn}")));
    }
    Ok(())
}

fn run(cli: Cli) -> quboround::Result<()> {
    match cli.command {
        Command::Quantize {
            model,
            data,
            bits,
            method,
            calibration,
            solver,
            out,
            plan_out,
            dump_dir,
        } => {
            let (net, samples) = load_inputs(&model, &data)?;
            let cal_samples = calibration_set(&net, &samples, &calibration)?;
            let opts = options(&calibration, &solver);
            let started = Instant::now();
            let cal = Calibration::new(&net, &cal_samples, bits)?;
            let batches = cal.batches(&net)?;
            let plan = match method {
                MethodArg::Rtn => rtn_plan(&net, &cal, &batches),
                MethodArg::Adaround => adaround_plan(&net, &cal, &batches, &opts)?,
            };
            let qnet = match method {
                MethodArg::Rtn => quboround::pipeline::quantize_rtn(&net, &cal_samples, bits)?,
                MethodArg::Adaround => apply_plan(&net, &cal.scales, &plan)?,
            };
            let elapsed = started.elapsed();
            io::save_quantized(&out, &qnet)?;
            if let Some(path) = plan_out {
                io::save_plan(path, &plan)?;
            }
            if let Some(dir) = dump_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                for batch in &batches {
                    for i in 0..batch.outputs() {
                        let path = dir.join(format!("layer{}_neuron{}.csv", batch.layer, i));
                        io::write_text(path, &io::matrix_csv(&batch.subproblem(i)))?;
                    }
                }
            }
            let costs = layer_costs(&batches, &plan)?;
            println!("# method={} bits={bits} seed={} rng={RNG_NAME}", method_name(method), calibration.seed);
            println!("# calibration_samples={} elapsed_ms={}", cal_samples.len(), elapsed.as_millis());
            for (l, c) in costs.iter().enumerate() {
                println!("# layer {l} qubo_cost={}", io::format_sig17(*c));
            }
            println!("# total qubo_cost={}", io::format_sig17(costs.iter().sum()));
            println!("layer,i,energy");
            for (l, lp) in plan.layers.iter().enumerate() {
                for (i, e) in lp.energies.iter().enumerate() {
                    println!("{l},{i},{}", io::format_sig17(*e));
                }
            }
        }
        Command::Eval { model, data, quantized } => {
            let samples = io::load_dataset(&data)?;
            let acc = if quantized {
                let qnet = io::load_quantized(&model)?;
                let classes = qnet.layers.last().map_or(0, |l| l.outputs());
                io::check_dataset(&samples, qnet.input_width(), classes)?;
                accuracy(&qnet, &samples)?
            } else {
                let net = io::load_model(&model)?;
                io::check_dataset(&samples, net.input_width(), net.output_width())?;
                accuracy(&net, &samples)?
            };
            println!("accuracy={acc}");
        }
        Command::Compare {
            model,
            data,
            bits_list,
            calibration,
            solver,
            out,
        } => {
            let (net, samples) = load_inputs(&model, &data)?;
            let cal_samples = calibration_set(&net, &samples, &calibration)?;
            let opts = options(&calibration, &solver);
            println!("# seed={} rng={RNG_NAME}", calibration.seed);
            println!("# float accuracy={}", accuracy(&net, &samples)?);
            let mut rows = Vec::new();
            for &bits in &bits_list {
                let cal = Calibration::new(&net, &cal_samples, bits)?;
                let batches = cal.batches(&net)?;
                let rtn = rtn_plan(&net, &cal, &batches);
                let rtn_net = quboround::pipeline::quantize_rtn(&net, &cal_samples, bits)?;
                let (ada_net, ada) = quantize_adaround(&net, &cal_samples, bits, &opts)?;
                let rtn_cost: f64 = layer_costs(&batches, &rtn)?.iter().sum();
                let ada_cost: f64 = layer_costs(&batches, &ada)?.iter().sum();
                check_improvement(ada_cost, rtn_cost)?;
                for (method, acc, cost) in [
                    ("rtn", accuracy(&rtn_net, &samples)?, rtn_cost),
                    ("adaround", accuracy(&ada_net, &samples)?, ada_cost),
                ] {
                    println!("bits={bits} method={method} accuracy={acc} qubo_cost={}", io::format_sig17(cost));
                    rows.push(CompareRow {
                        bits,
                        method,
                        accuracy: acc,
                        qubo_cost: cost,
                    });
                }
            }
            io::write_text(&out, &io::compare_csv(&rows))?;
        }
        Command::Scatter {
            model,
            data,
            bits,
            samples: count,
            calibration,
            solver,
            out,
        } => {
            let (net, samples) = load_inputs(&model, &data)?;
            let cal_samples = calibration_set(&net, &samples, &calibration)?;
            let opts = options(&calibration, &solver);
            let rows = scatter_sample(&net, &samples, &cal_samples, bits, count as usize, calibration.seed, &opts)?;
            println!("# seed={} rng={RNG_NAME} rows={}", calibration.seed, rows.len());
            io::write_text(&out, &io::scatter_csv(&rows))?;
        }
    }
    Ok(())
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Adaround => "adaround",
        MethodArg::Rtn => "rtn",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
