use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dataprice_core::agents::{
    best_response_check, generate_world, opt_out_round, population, simulate_population,
    threshold_sweep, BestResponseConfig, TestMode, WorldModel,
};
use dataprice_core::data_io::{
    builtin_schema, load_csv, write_results, Cell, DatasetSchema, OutputFormat, ResultTable,
};
use dataprice_core::experiments::{
    approx_error_experiment, batch_ratio_experiment, batch_ratio_table, crossover_dimension,
    influence_time_experiment, timing_comparison, timing_table, DataSource,
};
use dataprice_core::mechanism::{InfluenceMethod, Interval, MechanismConfig, Mode, Normalization};
use dataprice_core::theory::calibrate_payment_scale;

#[derive(Parser, Debug)]
#[command(
    name = "dataprice",
    version,
    about = "Influence-based data pricing experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// `linear-generated`, a built-in dataset name, or a CSV path (needs --schema).
    #[arg(long, global = true, default_value = "linear-generated")]
    dataset: String,
    /// Schema file overriding the built-in schema.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// CSV file for a built-in dataset name.
    #[arg(long, global = true)]
    data_path: Option<PathBuf>,
    /// Feature count for generated data.
    #[arg(long, global = true, default_value_t = 1)]
    dim: usize,
    #[arg(long, global = true, default_value_t = 0.0)]
    ridge: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Error of first- and second-order influence against exact influence.
    ApproxError {
        #[arg(long, default_value_t = 1000)]
        n_train: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Sum of batch influences over the change in risk, against the closed forms.
    BatchRatio {
        #[arg(long, default_value_t = 500)]
        q: usize,
        #[arg(long, default_value_t = 1500)]
        n: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "1,5,10,25,50,100,150,300"
        )]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
    },
    /// Mean influence per batch index.
    InfluenceTime {
        #[arg(long, default_value_t = 500)]
        q: usize,
        #[arg(long, default_value_t = 30)]
        batches: usize,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
    },
    /// Timing of exact (refit) and approximate influence across dimensions.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,10,50,100,200,400,800")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2000")]
        n_train: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        /// Training points actually scored per path; times are scaled to n-train.
        #[arg(long, default_value_t = 10)]
        eval_points: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Agent population simulations.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scenario {
    Population,
    ThresholdSweep,
    BestResponse,
    OptOut,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TestModeArg {
    Independent,
    FromReports,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Inclusive,
    Exclusive,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Exact,
    First,
    Second,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "population")]
    scenario: Scenario,
    #[arg(long, default_value_t = 1000)]
    agents: usize,
    /// Truthful fraction.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, value_enum, default_value = "independent")]
    test_mode: TestModeArg,
    #[arg(long, default_value_t = 1000)]
    test_size: usize,
    /// Defaults to the whole population in one batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    init_count: usize,
    #[arg(long, value_enum, default_value = "inclusive")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "exact")]
    method: MethodArg,
    /// Divide scores by the closed-form batch correction.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 0.0)]
    effort: f64,
    /// Defaults to 1, or to the effort-covering scale when --effort is set.
    #[arg(long)]
    payment_scale: Option<f64>,
    /// True slope; a random world is drawn from the seed when absent.
    #[arg(long, allow_hyphen_values = true)]
    slope: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    bias: f64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    heuristic_lo: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    heuristic_hi: f64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    p_grid: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 100)]
    n_others: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    deviations: Option<Vec<f64>>,
}

/// Key-value record of a run, written as `manifest.txt`.
struct Manifest(ResultTable);

impl Manifest {
    fn new(command: &str, g: &Global) -> Self {
        let mut m = Manifest(ResultTable::new(&["key", "value"]));
        m.add("tool", "dataprice");
        m.add("version", env!("CARGO_PKG_VERSION"));
        m.add("command", command);
        m.add(
            "args",
            std::env::args().skip(1).collect::<Vec<_>>().join(" "),
        );
        m.add("seed", g.seed);
        m.add("out_dir", g.out_dir.display());
        m.add("dataset", &g.dataset);
        m.add("dim", g.dim);
        m.add("ridge", g.ridge);
        m
    }

    fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        self.0
            .push_row(vec![Cell::Text(key.into()), Cell::Text(value.to_string())]);
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write(&self.0, dir, "manifest.txt", OutputFormat::KeyValue)
    }
}

fn write(table: &ResultTable, dir: &Path, name: &str, format: OutputFormat) -> Result<()> {
    let path = dir.join(name);
    write_results(table, &path, format).with_context(|| format!("writing {}", path.display()))
}

fn summary_table(pairs: &[(&str, Cell)]) -> ResultTable {
    let mut t = ResultTable::new(&["key", "value"]);
    for (k, v) in pairs {
        t.push_row(vec![Cell::Text(k.to_string()), v.clone()]);
    }
    t
}

fn data_source(g: &Global) -> Result<DataSource> {
    if g.dataset == "linear-generated" {
        if g.dim == 0 {
            bail!("--dim must be at least 1");
        }
        return Ok(DataSource::Generated { dim: g.dim });
    }
    let (schema, path) = match builtin_schema(&g.dataset) {
        Some(builtin) => {
            let schema = match &g.schema {
                Some(p) => DatasetSchema::from_file(p)
                    .with_context(|| format!("reading schema {}", p.display()))?,
                None => builtin,
            };
            let path = g
                .data_path
                .clone()
                .with_context(|| format!("dataset `{}` needs --data-path", g.dataset))?;
            (schema, path)
        }
        None => {
            let schema_path = g.schema.as_ref().with_context(|| {
                format!(
                    "`{}` is not a built-in dataset; pass --schema for a CSV path",
                    g.dataset
                )
            })?;
            let schema = DatasetSchema::from_file(schema_path)
                .with_context(|| format!("reading schema {}", schema_path.display()))?;
            (schema, PathBuf::from(&g.dataset))
        }
    };
    let loaded = load_csv(&path, &schema).with_context(|| format!("loading {}", path.display()))?;
    Ok(DataSource::Table {
        name: schema.name,
        data: loaded.dataset,
    })
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    std::fs::create_dir_all(&g.out_dir)
        .with_context(|| format!("creating {}", g.out_dir.display()))?;
    match &cli.command {
        Command::ApproxError {
            n_train,
            n_test,
            trials,
        } => {
            let source = data_source(g)?;
            let mut m = Manifest::new("approx-error", g);
            m.add("n_train", n_train);
            m.add("n_test", n_test);
            m.add("trials", trials);
            let s = approx_error_experiment(&source, *n_train, *n_test, *trials, g.ridge, g.seed)?;
            write(
                &s.to_table(),
                &g.out_dir,
                "approx_error.csv",
                OutputFormat::Csv,
            )?;
            m.write(&g.out_dir)?;
            println!(
                "{}: relative L1 first {:.3e}, second {:.3e}",
                s.dataset, s.first.relative_l1, s.second.relative_l1
            );
        }
        Command::BatchRatio {
            q,
            n,
            batch_sizes,
            trials,
            n_test,
        } => {
            let source = data_source(g)?;
            let mut m = Manifest::new("batch-ratio", g);
            m.add("q", q);
            m.add("n", n);
            m.add("batch_sizes", format!("{batch_sizes:?}"));
            m.add("trials", trials);
            m.add("n_test", n_test);
            let rows =
                batch_ratio_experiment(&source, *q, *n, *n_test, batch_sizes, *trials, g.seed)?;
            write(
                &batch_ratio_table(&rows),
                &g.out_dir,
                "batch_ratio.csv",
                OutputFormat::Csv,
            )?;
            m.write(&g.out_dir)?;
            for r in &rows {
                println!(
                    "b={:<4} inc {:.4} (theory {:.4})  exc {:.4} (theory {:.4})",
                    r.batch_size,
                    r.empirical_inclusive,
                    r.theory_inclusive,
                    r.empirical_exclusive,
                    r.theory_exclusive
                );
            }
        }
        Command::InfluenceTime {
            q,
            batches,
            batch_size,
            trials,
            n_test,
        } => {
            let source = data_source(g)?;
            let mut m = Manifest::new("influence-time", g);
            m.add("q", q);
            m.add("batches", batches);
            m.add("batch_size", batch_size);
            m.add("trials", trials);
            m.add("n_test", n_test);
            let trace = influence_time_experiment(
                &source,
                *q,
                *batches,
                *batch_size,
                *n_test,
                *trials,
                g.seed,
            )?;
            write(
                &trace.to_table(),
                &g.out_dir,
                "influence_time.csv",
                OutputFormat::Csv,
            )?;
            let summary = summary_table(&[
                ("mann_kendall_s", Cell::Float(trace.trend.s)),
                ("mann_kendall_z", Cell::Float(trace.trend.z)),
                (
                    "decreasing_at_95",
                    Cell::Text(trace.trend.decreasing().to_string()),
                ),
                (
                    "first_beats_last",
                    Cell::Int(trace.first_beats_last() as i64),
                ),
            ]);
            write(
                &summary,
                &g.out_dir,
                "influence_time_summary.txt",
                OutputFormat::KeyValue,
            )?;
            m.write(&g.out_dir)?;
            println!(
                "batch 1 mean {:.4e}, batch {} mean {:.4e}, trend z = {:.2}",
                trace.batch_means[0],
                batches,
                trace.batch_means[batches - 1],
                trace.trend.z
            );
        }
        Command::Bench {
            dims,
            n_train,
            n_test,
            eval_points,
            repeats,
        } => {
            let mut m = Manifest::new("bench", g);
            m.add("dims", format!("{dims:?}"));
            m.add("n_train", format!("{n_train:?}"));
            m.add("n_test", n_test);
            m.add("eval_points", eval_points);
            m.add("repeats", repeats);
            let rows = timing_comparison(n_train, dims, *n_test, *eval_points, *repeats, g.seed)?;
            write(
                &timing_table(&rows),
                &g.out_dir,
                "bench.csv",
                OutputFormat::Csv,
            )?;
            let mut summary = ResultTable::new(&["key", "value"]);
            for r in &rows {
                println!(
                    "n={:<5} d={:<4} exact {:.4}s  approx {:.4}s",
                    r.n_train, r.dim, r.exact_seconds, r.approx_seconds
                );
            }
            for &n in n_train {
                let crossover = crossover_dimension(&rows, n);
                summary.push_row(vec![
                    Cell::Text(format!("crossover_dim_n{n}")),
                    crossover.map_or(Cell::Text("none".into()), |d| Cell::Int(d as i64)),
                ]);
                match crossover {
                    Some(d) => println!("n={n}: approximate path faster from d = {d}"),
                    None => println!("n={n}: approximate path never overtakes in this range"),
                }
            }
            write(
                &summary,
                &g.out_dir,
                "bench_summary.txt",
                OutputFormat::KeyValue,
            )?;
            m.write(&g.out_dir)?;
        }
        Command::Simulate(args) => simulate(g, args)?,
    }
    Ok(())
}

fn world_from(g: &Global, a: &SimulateArgs) -> Result<WorldModel> {
    let mut world = match a.slope {
        Some(s) => WorldModel::linear(s, a.bias),
        None => generate_world(g.seed),
    };
    world.heuristic_y_bounds = Interval::new(a.heuristic_lo, a.heuristic_hi)?;
    Ok(world)
}

fn simulate(g: &Global, a: &SimulateArgs) -> Result<()> {
    let world = world_from(g, a)?;
    let payment_scale = match a.payment_scale {
        Some(s) => s,
        None if a.effort > 0.0 => calibrate_payment_scale(
            a.effort,
            a.init_count as f64,
            a.agents as f64,
            world.model_gap(),
        )?,
        None => 1.0,
    };
    let config = MechanismConfig {
        batch_size: a.batch_size.unwrap_or(a.agents.max(1)),
        mode: match a.mode {
            ModeArg::Inclusive => Mode::Inclusive,
            ModeArg::Exclusive => Mode::Exclusive,
        },
        method: match a.method {
            MethodArg::Exact => InfluenceMethod::Exact,
            MethodArg::First => InfluenceMethod::FirstOrder,
            MethodArg::Second => InfluenceMethod::SecondOrder,
        },
        init_count: a.init_count,
        init_x_bounds: world.x_bounds,
        init_y_bounds: world.heuristic_y_bounds,
        effort_cost: a.effort,
        payment_scale,
        normalization: if a.normalize {
            Normalization::ClosedForm
        } else {
            Normalization::None
        },
        ridge: g.ridge,
        ..MechanismConfig::default()
    };
    let test_mode = match a.test_mode {
        TestModeArg::Independent => TestMode::Independent { size: a.test_size },
        TestModeArg::FromReports => TestMode::FromReports,
    };

    let mut m = Manifest::new("simulate", g);
    m.add("scenario", format!("{:?}", a.scenario));
    m.add("agents", a.agents);
    m.add("p", a.p);
    m.add("test_mode", format!("{:?}", a.test_mode));
    m.add("test_size", a.test_size);
    m.add("batch_size", config.batch_size);
    m.add("init_count", a.init_count);
    m.add("mode", config.mode);
    m.add("method", config.method);
    m.add("normalize", a.normalize);
    m.add("effort", a.effort);
    m.add("payment_scale", payment_scale);
    m.add("slope", world.true_params.weights[0]);
    m.add("bias", world.true_params.bias);
    m.add("heuristic_lo", world.heuristic_y_bounds.lo);
    m.add("heuristic_hi", world.heuristic_y_bounds.hi);
    let out = &g.out_dir;

    match a.scenario {
        Scenario::Population => {
            let res = simulate_population(a.agents, a.p, &world, &config, test_mode, g.seed)?;
            write(&res.to_table(), out, "agents.csv", OutputFormat::Csv)?;
            write(&res.ledger.to_table(), out, "ledger.csv", OutputFormat::Csv)?;
            write(
                &res.ledger.summary(&config),
                out,
                "ledger_summary.txt",
                OutputFormat::KeyValue,
            )?;
            let mut pairs = Vec::new();
            for s in ["truthful", "heuristic"] {
                if let Some(v) = res.mean_payment(s) {
                    println!("mean {s} payment {v:.4e}");
                    pairs.push((s, Cell::Float(v)));
                }
            }
            write(
                &summary_table(&pairs),
                out,
                "mean_payments.txt",
                OutputFormat::KeyValue,
            )?;
        }
        Scenario::ThresholdSweep => {
            m.add("p_grid", format!("{:?}", a.p_grid));
            m.add("trials", a.trials);
            let sweep = threshold_sweep(
                a.agents, &a.p_grid, &world, &config, test_mode, a.trials, g.seed,
            )?;
            write(
                &sweep.to_table(),
                out,
                "threshold_sweep.csv",
                OutputFormat::Csv,
            )?;
            let theory = world
                .mixture_params(a.init_count, a.agents, a.p)
                .truthful_threshold()?;
            let summary = summary_table(&[
                (
                    "empirical_flip",
                    sweep.flip.map_or(Cell::Text("none".into()), Cell::Float),
                ),
                ("theoretical_threshold", Cell::Float(theory)),
            ]);
            write(
                &summary,
                out,
                "threshold_summary.txt",
                OutputFormat::KeyValue,
            )?;
            match sweep.flip {
                Some(f) => println!("empirical flip at p = {f:.3}, theory {theory:.3}"),
                None => println!("no sign flip in the grid, theory {theory:.3}"),
            }
        }
        Scenario::BestResponse => {
            let mut br = BestResponseConfig {
                n_others: a.n_others,
                trials: a.trials,
                test_size: a.test_size,
                ..BestResponseConfig::default()
            };
            if let Some(d) = &a.deviations {
                br.deviation_grid = d.clone();
            }
            m.add("n_others", br.n_others);
            m.add("trials", br.trials);
            m.add("deviations", format!("{:?}", br.deviation_grid));
            let res = best_response_check(&world, &br, g.seed)?;
            write(&res.to_table(), out, "best_response.csv", OutputFormat::Csv)?;
            let summary = summary_table(&[
                ("argmax_deviation", Cell::Float(res.argmax)),
                (
                    "fitted_peak",
                    res.fitted_peak
                        .map_or(Cell::Text("none".into()), Cell::Float),
                ),
            ]);
            write(
                &summary,
                out,
                "best_response_summary.txt",
                OutputFormat::KeyValue,
            )?;
            println!("influence peaks at deviation {}", res.argmax);
        }
        Scenario::OptOut => {
            let profiles = population(a.agents, a.p, a.effort)?;
            let res = opt_out_round(&profiles, &world, &config, test_mode, g.seed)?;
            write(&res.first.to_table(), out, "round1.csv", OutputFormat::Csv)?;
            write(&res.second.to_table(), out, "round2.csv", OutputFormat::Csv)?;
            let summary = summary_table(&[
                ("left", Cell::Int(res.left.len() as i64)),
                ("round1_total_payout", Cell::Float(res.first.total_payout())),
                (
                    "round1_payout_to_stayers",
                    Cell::Float(res.payout_to_stayers_before()),
                ),
                (
                    "round2_total_payout",
                    Cell::Float(res.second.total_payout()),
                ),
            ]);
            write(&summary, out, "opt_out_summary.txt", OutputFormat::KeyValue)?;
            println!("{} agents opted out", res.left.len());
        }
    }
    m.write(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
