//! The `survkan` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataio::{generate_synthetic, load_csv, write_csv, SurvivalDataset, SyntheticSpec};
use crate::error::{invalid, Error, Result};
use crate::format::num;
use crate::hazard::survival_curve;
use crate::interpret::{
    attribute, attribution_table, edge_samples_table, export_edge_samples, extract_formula, prune, EdgeSelector,
    DEFAULT_PRUNE_THRESHOLD,
};
use crate::kan::KanNetwork;
use crate::metrics::{evaluate, kaplan_meier, EvalConfig};
use crate::model_io::{load_model, model_to_string, now_stamp, save_model};
use crate::training::{fit, normalized_inputs, random_search, SearchSpace, TrainConfig};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "SURVKAN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "survkan", version, about = "Survival modelling with Kolmogorov-Arnold networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write it with its training report.
    Train(TrainArgs),
    /// Score a model on held-out data (C-index and IBS, x100).
    Eval(EvalArgs),
    /// Write per-subject survival curves over a time grid.
    Predict(PredictArgs),
    /// Prune, fit closed-form terms and export edge samples.
    Interpret(InterpretArgs),
    /// Export edge activations and the Kaplan-Meier curve as tables.
    PlotExport(PlotExportArgs),
    /// Generate a synthetic dataset from a TOML spec.
    Synth(SynthArgs),
    /// Random hyperparameter search with stratified cross-validation.
    Search(SearchArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Delimited data file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "time")]
    time_col: String,
    #[arg(long, default_value = "event")]
    event_col: String,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out_model: PathBuf,
    /// Training report table; defaults to `<out-model>.report.csv`.
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// TOML training config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Training data, used for the censoring distribution.
    #[arg(long)]
    train_data: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    grid_start: f64,
    #[arg(long, allow_hyphen_values = true)]
    grid_end: f64,
    #[arg(long)]
    grid_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InterpretArgs {
    #[arg(long)]
    model: PathBuf,
    /// The model's training data.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_PRUNE_THRESHOLD)]
    prune_threshold: f64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 101)]
    points: usize,
}

#[derive(Debug, Args)]
struct PlotExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 101)]
    points: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output CSV; the spec is copied next to it as `<out>.spec.toml`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 25)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Template for the fields the search does not vary.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_config: PathBuf,
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("survkan: {e}");
            1
        }
    }
}

fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) else {
        return;
    };
    // Fails harmlessly when a pool already exists (e.g. repeated in-process runs).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Interpret(a) => interpret(a),
        Command::PlotExport(a) => plot_export(a),
        Command::Synth(a) => synth(a),
        Command::Search(a) => search(a),
    }
}

fn context(what: impl std::fmt::Display) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{what}: {m}")),
        Error::Parse(m) => Error::Parse(format!("{what}: {m}")),
        Error::Format(m) => Error::Format(format!("{what}: {m}")),
        other => other,
    }
}

fn load(args: &DataArgs) -> Result<SurvivalDataset> {
    load_csv(&args.data, &args.time_col, &args.event_col).map_err(context(args.data.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_toml(&read_text(p)?).map_err(context(p.display())),
        None => Ok(TrainConfig::default()),
    }
}

/// The dataset must carry the model's features, in order.
fn check_columns(net: &KanNetwork, data: &SurvivalDataset) -> Result<()> {
    let expected = &net.normalizer().names;
    if expected.as_slice() != data.column_names() {
        return Err(invalid(format!(
            "data columns {:?} do not match the model's features {:?}",
            data.column_names(),
            expected
        )));
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.lambda {
        config.lambda = v;
    }
    if let Some(v) = a.hidden {
        config.hidden = v;
    }
    if let Some(v) = a.grid {
        config.grid_intervals = v;
    }
    let data = load(&a.data)?;
    let (net, report) = fit(&data, &config)?;
    save_model(&net, &a.out_model)?;
    let report_path = a.out_report.unwrap_or_else(|| with_suffix(&a.out_model, ".report.csv"));
    fs::write(&report_path, report.to_table())?;
    println!("{}", report.summary());
    println!("model written to {}", a.out_model.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let net = load_model(&a.model)?;
    let test = load(&a.data)?;
    let train = load(&DataArgs {
        data: a.train_data.clone(),
        time_col: a.data.time_col.clone(),
        event_col: a.data.event_col.clone(),
    })?;
    check_columns(&net, &test)?;
    let report = evaluate(&net, &test, &train, &EvalConfig::default())?;
    let text = report.to_text();
    fs::write(&a.out_report, &text)?;
    print!("{text}");
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    if a.grid_points < 2 {
        return Err(invalid("grid needs at least two points"));
    }
    if !(a.grid_start.is_finite() && a.grid_end.is_finite()) || a.grid_start < 0.0 || a.grid_end <= a.grid_start {
        return Err(invalid(format!(
            "time grid must be sorted and non-negative, got start {} end {}",
            a.grid_start, a.grid_end
        )));
    }
    let net = load_model(&a.model)?;
    let data = load(&a.data)?;
    check_columns(&net, &data)?;
    let n = a.grid_points;
    let grid: Vec<f64> = (0..n)
        .map(|k| a.grid_start + (a.grid_end - a.grid_start) * k as f64 / (n - 1) as f64)
        .collect();
    let t_max = net.time_scale();
    if a.grid_end > t_max {
        eprintln!("survkan: warning: grid extends beyond the training horizon {}", num(t_max));
    }
    let mut out = String::from("subject,time,survival,extrapolated\n");
    for i in 0..data.len() {
        let curve = survival_curve(&net, data.row(i), &grid, EvalConfig::default().segment_nodes)?;
        for (t, s) in curve.times().iter().zip(curve.survival()) {
            writeln!(out, "{i},{},{},{}", num(*t), num(*s), u8::from(*t > t_max)).unwrap();
        }
    }
    fs::write(&a.out, out)?;
    Ok(())
}

fn edge_file_name(layer: usize, output: usize, input: usize) -> String {
    format!("edge_{layer}_{output}_{input}.csv")
}

fn write_edge_tables(net: &KanNetwork, dir: &Path, points: usize) -> Result<usize> {
    let mut written = 0;
    for (l, layer) in net.layers().iter().enumerate() {
        for j in 0..layer.out_width() {
            for i in 0..layer.in_width() {
                if !layer.edge(j, i).active {
                    continue;
                }
                let selector = EdgeSelector::Index {
                    layer: l,
                    output: j,
                    input: i,
                };
                let samples = export_edge_samples(net, &selector, points)?;
                fs::write(dir.join(edge_file_name(l, j, i)), edge_samples_table(&samples))?;
                written += 1;
            }
        }
    }
    Ok(written)
}

fn interpret(a: InterpretArgs) -> Result<()> {
    let net = load_model(&a.model)?;
    let data = load(&a.data)?;
    check_columns(&net, &data)?;
    fs::create_dir_all(&a.out_dir)?;
    let inputs = normalized_inputs(&net, &data)?;
    let scores = attribute(&net, &inputs)?;
    fs::write(a.out_dir.join("attribution.csv"), attribution_table(&net, &scores))?;
    let pruned = prune(&net, &inputs, a.prune_threshold)?;
    fs::write(a.out_dir.join("pruned_model.txt"), model_to_string(&pruned, &now_stamp())?)?;
    let edges = write_edge_tables(&pruned, &a.out_dir, a.points)?;
    println!("{edges} active edges after pruning at {}", a.prune_threshold);
    if pruned.layers().len() == 1 {
        let model = extract_formula(&pruned, &inputs)?;
        let text = model.to_text();
        fs::write(a.out_dir.join("formula.txt"), &text)?;
        fs::write(a.out_dir.join("formula.toml"), model.to_toml())?;
        print!("{text}");
    } else {
        println!("closed-form extraction needs a network without hidden layers; formula not written");
    }
    Ok(())
}

fn plot_export(a: PlotExportArgs) -> Result<()> {
    let net = load_model(&a.model)?;
    let data = load(&a.data)?;
    check_columns(&net, &data)?;
    fs::create_dir_all(&a.out_dir)?;
    write_edge_tables(&net, &a.out_dir, a.points)?;
    let km = kaplan_meier(data.times(), data.events())?;
    let mut times = data.times().to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut out = String::from("time,survival\n");
    writeln!(out, "0,1").unwrap();
    for t in times {
        writeln!(out, "{},{}", num(t), num(km.value_at(t))).unwrap();
    }
    fs::write(a.out_dir.join("kaplan_meier.csv"), out)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let text = read_text(&a.spec)?;
    let spec: SyntheticSpec =
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", a.spec.display())))?;
    let (data, _) = generate_synthetic(&spec)?;
    write_csv(&data, &a.out, "time", "event")?;
    let canonical = toml::to_string(&spec).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(with_suffix(&a.out, ".spec.toml"), canonical)?;
    println!(
        "{} subjects, {} events written to {}",
        data.len(),
        data.event_count(),
        a.out.display()
    );
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let template = load_config(a.config.as_deref())?;
    let data = load(&a.data)?;
    let outcome = random_search(&data, &SearchSpace::default(), &template, a.trials, a.folds, a.seed)?;
    fs::write(&a.out_config, outcome.best.to_toml())?;
    let mut table = String::from("trial,score,hidden,grid_intervals,base,lambda,learning_rate,weight_decay\n");
    for (t, r) in outcome.trials.iter().enumerate() {
        let c = &r.config;
        writeln!(
            table,
            "{t},{},{},{},{},{},{},{}",
            num(r.score),
            c.hidden,
            c.grid_intervals,
            c.base.name(),
            num(c.lambda),
            num(c.learning_rate),
            num(c.weight_decay)
        )
        .unwrap();
    }
    fs::write(with_suffix(&a.out_config, ".trials.csv"), table)?;
    let best = outcome.trials.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
    println!("best cross-validated NLL {} written to {}", num(best), a.out_config.display());
    Ok(())
}
