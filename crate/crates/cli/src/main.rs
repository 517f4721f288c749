use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use relu_landscape::dynamics::{
    self, angle_2d, group_neurons, loss_csv, neuron_status, parse_loss_csv, parse_trace_csv, saddle_escape_report,
    trace_csv, NeuronStatus, ReportOptions, TrainConfig, DEFAULT_EPS_RATE,
};
use relu_landscape::embedding::{
    add_inactive_propagation, add_negative_units, add_orthogonal_units, find_negative_candidates,
    replication_preserves_stationarity, replication_preserves_type1_min, unit_replicate, ReplicationSpec,
};
use relu_landscape::experiments::experiment;
use relu_landscape::net::{load_checkpoint, load_dataset, save_checkpoint, save_dataset};
use relu_landscape::odd::{directional_odd, fd_richardson, Direction};
use relu_landscape::stationarity::{classify, directional_taylor, perturbation_min_test, PerturbationOptions};
use relu_landscape::{Dataset, Error, Network, Tolerances};

#[derive(Parser)]
#[command(name = "relu-landscape", version, about = "Loss-landscape analysis for one-hidden-layer piecewise-linear networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with full-batch gradient descent and write checkpoint, trace and events.
    Train(TrainArgs),
    /// Classify a checkpoint as non-stationary, type-1 minimum or saddle.
    Classify(ClassifyArgs),
    /// One-sided directional derivatives with a finite-difference cross-check.
    Odd(OddArgs),
    /// Widen a network without changing its function.
    Embed(EmbedArgs),
    /// Random-perturbation test around a checkpoint.
    Perturb(PerturbArgs),
    /// Plateau, escape and grouping summary of a training run.
    Report(ReportArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    /// Dataset JSON with fields "X" and "Y".
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Built-in experiment whose dataset to use.
    #[arg(long)]
    experiment: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    experiment: Option<String>,
    /// JSON mirroring the training-config fields plus "experiment" or "dataset".
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Proximity,
}

impl Mode {
    fn tolerances(self) -> Tolerances {
        match self {
            Mode::Exact => Tolerances::exact(),
            Mode::Proximity => Tolerances::proximity(),
        }
    }
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataSource,
    #[arg(long, value_enum, default_value = "exact")]
    mode: Mode,
}

#[derive(Args)]
struct OddArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataSource,
    /// JSON array of flattened directions (W row-major, then H row-major), or a single one.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    direction: Option<PathBuf>,
    /// Number of random unit directions.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print the Taylor coefficients c1..c4.
    #[arg(long)]
    taylor: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedOp {
    Replicate,
    Orthogonal,
    Negative,
    Inactive,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Needed by orthogonal, negative and --check.
    #[arg(long, conflicts_with = "experiment")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, value_enum)]
    op: EmbedOp,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    check: bool,
    #[arg(long, value_enum, default_value = "exact")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataSource,
    #[arg(long)]
    zeta: f64,
    #[arg(long, default_value_t = 5000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Relative band around each kink treated as lying on it.
    #[arg(long, default_value_t = relu_landscape::net::DEFAULT_TOL_ACT)]
    boundary_tol: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    cos_tol: f64,
    #[arg(long)]
    small_tol: Option<f64>,
    /// Plateau threshold; defaults to the one recorded at training time.
    #[arg(long)]
    eps_rate: Option<f64>,
}

#[derive(Deserialize)]
struct Detector {
    eps_rate: f64,
    window: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Odd(a) => odd(a),
        Command::Embed(a) => embed(a),
        Command::Perturb(a) => perturb(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_) | Error::Parse { .. } | Error::Contract(_) | Error::DimensionMismatch(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

type Result<T> = relu_landscape::Result<T>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(Error::Io)
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_json<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &'static str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse { what, reason: e.to_string() })
}

fn dataset_from(dataset: Option<&Path>, experiment_name: Option<&str>) -> Result<Dataset> {
    match (dataset, experiment_name) {
        (Some(p), _) => load_dataset(&read(p)?),
        (None, Some(name)) => Ok(experiment(name)?.dataset),
        (None, None) => Err(Error::Validation("pass --dataset or --experiment".into())),
    }
}

fn load_inputs(checkpoint: &Path, data: &DataSource) -> Result<(Network, Dataset)> {
    let net = load_checkpoint(&read(checkpoint)?)?;
    let data = dataset_from(data.dataset.as_deref(), data.experiment.as_deref())?;
    Ok((net, data))
}

#[derive(Deserialize)]
struct ConfigFile {
    experiment: Option<String>,
    dataset: Option<Value>,
    eps_rate: Option<f64>,
    #[serde(flatten)]
    config: TrainConfig,
}

fn train(a: TrainArgs) -> Result<()> {
    let (mut config, data, eps_rate) = match (&a.experiment, &a.config) {
        (Some(name), _) => {
            let e = experiment(name)?;
            (e.config, e.dataset, e.eps_rate)
        }
        (None, Some(path)) => {
            let file: ConfigFile = parse_json(&read(path)?, "config")?;
            let data = match (file.dataset, file.experiment) {
                (Some(v), _) => load_dataset(v.to_string().as_bytes())?,
                (None, Some(name)) => experiment(&name)?.dataset,
                (None, None) => return Err(Error::Validation("config needs \"dataset\" or \"experiment\"".into())),
            };
            (file.config, data, file.eps_rate.unwrap_or(DEFAULT_EPS_RATE))
        }
        (None, None) => return Err(Error::Validation("pass --experiment or --config".into())),
    };
    if let Some(seed) = a.seed {
        config.init_seed = seed;
    }
    if let Some(epochs) = a.epochs {
        config.epochs = epochs;
    }
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    if let Some(r) = a.record_every {
        config.record_every = r;
    }
    config.validate()?;
    let (trace, net) = dynamics::train(&config, &data)?;
    let opts = ReportOptions { eps_rate, ..ReportOptions::default() };
    let report = saddle_escape_report(&trace, &data, opts)?;
    fs::create_dir_all(&a.out)?;
    write(&a.out.join("checkpoint.json"), save_checkpoint(&net))?;
    write(&a.out.join("dataset.json"), save_dataset(&data))?;
    write(&a.out.join("config.json"), serde_json::to_string_pretty(&config).expect("config serializes"))?;
    write(&a.out.join("trace.csv"), trace_csv(&trace))?;
    write(&a.out.join("loss.csv"), loss_csv(&trace.losses))?;
    write(&a.out.join("events.json"), report.events_json())?;
    write(&a.out.join("detector.json"), json!({ "eps_rate": eps_rate, "window": opts.window }).to_string())?;
    println!(
        "{}",
        json!({
            "out": a.out.display().to_string(),
            "final_loss": num(*trace.losses.last().expect("nonempty")),
            "plateaus": report.plateaus.len(),
            "escapes": report.escapes.len(),
        })
    );
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let (net, data) = load_inputs(&a.checkpoint, &a.data)?;
    println!("{}", classify(&net, &data, &a.mode.tolerances())?.to_json());
    Ok(())
}

fn odd(a: OddArgs) -> Result<()> {
    let (net, data) = load_inputs(&a.checkpoint, &a.data)?;
    let directions: Vec<Direction> = match (&a.direction, a.random) {
        (Some(path), _) => {
            let v: Value = parse_json(&read(path)?, "direction")?;
            let rows: Vec<Vec<f64>> = if v.get(0).is_some_and(Value::is_array) {
                serde_json::from_value(v)
            } else {
                serde_json::from_value(v).map(|r| vec![r])
            }
            .map_err(|e| Error::Parse { what: "direction", reason: e.to_string() })?;
            rows.iter().map(|r| Direction::from_flat(&net, r)).collect::<Result<_>>()?
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(Error::Validation("--random needs at least 1 direction".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            (0..n).map(|_| Direction::random_unit(&net, &mut rng)).collect()
        }
        (None, None) => return Err(Error::Validation("pass --direction or --random".into())),
    };
    let mut header = String::from("index,odd,fd_oracle");
    if a.taylor {
        header.push_str(",c1,c2,c3,c4");
    }
    println!("{header}");
    for (idx, dir) in directions.iter().enumerate() {
        let d1 = directional_odd(&net, &data, dir)?;
        let fd = fd_richardson(&net, &data, dir, 1e-3).unwrap_or(f64::NAN);
        let mut line = format!("{idx},{},{}", num(d1), num(fd));
        if a.taylor {
            let t = directional_taylor(&net, &data, dir, relu_landscape::net::DEFAULT_TOL_ACT)?;
            for c in [t.c1, t.c2, t.c3, t.c4] {
                line.push(',');
                line.push_str(&num(c));
            }
        }
        println!("{line}");
    }
    Ok(())
}

#[derive(Deserialize)]
struct UnitsSpec {
    h_values: Option<Vec<Vec<f64>>>,
    w_candidates: Option<Vec<Vec<f64>>>,
    w_list: Option<Vec<Vec<f64>>>,
    count: Option<usize>,
}

fn matrix(rows: &[Vec<f64>], what: &'static str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse { what, reason: "ragged rows".into() });
    }
    Array2::from_shape_vec((rows.len(), ncols), rows.concat()).map_err(|e| Error::Parse { what, reason: e.to_string() })
}

fn embed(a: EmbedArgs) -> Result<()> {
    let net = load_checkpoint(&read(&a.checkpoint)?)?;
    let data = || dataset_from(a.dataset.as_deref(), a.experiment.as_deref());
    let spec_bytes = read(&a.spec)?;
    let tol = a.mode.tolerances();
    let mut predicates = serde_json::Map::new();
    let embedded = match a.op {
        EmbedOp::Replicate => {
            let spec = ReplicationSpec::from_json(&spec_bytes)?;
            if a.check {
                let d = data()?;
                let s = replication_preserves_stationarity(&net, &d, &spec, &tol)?;
                let m = replication_preserves_type1_min(&net, &d, &spec, &tol)?;
                predicates.insert("preserves_stationarity".into(), serde_json::to_value(s).expect("serializes"));
                predicates.insert("preserves_type1_min".into(), serde_json::to_value(m).expect("serializes"));
            }
            unit_replicate(&net, &spec)?
        }
        EmbedOp::Orthogonal => {
            let spec: UnitsSpec = parse_json(&spec_bytes, "embedding spec")?;
            let h = matrix(spec.h_values.as_deref().unwrap_or_default(), "h_values")?;
            add_orthogonal_units(&net, &data()?, h.view())?
        }
        EmbedOp::Negative => {
            let spec: UnitsSpec = parse_json(&spec_bytes, "embedding spec")?;
            let d = data()?;
            let h = matrix(spec.h_values.as_deref().unwrap_or_default(), "h_values")?;
            let w = match spec.w_candidates {
                Some(rows) => matrix(&rows, "w_candidates")?,
                None => find_negative_candidates(&d, spec.count.unwrap_or(h.ncols()), a.seed, 100_000)?,
            };
            add_negative_units(&net, &d, h.view(), w.view())?
        }
        EmbedOp::Inactive => {
            let spec: UnitsSpec = parse_json(&spec_bytes, "embedding spec")?;
            let w = matrix(spec.w_list.as_deref().unwrap_or_default(), "w_list")?;
            add_inactive_propagation(&net, w.view())?
        }
    };
    write(&a.out, save_checkpoint(&embedded))?;
    if a.check {
        let d = data()?;
        let before = classify(&net, &d, &tol)?;
        let after = classify(&embedded, &d, &tol)?;
        let probe = embedded.predict(d.x())? - net.predict(d.x())?;
        let deviation = probe.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        predicates.insert("before".into(), json!(before.classification.as_str()));
        predicates.insert("after".into(), json!(after.classification.as_str()));
        predicates.insert("stationary_before".into(), json!(before.stationary));
        predicates.insert("stationary_after".into(), json!(after.stationary));
        predicates.insert("output_deviation".into(), json!(num(deviation)));
        println!("{}", serde_json::to_string_pretty(&Value::Object(predicates)).expect("serializes"));
    }
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let (net, data) = load_inputs(&a.checkpoint, &a.data)?;
    let opts = PerturbationOptions { bins: a.bins, boundary_tol: a.boundary_tol, ..PerturbationOptions::default() };
    let r = perturbation_min_test(&net, &data, a.zeta, a.trials, a.seed, opts)?;
    println!("zeta,{}", num(r.zeta));
    println!("cap,{}", num(r.cap));
    println!("trials,{}", r.trials);
    println!("rejected,{}", r.rejected);
    println!("min,{}", num(r.min));
    println!("max,{}", num(r.max));
    println!("all_nonnegative,{}", r.all_nonnegative);
    println!("bin_lo,bin_hi,count");
    for (lo, hi, c) in &r.histogram {
        println!("{},{},{c}", num(*lo), num(*hi));
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let dir = &a.run;
    let config: TrainConfig = parse_json(&read(&dir.join("config.json"))?, "config")?;
    let data = load_dataset(&read(&dir.join("dataset.json"))?)?;
    let losses = parse_loss_csv(&String::from_utf8_lossy(&read(&dir.join("loss.csv"))?))?;
    let text = String::from_utf8_lossy(&read(&dir.join("trace.csv"))?).into_owned();
    let trace = parse_trace_csv(&text, losses, config, data.input_dim(), data.outputs())?;
    let final_net = load_checkpoint(&read(&dir.join("checkpoint.json"))?)?;
    let mut opts = ReportOptions { cos_tol: a.cos_tol, small_tol: a.small_tol, ..ReportOptions::default() };
    if let Ok(bytes) = fs::read(dir.join("detector.json")) {
        let d: Detector = parse_json(&bytes, "detector")?;
        opts.eps_rate = d.eps_rate;
        opts.window = d.window;
    }
    if let Some(e) = a.eps_rate {
        opts.eps_rate = e;
    }
    let summary = saddle_escape_report(&trace, &data, opts)?;
    let groups = group_neurons(&final_net, &data, a.cos_tol)?;
    let status = neuron_status(&final_net, &data, summary.small_tol);
    let count = |s: NeuronStatus| status.iter().filter(|&&x| x == s).count();
    let group_info: Vec<Value> = groups
        .iter()
        .map(|g| {
            let mut entry = json!({ "neurons": g });
            if data.input_dim() == 2 {
                let (mut sx, mut sy) = (0.0, 0.0);
                for &i in g {
                    let w = final_net.w_row(i);
                    let n = (w[0] * w[0] + w[1] * w[1]).sqrt();
                    sx += w[0] / n;
                    sy += w[1] / n;
                }
                entry["mean_angle"] = json!(num(angle_2d(&[sx, sy])));
            }
            entry
        })
        .collect();
    let verdict = classify(&final_net, &data, &Tolerances::proximity())?;
    let out = json!({
        "plateaus": summary.plateaus,
        "escapes": summary.escapes,
        "final_plateau": summary.final_plateau,
        "validated": summary.validated,
        "small_tol": num(summary.small_tol),
        "final_loss": num(*trace.losses.last().expect("nonempty")),
        "final_groups": group_info,
        "final_status": { "dead": count(NeuronStatus::Dead), "small_living": count(NeuronStatus::SmallLiving), "active": count(NeuronStatus::Active) },
        "final_classification": verdict.classification.as_str(),
    });
    let mut curve = String::from("epoch,loss\n");
    for &t in &trace.recorded {
        curve.push_str(&format!("{t},{}\n", num(trace.losses[t])));
    }
    write(&dir.join("loss_curve.csv"), curve)?;
    write(&dir.join("neurons.csv"), neuron_series(&trace))?;
    write(&dir.join("report.json"), serde_json::to_string_pretty(&out).expect("serializes"))?;
    println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    Ok(())
}

/// Long format: one row per recorded epoch and neuron.
fn neuron_series(trace: &dynamics::TrainTrace) -> String {
    let (ni, d) = trace.w[0].dim();
    let nj = trace.h[0].nrows();
    let mut out = String::from("epoch,neuron,norm");
    if d == 2 {
        out.push_str(",angle");
    }
    for j in 0..nj {
        out.push_str(&format!(",h_{j}"));
    }
    out.push('\n');
    for (idx, &t) in trace.recorded.iter().enumerate() {
        for i in 0..ni {
            let w = trace.w[idx].row(i);
            let n = w.dot(&w).sqrt();
            out.push_str(&format!("{t},{i},{}", num(n)));
            if d == 2 {
                out.push_str(&format!(",{}", num(angle_2d(&[w[0], w[1]]))));
            }
            for j in 0..nj {
                out.push_str(&format!(",{}", num(trace.h[idx][[j, i]])));
            }
            out.push('\n');
        }
    }
    out
}
