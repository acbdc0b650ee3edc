use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_rational::Rational64;
use serde_json::{json, Value};

use permnet::detection::{false_positive_sweep, matching_attack, sweep_csv, threshold_test};
use permnet::harness::{
    atomic_write, ensemble_accuracy, load_checkpoint, read_csv, run_experiment, Checkpoint,
    Dataset, RunConfig,
};
use permnet::nn::LossKind;
use permnet::reductions::{
    reduce_1in3sat, reduce_cyclic, verify_1in3sat, verify_cyclic, verify_random, Problem, ReductionArtifacts,
    SourceInstance,
};
use permnet::trojan::{extract, NormStates};
use permnet::{Error, Result, Scalar};

#[derive(Parser)]
#[command(name = "permnet", version, about = "Hide networks inside networks with keyed permutations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one unkeyed task (a baseline).
    TrainSingle(TrainArgs),
    /// Train a carrier jointly on a public task and keyed secret tasks.
    TrainTrojan(TrainArgs),
    /// Materialize the network a key opens, or the carrier without a key.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold test: is the model's mean loss on the data below L?
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "cross_entropy", value_parser = parse_loss)]
        loss: LossKind,
        #[arg(long)]
        threshold: f64,
    },
    /// Rearrange a benign network's weights to mimic a secret network.
    AttackMatch {
        #[arg(long)]
        public: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "cross_entropy", value_parser = parse_loss)]
        loss: LossKind,
        #[arg(long, default_value_t = 2)]
        decimals: u32,
        /// Where to save the matched network.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the permutation-search instance for a SAT or ordering instance.
    Reduce {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Instance file: "n m" then one clause or triple per line.
        #[arg(long = "in", alias = "instance")]
        input: PathBuf,
        /// Number of +1 weights (1-in-3 SAT).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve both sides of a reduction by brute force and compare.
    VerifyReduction {
        #[command(flatten)]
        problem: ProblemArgs,
        /// A single instance file.
        #[arg(long = "in", alias = "instance", conflicts_with = "trials", required_unless_present = "trials")]
        input: Option<PathBuf>,
        /// Number of random instances instead of a file.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        max_n: usize,
        #[arg(long, default_value_t = 6)]
        max_m: usize,
    },
    /// Average class probabilities over several models or keyed views.
    Ensemble {
        /// One carrier with several keys, or several plain models.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[command(flatten)]
        key: KeyArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// False-positive rate of the matching attack against thresholds.
    SweepThreshold {
        #[arg(long, required = true)]
        public: Vec<PathBuf>,
        #[arg(long)]
        secret: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "cross_entropy", value_parser = parse_loss)]
        loss: LossKind,
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the key of the config's single keyed task.
    #[arg(long, conflicts_with = "key_file")]
    key: Option<String>,
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KeyArgs {
    /// Key as a UTF-8 string. Repeatable where several keys make sense.
    #[arg(long)]
    key: Vec<String>,
    /// File whose raw bytes are a key. Repeatable.
    #[arg(long)]
    key_file: Vec<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with x0.. feature columns and a `class` column.
    #[arg(long)]
    data: PathBuf,
    /// Class count, if the largest label understates it.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct ProblemArgs {
    /// `1in3sat` or `cyclic`.
    #[arg(long = "kind", alias = "problem", value_parser = parse_problem)]
    problem: Problem,
    #[arg(long, value_parser = parse_loss)]
    loss: LossKind,
    /// Logistic reduction only; defaults to 1/(2m).
    #[arg(long)]
    epsilon: Option<f64>,
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_problem(s: &str) -> std::result::Result<Problem, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl KeyArgs {
    fn keys(&self) -> Result<Vec<Vec<u8>>> {
        let mut keys: Vec<Vec<u8>> = self.key.iter().map(|k| k.as_bytes().to_vec()).collect();
        for p in &self.key_file {
            keys.push(read_bytes(p)?);
        }
        if keys.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("empty key".into()));
        }
        Ok(keys)
    }

    fn single(&self) -> Result<Option<Vec<u8>>> {
        let mut keys = self.keys()?;
        if keys.len() > 1 {
            return Err(Error::InvalidArgument("give at most one key".into()));
        }
        Ok(keys.pop())
    }
}

impl DataArgs {
    fn load(&self) -> Result<Dataset<f32>> {
        read_csv(&self.data, self.classes)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(text: &str) {
    use std::io::Write;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("JSON values serialize")));
}

fn train(args: &TrainArgs, keyed: bool) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if !keyed {
        if config.tasks.len() != 1 || config.tasks[0].is_keyed() {
            return Err(Error::Config("train-single takes exactly one unkeyed task".into()));
        }
        if args.key.is_some() || args.key_file.is_some() {
            return Err(Error::Config("train-single does not take a key".into()));
        }
    } else if args.key.is_some() || args.key_file.is_some() {
        let mut keyed_tasks = config.tasks.iter_mut().filter(|t| t.is_keyed());
        let (Some(task), None) = (keyed_tasks.next(), keyed_tasks.next()) else {
            return Err(Error::Config("--key needs exactly one keyed task in the config".into()));
        };
        task.key = args.key.clone();
        task.key_file = args.key_file.clone();
    }
    config.validate()?;
    let exp = run_experiment(&config)?;
    log::info!("wrote reports to {}", config.output_dir.display());
    print_json(&serde_json::to_value(&exp.summary).expect("summary serializes"));
    Ok(())
}

fn artifacts_json<S: Scalar>(art: &ReductionArtifacts<S>, exact: bool) -> Value {
    let f = |v: &S| v.to_f64().unwrap_or(f64::NAN);
    let inst = &art.instance;
    json!({
        "loss": inst.loss.name(),
        "weights": inst.weights.iter().map(f).collect::<Vec<_>>(),
        "inputs": inst.inputs.iter().map(|x| x.iter().map(f).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "targets": inst.targets.iter().map(f).collect::<Vec<_>>(),
        "threshold": f(&inst.threshold),
        "threshold_exact": exact.then(|| inst.threshold.to_string()),
        "k": art.k,
        "epsilon": art.epsilon,
        "z": art.z,
    })
}

fn reduce(problem: &ProblemArgs, input: &Path, k: Option<usize>) -> Result<Value> {
    let source = SourceInstance::parse(problem.problem, &read_text(input)?)?;
    match source {
        SourceInstance::OneInThreeSat(inst) => {
            if problem.epsilon.is_some() {
                return Err(Error::InvalidArgument("--epsilon applies to cyclic ordering only".into()));
            }
            let k = k.ok_or_else(|| Error::InvalidArgument("1-in-3 SAT needs --k".into()))?;
            Ok(artifacts_json(&reduce_1in3sat::<Rational64>(&inst, k, problem.loss)?, true))
        }
        SourceInstance::CyclicOrdering(inst) => {
            if k.is_some() {
                return Err(Error::InvalidArgument("--k applies to 1-in-3 SAT only".into()));
            }
            if problem.loss == LossKind::Logistic {
                Ok(artifacts_json(&reduce_cyclic::<f64>(&inst, problem.loss, problem.epsilon)?, false))
            } else {
                Ok(artifacts_json(&reduce_cyclic::<Rational64>(&inst, problem.loss, problem.epsilon)?, true))
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::TrainSingle(args) => train(&args, false)?,
        Command::TrainTrojan(args) => train(&args, true)?,
        Command::Extract { model, key, out } => {
            let ckpt = load_checkpoint(&model)?;
            let ex = extract(&ckpt.network, key.single()?.as_deref(), &ckpt.norm_states)?;
            let saved = Checkpoint {
                network: ex.network,
                norm_states: NormStates::new(),
                seed: ckpt.seed,
                config_hash: ckpt.config_hash,
            };
            saved.save(&out)?;
            print_json(&json!({
                "used_public_norm": ex.used_public_norm,
                "parameters": saved.network.param_count(),
                "key_states_in_source": ckpt.key_state_count(),
            }));
        }
        Command::Detect {
            model,
            data,
            loss,
            threshold,
        } => {
            let net = load_checkpoint(&model)?.network;
            let d = threshold_test(&net, &data.load()?, loss, threshold)?;
            print_json(&json!({ "detected": d.detected, "loss": d.loss, "threshold": threshold }));
        }
        Command::AttackMatch {
            public,
            secret,
            data,
            loss,
            decimals,
            out,
        } => {
            let public = load_checkpoint(&public)?.network;
            let secret = load_checkpoint(&secret)?;
            let (network, _, cost) = matching_attack(&public, &secret.network, decimals)?;
            let eval = data.load()?.evaluate(&network, loss)?;
            if let Some(out) = out {
                Checkpoint::new(network, NormStates::new()).save(&out)?;
            }
            print_json(&json!({ "cost": cost, "loss": eval.loss, "accuracy": eval.accuracy }));
        }
        Command::Reduce { problem, input, k, out } => {
            let v = reduce(&problem, &input, k)?;
            match out {
                Some(path) => atomic_write(&path, serde_json::to_string_pretty(&v).expect("serializes").as_bytes())?,
                None => print_json(&v),
            }
        }
        Command::VerifyReduction { problem, input, trials, seed, max_n, max_m } => {
            let Some(input) = input else {
                if problem.epsilon.is_some() {
                    return Err(Error::InvalidArgument("--epsilon applies to a single instance".into()));
                }
                let trials = trials.expect("clap requires --in or --trials");
                let tally = verify_random(problem.problem, problem.loss, trials, max_n, max_m, seed)?;
                print_json(&serde_json::to_value(tally).expect("serializes"));
                return Ok(if tally.disagree == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) });
            };
            let source = SourceInstance::parse(problem.problem, &read_text(&input)?)?;
            let v = match &source {
                SourceInstance::OneInThreeSat(s) => {
                    if problem.epsilon.is_some() {
                        return Err(Error::InvalidArgument("--epsilon applies to cyclic ordering only".into()));
                    }
                    verify_1in3sat(s, problem.loss)?
                }
                SourceInstance::CyclicOrdering(c) => verify_cyclic(c, problem.loss, problem.epsilon)?,
            };
            print_json(&json!({
                "source_yes": v.source_yes,
                "exists_perm_yes": v.exists_perm_yes,
                "agrees": v.agrees(),
            }));
            if !v.agrees() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Ensemble { model, key, data } => {
            let data = data.load()?;
            let keys = key.keys()?;
            let members = if keys.is_empty() {
                model
                    .iter()
                    .map(|p| Ok(load_checkpoint(p)?.network))
                    .collect::<Result<Vec<_>>>()?
            } else {
                let [carrier] = &model[..] else {
                    return Err(Error::InvalidArgument("keyed ensembles take exactly one --model".into()));
                };
                let ckpt = load_checkpoint(carrier)?;
                keys.iter()
                    .map(|k| Ok(extract(&ckpt.network, Some(k), &ckpt.norm_states)?.network))
                    .collect::<Result<Vec<_>>>()?
            };
            let individual = members
                .iter()
                .map(|m| ensemble_accuracy(std::slice::from_ref(m), &data))
                .collect::<Result<Vec<_>>>()?;
            let ensemble = ensemble_accuracy(&members, &data)?;
            print_json(&json!({ "members": individual, "ensemble": ensemble }));
        }
        Command::SweepThreshold {
            public,
            secret,
            data,
            loss,
            thresholds,
            out,
        } => {
            let nets = public
                .iter()
                .map(|p| Ok(load_checkpoint(p)?.network))
                .collect::<Result<Vec<_>>>()?;
            let secret = load_checkpoint(&secret)?.network;
            let rows = false_positive_sweep(&nets, &secret, &data.load()?, loss, &thresholds)?;
            let csv = sweep_csv(&rows);
            match out {
                Some(path) => atomic_write(&path, csv.as_bytes())?,
                None => emit(&csv),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

