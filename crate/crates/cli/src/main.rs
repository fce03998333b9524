//! `aba`: generate demonstrations, fit the policy, calibrate the OOD gate,
//! run single rollouts or full benchmarks, re-analyze recorded runs and
//! serve a live rollout to an operator.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use aba_core::bench::report::{load_run, summary_text, write_reports};
use aba_core::bench::{run_bench, BenchConfig};
use aba_core::model::{load_dataset, save_dataset};
use aba_core::ood::IdIndex;
use aba_core::policy::{fit_policy, EncoderConfig, PolicyModel, PolicyParams};
use aba_core::runtime::live::LiveSession;
use aba_core::runtime::{
    calibration_embeddings, run_scripted, write_records, Components, InterventionConfig, Method,
    RolloutRecord, RolloutSpec,
};
use aba_core::sim::{generate_dataset, Task, TaskConfig};
use aba_serve::{router, spawn_rollout, AppState};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aba", version, about = "Test-time policy adaptation lab")]
struct Cli {
    /// Directory holding datasets/, models/, scenarios/ and runs/.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demonstration dataset for a task.
    GenData {
        #[arg(long)]
        task: Task,
        /// Defaults to 50 for sweep-sort and 100 for place-in-cup.
        #[arg(long)]
        demos_per_mode: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "id")]
        name: String,
    },
    /// Fit the policy to a generated dataset.
    Fit {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value = "id")]
        dataset: String,
    },
    /// Calibrate the OOD threshold on fresh held-out demonstrations.
    Calibrate {
        /// Every task with a fitted model when omitted.
        #[arg(long)]
        task: Option<Task>,
        #[arg(long, default_value_t = 0.02)]
        percentile: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one rollout.
    Rollout {
        #[arg(long)]
        scenario: String,
        /// The scenario's first object when omitted.
        #[arg(long)]
        object: Option<String>,
        #[arg(long, default_value = "aba")]
        method: Method,
        #[arg(long, value_enum, default_value_t = ExpertKind::Scripted)]
        expert: ExpertKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Port of the operator interface for `--expert interactive`.
        #[arg(long, default_value_t = 7878)]
        port: u16,
    },
    /// Run every condition of a task under the chosen methods.
    Bench {
        #[arg(long)]
        task: Task,
        /// Comma-separated; all methods when omitted.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to runs/<task>-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute reports from the records of a bench run.
    Analyze {
        #[arg(long)]
        runs: PathBuf,
    },
    /// Run one rollout with an operator answering expert queries over HTTP.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "place-ood-pencil")]
        scenario: String,
        #[arg(long)]
        object: Option<String>,
        #[arg(long, default_value = "aba")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hold the rollout until the operator resumes or steps it.
        #[arg(long)]
        paused: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExpertKind {
    Scripted,
    Interactive,
}

/// How long an interactive query waits for an answer.
const EXPERT_TIMEOUT: Duration = Duration::from_secs(600);

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T = ()> = Result<T, Failure>;

trait Classify<T> {
    /// Bad input: missing or malformed files, unknown names.
    fn invalid(self) -> Outcome<T>;
    /// Failure while doing valid work.
    fn failed(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }

    fn failed(self) -> Outcome<T> {
        self.map_err(|e| Failure {
            code: 3,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let paths = Paths { root: cli.root };
    let result = match cli.command {
        Command::GenData {
            task,
            demos_per_mode,
            seed,
            name,
        } => gen_data(&paths, task, demos_per_mode, seed, &name),
        Command::Fit { task, dataset } => fit(&paths, task, &dataset),
        Command::Calibrate {
            task,
            percentile,
            seed,
        } => calibrate(&paths, task, percentile, seed),
        Command::Rollout {
            scenario,
            object,
            method,
            expert,
            seed,
            port,
        } => rollout(&paths, &scenario, object, method, expert, seed, port),
        Command::Bench {
            task,
            methods,
            rollouts,
            seed,
            out,
        } => bench(&paths, task, methods, rollouts, seed, out),
        Command::Analyze { runs } => analyze(&runs),
        Command::Serve {
            port,
            scenario,
            object,
            method,
            seed,
            paused,
        } => serve(&paths, port, &scenario, object, method, seed, paused),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

struct Paths {
    root: PathBuf,
}

impl Paths {
    fn config(&self, task: Task) -> PathBuf {
        self.root
            .join("scenarios")
            .join(format!("{}.cfg", task.name()))
    }

    fn dataset(&self, task: Task, name: &str) -> PathBuf {
        self.root
            .join("datasets")
            .join(task.name())
            .join(format!("{name}.dslog"))
    }

    fn model(&self, task: Task) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{}.pmod", task.name()))
    }

    fn calibration(&self, task: Task) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{}.cal.json", task.name()))
    }

    fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    /// The scenario file when present, else the bundled configuration.
    fn load_config(&self, task: Task) -> Outcome<TaskConfig> {
        let path = self.config(task);
        if path.exists() {
            TaskConfig::load(&path)
                .with_context(|| format!("loading {}", path.display()))
                .invalid()
        } else {
            Ok(TaskConfig::builtin(task))
        }
    }

    fn load_components(&self, task: Task) -> Outcome<Components> {
        let config = self.load_config(task)?;
        let require = |p: &Path, step: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(anyhow!(
                    "{} not found; run `aba {step} --task {task}` first",
                    p.display()
                ))
                .invalid()
            }
        };
        let ds_path = self.dataset(task, "id");
        require(&ds_path, "gen-data")?;
        let model_path = self.model(task);
        require(&model_path, "fit")?;
        let cal_path = self.calibration(task);
        require(&cal_path, "calibrate")?;
        let dataset = load_dataset(&ds_path).invalid()?;
        let policy = PolicyModel::load(&model_path).invalid()?;
        let mut index = IdIndex::from_model(&policy).invalid()?;
        index.load_calibration(&cal_path).invalid()?;
        Components::new(config, dataset, policy, index).invalid()
    }

    /// The task whose configuration defines `scenario`.
    fn task_of(&self, scenario: &str) -> Outcome<(Task, TaskConfig)> {
        for task in Task::ALL {
            let config = self.load_config(task)?;
            if config.scenario(scenario).is_ok() {
                return Ok((task, config));
            }
        }
        Err(anyhow!("unknown scenario {scenario:?}")).invalid()
    }
}

fn gen_data(
    paths: &Paths,
    task: Task,
    demos_per_mode: Option<usize>,
    seed: u64,
    name: &str,
) -> Outcome {
    let config = paths.load_config(task)?;
    let per_mode = demos_per_mode.unwrap_or(task.default_demos_per_mode());
    if per_mode == 0 {
        return Err(anyhow!("--demos-per-mode must be at least 1")).invalid();
    }
    let dataset = generate_dataset(&config, per_mode, seed).failed()?;
    let path = paths.dataset(task, name);
    save_dataset(&dataset, &path).failed()?;
    println!(
        "{}: {} trajectories, {} observations, hash {}",
        path.display(),
        dataset.trajectories.len(),
        dataset
            .trajectories
            .iter()
            .map(|t| t.pairs.len())
            .sum::<usize>(),
        dataset.config_hash
    );
    Ok(())
}

fn fit(paths: &Paths, task: Task, name: &str) -> Outcome {
    let config = paths.load_config(task)?;
    let ds_path = paths.dataset(task, name);
    let dataset = load_dataset(&ds_path)
        .with_context(|| {
            format!(
                "run `aba gen-data --task {task}` to create {}",
                ds_path.display()
            )
        })
        .invalid()?;
    let encoder = EncoderConfig::new(dataset.label_registry.len(), config.grid);
    let policy = fit_policy(&dataset, encoder, PolicyParams::default()).invalid()?;
    let path = paths.model(task);
    policy.save(&path).failed()?;
    println!(
        "{}: {} observations, embedding dim {}",
        path.display(),
        policy.len(),
        policy.dim()
    );
    Ok(())
}

fn calibrate(paths: &Paths, task: Option<Task>, percentile: f64, seed: u64) -> Outcome {
    let tasks: Vec<Task> = match task {
        Some(t) => vec![t],
        None => Task::ALL
            .into_iter()
            .filter(|&t| paths.model(t).exists())
            .collect(),
    };
    if tasks.is_empty() {
        return Err(anyhow!(
            "no fitted models under {}",
            paths.root.join("models").display()
        ))
        .invalid();
    }
    for task in tasks {
        let config = paths.load_config(task)?;
        let model_path = paths.model(task);
        let policy = PolicyModel::load(&model_path)
            .with_context(|| format!("run `aba fit --task {task}` first"))
            .invalid()?;
        let mut index = IdIndex::from_model(&policy).invalid()?;
        let held_out = calibration_embeddings(&config, &policy, seed).failed()?;
        let threshold = index
            .calibrate(&held_out, percentile, &policy.dataset_hash)
            .invalid()?;
        let path = paths.calibration(task);
        index.save_calibration(&path).failed()?;
        println!(
            "{}: threshold {threshold:.6} at percentile {percentile} over {} held-out observations",
            path.display(),
            held_out.len()
        );
    }
    Ok(())
}

/// Resolves the object of a rollout, defaulting to the scenario's first.
fn rollout_spec(
    config: &TaskConfig,
    scenario: &str,
    object: Option<String>,
    method: Method,
    seed: u64,
) -> Outcome<RolloutSpec> {
    let sc = config.scenario(scenario).invalid()?;
    let object = match object {
        Some(o) if sc.objects.iter().any(|s| s.name == o) => o,
        Some(o) => return Err(anyhow!("scenario {scenario} has no object {o:?}")).invalid(),
        None => sc.objects[0].name.clone(),
    };
    Ok(RolloutSpec {
        scenario: scenario.to_string(),
        object,
        method,
        seed,
    })
}

fn print_record(record: &RolloutRecord) {
    let subgoals: Vec<&str> = record
        .subgoals
        .iter()
        .map(|&s| if s { "1" } else { "0" })
        .collect();
    println!(
        "{}: {} after {} steps, subgoals {}, feedback {}, description {:?}{}",
        record.id(),
        if record.success { "success" } else { "failure" },
        record.steps(),
        subgoals.join(""),
        record.feedback_total,
        record.description,
        record
            .error
            .as_deref()
            .map(|e| format!(", error: {e}"))
            .unwrap_or_default()
    );
}

fn rollout(
    paths: &Paths,
    scenario: &str,
    object: Option<String>,
    method: Method,
    expert: ExpertKind,
    seed: u64,
    port: u16,
) -> Outcome {
    let (task, config) = paths.task_of(scenario)?;
    let spec = rollout_spec(&config, scenario, object, method, seed)?;
    let comp = paths.load_components(task)?;
    let record = match expert {
        ExpertKind::Scripted => {
            run_scripted(&comp, &spec, &InterventionConfig::default()).failed()?
        }
        ExpertKind::Interactive => {
            let (record, _) = live_rollout(Arc::new(comp), spec, port, false, false)?;
            record
                .ok_or_else(|| anyhow!("rollout did not complete"))
                .failed()?
        }
    };
    print_record(&record);
    let path = paths.runs().join("rollouts").join(format!(
        "{}-{}-{}-{}.jsonl",
        record.scenario, record.object, record.method, record.seed
    ));
    std::fs::create_dir_all(path.parent().expect("has parent")).failed()?;
    write_records(std::slice::from_ref(&record), &path).failed()?;
    println!("record: {}", path.display());
    Ok(())
}

/// Serves a rollout on `port`. Returns once the rollout finishes, or on
/// Ctrl-C when `linger` keeps the server up after completion.
fn live_rollout(
    comp: Arc<Components>,
    spec: RolloutSpec,
    port: u16,
    paused: bool,
    linger: bool,
) -> Outcome<(Option<RolloutRecord>, Arc<LiveSession>)> {
    let session = LiveSession::with_gallery(paused, Arc::new(comp.dataset.clone()));
    let state = AppState {
        session: Arc::clone(&session),
        registry: Arc::new(comp.config.registry.clone()),
    };
    let runtime = tokio::runtime::Runtime::new().failed()?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(("127.0.0.1", port)))
        .with_context(|| format!("binding port {port}"))
        .failed()?;
    let addr = listener.local_addr().failed()?;
    eprintln!("operator interface on http://{addr} (GET /state, WS /ws/state, POST /feedback, POST /control)");
    let (done_tx, done_rx) = tokio::sync::oneshot::channel::<()>();
    let server = runtime.spawn(aba_serve::serve(listener, router(state), async move {
        if linger {
            let _ = tokio::signal::ctrl_c().await;
        } else {
            tokio::select! {
                _ = done_rx => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        }
    }));
    let handle = spawn_rollout(
        comp,
        spec,
        InterventionConfig::default(),
        Arc::clone(&session),
        EXPERT_TIMEOUT,
    );
    let record = handle
        .join()
        .map_err(|_| anyhow!("rollout thread panicked"))
        .failed()?;
    if let Some(r) = &record {
        print_record(r);
    }
    let _ = done_tx.send(());
    runtime.block_on(server).failed()?.failed()?;
    Ok((record, session))
}

fn bench(
    paths: &Paths,
    task: Task,
    methods: Vec<Method>,
    rollouts: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Outcome {
    if rollouts == 0 {
        return Err(anyhow!("--rollouts must be at least 1")).invalid();
    }
    let comp = paths.load_components(task)?;
    let mut cfg = BenchConfig::new(task, rollouts, seed);
    if !methods.is_empty() {
        cfg.methods = methods;
    }
    let dir = out.unwrap_or_else(|| paths.runs().join(cfg.id()));
    let started = Instant::now();
    let result = run_bench(&comp, &cfg, |condition, method, n| {
        eprintln!(
            "{condition} {method}: {n} rollouts ({:.1} s)",
            started.elapsed().as_secs_f64()
        );
    })
    .failed()?;
    write_reports(&result, &dir).failed()?;
    print!(
        "{}",
        summary_text(
            &aba_core::bench::report::bench_title(&result),
            &result.conditions,
            &result.precision
        )
    );
    println!("reports: {}", dir.display());
    Ok(())
}

fn analyze(dir: &Path) -> Outcome {
    let result = load_run(dir).map_err(|e| anyhow!(e)).invalid()?;
    write_reports(&result, dir).failed()?;
    print!(
        "{}",
        summary_text(
            &aba_core::bench::report::bench_title(&result),
            &result.conditions,
            &result.precision
        )
    );
    println!(
        "{} records, reports rewritten in {}",
        result.records.len(),
        dir.display()
    );
    Ok(())
}

fn serve(
    paths: &Paths,
    port: u16,
    scenario: &str,
    object: Option<String>,
    method: Method,
    seed: u64,
    paused: bool,
) -> Outcome {
    let (task, config) = paths.task_of(scenario)?;
    let spec = rollout_spec(&config, scenario, object, method, seed)?;
    let comp = paths.load_components(task)?;
    live_rollout(Arc::new(comp), spec, port, paused, true)?;
    Ok(())
}
