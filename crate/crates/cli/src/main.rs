//! `slurmbridge`: run containerised workflows on a Slurm cluster.
//!
//! Results go to stdout as `key=value` lines; progress and diagnostics go
//! to stderr. Exit status is 0 on success, 1 when a run or provisioning
//! step fails, and 2 for usage, configuration and validation errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use slurmbridge::config::{load_config, ClusterConfig};
use slurmbridge::descriptor::{coerce_raw_values, describe_form, parse_descriptor, WorkflowDescriptor};
use slurmbridge::orchestrator::{
    cancel_run, import_results, load_record, resume_run, run_status, run_workflow_batched, scan_input_dir,
    EventSink, InputItem, OutputMode, RunContext, RunError, RunOptions, RunRecord, RunState,
};
use slurmbridge::sim::{SimHandle, Topology};
use slurmbridge::slurm::init_environment;
use slurmbridge::transport::ssh::{SshConnector, SshSettings};
use slurmbridge::transport::{Clock, Connector, EndpointPool, SystemClock, DEFAULT_POOL_SIZE};

#[derive(Parser)]
#[command(name = "slurmbridge", version, about = "Run containerised image-analysis workflows on Slurm")]
struct Cli {
    /// Cluster configuration file.
    #[arg(long, global = true, env = "SLURMBRIDGE_CONFIG", default_value = "./slurm-config.ini")]
    config: PathBuf,

    /// Where run records are kept. Defaults to `.slurmbridge` next to the config.
    #[arg(long, global = true)]
    state_dir: Option<PathBuf>,

    /// Use the embedded cluster simulator, optionally with a topology file.
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "", value_name = "TOPOLOGY")]
    simulate: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a workflow descriptor and print its parameters.
    Validate { descriptor: PathBuf },
    /// Create the cluster layout, pull images and place job scripts.
    Init,
    /// List registered workflows.
    List,
    /// Run a workflow over a folder of images.
    Run(RunArgs),
    /// Show the state and journal of a run.
    Status {
        run_id: String,
        /// Journal lines to show.
        #[arg(long, default_value_t = 10)]
        tail: usize,
    },
    /// Print the logfiles fetched for a run.
    Logs { run_id: String },
    /// Wait for a run if needed, then write its results to a folder.
    Fetch {
        run_id: String,
        dir: PathBuf,
        #[arg(long, default_value = "zip")]
        output_mode: OutputMode,
    },
    /// Cancel the outstanding jobs of a run.
    Cancel { run_id: String },
}

#[derive(Args)]
struct RunArgs {
    workflow: String,
    /// Parameter value as `id=value`; repeatable.
    #[arg(long = "param", value_name = "ID=VALUE")]
    params: Vec<String>,
    /// Input image, ZARR store or folder of them; repeatable.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Descriptor file; defaults to the one named in the config.
    #[arg(long)]
    descriptor: Option<PathBuf>,
    /// Images per workflow job; all images in one job when omitted.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value = "zip")]
    output_mode: OutputMode,
    #[arg(long, default_value = "./slurmbridge-results")]
    output: PathBuf,
    #[arg(long)]
    skip_conversion: bool,
    #[arg(long, default_value_t = slurmbridge::orchestrator::DEFAULT_PARALLELISM)]
    parallelism: usize,
    /// Return once the jobs are queued; use `fetch` later.
    #[arg(long)]
    detach: bool,
}

enum Failure {
    /// Exit 2.
    Usage(String),
    /// Exit 1.
    Run(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_)
            | RunError::Descriptor(_)
            | RunError::Input(_)
            | RunError::NoConverter(_)
            | RunError::NotInitialized { .. }
            | RunError::UnknownRun(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

struct Backend {
    pool: Arc<EndpointPool>,
    clock: Arc<dyn Clock>,
    sim: Option<(SimHandle, PathBuf)>,
}

impl Backend {
    fn open(cli: &Cli, config: &ClusterConfig, state_dir: &Path) -> Result<Backend, Failure> {
        let Some(topology) = &cli.simulate else {
            let connector: Arc<dyn Connector> = Arc::new(SshConnector::new(SshSettings::from_profile(&config.profile)));
            return Ok(Backend {
                pool: Arc::new(EndpointPool::new(connector, DEFAULT_POOL_SIZE)),
                clock: Arc::new(SystemClock::new()),
                sim: None,
            });
        };
        let path = state_dir.join("simcluster.json");
        let sim = if path.exists() {
            SimHandle::load(&path).map_err(|e| usage(format!("cannot load {}: {e}", path.display())))?
        } else if topology.is_empty() {
            SimHandle::with_topology(Topology::default())
        } else {
            let text = std::fs::read_to_string(topology).map_err(|e| usage(format!("{topology}: {e}")))?;
            SimHandle::with_topology(Topology::from_json(&text).map_err(|e| usage(format!("{topology}: {e}")))?)
        };
        Ok(Backend {
            pool: Arc::new(EndpointPool::new(Arc::new(sim.connector()), DEFAULT_POOL_SIZE)),
            clock: Arc::new(sim.clock()),
            sim: Some((sim, path)),
        })
    }

    fn persist(&self) -> CmdResult {
        if let Some((sim, path)) = &self.sim {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Run(e.to_string()))?;
            }
            sim.save(path).map_err(|e| Failure::Run(format!("cannot save simulator state: {e}")))?;
        }
        Ok(())
    }
}

fn state_dir(cli: &Cli) -> PathBuf {
    cli.state_dir.clone().unwrap_or_else(|| {
        cli.config
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .join(".slurmbridge")
    })
}

fn context(cli: &Cli) -> Result<(RunContext, Backend), Failure> {
    let config = load_config(&cli.config).map_err(usage)?;
    let dir = state_dir(cli);
    let backend = Backend::open(cli, &config, &dir)?;
    let sink: EventSink = Arc::new(|_, e| eprintln!("{}", e.journal_line()));
    let ctx = RunContext::new(
        config.profile,
        config.registry,
        backend.pool.clone(),
        backend.clock.clone(),
        &dir,
    )
    .with_sink(sink);
    Ok((ctx, backend))
}

fn options(ctx: &RunContext, output_dir: PathBuf) -> RunOptions {
    let mut o = RunOptions::new(output_dir);
    o.poll_interval = std::time::Duration::from_secs(ctx.profile.poll_interval_s);
    o
}

fn print_record(record: &RunRecord) {
    println!("run_id={}", record.run_id);
    println!("state={}", record.overall_state);
    println!("batches={}", record.batches.len());
    for b in &record.batches {
        let state = b.state.map_or("NOT_SUBMITTED".to_string(), |s| s.to_string());
        println!("batch{}={state}", b.index);
        if let Some(f) = &b.failure {
            println!("batch{}_failure={}: {}", b.index, f.stage, f.message);
        }
    }
    for p in &record.imported {
        println!("output={}", p.display());
    }
}

fn finished(record: &RunRecord) -> CmdResult {
    match record.overall_state {
        RunState::Failed | RunState::PartialFailure => Err(Failure::Run(format!(
            "run {} ended {}",
            record.run_id, record.overall_state
        ))),
        _ => Ok(()),
    }
}

fn import_into(ctx: &RunContext, record: &mut RunRecord, mode: OutputMode, dest: &Path) -> CmdResult {
    if record.result_zips().is_empty() {
        return Ok(());
    }
    let written = import_results(record, mode, dest)?;
    record.imported.extend(written);
    ctx.store.save(record).map_err(|e| Failure::Run(e.to_string()))
}

fn cmd_validate(path: &Path) -> CmdResult {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let descriptor = parse_descriptor(&text).map_err(usage)?;
    println!("ID\tTYPE\tDEFAULT\tOPTIONAL\tNAME");
    for entry in describe_form(&descriptor) {
        println!(
            "{}\t{}\t{}\t{}\t{}",
            entry.id,
            entry.value_type.as_str(),
            entry.default.map_or("-".to_string(), |d| d.render()),
            entry.optional,
            entry.label
        );
    }
    Ok(())
}

fn cmd_list(cli: &Cli) -> CmdResult {
    let config = load_config(&cli.config).map_err(usage)?;
    println!("NAME\tVERSION\tIMAGE");
    for name in config.registry.entries.keys() {
        let resolved = config.registry.resolve_workflow(name).map_err(usage)?;
        println!("{name}\t{}\t{}", resolved.version, resolved.image_reference);
    }
    Ok(())
}

fn cmd_init(cli: &Cli) -> CmdResult {
    let (ctx, backend) = context(cli)?;
    let report = {
        let mut ep = ctx.pool.get().map_err(|e| Failure::Run(e.to_string()))?;
        init_environment(&mut *ep, &ctx.profile, &ctx.registry).map_err(|e| Failure::Run(e.to_string()))?
    };
    backend.persist()?;
    let pulls = report.pull_count();
    eprintln!(
        "{}, {pulls} pulls",
        if report.refreshed { "refreshed" } else { "initialized" }
    );
    println!("refreshed={}", report.refreshed);
    println!("created_dirs={}", report.created_dirs.len());
    for d in &report.created_dirs {
        println!("created_dir={d}");
    }
    println!("pulled_images={}", report.pulled_images.len());
    for (wf, path) in &report.pulled_images {
        println!("pulled_image={wf}:{path}");
    }
    println!("pulled_converters={}", report.pulled_converters.len());
    println!("placed_scripts={}", report.placed_scripts.len());
    for f in &report.failures {
        println!("failure={}: {}", f.workflow, f.message);
    }
    if report.is_complete() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} workflows could not be provisioned", report.failures.len())))
    }
}

fn load_descriptor(config_path: Option<PathBuf>, flag: Option<PathBuf>, workflow: &str) -> Result<WorkflowDescriptor, Failure> {
    let path = flag
        .or(config_path)
        .ok_or_else(|| usage(format!("no descriptor for {workflow}: set `descriptor` in its config section or pass --descriptor")))?;
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parse_descriptor(&text).map_err(usage)
}

fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<InputItem>, Failure> {
    let mut items = Vec::new();
    for p in paths {
        if p.is_dir() && InputItem::detect(p).is_err() {
            items.extend(scan_input_dir(p).map_err(usage)?);
        } else {
            items.push(InputItem::detect(p).map_err(usage)?);
        }
    }
    Ok(items)
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> CmdResult {
    let (ctx, backend) = context(cli)?;
    let entry = ctx.registry.get(&args.workflow).map_err(usage)?;
    let descriptor = load_descriptor(entry.descriptor_path.clone(), args.descriptor.clone(), &args.workflow)?;
    let mut raw = Vec::new();
    for p in &args.params {
        let (id, value) = p
            .split_once('=')
            .ok_or_else(|| usage(format!("--param {p:?} is not of the form id=value")))?;
        raw.push((id, value));
    }
    let values = coerce_raw_values(&descriptor, raw).map_err(usage)?;
    let items = collect_inputs(&args.inputs)?;
    let batch_size = args.batch_size.unwrap_or(items.len().max(1));

    let mut opts = options(&ctx, state_dir(cli).join("results"));
    opts.skip_conversion = args.skip_conversion;
    opts.parallelism = args.parallelism;
    opts.detach = args.detach;
    let result = run_workflow_batched(&ctx, &args.workflow, &descriptor, &values, &items, batch_size, &opts);
    backend.persist()?;
    let mut record = result?;
    if record.overall_state.is_terminal() {
        import_into(&ctx, &mut record, args.output_mode, &args.output)?;
    }
    print_record(&record);
    finished(&record)
}

fn cmd_status(cli: &Cli, run_id: &str, tail: usize) -> CmdResult {
    let (ctx, _backend) = context(cli)?;
    let status = run_status(&ctx, run_id, tail)?;
    println!("run_id={}", status.run_id);
    println!("state={}", status.state);
    for (i, s) in &status.batches {
        println!("batch{i}={s}");
    }
    for line in &status.journal_tail {
        println!("journal={line}");
    }
    Ok(())
}

fn cmd_logs(cli: &Cli, run_id: &str) -> CmdResult {
    let (ctx, _backend) = context(cli)?;
    let record = load_record(&ctx, run_id)?;
    let logs: Vec<&PathBuf> = record.batches.iter().flat_map(|b| &b.logs).collect();
    if logs.is_empty() {
        eprintln!("no logfiles fetched for run {run_id}");
    }
    for path in logs {
        eprintln!("==> {} <==", path.display());
        match std::fs::read_to_string(path) {
            Ok(text) => print!("{text}"),
            Err(e) => eprintln!("cannot read {}: {e}", path.display()),
        }
    }
    Ok(())
}

fn cmd_fetch(cli: &Cli, run_id: &str, dir: &Path, mode: OutputMode) -> CmdResult {
    let (ctx, backend) = context(cli)?;
    let record = load_record(&ctx, run_id)?;
    let opts = options(&ctx, record.output_dir.clone());
    let result = resume_run(&ctx, run_id, &opts);
    backend.persist()?;
    let mut record = result?;
    record.imported.clear();
    let written = import_results(&record, mode, dir)?;
    record.imported = written;
    ctx.store.save(&record).map_err(|e| Failure::Run(e.to_string()))?;
    print_record(&record);
    finished(&record)
}

fn cmd_cancel(cli: &Cli, run_id: &str) -> CmdResult {
    let (ctx, backend) = context(cli)?;
    let record = load_record(&ctx, run_id)?;
    let opts = options(&ctx, record.output_dir.clone());
    let result = cancel_run(&ctx, run_id, &opts);
    backend.persist()?;
    let record = result?;
    print_record(&record);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { descriptor } => cmd_validate(descriptor),
        Command::Init => cmd_init(&cli),
        Command::List => cmd_list(&cli),
        Command::Run(args) => cmd_run(&cli, args),
        Command::Status { run_id, tail } => cmd_status(&cli, run_id, *tail),
        Command::Logs { run_id } => cmd_logs(&cli, run_id),
        Command::Fetch { run_id, dir, output_mode } => cmd_fetch(&cli, run_id, dir, *output_mode),
        Command::Cancel { run_id } => cmd_cancel(&cli, run_id),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
