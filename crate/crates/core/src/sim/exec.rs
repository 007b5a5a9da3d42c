//! Command interpreter of the simulated login node.
//!
//! Supported programs: `env`, `sbatch`, `sacct`, `scancel`, `mkdir -p`,
//! `test`, `rm`, `ls`, `zip`, `unzip`, `mv`, `cat`, `sha256sum`,
//! `singularity pull`, `curl`, `echo`, `sleep`, `true` and `false`.
//! Anything else exits 127.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read, Write};

use super::fs::{normalize, FsError};
use super::{Demand, SimCluster, SimJob, SimTask, DEFAULT_DURATION_S};
use crate::jobscript::{scan_directives, scan_exports};
use crate::slurm::{parse_array, JobState};
use crate::transport::sha256_hex;

/// Outcome of one command before it is wrapped into an `ExecResult`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Virtual time the command itself takes, in seconds.
    pub busy_s: u64,
}

impl Outcome {
    fn ok(stdout: impl Into<String>) -> Self {
        Outcome {
            exit_code: 0,
            stdout: stdout.into(),
            stderr: String::new(),
            busy_s: 0,
        }
    }

    fn fail(code: i32, stderr: impl Into<String>) -> Self {
        let mut stderr = stderr.into();
        if !stderr.ends_with('\n') {
            stderr.push('\n');
        }
        Outcome {
            exit_code: code,
            stdout: String::new(),
            stderr,
            busy_s: 0,
        }
    }
}

fn fs_fail(program: &str, e: FsError) -> Outcome {
    Outcome::fail(1, format!("{program}: {e}"))
}

/// Runs `argv` with working directory `cwd`.
pub fn run(cluster: &mut SimCluster, argv: &[String], cwd: &str) -> Outcome {
    let outcome = dispatch(cluster, argv, cwd, &BTreeMap::new());
    cluster.log_exec(argv, outcome.exit_code);
    outcome
}

fn dispatch(cluster: &mut SimCluster, argv: &[String], cwd: &str, env: &BTreeMap<String, String>) -> Outcome {
    let Some(program) = argv.first() else {
        return Outcome::ok("");
    };
    let args: Vec<&str> = argv[1..].iter().map(String::as_str).collect();
    let path = |p: &str| normalize(cwd, p);
    match program.as_str() {
        "env" => {
            let mut env = env.clone();
            let mut rest = &argv[1..];
            while let Some((k, v)) = rest.first().and_then(|a| a.split_once('=')) {
                env.insert(k.to_string(), v.to_string());
                rest = &rest[1..];
            }
            if rest.is_empty() {
                let listing: String = env.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
                return Outcome::ok(listing);
            }
            dispatch(cluster, rest, cwd, &env)
        }
        "sbatch" => sbatch(cluster, &args, cwd, env),
        "sacct" => sacct(cluster, &args),
        "scancel" => scancel(cluster, &args),
        "true" => Outcome::ok(""),
        "false" => Outcome::fail(1, ""),
        "echo" => Outcome::ok(format!("{}\n", args.join(" "))),
        "sleep" => match args.first().and_then(|s| s.parse::<u64>().ok()) {
            Some(n) => Outcome {
                busy_s: n,
                ..Outcome::ok("")
            },
            None => Outcome::fail(1, "sleep: invalid time interval"),
        },
        "mkdir" => {
            let targets: Vec<&str> = args.iter().copied().filter(|a| !a.starts_with('-')).collect();
            let parents = args.contains(&"-p");
            for t in targets {
                let p = path(t);
                if !parents && !cluster.fs.is_dir(&normalize(&p, "..")) {
                    return Outcome::fail(1, format!("mkdir: cannot create directory '{t}': No such file or directory"));
                }
                if let Err(e) = cluster.fs.mkdir_p(&p) {
                    return Outcome::fail(1, format!("mkdir: cannot create directory '{t}': {e}"));
                }
            }
            Outcome::ok("")
        }
        "test" => {
            let ok = match args.as_slice() {
                ["-e", p] => cluster.fs.exists(&path(p)),
                ["-d", p] => cluster.fs.is_dir(&path(p)),
                ["-f", p] => cluster.fs.is_file(&path(p)),
                _ => return Outcome::fail(2, "test: unsupported expression"),
            };
            Outcome {
                exit_code: if ok { 0 } else { 1 },
                ..Outcome::ok("")
            }
        }
        "rm" => {
            let force = args.iter().any(|a| a.starts_with('-') && a.contains('f'));
            let recursive = args.iter().any(|a| a.starts_with('-') && (a.contains('r') || a.contains('R')));
            for t in args.iter().filter(|a| !a.starts_with('-')) {
                let p = path(t);
                if cluster.fs.is_dir(&p) && !recursive {
                    return Outcome::fail(1, format!("rm: cannot remove '{t}': Is a directory"));
                }
                match cluster.fs.remove_tree(&p) {
                    Ok(false) if !force => {
                        return Outcome::fail(1, format!("rm: cannot remove '{t}': No such file or directory"))
                    }
                    Ok(_) => {}
                    Err(e) => return Outcome::fail(1, format!("rm: cannot remove '{t}': {e}")),
                }
            }
            Outcome::ok("")
        }
        "ls" => {
            let all = args.contains(&"-A") || args.contains(&"-a");
            let targets: Vec<&str> = args.iter().copied().filter(|a| !a.starts_with('-')).collect();
            let target = targets.first().copied().unwrap_or(".");
            let p = path(target);
            if cluster.fs.is_file(&p) {
                return Outcome::ok(format!("{target}\n"));
            }
            match cluster.fs.list(&p) {
                Ok(names) => Outcome::ok(
                    names
                        .into_iter()
                        .filter(|n| all || !n.starts_with('.'))
                        .map(|n| n + "\n")
                        .collect::<String>(),
                ),
                Err(_) => Outcome::fail(
                    2,
                    format!("ls: cannot access '{target}': No such file or directory"),
                ),
            }
        }
        "mv" => {
            let operands: Vec<&str> = args.iter().copied().filter(|a| !a.starts_with('-')).collect();
            let [from, to] = operands.as_slice() else {
                return Outcome::fail(1, "mv: expected two operands");
            };
            match cluster.fs.rename(&path(from), &path(to)) {
                Ok(()) => Outcome::ok(""),
                Err(e) => Outcome::fail(1, format!("mv: cannot move '{from}' to '{to}': {e}")),
            }
        }
        "cat" => {
            let mut out = String::new();
            for t in &args {
                match cluster.fs.read(&path(t)) {
                    Ok(b) => out.push_str(&String::from_utf8_lossy(b)),
                    Err(e) => return fs_fail("cat", e),
                }
            }
            Outcome::ok(out)
        }
        "sha256sum" => {
            let mut out = String::new();
            for t in &args {
                match cluster.fs.read(&path(t)) {
                    Ok(b) => out.push_str(&format!("{}  {t}\n", sha256_hex(b))),
                    Err(e) => return fs_fail("sha256sum", e),
                }
            }
            Outcome::ok(out)
        }
        "zip" => zip(cluster, &args, cwd),
        "unzip" => unzip(cluster, &args, cwd),
        "singularity" | "apptainer" => match args.as_slice() {
            ["pull", dest, uri] | ["pull", "--force", dest, uri] => {
                if cluster.pull_fails(uri) {
                    return Outcome::fail(1, format!("FATAL: While making image from oci registry: failed to fetch {uri}"));
                }
                let dest = path(dest);
                if cluster.fs.exists(&dest) && !args.contains(&"--force") {
                    return Outcome::fail(1, format!("FATAL: Image file already exists: {dest:?} - will not overwrite"));
                }
                let content = format!("SIF placeholder\nsource: {uri}\n");
                match cluster.fs.write(&dest, content) {
                    Ok(()) => Outcome::ok(""),
                    Err(e) => Outcome::fail(1, format!("FATAL: {e}")),
                }
            }
            _ => Outcome::fail(1, "singularity: only `pull <dest> <uri>` is simulated"),
        },
        "curl" => {
            let mut dest = None;
            let mut url = None;
            let mut it = args.iter();
            while let Some(a) = it.next() {
                match *a {
                    "-o" => dest = it.next().copied(),
                    a if a.starts_with('-') => {}
                    a => url = Some(a),
                }
            }
            let (Some(dest), Some(url)) = (dest, url) else {
                return Outcome::fail(2, "curl: no URL or output specified");
            };
            if cluster.pull_fails(url) {
                return Outcome::fail(22, format!("curl: (22) The requested URL returned error: 404 for {url}"));
            }
            let content = format!("#!/bin/bash\n# fetched from {url}\n");
            match cluster.fs.write(&path(dest), content) {
                Ok(()) => Outcome::ok(""),
                Err(e) => Outcome::fail(23, format!("curl: (23) Failure writing output: {e}")),
            }
        }
        other => Outcome::fail(127, format!("bash: {other}: command not found")),
    }
}

/// Memory in MB from a `--mem` value (`M` default, `K`, `G`, `T` suffixes).
pub fn parse_mem_mb(raw: &str) -> Option<u64> {
    let raw = raw.trim();
    let (digits, unit) = match raw.find(|c: char| !c.is_ascii_digit()) {
        Some(i) => (&raw[..i], &raw[i..]),
        None => (raw, ""),
    };
    let n: u64 = digits.parse().ok()?;
    match unit.to_ascii_uppercase().as_str() {
        "" | "M" | "MB" => Some(n),
        "K" | "KB" => Some(n.div_ceil(1024)),
        "G" | "GB" => Some(n * 1024),
        "T" | "TB" => Some(n * 1024 * 1024),
        _ => None,
    }
}

/// Seconds from a Slurm time value: `M`, `M:S`, `H:M:S`, `D-H`, `D-H:M` or `D-H:M:S`.
pub fn parse_time_s(raw: &str) -> Option<u64> {
    let raw = raw.trim();
    let num = |s: &str| s.parse::<u64>().ok();
    if let Some((days, rest)) = raw.split_once('-') {
        let d = num(days)?;
        let parts: Vec<&str> = rest.split(':').collect();
        let (h, m, s) = match parts.as_slice() {
            [h] => (num(h)?, 0, 0),
            [h, m] => (num(h)?, num(m)?, 0),
            [h, m, s] => (num(h)?, num(m)?, num(s)?),
            _ => return None,
        };
        return Some(((d * 24 + h) * 60 + m) * 60 + s);
    }
    let parts: Vec<&str> = raw.split(':').collect();
    match parts.as_slice() {
        [m] => Some(num(m)? * 60),
        [m, s] => Some(num(m)? * 60 + num(s)?),
        [h, m, s] => Some((num(h)? * 60 + num(m)?) * 60 + num(s)?),
        _ => None,
    }
}

fn sim_annotation(text: &str) -> (Option<u64>, Option<u32>) {
    let mut duration = None;
    let mut outputs = None;
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("#SIM") else { continue };
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("duration", v)) => duration = v.parse().ok(),
                Some(("outputs", v)) => outputs = v.parse().ok(),
                _ => {}
            }
        }
    }
    (duration, outputs)
}

fn sbatch(cluster: &mut SimCluster, args: &[&str], cwd: &str, env: &BTreeMap<String, String>) -> Outcome {
    let Some(script) = args.iter().rev().find(|a| !a.starts_with('-')) else {
        return Outcome::fail(1, "sbatch: error: no batch script specified");
    };
    let script_path = normalize(cwd, script);
    let text = match cluster.fs.read(&script_path) {
        Ok(b) => String::from_utf8_lossy(b).into_owned(),
        Err(_) => return Outcome::fail(1, format!("sbatch: error: Unable to open file {script}")),
    };
    if !text.starts_with("#!") {
        return Outcome::fail(
            1,
            "sbatch: error: This does not look like a batch script.  The first\nsbatch: error: line must start with #! followed by the path to an interpreter.",
        );
    }
    let invalid = |what: &str, v: &str| Outcome::fail(1, format!("sbatch: error: Invalid {what} specification: {v}"));
    let mut demand = Demand {
        cpus: 1,
        gpus: 0,
        mem_mb: 1024,
    };
    let mut time_limit_s = None;
    let mut array = None;
    let mut output_pattern = None;
    let mut partition = None;
    for (key, value) in scan_directives(&text) {
        match key.as_str() {
            "--mem" => match parse_mem_mb(&value) {
                Some(m) => demand.mem_mb = m,
                None => return invalid("--mem", &value),
            },
            "--cpus-per-task" | "-c" => match value.parse() {
                Ok(n) if n > 0 => demand.cpus = n,
                _ => return invalid("--cpus-per-task", &value),
            },
            "--gres" => match value.strip_prefix("gpu:").and_then(|n| n.rsplit(':').next()?.parse().ok()) {
                Some(n) => demand.gpus = n,
                None => return invalid("--gres", &value),
            },
            "--time" | "-t" => match parse_time_s(&value) {
                Some(s) => time_limit_s = Some(s),
                None => return invalid("--time", &value),
            },
            "--array" | "-a" => match parse_array(&value) {
                Some(a) => array = Some(a),
                None => return invalid("--array", &value),
            },
            "--output" | "-o" => output_pattern = Some(normalize(cwd, &value)),
            "--partition" | "-p" => partition = Some(value),
            _ => {}
        }
    }
    if let (Some(p), Some(allowed)) = (&partition, &cluster.topology.partitions) {
        if !allowed.contains(p) {
            return Outcome::fail(1, "sbatch: error: Batch job submission failed: Invalid partition name specified");
        }
    }
    let (duration, outputs) = sim_annotation(&text);
    let mut job_env = env.clone();
    job_env.extend(scan_exports(&text));
    let default_pattern = if array.is_some() {
        normalize(cwd, "slurm-%A_%a.out")
    } else {
        normalize(cwd, "slurm-%j.out")
    };
    let pending = |index| SimTask {
        index,
        state: JobState::Pending,
        node: None,
        start: None,
        end: None,
        exit_code: None,
    };
    let tasks = match &array {
        Some(indices) => indices.iter().map(|i| pending(Some(*i))).collect(),
        None => vec![pending(None)],
    };
    let job = SimJob {
        id: 0,
        script_path,
        script_text: text,
        demand,
        time_limit_s,
        duration_s: duration.unwrap_or(DEFAULT_DURATION_S),
        outputs,
        output_pattern: output_pattern.unwrap_or(default_pattern),
        partition,
        env: job_env,
        submit_time: 0,
        tasks,
        forced: None,
        missing_output: false,
        unschedulable: false,
    };
    let id = cluster.enqueue(job);
    Outcome::ok(format!("Submitted batch job {id}\n"))
}

fn sacct(cluster: &mut SimCluster, args: &[&str]) -> Outcome {
    let mut ids = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if *a == "-j" || *a == "--jobs" {
            ids = it.next().copied();
        } else if let Some(v) = a.strip_prefix("--jobs=") {
            ids = Some(v);
        }
    }
    let Some(ids) = ids else {
        return Outcome::ok("");
    };
    let mut out = String::new();
    for raw in ids.split(',').filter(|s| !s.is_empty()) {
        let Ok(id) = raw.trim().parse::<u64>() else {
            return Outcome::fail(1, format!("sacct: error: Invalid job id: {raw}"));
        };
        let Some(job) = cluster.job(id) else { continue };
        for t in &job.tasks {
            match t.index {
                Some(i) => out.push_str(&format!("{id}_{i}|{}\n", t.state)),
                None => out.push_str(&format!("{id}|{}\n", t.state)),
            }
        }
    }
    Outcome::ok(out)
}

fn scancel(cluster: &mut SimCluster, args: &[&str]) -> Outcome {
    let targets: Vec<&str> = args.iter().copied().filter(|a| !a.starts_with('-')).collect();
    if targets.is_empty() {
        return Outcome::fail(1, "scancel: error: No job identification provided");
    }
    let mut stderr = String::new();
    for raw in targets {
        let Ok(id) = raw.parse::<u64>() else {
            return Outcome::fail(1, format!("scancel: error: Invalid job id {raw}"));
        };
        match cluster.cancel(id) {
            None => return Outcome::fail(1, format!("scancel: error: Invalid job id specified {raw}")),
            Some(events) if events.is_empty() => {
                stderr.push_str(&format!("scancel: error: Kill job error on job id {id}: Job/step already completing or completed\n"));
            }
            Some(_) => {}
        }
    }
    Outcome {
        stderr,
        ..Outcome::ok("")
    }
}

fn zip(cluster: &mut SimCluster, args: &[&str], cwd: &str) -> Outcome {
    let operands: Vec<&str> = args.iter().copied().filter(|a| !a.starts_with('-')).collect();
    let Some((archive, inputs)) = operands.split_first() else {
        return Outcome::fail(16, "zip error: Invalid command arguments (nothing to select from)");
    };
    let archive_path = normalize(cwd, archive);
    let recursive = args.contains(&"-r");
    let mut files: BTreeSet<String> = BTreeSet::new();
    for input in inputs {
        let p = normalize(cwd, input);
        if cluster.fs.is_file(&p) {
            files.insert(p);
        } else if cluster.fs.is_dir(&p) && recursive {
            files.extend(cluster.fs.walk_files(&p));
        }
    }
    files.remove(&archive_path);
    if files.is_empty() {
        return Outcome::fail(12, "zip error: Nothing to do!");
    }
    let prefix = if cwd == "/" { "/".to_string() } else { format!("{}/", cwd.trim_end_matches('/')) };
    let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default());
    for f in &files {
        let name = f.strip_prefix(&prefix).unwrap_or(f.trim_start_matches('/'));
        let content = cluster.fs.read(f).expect("listed file exists").to_vec();
        if writer.start_file(name, options).is_err() || writer.write_all(&content).is_err() {
            return Outcome::fail(15, "zip error: could not write archive");
        }
    }
    let bytes = match writer.finish() {
        Ok(c) => c.into_inner(),
        Err(e) => return Outcome::fail(15, format!("zip error: {e}")),
    };
    match cluster.fs.write(&archive_path, bytes) {
        Ok(()) => Outcome::ok(""),
        Err(e) => Outcome::fail(15, format!("zip error: could not create output file ({e})")),
    }
}

fn unzip(cluster: &mut SimCluster, args: &[&str], cwd: &str) -> Outcome {
    let mut archive = None;
    let mut dest = cwd.to_string();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match *a {
            "-d" => {
                if let Some(d) = it.next() {
                    dest = normalize(cwd, d);
                }
            }
            a if a.starts_with('-') => {}
            a => archive = archive.or(Some(normalize(cwd, a))),
        }
    }
    let Some(archive) = archive else {
        return Outcome::fail(10, "unzip: no archive given");
    };
    let bytes = match cluster.fs.read(&archive) {
        Ok(b) => b.to_vec(),
        Err(_) => return Outcome::fail(9, format!("unzip:  cannot find or open {archive}")),
    };
    let mut zip = match zip::ZipArchive::new(Cursor::new(bytes)) {
        Ok(z) => z,
        Err(e) => return Outcome::fail(9, format!("unzip: {archive}: {e}")),
    };
    if let Err(e) = cluster.fs.mkdir_p(&dest) {
        return Outcome::fail(50, format!("unzip: {e}"));
    }
    for i in 0..zip.len() {
        let mut entry = match zip.by_index(i) {
            Ok(e) => e,
            Err(e) => return Outcome::fail(2, format!("unzip: {e}")),
        };
        let Some(rel) = entry.enclosed_name() else {
            return Outcome::fail(2, "unzip: unsafe entry name");
        };
        let target = normalize(&dest, &rel.to_string_lossy());
        if entry.is_dir() {
            if let Err(e) = cluster.fs.mkdir_p(&target) {
                return Outcome::fail(50, format!("unzip: {e}"));
            }
            continue;
        }
        let mut content = Vec::new();
        if entry.read_to_end(&mut content).is_err() {
            return Outcome::fail(2, "unzip: corrupt entry");
        }
        let parent = normalize(&target, "..");
        if let Err(e) = cluster.fs.mkdir_p(&parent).and_then(|_| cluster.fs.write(&target, content)) {
            return Outcome::fail(50, format!("unzip: {e}"));
        }
    }
    Outcome::ok("")
}

fn stem(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Side effects of a task completing: workflow outputs or a converted item.
///
/// Returns an error message when the job cannot produce its outputs; the
/// task then fails instead of completing.
pub(crate) fn complete_effects(cluster: &mut SimCluster, job_id: u64, task: usize) -> Result<(), String> {
    let job = cluster.job(job_id).expect("known job").clone();
    if job.missing_output {
        return Ok(());
    }
    let env = &job.env;
    if let (Some(data), Some(src), Some(dst)) = (env.get("DATA_PATH"), env.get("SRC_FMT"), env.get("DST_FMT")) {
        let suffix = format!(".{src}");
        let items: Vec<String> = cluster
            .fs
            .list(data)
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|n| n.ends_with(&suffix))
            .collect();
        let index = job.tasks[task].index.unwrap_or(0) as usize;
        let Some(item) = items.get(index) else {
            return Err(format!("no {src} item number {index} in {data}"));
        };
        let source = format!("{data}/{item}");
        let digest: String = cluster
            .fs
            .walk_files(&source)
            .iter()
            .map(|f| sha256_hex(cluster.fs.read(f).unwrap_or_default()))
            .collect();
        let target = format!("{data}/{}", &item[..item.len() - suffix.len()]) + "." + dst;
        let content = format!("converted {item} to {dst}\n{}\n", sha256_hex(digest.as_bytes()));
        return cluster.fs.write(&target, content).map_err(|e| e.to_string());
    }
    if let (Some(input), Some(output)) = (env.get("IN_PATH"), env.get("OUT_PATH")) {
        if !cluster.fs.is_dir(output) {
            return Err(format!("output folder {output} does not exist"));
        }
        let mut names: BTreeSet<String> = BTreeSet::new();
        match job.outputs {
            Some(n) => names.extend((0..n).map(|i| format!("output_{i}.tiff"))),
            None => {
                let inputs = cluster.fs.list(input).map_err(|e| e.to_string())?;
                names.extend(
                    inputs
                        .iter()
                        .filter(|n| !n.starts_with('.'))
                        .map(|n| format!("{}_mask.tiff", stem(n))),
                );
            }
        }
        for name in names {
            let content = format!("mask {name} from job {job_id}\n");
            cluster
                .fs
                .write(&format!("{output}/{name}"), content)
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}
