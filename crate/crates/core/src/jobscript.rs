//! Slurm batch script generation.
//!
//! Two kinds of script are produced: the workflow job, which runs the
//! workflow container over a batch's `in`/`out`/`gt` folders, and the
//! conversion array job, which converts each input item to the format the
//! workflow reads, one array task per item.

use serde::{Deserialize, Serialize};

use crate::config::{ClusterProfile, FormatPair, ResourceSpec};
use crate::descriptor::{env_assignments, render_cli_args, ParamValues, WorkflowDescriptor};

pub const SHEBANG: &str = "#!/bin/bash";

/// Container paths the data folders are bound to.
pub const CONTAINER_IN: &str = "/data/in";
pub const CONTAINER_OUT: &str = "/data/out";
pub const CONTAINER_GT: &str = "/data/gt";

/// Resources requested by each conversion array task.
pub const CONVERSION_RESOURCES: ResourceSpec = ResourceSpec {
    mem_mb: 4096,
    cpus: 1,
    gpus: 0,
    time_limit_min: 60,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum JobScriptError {
    #[error("conversion needs at least one item, got {0}")]
    InvalidCount(usize),
    #[error("no converter configured for {0}")]
    UnknownConverter(FormatPair),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobScript {
    pub directives: Vec<(String, String)>,
    pub env_exports: Vec<(String, String)>,
    pub body: Vec<String>,
    pub logfile_path: String,
}

/// Remote locations a workflow job operates on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPaths {
    pub in_dir: String,
    pub out_dir: String,
    pub gt_dir: String,
    pub image_file: String,
}

/// Logfile pattern for single jobs; `%j` is replaced by the job id.
pub fn workflow_log_pattern(scratch_dir: &str) -> String {
    format!("{scratch_dir}/logs/omero-job-%j.log")
}

/// Logfile pattern for array tasks: `%A` is the parent id, `%a` the task index.
pub fn array_log_pattern(scratch_dir: &str) -> String {
    format!("{scratch_dir}/logs/omero-job-%A_%a.log")
}

/// Minutes to the `HH:MM:SS` form Slurm accepts. Hours are not wrapped into days.
pub fn format_time_limit(minutes: u32) -> String {
    format!("{:02}:{:02}:00", minutes / 60, minutes % 60)
}

fn resource_directives(resources: &ResourceSpec, profile: &ClusterProfile, logfile: &str) -> Vec<(String, String)> {
    let mut d = vec![
        ("--mem".to_string(), resources.mem_mb.to_string()),
        ("--cpus-per-task".to_string(), resources.cpus.to_string()),
    ];
    if resources.gpus > 0 {
        d.push(("--gres".to_string(), format!("gpu:{}", resources.gpus)));
    }
    d.push(("--time".to_string(), format_time_limit(resources.time_limit_min)));
    d.push(("--output".to_string(), logfile.to_string()));
    if let Some(p) = &profile.partition {
        d.push(("--partition".to_string(), p.clone()));
    }
    if let Some(a) = &profile.account {
        d.push(("--account".to_string(), a.clone()));
    }
    d
}

fn quote(token: &str) -> String {
    shlex::try_quote(token)
        .map(|q| q.into_owned())
        .unwrap_or_else(|_| format!("'{}'", token.replace('\0', "").replace('\'', r"'\''")))
}

fn container_command(template: &str, bind_specs: &str, image_file: &str, args: &str) -> String {
    template
        .replace("{bind_specs}", bind_specs)
        .replace("{image_file}", image_file)
        .replace("{args}", args)
        .trim_end()
        .to_string()
}

fn workflow_bind_specs() -> String {
    format!("\"${{IN_PATH}}:{CONTAINER_IN},${{OUT_PATH}}:{CONTAINER_OUT},${{GT_PATH}}:{CONTAINER_GT}\"")
}

/// Builds the per-run workflow job script.
///
/// Parameters reach the container twice: as exported environment variables
/// and as rendered command-line arguments.
pub fn generate_workflow_script(
    descriptor: &WorkflowDescriptor,
    resources: &ResourceSpec,
    values: &ParamValues,
    run_paths: &RunPaths,
    profile: &ClusterProfile,
) -> JobScript {
    let logfile_path = workflow_log_pattern(&profile.scratch_dir);
    let mut env_exports = env_assignments(descriptor, values);
    env_exports.push(("IN_PATH".into(), run_paths.in_dir.clone()));
    env_exports.push(("OUT_PATH".into(), run_paths.out_dir.clone()));
    env_exports.push(("GT_PATH".into(), run_paths.gt_dir.clone()));
    let args = render_cli_args(descriptor, values)
        .iter()
        .map(|t| quote(t))
        .collect::<Vec<_>>()
        .join(" ");
    let body = vec![container_command(
        &profile.container_template,
        &workflow_bind_specs(),
        &quote(&run_paths.image_file),
        &args,
    )];
    JobScript {
        directives: resource_directives(resources, profile, &logfile_path),
        env_exports,
        body,
        logfile_path,
    }
}

/// Builds the default script installed under `slurm-scripts/jobs/`.
///
/// It carries no run-specific values: data folders come from `IN_PATH`,
/// `OUT_PATH` and `GT_PATH`, and arguments from `WORKFLOW_ARGS`, all set in
/// the submission environment.
pub fn generate_installed_script(image_file: &str, resources: &ResourceSpec, profile: &ClusterProfile) -> JobScript {
    let logfile_path = workflow_log_pattern(&profile.scratch_dir);
    JobScript {
        directives: resource_directives(resources, profile, &logfile_path),
        env_exports: Vec::new(),
        body: vec![container_command(
            &profile.container_template,
            &workflow_bind_specs(),
            &quote(image_file),
            "${WORKFLOW_ARGS:-}",
        )],
        logfile_path,
    }
}

/// Builds an array job converting `n_items` items under `data_dir` from
/// `pair.src` to `pair.dst`, one task per item in sorted name order.
pub fn generate_conversion_script(
    n_items: usize,
    pair: &FormatPair,
    converter_image_file: &str,
    data_dir: &str,
    profile: &ClusterProfile,
) -> Result<JobScript, JobScriptError> {
    if n_items < 1 {
        return Err(JobScriptError::InvalidCount(n_items));
    }
    if profile.converter_image(pair).is_none() {
        return Err(JobScriptError::UnknownConverter(pair.clone()));
    }
    let logfile_path = array_log_pattern(&profile.scratch_dir);
    let mut directives = resource_directives(&CONVERSION_RESOURCES, profile, &logfile_path);
    directives.push(("--array".to_string(), format!("0-{}", n_items - 1)));
    let env_exports = vec![
        ("DATA_PATH".to_string(), data_dir.to_string()),
        ("SRC_FMT".to_string(), pair.src.clone()),
        ("DST_FMT".to_string(), pair.dst.clone()),
        ("CONVERTER_IMAGE".to_string(), converter_image_file.to_string()),
    ];
    let body = vec![
        r#"SRC_ITEM=$(ls -d "$DATA_PATH"/*."$SRC_FMT" | sort | sed -n "$((SLURM_ARRAY_TASK_ID + 1))p")"#.to_string(),
        container_command(
            &profile.container_template,
            r#""${DATA_PATH}:${DATA_PATH}""#,
            r#""$CONVERTER_IMAGE""#,
            r#""$SRC_ITEM" "${SRC_ITEM%.*}.$DST_FMT""#,
        ),
    ];
    Ok(JobScript {
        directives,
        env_exports,
        body,
        logfile_path,
    })
}

fn escape_export(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        if matches!(c, '\\' | '"' | '$' | '`') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn unescape_export(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(next) = chars.next() {
                out.push(next);
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Flag-style keys (single dash, e.g. `-p`) render with a space separator.
fn is_flag_style(key: &str) -> bool {
    key.starts_with('-') && !key.starts_with("--")
}

pub fn render_script(script: &JobScript) -> String {
    let mut text = String::new();
    text.push_str(SHEBANG);
    text.push('\n');
    for (key, value) in &script.directives {
        let sep = if is_flag_style(key) { " " } else { "=" };
        text.push_str(&format!("#SBATCH {key}{sep}{value}\n"));
    }
    for (name, value) in &script.env_exports {
        text.push_str(&format!("export {name}=\"{}\"\n", escape_export(value)));
    }
    for line in &script.body {
        text.push_str(line);
        text.push('\n');
    }
    text
}

/// Recovers `#SBATCH` directives from script text, in order.
pub fn scan_directives(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| line.strip_prefix("#SBATCH"))
        .filter_map(|rest| {
            let rest = rest.trim();
            if rest.is_empty() {
                return None;
            }
            let split = if rest.starts_with("--") {
                rest.split_once('=').or_else(|| rest.split_once(char::is_whitespace))
            } else {
                rest.split_once(char::is_whitespace)
            };
            Some(match split {
                Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
                None => (rest.to_string(), String::new()),
            })
        })
        .collect()
}

/// Recovers `export NAME="value"` assignments from script text, in order.
pub fn scan_exports(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| line.trim_start().strip_prefix("export "))
        .filter_map(|rest| {
            let (name, value) = rest.split_once('=')?;
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .map(unescape_export)
                .unwrap_or_else(|| value.to_string());
            Some((name.trim().to_string(), value))
        })
        .collect()
}
