//! Cluster configuration (`slurm-config.ini`).
//!
//! Sections: `[ssh]`, `[cluster]`, `[registry]`, `[defaults]`, `[converters]`
//! and one `[workflow.<name>]` per available workflow. Resource settings are
//! layered: built-in fallbacks, then `[defaults]`, then the workflow section.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ini::{Ini, ParseOption};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MEM_MB: u64 = 4096;
pub const DEFAULT_CPUS: u32 = 2;
pub const DEFAULT_GPUS: u32 = 0;
pub const DEFAULT_TIME_LIMIT_MIN: u32 = 60;
pub const DEFAULT_SSH_PORT: u16 = 22;
pub const DEFAULT_POLL_INTERVAL_S: u64 = 10;

/// Container runtime invocation used in generated job scripts.
pub const DEFAULT_CONTAINER_TEMPLATE: &str = "singularity exec --bind {bind_specs} {image_file} {args}";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config at line {line}: {message}")]
    MalformedConfig { line: usize, message: String },
    #[error("missing required section [{0}]")]
    MissingSection(String),
    #[error("missing required key `{key}` in [{section}]")]
    MissingKey { section: String, key: String },
    #[error("invalid value for `{key}` in [{section}]: {reason}")]
    InvalidValue {
        section: String,
        key: String,
        reason: String,
    },
    #[error("unknown workflow `{0}`")]
    UnknownWorkflow(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(section: &str, key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        section: section.to_string(),
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// A source/destination data-format pair handled by a converter image.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FormatPair {
    pub src: String,
    pub dst: String,
}

impl FormatPair {
    pub fn new(src: &str, dst: &str) -> Self {
        FormatPair {
            src: src.to_ascii_lowercase(),
            dst: dst.to_ascii_lowercase(),
        }
    }

    /// Config key form, e.g. `zarr_to_tiff`.
    pub fn key(&self) -> String {
        format!("{}_to_{}", self.src, self.dst)
    }
}

impl fmt::Display for FormatPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.src, self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub host: String,
    pub port: u16,
    pub user: String,
    pub key_path: PathBuf,
    pub scratch_dir: String,
    pub partition: Option<String>,
    pub account: Option<String>,
    pub converters: BTreeMap<FormatPair, String>,
    pub container_template: String,
    pub poll_interval_s: u64,
}

impl ClusterProfile {
    pub fn converter_image(&self, pair: &FormatPair) -> Option<&str> {
        self.converters.get(pair).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSpec {
    pub mem_mb: u64,
    pub cpus: u32,
    pub gpus: u32,
    pub time_limit_min: u32,
}

impl Default for ResourceSpec {
    fn default() -> Self {
        ResourceSpec {
            mem_mb: DEFAULT_MEM_MB,
            cpus: DEFAULT_CPUS,
            gpus: DEFAULT_GPUS,
            time_limit_min: DEFAULT_TIME_LIMIT_MIN,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ResourceOverrides {
    mem_mb: Option<u64>,
    cpus: Option<u32>,
    gpus: Option<u32>,
    time_limit_min: Option<u32>,
}

impl ResourceOverrides {
    fn apply(self, base: ResourceSpec) -> ResourceSpec {
        ResourceSpec {
            mem_mb: self.mem_mb.unwrap_or(base.mem_mb),
            cpus: self.cpus.unwrap_or(base.cpus),
            gpus: self.gpus.unwrap_or(base.gpus),
            time_limit_min: self.time_limit_min.unwrap_or(base.time_limit_min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobScriptSource {
    Generated,
    RepoProvided,
}

/// Data format a workflow container reads from its `in` folder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkflowInput {
    Tiff,
    Zarr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEntry {
    pub name: String,
    pub repo_url: String,
    pub version: String,
    pub resources: ResourceSpec,
    pub job_script_source: JobScriptSource,
    pub image_override: Option<String>,
    pub descriptor_path: Option<PathBuf>,
    pub input_format: WorkflowInput,
    /// Where a repository-provided job script is fetched from.
    pub job_script_url: Option<String>,
}

impl WorkflowEntry {
    /// Source URL of the repository job script, defaulting to `job.sh` at the pinned version.
    pub fn repo_script_url(&self) -> String {
        self.job_script_url.clone().unwrap_or_else(|| {
            format!("{}/raw/{}/job.sh", self.repo_url.trim_end_matches('/').trim_end_matches(".git"), self.version)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowRegistry {
    pub namespace: Option<String>,
    pub entries: BTreeMap<String, WorkflowEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedWorkflow {
    pub name: String,
    pub repo_url: String,
    pub version: String,
    pub image_reference: String,
    /// False when the version is a moving tag such as `latest`.
    pub reproducible: bool,
}

impl ResolvedWorkflow {
    /// File name of the pulled image inside `singularity_images/`.
    pub fn image_file_name(&self) -> String {
        format!("{}_{}.sif", self.name, self.version)
    }
}

impl WorkflowRegistry {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, name: &str) -> Result<&WorkflowEntry, ConfigError> {
        self.entries
            .get(name)
            .ok_or_else(|| ConfigError::UnknownWorkflow(name.to_string()))
    }

    pub fn effective_resources(&self, name: &str) -> Result<ResourceSpec, ConfigError> {
        self.get(name).map(|e| e.resources)
    }

    /// Resolves the repository, version and container image of a workflow.
    ///
    /// The image is `<namespace>/<lowercased repo name>:<version>` unless the
    /// entry names one explicitly.
    pub fn resolve_workflow(&self, name: &str) -> Result<ResolvedWorkflow, ConfigError> {
        let entry = self.get(name)?;
        let image_reference = match &entry.image_override {
            Some(image) => image.clone(),
            None => {
                let namespace = self
                    .namespace
                    .clone()
                    .unwrap_or_else(|| default_namespace(&entry.repo_url));
                format!(
                    "{}/{}:{}",
                    namespace.trim_end_matches('/'),
                    repo_basename(&entry.repo_url).to_ascii_lowercase(),
                    entry.version
                )
            }
        };
        Ok(ResolvedWorkflow {
            name: entry.name.clone(),
            repo_url: entry.repo_url.clone(),
            version: entry.version.clone(),
            image_reference,
            reproducible: !entry.version.eq_ignore_ascii_case("latest"),
        })
    }
}

fn repo_path_segments(repo_url: &str) -> Vec<String> {
    url::Url::parse(repo_url)
        .ok()
        .and_then(|u| {
            u.path_segments()
                .map(|s| s.filter(|p| !p.is_empty()).map(str::to_string).collect())
        })
        .unwrap_or_default()
}

fn repo_basename(repo_url: &str) -> String {
    let segments = repo_path_segments(repo_url);
    let last = segments.last().cloned().unwrap_or_default();
    last.trim_end_matches(".git").to_string()
}

/// `docker.io/<repository owner>` when no `[registry] namespace` is set.
fn default_namespace(repo_url: &str) -> String {
    let segments = repo_path_segments(repo_url);
    match segments.len() {
        0 | 1 => "docker.io/library".to_string(),
        n => format!("docker.io/{}", segments[n - 2].to_ascii_lowercase()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub profile: ClusterProfile,
    pub registry: WorkflowRegistry,
}

type Section = BTreeMap<String, String>;

fn sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let opt = ParseOption {
        enabled_quote: false,
        enabled_escape: false,
        ..ParseOption::default()
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') && !line.ends_with(']') {
            return Err(ConfigError::MalformedConfig {
                line: i + 1,
                message: format!("unterminated section header `{line}`"),
            });
        }
    }
    let ini = Ini::load_from_str_opt(text, opt).map_err(|e| ConfigError::MalformedConfig {
        line: e.line,
        message: e.msg.to_string(),
    })?;
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if let Some((k, _)) = props.iter().next() {
                let line = text
                    .lines()
                    .position(|l| l.trim_start().starts_with(k))
                    .map_or(1, |i| i + 1);
                return Err(ConfigError::MalformedConfig {
                    line,
                    message: format!("key `{k}` appears before any section header"),
                });
            }
            continue;
        };
        let section = out.entry(name.trim().to_string()).or_default();
        for (k, v) in props.iter() {
            section.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}

fn required<'a>(section: &'a Section, name: &str, key: &str) -> Result<&'a str, ConfigError> {
    match section.get(key).map(String::as_str) {
        Some(v) if !v.is_empty() => Ok(v),
        Some(_) => Err(invalid(name, key, "must not be empty")),
        None => Err(ConfigError::MissingKey {
            section: name.to_string(),
            key: key.to_string(),
        }),
    }
}

fn optional(section: &Section, key: &str) -> Option<String> {
    section.get(key).filter(|v| !v.is_empty()).cloned()
}

fn number<T>(section: &Section, name: &str, key: &str, min: T) -> Result<Option<T>, ConfigError>
where
    T: std::str::FromStr + PartialOrd + fmt::Display,
{
    let Some(raw) = section.get(key) else {
        return Ok(None);
    };
    let value: T = raw
        .parse()
        .map_err(|_| invalid(name, key, format!("{raw:?} is not a non-negative integer")))?;
    if value < min {
        return Err(invalid(name, key, format!("must be at least {min}")));
    }
    Ok(Some(value))
}

fn resource_overrides(section: &Section, name: &str) -> Result<ResourceOverrides, ConfigError> {
    Ok(ResourceOverrides {
        mem_mb: number(section, name, "mem_mb", 1u64)?,
        cpus: number(section, name, "cpus", 1u32)?,
        gpus: number(section, name, "gpus", 0u32)?,
        time_limit_min: number(section, name, "time_limit_min", 1u32)?,
    })
}

/// Parses a configuration document. Relative paths are kept as written.
pub fn parse_config(text: &str) -> Result<ClusterConfig, ConfigError> {
    let sections = sections(text)?;
    let empty = Section::new();

    let ssh = sections
        .get("ssh")
        .ok_or_else(|| ConfigError::MissingSection("ssh".into()))?;
    let cluster = sections
        .get("cluster")
        .ok_or_else(|| ConfigError::MissingSection("cluster".into()))?;

    let host = required(ssh, "ssh", "host")?.to_string();
    let user = required(ssh, "ssh", "user")?.to_string();
    let port = number(ssh, "ssh", "port", 1u16)?.unwrap_or(DEFAULT_SSH_PORT);
    let key_path = optional(ssh, "key_path")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("~/.ssh/id_rsa"));

    let scratch_dir = required(cluster, "cluster", "scratch_dir")?.trim_end_matches('/').to_string();
    if !scratch_dir.starts_with('/') {
        return Err(invalid("cluster", "scratch_dir", format!("{scratch_dir:?} is not an absolute path")));
    }
    let container_template =
        optional(cluster, "container_template").unwrap_or_else(|| DEFAULT_CONTAINER_TEMPLATE.to_string());
    if !container_template.contains("{image_file}") {
        return Err(invalid("cluster", "container_template", "must contain {image_file}"));
    }
    let poll_interval_s = number(cluster, "cluster", "poll_interval_s", 1u64)?.unwrap_or(DEFAULT_POLL_INTERVAL_S);

    let mut converters = BTreeMap::new();
    for (key, image) in sections.get("converters").unwrap_or(&empty) {
        let Some((src, dst)) = key.split_once("_to_") else {
            return Err(invalid("converters", key, "expected a key of the form <src>_to_<dst>"));
        };
        if src.is_empty() || dst.is_empty() {
            return Err(invalid("converters", key, "expected a key of the form <src>_to_<dst>"));
        }
        if image.is_empty() {
            return Err(invalid("converters", key, "image reference must not be empty"));
        }
        converters.insert(FormatPair::new(src, dst), image.clone());
    }

    let profile = ClusterProfile {
        host,
        port,
        user,
        key_path,
        scratch_dir,
        partition: optional(cluster, "partition"),
        account: optional(cluster, "account"),
        converters,
        container_template,
        poll_interval_s,
    };

    let base = resource_overrides(sections.get("defaults").unwrap_or(&empty), "defaults")?
        .apply(ResourceSpec::default());

    let mut registry = WorkflowRegistry {
        namespace: sections.get("registry").and_then(|s| optional(s, "namespace")),
        entries: BTreeMap::new(),
    };
    for (section_name, section) in &sections {
        let Some(name) = section_name.strip_prefix("workflow.") else {
            if !matches!(
                section_name.as_str(),
                "ssh" | "cluster" | "registry" | "defaults" | "converters"
            ) {
                log::warn!("ignoring unknown config section [{section_name}]");
            }
            continue;
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(invalid(section_name, "", format!("{name:?} is not a valid workflow name")));
        }
        let repo_url = required(section, section_name, "repo")?.to_string();
        match url::Url::parse(&repo_url) {
            Ok(u) if u.has_host() => {}
            _ => return Err(invalid(section_name, "repo", format!("{repo_url:?} is not a URL"))),
        }
        let version = required(section, section_name, "version")?.to_string();
        let job_script_source = match section.get("job_script").map(|s| s.to_ascii_lowercase()) {
            None => JobScriptSource::Generated,
            Some(s) if s == "generated" => JobScriptSource::Generated,
            Some(s) if s == "repo" || s == "repo-provided" => JobScriptSource::RepoProvided,
            Some(s) => return Err(invalid(section_name, "job_script", format!("{s:?} (expected generated or repo)"))),
        };
        let input_format = match section.get("input_format").map(|s| s.to_ascii_lowercase()) {
            None => WorkflowInput::Tiff,
            Some(s) if s == "tiff" || s == "tif" => WorkflowInput::Tiff,
            Some(s) if s == "zarr" => WorkflowInput::Zarr,
            Some(s) => return Err(invalid(section_name, "input_format", format!("{s:?} (expected tiff or zarr)"))),
        };
        let resources = resource_overrides(section, section_name)?.apply(base);
        registry.entries.insert(
            name.to_string(),
            WorkflowEntry {
                name: name.to_string(),
                repo_url,
                version,
                resources,
                job_script_source,
                image_override: optional(section, "image"),
                descriptor_path: optional(section, "descriptor").map(PathBuf::from),
                input_format,
                job_script_url: optional(section, "job_script_url"),
            },
        );
    }

    Ok(ClusterConfig { profile, registry })
}

fn expand_home(path: &Path) -> PathBuf {
    match (path.strip_prefix("~"), std::env::var_os("HOME")) {
        (Ok(rest), Some(home)) => PathBuf::from(home).join(rest),
        _ => path.to_path_buf(),
    }
}

/// Reads a config file, resolving relative paths against its directory.
pub fn load_config(path: &Path) -> Result<ClusterConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| -> PathBuf {
        let p = expand_home(p);
        if p.is_relative() {
            base.join(p)
        } else {
            p
        }
    };
    let key_path = resolve(&config.profile.key_path);
    config.profile.key_path = key_path;
    for entry in config.registry.entries.values_mut() {
        entry.descriptor_path = entry.descriptor_path.as_deref().map(resolve);
    }
    Ok(config)
}
