//! Placing retrieved results where the user asked for them.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{RunError, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// Copy the per-batch archives unchanged.
    SingleZip,
    /// Extract every archive into `<dest>/<run-id>/`.
    ImagesFolder,
    /// Write each output next to the input it came from.
    SidecarAttachments,
}

impl FromStr for OutputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zip" => Ok(OutputMode::SingleZip),
            "images" => Ok(OutputMode::ImagesFolder),
            "sidecar" => Ok(OutputMode::SidecarAttachments),
            other => Err(format!("unknown output mode {other:?} (expected zip, images or sidecar)")),
        }
    }
}

/// Longest input id that prefixes `name` and is followed by `_`, `-` or `.`.
fn owner_of<'a>(name: &str, ids: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    ids.filter(|id| {
        name.strip_prefix(id.as_str())
            .is_some_and(|rest| rest.starts_with(['_', '-', '.']))
    })
    .max_by_key(|id| id.len())
}

fn zip_entries(path: &Path) -> Result<Vec<(String, Vec<u8>)>, RunError> {
    let mut archive = zip::ZipArchive::new(File::open(path)?).map_err(std::io::Error::other)?;
    let mut out = Vec::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i).map_err(std::io::Error::other)?;
        if entry.is_dir() {
            continue;
        }
        let Some(name) = entry.enclosed_name() else {
            continue;
        };
        let name = name
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes)?;
        out.push((name, bytes));
    }
    Ok(out)
}

/// Writes the run's results under `dest` according to `mode` and returns the
/// created paths. Nothing is written if any target already exists.
pub fn import_results(record: &RunRecord, mode: OutputMode, dest: &Path) -> Result<Vec<PathBuf>, RunError> {
    let zips = record.result_zips();
    if zips.is_empty() {
        return Err(RunError::NoResults(record.run_id.clone()));
    }
    let mut plan: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    match mode {
        OutputMode::SingleZip => {
            for z in &zips {
                let name = z.file_name().expect("archive has a name");
                plan.push((dest.join(name), std::fs::read(z)?));
            }
        }
        OutputMode::ImagesFolder => {
            let root = dest.join(&record.run_id);
            for z in &zips {
                for (name, bytes) in zip_entries(z)? {
                    plan.push((root.join(name), bytes));
                }
            }
        }
        OutputMode::SidecarAttachments => {
            let unmatched = dest.join(&record.run_id).join("unmatched");
            for z in &zips {
                for (name, bytes) in zip_entries(z)? {
                    let file = name.rsplit('/').next().unwrap_or(&name).to_string();
                    let target = match owner_of(&file, record.inputs.keys()) {
                        Some(id) => {
                            let input = &record.inputs[id];
                            input.parent().unwrap_or(Path::new(".")).join(&file)
                        }
                        None => unmatched.join(&name),
                    };
                    plan.push((target, bytes));
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    for (path, _) in &plan {
        if path.exists() || !seen.insert(path.clone()) {
            return Err(RunError::Collision(path.clone()));
        }
    }
    let mut written = Vec::new();
    for (path, bytes) in plan {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn owner_prefers_longest_id() {
        let ids = ["a".to_string(), "a_1".to_string(), "b".to_string()];
        assert_eq!(owner_of("a_1_mask.tiff", ids.iter()).map(String::as_str), Some("a_1"));
        assert_eq!(owner_of("a_mask.tiff", ids.iter()).map(String::as_str), Some("a"));
        assert_eq!(owner_of("ab_mask.tiff", ids.iter()), None);
        assert_eq!(owner_of("b.tiff", ids.iter()).map(String::as_str), Some("b"));
    }

    #[test]
    fn modes_parse() {
        assert_eq!("zip".parse::<OutputMode>().unwrap(), OutputMode::SingleZip);
        assert_eq!("sidecar".parse::<OutputMode>().unwrap(), OutputMode::SidecarAttachments);
        assert!("tar".parse::<OutputMode>().is_err());
    }
}
