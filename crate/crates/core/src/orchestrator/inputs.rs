//! Local input discovery, packing and batch planning.

use std::collections::BTreeSet;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InputFormat {
    Zarr,
    Tiff2D,
    OmeTiff,
}

impl InputFormat {
    /// Extension used inside the packed archive.
    pub fn extension(self) -> &'static str {
        match self {
            InputFormat::Zarr => "zarr",
            InputFormat::Tiff2D => "tiff",
            InputFormat::OmeTiff => "ome.tiff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputItem {
    pub id: String,
    pub local_path: PathBuf,
    pub format: InputFormat,
}

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("input {0} does not exist")]
    MissingInput(PathBuf),
    #[error("input id {0:?} is used more than once")]
    DuplicateId(String),
    #[error("{0} is not a TIFF, OME-TIFF or ZARR input")]
    UnrecognizedInput(PathBuf),
    #[error("batch size must be positive")]
    InvalidBatchSize,
    #[error("I/O error while packing inputs: {0}")]
    Io(#[from] io::Error),
    #[error("zip error while packing inputs: {0}")]
    Zip(#[from] zip::result::ZipError),
}

fn looks_like_zarr_store(path: &Path) -> bool {
    [".zgroup", ".zattrs", ".zarray", "zarr.json"]
        .iter()
        .any(|marker| path.join(marker).is_file())
}

impl InputItem {
    /// Detects the format from the extension, or from store markers for directories.
    pub fn detect(path: &Path) -> Result<InputItem, InputError> {
        if !path.exists() {
            return Err(InputError::MissingInput(path.to_path_buf()));
        }
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let lower = name.to_ascii_lowercase();
        let strip = |suffixes: &[&str]| {
            suffixes
                .iter()
                .find(|s| lower.ends_with(*s))
                .map(|s| name[..name.len() - s.len()].to_string())
        };
        let (id, format) = if path.is_dir() {
            match strip(&[".ome.zarr", ".zarr"]) {
                Some(id) => (id, InputFormat::Zarr),
                None if looks_like_zarr_store(path) => (name.clone(), InputFormat::Zarr),
                None => return Err(InputError::UnrecognizedInput(path.to_path_buf())),
            }
        } else if let Some(id) = strip(&[".ome.tiff", ".ome.tif"]) {
            (id, InputFormat::OmeTiff)
        } else if let Some(id) = strip(&[".tiff", ".tif"]) {
            (id, InputFormat::Tiff2D)
        } else {
            return Err(InputError::UnrecognizedInput(path.to_path_buf()));
        };
        if id.is_empty() {
            return Err(InputError::UnrecognizedInput(path.to_path_buf()));
        }
        Ok(InputItem {
            id,
            local_path: path.to_path_buf(),
            format,
        })
    }
}

/// Recognized inputs directly inside `dir`, sorted by name. Hidden and
/// unrecognized entries are skipped.
pub fn scan_input_dir(dir: &Path) -> Result<Vec<InputItem>, InputError> {
    if !dir.is_dir() {
        return Err(InputError::MissingInput(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.sort();
    let mut items = Vec::new();
    for p in paths {
        if p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')) {
            continue;
        }
        match InputItem::detect(&p) {
            Ok(item) => items.push(item),
            Err(InputError::UnrecognizedInput(p)) => log::warn!("skipping {}", p.display()),
            Err(e) => return Err(e),
        }
    }
    Ok(items)
}

fn walk_files(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Packs items into `<staging_dir>/inputs.zip` as `in/<id>.<ext>`, sorted by id.
/// ZARR stores are packed file by file under `in/<id>.zarr/`.
pub fn pack_inputs(items: &[InputItem], staging_dir: &Path) -> Result<PathBuf, InputError> {
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(InputError::DuplicateId(item.id.clone()));
        }
        if !item.local_path.exists() {
            return Err(InputError::MissingInput(item.local_path.clone()));
        }
    }
    let mut sorted: Vec<&InputItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    std::fs::create_dir_all(staging_dir)?;
    let path = staging_dir.join("inputs.zip");
    let mut zip = zip::ZipWriter::new(File::create(&path)?);
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default())
        .large_file(true);
    for item in sorted {
        let base = format!("in/{}.{}", item.id, item.format.extension());
        if item.format == InputFormat::Zarr {
            for file in walk_files(&item.local_path)? {
                let rel = file.strip_prefix(&item.local_path).expect("walked under root");
                let rel = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                zip.start_file(format!("{base}/{rel}"), options)?;
                io::copy(&mut File::open(&file)?, &mut zip)?;
            }
        } else {
            zip.start_file(base, options)?;
            io::copy(&mut File::open(&item.local_path)?, &mut zip)?;
        }
    }
    zip.finish()?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Item ids per batch, in input order.
    pub batches: Vec<Vec<String>>,
}

/// Splits items into consecutive groups of `batch_size`, the last one possibly shorter.
pub fn plan_batches(items: &[InputItem], batch_size: usize) -> Result<BatchPlan, InputError> {
    if batch_size == 0 {
        return Err(InputError::InvalidBatchSize);
    }
    Ok(BatchPlan {
        batch_size,
        batches: items
            .chunks(batch_size)
            .map(|c| c.iter().map(|i| i.id.clone()).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, name.as_bytes()).unwrap();
        p
    }

    #[test]
    fn detection() {
        let dir = tempfile::tempdir().unwrap();
        let a = InputItem::detect(&touch(dir.path(), "a.tif")).unwrap();
        assert_eq!((a.id.as_str(), a.format), ("a", InputFormat::Tiff2D));
        let b = InputItem::detect(&touch(dir.path(), "b.ome.tiff")).unwrap();
        assert_eq!((b.id.as_str(), b.format), ("b", InputFormat::OmeTiff));
        std::fs::create_dir(dir.path().join("c.zarr")).unwrap();
        let c = InputItem::detect(&dir.path().join("c.zarr")).unwrap();
        assert_eq!((c.id.as_str(), c.format), ("c", InputFormat::Zarr));
        assert!(matches!(
            InputItem::detect(&touch(dir.path(), "d.png")),
            Err(InputError::UnrecognizedInput(_))
        ));
        assert!(matches!(
            InputItem::detect(&dir.path().join("nope.tiff")),
            Err(InputError::MissingInput(_))
        ));
    }

    #[test]
    fn pack_layout_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![
            InputItem::detect(&touch(dir.path(), "b.tiff")).unwrap(),
            InputItem::detect(&touch(dir.path(), "a.tiff")).unwrap(),
        ];
        let zip_path = pack_inputs(&items, &dir.path().join("stage")).unwrap();
        let archive = zip::ZipArchive::new(File::open(zip_path).unwrap()).unwrap();
        let names: Vec<&str> = archive.file_names().collect();
        assert_eq!(names, vec!["in/a.tiff", "in/b.tiff"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = InputItem::detect(&touch(dir.path(), "a.tiff")).unwrap();
        let a2 = InputItem::detect(&touch(dir.path(), "a.tif")).unwrap();
        assert!(matches!(
            pack_inputs(&[a, a2], dir.path()),
            Err(InputError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn chunking() {
        let items: Vec<InputItem> = (0..12)
            .map(|i| InputItem {
                id: format!("i{i}"),
                local_path: PathBuf::new(),
                format: InputFormat::Tiff2D,
            })
            .collect();
        let sizes: Vec<usize> = plan_batches(&items, 5).unwrap().batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 2]);
        assert_eq!(plan_batches(&items[..3], 10).unwrap().batches.len(), 1);
        assert!(plan_batches(&[], 3).unwrap().batches.is_empty());
        assert!(matches!(plan_batches(&items, 0), Err(InputError::InvalidBatchSize)));
    }
}
