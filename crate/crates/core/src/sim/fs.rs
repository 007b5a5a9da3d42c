//! In-memory filesystem backing the simulated cluster.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::transport::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Blob(#[serde(with = "hex::serde")] Vec<u8>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FsError {
    #[error("{0}: No such file or directory")]
    NotFound(String),
    #[error("{0}: Not a directory")]
    NotADirectory(String),
    #[error("{0}: Is a directory")]
    IsADirectory(String),
    #[error("{0}: Permission denied")]
    PermissionDenied(String),
    #[error("{0}: File exists")]
    Exists(String),
}

/// Absolute-path tree of directories and files. `/` always exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimFs {
    dirs: BTreeSet<String>,
    files: BTreeMap<String, Blob>,
    read_only: BTreeSet<String>,
}

impl Default for SimFs {
    fn default() -> Self {
        SimFs {
            dirs: BTreeSet::from(["/".to_string()]),
            files: BTreeMap::new(),
            read_only: BTreeSet::new(),
        }
    }
}

/// Joins `path` onto `cwd` and resolves `.` and `..` lexically.
pub fn normalize(cwd: &str, path: &str) -> String {
    let joined = if path.starts_with('/') {
        path.to_string()
    } else {
        format!("{}/{}", cwd.trim_end_matches('/'), path)
    };
    let mut parts: Vec<&str> = Vec::new();
    for part in joined.split('/') {
        match part {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            p => parts.push(p),
        }
    }
    format!("/{}", parts.join("/"))
}

fn parent(path: &str) -> Option<&str> {
    if path == "/" {
        return None;
    }
    match path.rfind('/') {
        Some(0) => Some("/"),
        Some(i) => Some(&path[..i]),
        None => None,
    }
}

fn is_within(path: &str, root: &str) -> bool {
    root == "/" || path == root || path.strip_prefix(root).is_some_and(|rest| rest.starts_with('/'))
}

impl SimFs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marks a subtree as read-only: writes, creations and removals inside it fail.
    pub fn set_read_only(&mut self, path: &str) {
        self.read_only.insert(normalize("/", path));
    }

    pub fn clear_read_only(&mut self) {
        self.read_only.clear();
    }

    fn check_writable(&self, path: &str) -> Result<(), FsError> {
        if self.read_only.iter().any(|ro| is_within(path, ro)) {
            Err(FsError::PermissionDenied(path.to_string()))
        } else {
            Ok(())
        }
    }

    pub fn is_dir(&self, path: &str) -> bool {
        self.dirs.contains(path)
    }

    pub fn is_file(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    pub fn exists(&self, path: &str) -> bool {
        self.is_dir(path) || self.is_file(path)
    }

    pub fn mkdir_p(&mut self, path: &str) -> Result<(), FsError> {
        let mut missing = Vec::new();
        let mut cur = Some(path);
        while let Some(p) = cur {
            if self.is_file(p) {
                return Err(FsError::NotADirectory(p.to_string()));
            }
            if self.is_dir(p) {
                break;
            }
            missing.push(p.to_string());
            cur = parent(p);
        }
        for p in missing.iter().rev() {
            self.check_writable(p)?;
        }
        self.dirs.extend(missing);
        Ok(())
    }

    /// Writes a file. The parent directory must exist.
    pub fn write(&mut self, path: &str, content: impl Into<Vec<u8>>) -> Result<(), FsError> {
        if self.is_dir(path) {
            return Err(FsError::IsADirectory(path.to_string()));
        }
        match parent(path) {
            Some(p) if self.is_dir(p) => {}
            _ => return Err(FsError::NotFound(path.to_string())),
        }
        self.check_writable(path)?;
        self.files.insert(path.to_string(), Blob(content.into()));
        Ok(())
    }

    pub fn append(&mut self, path: &str, content: &[u8]) -> Result<(), FsError> {
        let mut current = self.read(path).map(<[u8]>::to_vec).unwrap_or_default();
        current.extend_from_slice(content);
        self.write(path, current)
    }

    pub fn read(&self, path: &str) -> Result<&[u8], FsError> {
        match self.files.get(path) {
            Some(b) => Ok(&b.0),
            None if self.is_dir(path) => Err(FsError::IsADirectory(path.to_string())),
            None => Err(FsError::NotFound(path.to_string())),
        }
    }

    /// Removes a file or a whole directory tree. Returns whether anything existed.
    pub fn remove_tree(&mut self, path: &str) -> Result<bool, FsError> {
        if !self.exists(path) {
            return Ok(false);
        }
        if path == "/" {
            return Err(FsError::PermissionDenied(path.to_string()));
        }
        self.check_writable(path)?;
        let dirs: Vec<String> = self.dirs.iter().filter(|d| is_within(d, path)).cloned().collect();
        let files: Vec<String> = self.files.keys().filter(|f| is_within(f, path)).cloned().collect();
        for f in files.iter().chain(&dirs) {
            self.check_writable(f)?;
        }
        for d in dirs {
            self.dirs.remove(&d);
        }
        for f in files {
            self.files.remove(&f);
        }
        Ok(true)
    }

    /// Names of the direct children of a directory, sorted.
    pub fn list(&self, dir: &str) -> Result<Vec<String>, FsError> {
        if self.is_file(dir) {
            return Err(FsError::NotADirectory(dir.to_string()));
        }
        if !self.is_dir(dir) {
            return Err(FsError::NotFound(dir.to_string()));
        }
        let prefix = if dir == "/" { "/".to_string() } else { format!("{dir}/") };
        let mut names: BTreeSet<String> = BTreeSet::new();
        for p in self.dirs.iter().chain(self.files.keys()) {
            if let Some(rest) = p.strip_prefix(&prefix) {
                if !rest.is_empty() && !rest.contains('/') {
                    names.insert(rest.to_string());
                }
            }
        }
        Ok(names.into_iter().collect())
    }

    /// All files under `root`, sorted, as absolute paths.
    pub fn walk_files(&self, root: &str) -> Vec<String> {
        self.files.keys().filter(|f| is_within(f, root)).cloned().collect()
    }

    /// Moves a file or directory tree. A destination directory receives the source by name.
    pub fn rename(&mut self, from: &str, to: &str) -> Result<(), FsError> {
        if !self.exists(from) {
            return Err(FsError::NotFound(from.to_string()));
        }
        let to = if self.is_dir(to) {
            let name = from.rsplit('/').next().unwrap_or(from);
            format!("{}/{name}", to.trim_end_matches('/'))
        } else {
            to.to_string()
        };
        if from == to {
            return Ok(());
        }
        if is_within(&to, from) {
            return Err(FsError::PermissionDenied(to));
        }
        match parent(&to) {
            Some(p) if self.is_dir(p) => {}
            _ => return Err(FsError::NotFound(to)),
        }
        self.check_writable(from)?;
        self.check_writable(&to)?;
        if self.is_file(from) {
            let blob = self.files.remove(from).expect("checked above");
            self.files.insert(to, blob);
            return Ok(());
        }
        if self.exists(&to) {
            return Err(FsError::Exists(to));
        }
        let rebase = |p: &str| format!("{to}{}", &p[from.len()..]);
        let dirs: Vec<String> = self.dirs.iter().filter(|d| is_within(d, from)).cloned().collect();
        let files: Vec<String> = self.files.keys().filter(|f| is_within(f, from)).cloned().collect();
        for d in dirs {
            self.dirs.remove(&d);
            self.dirs.insert(rebase(&d));
        }
        for f in files {
            let blob = self.files.remove(&f).expect("listed above");
            self.files.insert(rebase(&f), blob);
        }
        Ok(())
    }

    /// Deterministic listing of everything under `root`: `d <path>` and `f <path> <sha256>` lines.
    pub fn snapshot(&self, root: &str) -> String {
        let mut entries: BTreeMap<&str, String> = BTreeMap::new();
        for d in self.dirs.iter().filter(|d| is_within(d, root)) {
            entries.insert(d, format!("d {d}"));
        }
        for (f, blob) in self.files.iter().filter(|(f, _)| is_within(f, root)) {
            entries.insert(f, format!("f {f} {}", sha256_hex(&blob.0)));
        }
        let mut out = entries.into_values().collect::<Vec<_>>().join("\n");
        out.push('\n');
        out
    }
}
