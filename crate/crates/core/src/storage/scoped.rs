//! Sandbox-private scoped storage roots.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::ObjectPath;

/// A directory owned by exactly one sandbox. Plaintext may live here, and only here,
/// for the duration of a job.
#[derive(Debug, Clone)]
pub struct ScopedRoot {
    path: PathBuf,
}

impl ScopedRoot {
    pub fn create(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path)?;
        Ok(Self { path })
    }

    /// Attaches to an existing root (the worker side of the launch contract).
    pub fn attach(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        if !path.is_dir() {
            return Err(io::Error::new(io::ErrorKind::NotFound, format!("{} is not a directory", path.display())));
        }
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn resolve(&self, rel: &ObjectPath) -> PathBuf {
        self.path.join(rel.as_str())
    }

    pub fn write(&self, rel: &ObjectPath, bytes: &[u8]) -> io::Result<()> {
        let target = self.resolve(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = tempfile::NamedTempFile::new_in(target.parent().unwrap_or(&self.path))?;
        tmp.write_all(bytes)?;
        tmp.persist(&target).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn read(&self, rel: &ObjectPath) -> io::Result<Vec<u8>> {
        fs::read(self.resolve(rel))
    }

    /// Relative paths of every file under the root.
    pub fn list(&self) -> io::Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        walk(&self.path, &mut |p| {
            out.push(p.strip_prefix(&self.path).unwrap_or(p).to_path_buf());
        })?;
        out.sort();
        Ok(out)
    }

    /// Overwrites one file with zeros, then removes it.
    pub fn wipe_file(&self, rel: &ObjectPath) -> io::Result<()> {
        let target = self.resolve(rel);
        if target.exists() {
            zero_then_remove(&target)?;
        }
        Ok(())
    }

    /// Overwrites every file with zeros and deletes it, leaving the root empty.
    pub fn wipe(&self) -> io::Result<usize> {
        let mut files = Vec::new();
        walk(&self.path, &mut |p| files.push(p.to_path_buf()))?;
        for f in &files {
            zero_then_remove(f)?;
        }
        for entry in fs::read_dir(&self.path)? {
            let p = entry?.path();
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            }
        }
        Ok(files.len())
    }

    /// Wipes and removes the root directory itself.
    pub fn destroy(self) -> io::Result<usize> {
        if !self.path.exists() {
            return Ok(0);
        }
        let n = self.wipe()?;
        fs::remove_dir_all(&self.path)?;
        Ok(n)
    }
}

fn zero_then_remove(path: &Path) -> io::Result<()> {
    let len = fs::metadata(path)?.len();
    {
        let mut f = OpenOptions::new().write(true).open(path)?;
        let zeros = vec![0u8; 64 * 1024];
        let mut left = len;
        while left > 0 {
            let n = left.min(zeros.len() as u64) as usize;
            f.write_all(&zeros[..n])?;
            left -= n as u64;
        }
        f.sync_data()?;
    }
    fs::remove_file(path)
}

pub(crate) fn walk(dir: &Path, visit: &mut dyn FnMut(&Path)) -> io::Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, visit)?;
        } else {
            visit(&p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wipe_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let root = ScopedRoot::create(dir.path().join("sb")).unwrap();
        root.write(&ObjectPath::parse("plain/a.csv").unwrap(), b"SENTINEL").unwrap();
        root.write(&ObjectPath::parse("inbox/b").unwrap(), b"x").unwrap();
        assert_eq!(root.list().unwrap().len(), 2);
        assert_eq!(root.wipe().unwrap(), 2);
        assert!(root.list().unwrap().is_empty());
        assert!(fs::read_dir(root.path()).unwrap().next().is_none());
        let p = root.path().to_path_buf();
        root.destroy().unwrap();
        assert!(!p.exists());
    }
}
