use std::fmt;

use serde::{Deserialize, Serialize};

/// A relative, normalized object path inside a namespace: `/`-separated segments of
/// `[A-Za-z0-9._-]`, none empty, none starting with `.`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectPath(String);

#[derive(Debug, thiserror::Error)]
#[error("invalid-path: {0:?}")]
pub struct InvalidPath(pub String);

impl ObjectPath {
    pub fn parse(raw: &str) -> Result<Self, InvalidPath> {
        let bad = || InvalidPath(raw.to_owned());
        if raw.is_empty() || raw.len() > 512 || raw.starts_with('/') {
            return Err(bad());
        }
        for seg in raw.split('/') {
            let ok = !seg.is_empty()
                && !seg.starts_with('.')
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
            if !ok {
                return Err(bad());
            }
        }
        Ok(Self(raw.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn starts_with_segment(&self, prefix: &str) -> bool {
        self.0.split('/').next() == Some(prefix)
    }
}

impl TryFrom<String> for ObjectPath {
    type Error = InvalidPath;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<ObjectPath> for String {
    fn from(p: ObjectPath) -> Self {
        p.0
    }
}

impl fmt::Display for ObjectPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_escapes() {
        for bad in ["", "/abs", "../x", "a/../b", "a//b", ".hidden", "a/./b", "a\\b", "a b", "a/"] {
            assert!(ObjectPath::parse(bad).is_err(), "{bad}");
        }
        for good in ["a", "datasets/x.env", "results/job-1/result.env", "A_b-1.2"] {
            assert!(ObjectPath::parse(good).is_ok(), "{good}");
        }
        assert!(ObjectPath::parse("datasets/a").unwrap().starts_with_segment("datasets"));
        assert!(!ObjectPath::parse("datasetsx/a").unwrap().starts_with_segment("datasets"));
    }
}
