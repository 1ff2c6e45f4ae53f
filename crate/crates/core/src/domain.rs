use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A domain (speaker) identifier, 1-based as presented to users.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainCode(usize);

impl DomainCode {
    /// Validates `id` against `1..=n_domains`.
    pub fn new(id: usize, n_domains: usize) -> Result<Self> {
        if id == 0 || id > n_domains {
            return Err(Error::DomainOutOfRange {
                code: id,
                n_domains,
            });
        }
        Ok(Self(id))
    }

    /// Code for a 0-based index.
    pub fn from_index(index: usize) -> Self {
        Self(index + 1)
    }

    pub fn id(self) -> usize {
        self.0
    }

    /// 0-based position, used for table lookups.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn check(self, n_domains: usize) -> Result<Self> {
        Self::new(self.0, n_domains)
    }
}

impl fmt::Display for DomainCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered (source, target) pair. `source == target` is a legal identity
/// conversion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainPair {
    pub source: DomainCode,
    pub target: DomainCode,
}

impl DomainPair {
    pub fn new(source: DomainCode, target: DomainCode) -> Self {
        Self { source, target }
    }

    pub fn reversed(self) -> Self {
        Self {
            source: self.target,
            target: self.source,
        }
    }

    /// Row of an `N²`-row pair table: `source * N + target` (0-based).
    pub fn flat_index(self, n_domains: usize) -> Result<usize> {
        self.source.check(n_domains)?;
        self.target.check(n_domains)?;
        Ok(self.source.index() * n_domains + self.target.index())
    }
}

impl fmt::Display for DomainPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.target)
    }
}
