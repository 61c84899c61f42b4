//! Version numbers and the four requirement forms used by service references.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use semver::Version;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VersionError {
    #[error("invalid version `{0}`: expected major.minor.patch")]
    InvalidVersion(String),
    #[error("invalid version requirement `{0}`")]
    InvalidRequirement(String),
}

/// Parses a strict `major.minor.patch` version. Pre-release and build
/// metadata are rejected so that precedence is purely numeric.
pub fn parse_version(text: &str) -> Result<Version, VersionError> {
    let version =
        Version::parse(text.trim()).map_err(|_| VersionError::InvalidVersion(text.to_string()))?;
    if !version.pre.is_empty() || !version.build.is_empty() {
        return Err(VersionError::InvalidVersion(text.to_string()));
    }
    Ok(version)
}

/// Which registered versions a service reference accepts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VersionRequirement {
    Exact(Version),
    /// `1.x`
    MajorLine(u64),
    /// `1.2.x`
    MinorLine(u64, u64),
    Latest,
}

impl VersionRequirement {
    pub fn matches(&self, version: &Version) -> bool {
        match self {
            Self::Exact(v) => v == version,
            Self::MajorLine(major) => version.major == *major,
            Self::MinorLine(major, minor) => version.major == *major && version.minor == *minor,
            Self::Latest => true,
        }
    }

    /// Highest matching version, if any.
    pub fn select<'a, I>(&self, versions: I) -> Option<&'a Version>
    where
        I: IntoIterator<Item = &'a Version>,
    {
        versions.into_iter().filter(|v| self.matches(v)).max()
    }
}

impl Default for VersionRequirement {
    fn default() -> Self {
        Self::Latest
    }
}

impl FromStr for VersionRequirement {
    type Err = VersionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let text = text.trim();
        if text.is_empty() || text == "*" || text.eq_ignore_ascii_case("latest") {
            return Ok(Self::Latest);
        }
        let bad = || VersionError::InvalidRequirement(text.to_string());
        let number = |s: &str| -> Result<u64, VersionError> {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            s.parse().map_err(|_| bad())
        };
        let parts: Vec<&str> = text.split('.').collect();
        match parts.as_slice() {
            [major] | [major, "x"] => Ok(Self::MajorLine(number(major)?)),
            [major, minor] | [major, minor, "x"] => {
                Ok(Self::MinorLine(number(major)?, number(minor)?))
            }
            [_, _, _] => parse_version(text).map(Self::Exact).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for VersionRequirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exact(v) => write!(f, "{v}"),
            Self::MajorLine(major) => write!(f, "{major}.x"),
            Self::MinorLine(major, minor) => write!(f, "{major}.{minor}.x"),
            Self::Latest => f.write_str("latest"),
        }
    }
}

impl Serialize for VersionRequirement {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VersionRequirement {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
