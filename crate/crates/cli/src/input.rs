//! Resolving maps, atlases and trajectories named on the command line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use lipshadow::example::{f0_atlas, f0_constants, f0_map, family, ScaledFamily};
use lipshadow::hyperbolic::{AtlasFile, HyperbolicAtlas, ShadowingConstants};
use lipshadow::pam::{map_from_json, Map1D, PiecewiseAffineMap1D};
use lipshadow::scalar::{parse_scalar, Interval, Scalar};
use lipshadow::shadow::read_trajectory_csv;
use serde_json::{json, Value};

/// Exit codes.
pub const EXIT_CLAIM: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// A run that did not pass, with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    /// Stable machine-readable cause.
    pub cause: String,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            cause: "Usage".into(),
            message: message.into(),
        }
    }

    pub fn claim(cause: impl Into<String>, message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CLAIM,
            cause: cause.into(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "cause": self.cause, "message": self.message })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.cause, self.message)
    }
}

/// `--map f0`, `--map f`, or a JSON map file.
pub enum LoadedMap {
    F0(PiecewiseAffineMap1D),
    F(&'static ScaledFamily),
    File(PiecewiseAffineMap1D),
}

impl LoadedMap {
    pub fn as_map(&self) -> &dyn Map1D {
        match self {
            LoadedMap::F0(m) | LoadedMap::File(m) => m,
            LoadedMap::F(f) => *f,
        }
    }

    /// The atlas and constants that come with a built-in map.
    pub fn builtin_atlas(&self) -> Option<(HyperbolicAtlas, ShadowingConstants)> {
        match self {
            LoadedMap::F0(_) => Some((f0_atlas(), f0_constants())),
            _ => None,
        }
    }
}

pub fn load_map(name: &str) -> Result<LoadedMap, Failure> {
    match name {
        "f0" => Ok(LoadedMap::F0(f0_map())),
        "f" => Ok(LoadedMap::F(family())),
        path => {
            let text = read(Path::new(path))?;
            map_from_json(&text)
                .map(LoadedMap::File)
                .map_err(|e| Failure::usage(format!("{path}: {e}")))
        }
    }
}

/// An atlas file, with its constants when the file declares them.
pub fn load_atlas(path: &Path) -> Result<(HyperbolicAtlas, Option<ShadowingConstants>), Failure> {
    let text = read(path)?;
    let bad = |e: String| Failure::usage(format!("{}: {e}", path.display()));
    let file: AtlasFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let atlas = file.to_atlas().map_err(|e| bad(e.to_string()))?;
    let constants = file.constants().transpose().map_err(|e| bad(e.to_string()))?;
    Ok((atlas, constants))
}

/// The atlas from `--atlas` if given, else the one built into the map.
pub fn resolve_atlas(
    map: &LoadedMap,
    atlas: Option<&PathBuf>,
) -> Result<Option<(HyperbolicAtlas, Option<ShadowingConstants>)>, Failure> {
    match atlas {
        Some(path) => load_atlas(path).map(Some),
        None => Ok(map.builtin_atlas().map(|(a, c)| (a, Some(c)))),
    }
}

pub fn load_trajectory(path: &Path) -> Result<Vec<Scalar>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let points = read_trajectory_csv(file).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if points.is_empty() {
        return Err(Failure::usage(format!("{}: no points", path.display())));
    }
    Ok(points)
}

pub fn scalar(flag: &str, text: &str) -> Result<Scalar, Failure> {
    parse_scalar(text).map_err(|e| Failure::usage(format!("--{flag}: {e}")))
}

/// `lo,hi`.
pub fn interval(flag: &str, text: &str) -> Result<Interval, Failure> {
    let (lo, hi) = text
        .split_once(',')
        .ok_or_else(|| Failure::usage(format!("--{flag}: expected `lo,hi`")))?;
    Interval::new(scalar(flag, lo)?, scalar(flag, hi)?)
        .ok_or_else(|| Failure::usage(format!("--{flag}: empty interval {text}")))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lipshadow::scalar::rat;

    #[test]
    fn intervals_parse_from_pairs() {
        let i = interval("search", "-1/3, 0.25").unwrap();
        assert_eq!(i, Interval::new(rat(-1, 3), rat(1, 4)).unwrap());
        assert_eq!(interval("search", "1,0").unwrap_err().code, EXIT_USAGE);
        assert_eq!(interval("search", "1").unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn builtin_maps_resolve_by_name() {
        assert!(matches!(load_map("f0").unwrap(), LoadedMap::F0(_)));
        assert!(matches!(load_map("f").unwrap(), LoadedMap::F(_)));
        assert!(load_map("f0").unwrap().builtin_atlas().is_some());
        assert!(load_map("f").unwrap().builtin_atlas().is_none());
        assert_eq!(load_map("/nonexistent.json").err().unwrap().code, EXIT_USAGE);
    }
}
