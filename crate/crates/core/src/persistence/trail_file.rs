use std::fs;
use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{check_version, PersistenceError, FORMAT_VERSION};
use crate::geometry::Trail;

/// Serialized form of a [`Trail`]. Interpolated points are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailFile {
    pub format_version: u32,
    pub name: String,
    pub looping: bool,
    pub spacing_s: f64,
    pub targets: Vec<TargetEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub id: u32,
    pub order_index: usize,
    pub x: f64,
    pub y: f64,
}

impl From<&Trail> for TrailFile {
    fn from(trail: &Trail) -> Self {
        TrailFile {
            format_version: FORMAT_VERSION,
            name: trail.name.clone(),
            looping: trail.looping(),
            spacing_s: trail.spacing(),
            targets: trail
                .targets()
                .iter()
                .map(|t| TargetEntry {
                    id: t.id,
                    order_index: t.order_index,
                    x: t.position.x,
                    y: t.position.y,
                })
                .collect(),
        }
    }
}

impl TryFrom<TrailFile> for Trail {
    type Error = PersistenceError;

    /// Validates and rebuilds the trail; segments are regenerated whenever
    /// there are at least two targets.
    fn try_from(file: TrailFile) -> Result<Self, Self::Error> {
        check_version(file.format_version)?;
        let mut trail = Trail::new(file.name).with_spacing(file.spacing_s)?;
        let mut entries = file.targets;
        entries.sort_by_key(|e| e.order_index);
        let mut seen = std::collections::HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.order_index != i {
                return Err(PersistenceError::Validation(format!(
                    "order_index values must be 0..{}, found {}",
                    entries.len(),
                    e.order_index
                )));
            }
            if !seen.insert(e.id) {
                return Err(PersistenceError::Validation(format!("duplicate target id {}", e.id)));
            }
            trail.push_target_with_id(e.id, Point2::new(e.x, e.y))?;
        }
        trail.set_looping(file.looping)?;
        if trail.targets().len() >= 2 {
            trail.generate_segments()?;
        }
        Ok(trail)
    }
}

impl Serialize for Trail {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TrailFile::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Trail {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = TrailFile::deserialize(deserializer)?;
        Trail::try_from(file).map_err(serde::de::Error::custom)
    }
}

pub fn save_trail(path: impl AsRef<Path>, trail: &Trail) -> Result<(), PersistenceError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(&TrailFile::from(trail)).expect("trail serializes");
    fs::write(path, json).map_err(|e| PersistenceError::io(path, e))
}

pub fn load_trail(path: impl AsRef<Path>) -> Result<Trail, PersistenceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PersistenceError::io(path, e))?;
    let file: TrailFile =
        serde_json::from_str(&text).map_err(|e| PersistenceError::parse(path.display().to_string(), &e))?;
    Trail::try_from(file)
}
