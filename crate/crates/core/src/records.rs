//! Line-delimited JSON inputs shared by the scorers.

use std::collections::HashMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::OrientedBox3D;

/// One model answer: `{"id": ..., "response": ...}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PredictionRecord {
    #[serde(alias = "sample_id", alias = "scene_id")]
    pub id: String,
    #[serde(alias = "raw_response_text", alias = "response_text", alias = "text")]
    pub response: String,
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses one JSON value per non-blank line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Bundle {
                path: format!("{origin}:{}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read_text(path)?, &path.display().to_string())
}

/// Predictions keyed by id. Duplicate ids are rejected.
pub fn predictions_by_id(records: Vec<PredictionRecord>, origin: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if map.contains_key(&r.id) {
            return Err(Error::Bundle {
                path: origin.to_string(),
                message: format!("duplicate prediction id {:?}", r.id),
            });
        }
        map.insert(r.id, r.response);
    }
    Ok(map)
}

pub fn read_predictions(path: &Path) -> Result<HashMap<String, String>> {
    predictions_by_id(read_jsonl(path)?, &path.display().to_string())
}

/// Box given either as 9 numbers or as 6 axis-aligned numbers that get
/// zero orientation appended.
pub fn box_from_numbers(v: &[f64], what: &str) -> Result<OrientedBox3D> {
    let full: [f64; 9] = match v.len() {
        9 => v.try_into().expect("length checked"),
        6 => [v[0], v[1], v[2], v[3], v[4], v[5], 0.0, 0.0, 0.0],
        n => return Err(Error::invalid(format!("{what}: expected 6 or 9 numbers, found {n}"))),
    };
    OrientedBox3D::from_array(full).map_err(|e| Error::invalid(format!("{what}: {e}")))
}
