//! TSPLIB reading and run artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anneal::{write_trajectory_csv, TrajectoryPoint};
use crate::error::{io_err, Error, Result};
use crate::tsp::TspInstance;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeWeightType {
    Euc2d,
    Ceil2d,
    Man2d,
    Max2d,
    Geo,
    Att,
}

impl EdgeWeightType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "EUC_2D" => Self::Euc2d,
            "CEIL_2D" => Self::Ceil2d,
            "MAN_2D" => Self::Man2d,
            "MAX_2D" => Self::Max2d,
            "GEO" => Self::Geo,
            "ATT" => Self::Att,
            _ => return None,
        })
    }
}

impl fmt::Display for EdgeWeightType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euc2d => "EUC_2D",
            Self::Ceil2d => "CEIL_2D",
            Self::Man2d => "MAN_2D",
            Self::Max2d => "MAX_2D",
            Self::Geo => "GEO",
            Self::Att => "ATT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsplibFile {
    pub name: String,
    pub comment: Option<String>,
    pub dimension: usize,
    pub edge_weight_type: EdgeWeightType,
    /// `(id, x, y)` in file order; ids run over `1..=dimension`.
    pub node_coords: Vec<(usize, f64, f64)>,
    /// Keywords that were skipped.
    pub warnings: Vec<String>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Splits `KEY : VALUE`, `KEY: VALUE` or a bare `KEY`.
fn split_keyword(line: &str) -> (String, String) {
    match line.split_once(':') {
        Some((k, v)) => (k.trim().to_ascii_uppercase(), v.trim().to_string()),
        None => {
            let mut it = line.splitn(2, char::is_whitespace);
            let k = it.next().unwrap_or("").trim().to_ascii_uppercase();
            let v = it.next().unwrap_or("").trim().to_string();
            (k, v)
        }
    }
}

/// Parses a TSPLIB file with a `NODE_COORD_SECTION`.
pub fn parse(text: &str) -> Result<TsplibFile> {
    let mut name = None;
    let mut comment: Option<String> = None;
    let mut dimension = None;
    let mut edge_weight_type = None;
    let mut coords: Vec<(usize, f64, f64)> = Vec::new();
    let mut warnings = Vec::new();
    let mut in_coords = false;
    let mut saw_coords = false;
    let mut saw_eof = false;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if in_coords {
            let first = line.split_whitespace().next().unwrap_or("");
            if first.parse::<usize>().is_ok() || first.parse::<f64>().is_ok() {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < 3 {
                    return Err(parse_err(line_no, "coordinate record needs id, x and y"));
                }
                let id = fields[0]
                    .parse::<usize>()
                    .map_err(|_| parse_err(line_no, format!("bad node id {:?}", fields[0])))?;
                let x = fields[1]
                    .parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad x coordinate {:?}", fields[1])))?;
                let y = fields[2]
                    .parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad y coordinate {:?}", fields[2])))?;
                coords.push((id, x, y));
                continue;
            }
            in_coords = false;
        }

        let (key, value) = split_keyword(line);
        match key.as_str() {
            "NAME" => name = Some(value),
            "COMMENT" => {
                comment = Some(match comment {
                    Some(c) => format!("{c}\n{value}"),
                    None => value,
                })
            }
            "TYPE" => {
                if value != "TSP" {
                    return Err(Error::UnsupportedFormat(format!("problem type {value}")));
                }
            }
            "DIMENSION" => {
                dimension = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| parse_err(line_no, format!("bad DIMENSION {value:?}")))?,
                )
            }
            "EDGE_WEIGHT_TYPE" => {
                edge_weight_type =
                    Some(EdgeWeightType::parse(&value).ok_or_else(|| {
                        Error::UnsupportedFormat(format!("EDGE_WEIGHT_TYPE {value}"))
                    })?)
            }
            "NODE_COORD_SECTION" => {
                if dimension.is_none() {
                    return Err(parse_err(line_no, "NODE_COORD_SECTION before DIMENSION"));
                }
                in_coords = true;
                saw_coords = true;
            }
            "EDGE_WEIGHT_FORMAT" if value == "FUNCTION" => {}
            "EDGE_WEIGHT_SECTION" | "EDGE_WEIGHT_FORMAT" => {
                return Err(Error::UnsupportedFormat(format!(
                    "{key} (explicit weights)"
                )))
            }
            "EOF" => {
                saw_eof = true;
                break;
            }
            _ => {
                let msg = format!("line {line_no}: ignored keyword {key}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    let end = last_line + 1;
    let dimension = dimension.ok_or_else(|| parse_err(end, "missing DIMENSION"))?;
    if !saw_coords {
        return Err(parse_err(end, "missing NODE_COORD_SECTION"));
    }
    if coords.len() != dimension {
        return Err(parse_err(
            end,
            format!(
                "NODE_COORD_SECTION has {} of {dimension} records",
                coords.len()
            ),
        ));
    }
    if !saw_eof {
        return Err(parse_err(end, "missing EOF"));
    }
    let mut seen = vec![false; dimension];
    for &(id, _, _) in &coords {
        if id == 0 || id > dimension || std::mem::replace(&mut seen[id - 1], true) {
            return Err(parse_err(
                end,
                format!("node ids must be 1..={dimension}, got {id}"),
            ));
        }
    }
    let edge_weight_type =
        edge_weight_type.ok_or_else(|| parse_err(end, "missing EDGE_WEIGHT_TYPE"))?;
    Ok(TsplibFile {
        name: name.unwrap_or_default(),
        comment,
        dimension,
        edge_weight_type,
        node_coords: coords,
        warnings,
    })
}

pub fn load(path: &Path) -> Result<TsplibFile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse(&text)
}

impl TsplibFile {
    /// `EUC_2D` instance with nearest-integer distances, cities ordered by id.
    pub fn to_instance(&self) -> Result<TspInstance> {
        if self.edge_weight_type != EdgeWeightType::Euc2d {
            return Err(Error::UnsupportedFormat(format!(
                "{} distances are not converted to instances",
                self.edge_weight_type
            )));
        }
        let mut cities = vec![(0.0, 0.0); self.dimension];
        for &(id, x, y) in &self.node_coords {
            cities[id - 1] = (x, y);
        }
        Ok(TspInstance::euclidean_rounded(self.name.clone(), cities))
    }
}

/// Reads only `NAME` and `DIMENSION`, for any edge weight type.
pub fn read_dimension(text: &str) -> Result<(String, usize)> {
    let mut name = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let (key, value) = split_keyword(raw.trim());
        match key.as_str() {
            "NAME" => name = value,
            "DIMENSION" => {
                let d = value
                    .parse()
                    .map_err(|_| parse_err(idx + 1, format!("bad DIMENSION {value:?}")))?;
                return Ok((name, d));
            }
            _ => {}
        }
    }
    Err(parse_err(text.lines().count() + 1, "missing DIMENSION"))
}

/// Result set of one experiment, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Named scalar results (lengths, energies, probabilities).
    pub scalars: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tour: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<serde_json::Value>,
    /// CSV side-files next to the JSON document, by file name.
    #[serde(default)]
    pub side_files: Vec<String>,
}

impl RunArtifact {
    pub fn new(kind: impl Into<String>, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            kind: kind.into(),
            instance: None,
            seed,
            config: serde_json::to_value(config)?,
            scalars: BTreeMap::new(),
            tour: None,
            report: None,
            side_files: Vec::new(),
        })
    }

    pub fn scalar(mut self, key: &str, value: f64) -> Self {
        self.scalars.insert(key.to_string(), value);
        self
    }
}

pub fn write_run_artifact(artifact: &RunArtifact, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(artifact)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_run_artifact(path: &Path) -> Result<RunArtifact> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `points` to `dir/name` and records the side-file on `artifact`.
pub fn write_trajectory_side_file(
    artifact: &mut RunArtifact,
    dir: &Path,
    name: &str,
    points: &[TrajectoryPoint],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    write_trajectory_csv(points, std::io::BufWriter::new(file))?;
    artifact.side_files.push(name.to_string());
    Ok(path)
}
