use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LayerTopology, MLPParams};
use crate::dataset::ScalerPair;
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub topology: LayerTopology,
    pub params: MLPParams,
    pub scalers: Option<ScalerPair>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    topology: LayerTopology,
    beta: f64,
    /// `weights[layer][row][col]`
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    scalers: Option<ScalerPair>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl SavedModel {
    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            topology: self.topology.clone(),
            beta: self.topology.hidden_activation.beta(),
            weights: self
                .params
                .weights
                .iter()
                .map(|w| w.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            biases: self
                .params
                .biases
                .iter()
                .map(|b| b.as_slice().to_vec())
                .collect(),
            scalers: self.scalers.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if probe.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: probe.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.topology.validate()?;
        if file.beta != file.topology.hidden_activation.beta() {
            return Err(Error::Parse(format!(
                "beta {} disagrees with topology beta {}",
                file.beta,
                file.topology.hidden_activation.beta()
            )));
        }
        let weights = file
            .weights
            .iter()
            .map(|rows| {
                let ncols = rows.first().map_or(0, |r| r.len());
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(Error::Parse("ragged weight matrix".into()));
                }
                Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = file.biases.into_iter().map(DVector::from_vec).collect();
        let params = MLPParams { weights, biases };
        params.check_shape(&file.topology)?;
        Ok(Self {
            topology: file.topology,
            params,
            scalers: file.scalers,
        })
    }
}

pub fn save_model(
    params: &MLPParams,
    topology: &LayerTopology,
    scalers: Option<&ScalerPair>,
    path: impl AsRef<Path>,
) -> Result<()> {
    params.check_shape(topology)?;
    let model = SavedModel {
        topology: topology.clone(),
        params: params.clone(),
        scalers: scalers.cloned(),
    };
    let path = path.as_ref();
    std::fs::write(path, model.to_json_string()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SavedModel::from_json_str(&text)
}
