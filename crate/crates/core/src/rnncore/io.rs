use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellKind, DpdModel};
use crate::error::{check_dim, Error, Result};
use crate::signal::FEATURE_SIZE;

pub const FORMAT_VERSION: u32 = 1;

/// On-disk weight document. Arrays are row-major and keyed by tensor name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightFile {
    pub format_version: u32,
    pub cell_kind: CellKind,
    pub hidden_size: usize,
    pub input_size: usize,
    pub arrays: BTreeMap<String, Vec<f64>>,
}

impl WeightFile {
    pub fn from_model(model: &DpdModel<f64>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            cell_kind: model.kind(),
            hidden_size: model.hidden_size(),
            input_size: FEATURE_SIZE,
            arrays: model
                .tensors()
                .into_iter()
                .map(|(name, data)| (name.to_string(), data.to_vec()))
                .collect(),
        }
    }

    pub fn into_model(mut self) -> Result<DpdModel<f64>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported weight format_version {}, expected {FORMAT_VERSION}",
                self.format_version
            )));
        }
        check_dim("weight file input_size", FEATURE_SIZE, self.input_size)?;
        let mut model = DpdModel::zeros(self.cell_kind, self.hidden_size)?;
        let expected: Vec<&str> = model.tensors().iter().map(|(n, _)| *n).collect();
        for (name, data) in model.tensors_mut() {
            let src = self
                .arrays
                .remove(name)
                .ok_or_else(|| Error::Data(format!("weight file lacks array `{name}`")))?;
            check_dim(name, data.len(), src.len())?;
            data.copy_from_slice(&src);
        }
        if let Some(extra) = self.arrays.keys().next() {
            return Err(Error::Data(format!(
                "unexpected array `{extra}` for a {} model (expected {expected:?})",
                self.cell_kind
            )));
        }
        model.validate()?;
        Ok(model)
    }
}

pub fn write_model(path: &Path, model: &DpdModel<f64>) -> Result<()> {
    let text = serde_json::to_string_pretty(&WeightFile::from_model(model))
        .map_err(|e| Error::format(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<DpdModel<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: WeightFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    file.into_model()
}
