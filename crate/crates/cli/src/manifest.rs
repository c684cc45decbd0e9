//! Model manifest: a TOML document listing the layers of a bundle and the
//! tensor files backing them. Paths are relative to the manifest location.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use quantlab_core::pipeline::{LayerBundle, ModelBundle};

use crate::error::CliError;
use crate::tensor_file::TensorFile;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    pub version: u32,
    pub layers: Vec<ManifestLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLayer {
    pub name: String,
    pub weight: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
    pub calib: String,
}

pub fn parse_manifest(text: &str) -> Result<ManifestDoc, CliError> {
    let doc: ManifestDoc =
        toml::from_str(text).map_err(|e| CliError::validation(format!("manifest: {e}")))?;
    if doc.version != MANIFEST_VERSION {
        return Err(CliError::validation(format!(
            "unsupported manifest version {}",
            doc.version
        )));
    }
    if doc.layers.is_empty() {
        return Err(CliError::validation("manifest lists no layers"));
    }
    Ok(doc)
}

/// Load the full model bundle behind a manifest, shape-checking every layer.
pub fn load_model(manifest_path: &Path) -> Result<ModelBundle, CliError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Io(format!("read {}: {e}", manifest_path.display())))?;
    let doc = parse_manifest(&text)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut layers = Vec::with_capacity(doc.layers.len());
    for entry in &doc.layers {
        let resolve = |rel: &str| -> PathBuf { base.join(rel) };
        let w = TensorFile::read(&resolve(&entry.weight))?.to_matrix()?;
        let calib = TensorFile::read(&resolve(&entry.calib))?.to_matrix()?;
        let bias = match &entry.bias {
            Some(rel) => Some(TensorFile::read(&resolve(rel))?.to_vector()?),
            None => None,
        };
        let layer = LayerBundle::new(entry.name.clone(), w, bias, calib)
            .map_err(|e| CliError::validation(e.to_string()))?;
        layers.push(layer);
    }
    Ok(ModelBundle::new(layers))
}

pub fn manifest_to_string(doc: &ManifestDoc) -> Result<String, CliError> {
    toml::to_string(doc).map_err(|e| CliError::validation(format!("manifest: {e}")))
}
