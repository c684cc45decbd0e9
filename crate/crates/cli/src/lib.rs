//! Command-line surface and on-disk formats for the quantization
//! laboratory: QTNS tensor files, model manifests, recipe documents, and
//! report emission.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod recipe_file;
pub mod report_file;
pub mod tensor_file;

pub use error::CliError;
