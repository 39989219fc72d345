use std::io;

use thiserror::Error;

/// Every failure surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum ToastError {
    #[error("no points")]
    NoPoints,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("underdetermined: {rows} rows < {cols} columns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("degenerate target: channel {0} has zero variance")]
    DegenerateTarget(usize),
    #[error("zero matrix")]
    ZeroMatrix,
    #[error("empty token sample")]
    EmptySample,
    #[error("shape mismatch in {}: {detail}", location(.layer, .tensor))]
    Shape {
        layer: Option<usize>,
        tensor: String,
        detail: String,
    },
    #[error("index {index} out of range for {tensor} (bound {bound})")]
    IndexOutOfRange {
        tensor: String,
        index: usize,
        bound: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("empty tensor {0}")]
    EmptyTensor(String),
    #[error("not a TOAST archive")]
    NotArchive,
    #[error("truncated")]
    Truncated,
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn location(layer: &Option<usize>, tensor: &str) -> String {
    match layer {
        Some(l) => format!("layer {l} tensor {tensor}"),
        None => format!("tensor {tensor}"),
    }
}

impl ToastError {
    pub(crate) fn shape(layer: Option<usize>, tensor: impl Into<String>, detail: impl Into<String>) -> Self {
        ToastError::Shape {
            layer,
            tensor: tensor.into(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by inconsistent dimensions rather than unreadable input.
    pub fn is_shape_error(&self) -> bool {
        matches!(
            self,
            ToastError::Shape { .. } | ToastError::IndexOutOfRange { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, ToastError>;
