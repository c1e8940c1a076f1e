use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time {t} outside the scene time domain [0, {max}]")]
    TimeOutOfDomain { t: f64, max: f64 },
    #[error("point is behind the camera (z = {z}, near = {near})")]
    BehindCamera { z: f64, near: f64 },
    #[error("buffer length {found} does not match expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize, usize), right: (usize, usize, usize) },
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("render context does not match the upstream gradient: {0}")]
    ContextMismatch(String),
    #[error("non-finite gradient in group `{group}`, element {index}, parameter `{param}`")]
    NonFiniteGradient { group: &'static str, index: usize, param: &'static str },
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("enhancer requires a ground-truth image in simulate_from_gt mode (camera {camera}, frame {frame})")]
    MissingGroundTruth { camera: usize, frame: usize },
    #[error("enhancer failure: {0}")]
    Enhancer(String),
    #[error("pseudo dataset has no record for camera {camera}, frame {frame}")]
    MissingPseudoView { camera: usize, frame: usize },
}
