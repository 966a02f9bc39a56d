//! Test bench that challenges open-vocabulary object detectors with
//! synthetically inpainted street-scene objects.
//!
//! The crate covers the whole offline side of the pipeline: scene ingest and
//! eligibility filtering, placement geometry, prompt generation, inpainting
//! job planning and execution against an HTTP inpainting service, detector
//! prediction I/O, the evaluation metrics, control probes and report output.

pub mod dataset;
pub mod detection;
pub mod error;
pub mod eval;
pub mod generation;
pub mod geometry;
pub mod http;
pub mod imaging;
pub mod placement;
pub mod probe;
pub mod prompts;
pub mod report;

pub use error::{Error, Result};
pub use geometry::{BBox, BinaryRaster, PixelRect};
