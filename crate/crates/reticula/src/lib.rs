//! Detection and cross-slice tracking of axoplasmic reticula — small dark
//! tubular organelles — in serial-section electron microscopy stacks.
//!
//! The pipeline runs in fixed stages, each producing an inspectable
//! artifact:
//!
//! 1. [`filters`] — per-slice bilateral smoothing (noise goes, membrane
//!    edges stay) and, optionally, Laplacian sharpening to deepen small
//!    dark centers.
//! 2. [`detect`] — bounded region growing on the filtered slices: dark
//!    seeds flood into 8-connected components, size filters drop membranes
//!    and specks, and the bilateral + sharpened passes merge into one
//!    per-slice component list.
//! 3. [`track`] — components link across adjacent slices by centroid
//!    proximity; isolated interior detections are either rescued by a
//!    relaxed re-grow on the neighboring slices or deleted as noise, and
//!    surviving chains become tracked objects.
//! 4. [`eval`] — per-cross-section precision/recall of an annotation set
//!    against ground truth.
//!
//! [`volume`] handles the stack format (a JSON manifest plus one 8-bit PGM
//! per slice), [`annotations`] the component/track JSON, [`phantom`]
//! generates synthetic stacks with exact truth for end-to-end testing, and
//! [`config`] collects every tunable into one JSON file. Stages are
//! deterministic: rerunning any of them on the same input reproduces the
//! same bytes regardless of thread count.

pub mod annotations;
pub mod config;
pub mod detect;
pub mod eval;
pub mod filters;
pub mod phantom;
pub mod rng;
pub mod track;
pub mod volume;

pub use annotations::{
    read_annotations, write_annotations, AnnotationError, AnnotationSet, TrackedObject,
};
pub use config::{ConfigError, PipelineConfig, PipelineParams};
pub use detect::{
    detect_slice, detect_volume, grow_regions, merge_overlapping, Component, DetectError,
    GrowParams, Source, Status,
};
pub use eval::{
    match_annotations, precision, read_report, recall, write_report, ConfusionCounts, EvalError,
    MatchCriterion, Report, COUNTING_BASIS,
};
pub use filters::{
    bilateral_filter_slice, filter_volume, laplacian_sharpen_slice, BilateralParams, FilterError,
    FilteredSlice,
};
pub use phantom::{generate_phantom, PhantomError, PhantomSpec};
pub use track::{match_in_adjacent, rescue_grow, track_volume, TrackError, TrackParams};
pub use volume::{load_stack, save_stack, SliceView, StackError, Volume};
