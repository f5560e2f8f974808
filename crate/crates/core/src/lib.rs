//! Building blocks for remote street-level flood-vulnerability surveys:
//! a survey codebook, seeded site sampling with relocation onto buildings,
//! task batches for human raters, a labeling service with an append-only
//! response log, and agreement/coverage analysis.

pub mod analysis;
pub mod codebook;
pub mod geo;
pub mod service;
pub mod synth;
pub mod tasking;

pub use codebook::{parse_codebook, validate_response_shape, Answer, Codebook, CodebookError, VariableKind, Violation};
pub use geo::{haversine_m, point_in_polygon, random_points, GeoPoint, Polygon, Region, SamplePoint};
pub use service::{LabelService, Response};
pub use tasking::{assign_raters, build_tasks, Task, TaskBatch};
