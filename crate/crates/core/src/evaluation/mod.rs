//! Vertex error metrics and the Kalman parameter smoother.

mod kalman;
mod metrics;

pub use kalman::{kalman_smooth, smooth_params, smooth_track, SmootherConfig};
pub use metrics::{
    displacement_error, frame_errors, mesh_sequence, select_vertices, velocity_error, FrameNorm, MetricReport,
    PerFrame,
};
