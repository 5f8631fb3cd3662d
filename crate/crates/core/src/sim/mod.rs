//! Procedural multi-room navigation world: generation, movement with
//! collision sweeps, first-person semantic rendering, planning and metrics.

pub mod env;
pub mod geometry;
pub mod house;
pub mod metrics;
pub mod motion;
pub mod planner;
pub mod render;
pub mod task;

pub use env::{read_trace, write_trace, NavEnv, StepOutcome, TraceRecord};
pub use geometry::Rect;
pub use house::{generate_house, generate_house_with, object_class, House, ObjectInstance, Room, RoomKind, WorldConfig};
pub use metrics::{compute_metrics, EpisodeResult, Metrics};
pub use motion::{apply_action, AgentPose};
pub use planner::{expert_steps, geodesic_to_target, shortest_path, DistanceField};
pub use render::{project_bbox, render_frame, render_observation, CameraConfig, Frame};
pub use task::{judge_done, target_distance, SampledTask, TaskSampler, TaskSpec};
