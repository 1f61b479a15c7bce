//! Deterministic synthetic world: scenes, operator trajectories, body
//! mounts, ray-cast LiDAR/ToF scans, IMU synthesis and a simulated VIO stream.

pub mod imu;
pub mod lidar;
pub mod scene;
pub mod sensor;
pub mod trajectory;
pub mod vio;

pub use imu::{synthesize_imu, ImuModel, ImuSample, GRAVITY};
pub use lidar::{cast_scan, RangeNoise, ScanPoint, ScanRecord};
pub use scene::{Patch, Scene, SceneBox};
pub use sensor::{mount, preset, Attachment, MountConfig, ScanPattern, SensorPreset, SwayModel};
pub use trajectory::{
    generate_trajectory, BodyTrajectory, MountedTrajectory, SampledTrajectory, Trajectory, TrajectoryKind,
};
pub use vio::{simulate_vio_stream, RelPoseMeasurement};

/// Mixes a user seed, a per-sensor stream id and a sub-index into one RNG
/// seed (splitmix64 finalizer).
pub fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
