//! Physics humanoid, rewards and fall recovery.

pub mod discriminator;
pub mod env;
pub mod fall;
pub mod model;
pub mod observation;
pub mod reward;
pub mod sim;
pub mod terrain;

pub use discriminator::Discriminator;
pub use env::{collect_rollouts, Env, EnvConfig, EnvInput, FixturePolicy, FrameRecord, LimpPolicy, Policy, PolicyAction, Rollout};
pub use fall::{detect_fall, early_termination, recover, FallRecoveryConfig, Recovery, ReplacementFrame};
pub use model::{Body, ContactParams, ContactSphere, GenState, HumanoidModel};
pub use observation::{build_observation, observation_width, self_observation, SELF_WIDTH};
pub use reward::{amp_reward, discriminator_loss, energy_penalty, imitation_reward, total_reward, RewardConfig, RewardTerms};
pub use sim::{pd_torque, Actuation, Simulator, StepOutput};
pub use terrain::{sample_height_map, BoxObstacle, Terrain, HEIGHT_MAP_WIDTH};
