//! The ILNet segmentation network and its building blocks.

pub mod config;
pub mod doda;
pub mod gradcheck;
pub mod ipof;
pub mod layers;
pub mod network;
pub mod rb;
pub mod rsu;

pub use config::{parse_kv_lines, ConfigError, ModelConfig, Preset, MIN_INPUT};
pub use gradcheck::{check_network, NetworkCheck};
pub use doda::{doda_kernel_size, doda_num_layers, Doda};
pub use ipof::{ipof_mid_channels, polarized_sum, Ipof};
pub use layers::{Builder, Ctx};
pub use network::{build_model, ForwardOutput, Ilnet, Network, SideOutputs, StageFeatures};
pub use rb::{rb_channels, Rb, SideHead};
pub use rsu::Rsu;
