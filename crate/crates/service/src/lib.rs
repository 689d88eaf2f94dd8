//! Job service: upload a recording, follow the optimizer over a WebSocket,
//! fetch the matched preset and audition it on a keyboard range.

pub mod api;
pub mod jobs;
pub mod schema;

use std::net::SocketAddr;
use std::path::PathBuf;

use instrumental::params::{parse_preset, Preset};

pub use api::{router, AppState, MAX_UPLOAD_BYTES, MIDI_RANGE};
pub use jobs::{JobOptions, Registry};

/// The best round-trip T28 preset, served at `/api/presets/best`.
pub const BEST_PRESET_TOML: &str = include_str!("../assets/best_preset.toml");

pub fn best_preset() -> Preset {
    parse_preset(BEST_PRESET_TOML).expect("bundled preset parses")
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Threads for candidate evaluation.
    pub eval_threads: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        ServiceConfig {
            data_dir: PathBuf::from("data"),
            eval_threads: cores.saturating_sub(1).max(1),
        }
    }
}

/// Builds the application state and router.
pub fn app(config: &ServiceConfig) -> std::io::Result<axum::Router> {
    let registry = Registry::start(&config.data_dir, config.eval_threads)?;
    Ok(router(AppState::new(registry, best_preset())))
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let app = app(&config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
