//! Serves a checkpoint (or an untrained miniature model) on 127.0.0.1:8080.
//!
//!     cargo run --release --example serve_http -- [checkpoint]
//!     curl localhost:8080/health

use std::path::Path;

use fipoly::inference::FrozenModel;
use fipoly::model::{DiscriminatorConfig, GeneratorConfig};
use fipoly::service::{serve, ServiceConfig};
use fipoly::trainer::{TrainConfig, TrainState};

#[tokio::main]
async fn main() -> fipoly::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let model = match std::env::args().nth(1) {
        Some(p) => FrozenModel::load(Path::new(&p))?,
        None => {
            let cfg = TrainConfig {
                generator: GeneratorConfig { image_side: 64, ..GeneratorConfig::miniature() },
                discriminator: DiscriminatorConfig::miniature(),
                ..Default::default()
            };
            FrozenModel::from_state(TrainState::new(cfg)?, "untrained".into())
        }
    };
    serve(model, ServiceConfig::from_env()?, "127.0.0.1:8080".parse().unwrap()).await
}
