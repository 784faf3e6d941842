use anyhow::Context;
use quicbench::refendpoint::{serve_once, ServerConfig};

fn main() -> anyhow::Result<()> {
    let role = std::env::var("ROLE").unwrap_or_default();
    anyhow::ensure!(role == "server", "ROLE must be `server`, got `{role}`");
    let config = ServerConfig::from_env().context("reading server environment")?;
    serve_once(&config).context("serving transfer")?;
    Ok(())
}
