use anyhow::Context;
use quicbench::refendpoint::{fetch_once, ClientConfig};

fn main() -> anyhow::Result<()> {
    let role = std::env::var("ROLE").unwrap_or_default();
    anyhow::ensure!(role == "client", "ROLE must be `client`, got `{role}`");
    let config = ClientConfig::from_env().context("reading client environment")?;
    fetch_once(&config).context("fetching transfer")?;
    Ok(())
}
