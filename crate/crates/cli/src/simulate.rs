//! `rtvar simulate`: the offline simulation stage.

use std::path::Path;

use anyhow::Context;
use rtvar_core::market::{generate_offline_dataset, LossMode, Market, MarketConfig};

use crate::io_util::write_atomic_with;
use crate::manifest::{manifest_path_for, unix_now, RunManifest};

pub fn run(
    config_path: &Path,
    n: usize,
    m_inner: usize,
    loss_mode: LossMode,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    let started = unix_now();
    if n == 0 {
        anyhow::bail!("invalid config: field `n`: sample count must be >= 1");
    }
    let config = MarketConfig::from_json_file(config_path)
        .with_context(|| format!("loading market config {}", config_path.display()))?;
    let market = Market::new(config)?;

    let dataset = generate_offline_dataset(&market, n, m_inner, loss_mode, seed)?;
    write_atomic_with(out, |tmp| Ok(dataset.write_csv(tmp)?))?;

    let meta_path = out.with_file_name({
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        name
    });
    write_atomic_with(&meta_path, |tmp| {
        Ok(dataset.write_metadata(tmp, &market, m_inner, loss_mode)?)
    })?;

    let mut manifest = RunManifest::new(
        "simulate",
        started,
        serde_json::json!({
            "config": config_path.display().to_string(),
            "config_sha256": market.config().content_hash(),
            "n": n,
            "m_inner": m_inner,
            "loss_mode": loss_mode.to_string(),
            "seed": seed,
        }),
    );
    manifest.add_artifact("dataset", out)?;
    manifest.add_artifact("metadata", &meta_path)?;
    manifest.write(&manifest_path_for(out))?;

    println!(
        "wrote {} rows x {} factors to {} (loss_mode={}, seed={})",
        dataset.n(),
        dataset.dim(),
        out.display(),
        loss_mode,
        seed
    );
    Ok(())
}
