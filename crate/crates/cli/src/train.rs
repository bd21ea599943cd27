//! `rtvar train`: the offline learning stage.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use rtvar_core::conformal::{
    calibrated_offset, conformity_scores, split_dataset, CorrectionMode,
};
use rtvar_core::model::{CalibrationBlock, SavedModel};
use rtvar_core::market::OfflineDataset;
use rtvar_core::qrf::{Forest, ForestConfig};
use rtvar_core::rng::StreamId;

use crate::io_util::write_atomic_with;
use crate::manifest::{manifest_path_for, unix_now, RunManifest};

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub forest_config: Option<PathBuf>,
    pub alpha: f64,
    pub conformal: bool,
    pub train_fraction: f64,
    pub correction_mode: CorrectionMode,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn run(args: &TrainArgs) -> anyhow::Result<()> {
    let started = unix_now();
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        anyhow::bail!("invalid config: field `alpha`: must be in (0, 1)");
    }
    let dataset = OfflineDataset::read_csv(&args.dataset)
        .with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let mut forest_config = match &args.forest_config {
        Some(path) => ForestConfig::from_json_file(path)
            .with_context(|| format!("loading forest config {}", path.display()))?,
        None => ForestConfig::default(),
    };
    forest_config.seed = StreamId::root(args.seed).label("fit").state_seed();

    let fit_start = Instant::now();
    let (forest, calibration, split_summary) = if args.conformal {
        let plan = split_dataset(
            dataset.n(),
            args.train_fraction,
            StreamId::root(args.seed).label("split").state_seed(),
        )?;
        let train = dataset.subset(&plan.train_indices)?;
        let calib = dataset.subset(&plan.calib_indices)?;
        let forest = Forest::fit(&train, &forest_config)?;
        let scores = conformity_scores(
            &forest,
            calib.features(),
            calib.dim(),
            calib.losses(),
            args.alpha,
        );
        let offset = calibrated_offset(&scores, args.alpha, args.correction_mode)?;
        let summary = format!(
            "|train|={}, |calib|={}, offset={offset}",
            plan.train_indices.len(),
            plan.calib_indices.len()
        );
        (
            forest,
            Some(CalibrationBlock {
                offset,
                mode: args.correction_mode,
                scores,
            }),
            summary,
        )
    } else {
        let forest = Forest::fit(&dataset, &forest_config)?;
        (forest, None, format!("|train|={}", dataset.n()))
    };
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let model = SavedModel {
        forest,
        alpha: args.alpha,
        calibration,
    };
    write_atomic_with(&args.out, |tmp| Ok(model.save(tmp)?))?;

    let (mean_leaf, max_leaf) = model.forest.leaf_stats();
    println!(
        "trained {} trees on d={} ({}), leaf size mean {:.1} max {}, alpha={}, {:.2}s",
        model.forest.n_trees(),
        model.forest.dim(),
        split_summary,
        mean_leaf,
        max_leaf,
        args.alpha,
        fit_seconds
    );

    let mut manifest = RunManifest::new(
        "train",
        started,
        serde_json::json!({
            "dataset": args.dataset.display().to_string(),
            "forest_config": args.forest_config.as_ref().map(|p| p.display().to_string()),
            "resolved_forest_config": serde_json::to_value(&forest_config)?,
            "alpha": args.alpha,
            "conformal": args.conformal,
            "train_fraction": args.train_fraction,
            "correction_mode": args.correction_mode.to_string(),
            "seed": args.seed,
            "fit_seconds": fit_seconds,
        }),
    );
    manifest.add_artifact("model", &args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    Ok(())
}
