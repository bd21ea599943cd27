//! `rtvar predict`: the online stage. Loads a trained model and answers
//! queries; never touches the simulator.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rtvar_core::model::SavedModel;

fn parse_query(text: &str, expected_dim: usize, what: &str) -> anyhow::Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|field| {
            field
                .trim()
                .parse::<f64>()
                .with_context(|| format!("bad number `{}` in {what}", field.trim()))
        })
        .collect::<anyhow::Result<_>>()?;
    if values.len() != expected_dim {
        anyhow::bail!("query has dimension {}, model expects {expected_dim}", values.len());
    }
    Ok(values)
}

fn load_batch(path: &Path, expected_dim: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(
        std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    let mut queries = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        // optional header row of x1,...,xd labels
        if line_no == 0 && trimmed.split(',').next().is_some_and(|f| f.trim().parse::<f64>().is_err()) {
            continue;
        }
        queries.push(parse_query(
            trimmed,
            expected_dim,
            &format!("{} line {}", path.display(), line_no + 1),
        )?);
    }
    if queries.is_empty() {
        anyhow::bail!("no queries in {}", path.display());
    }
    Ok(queries)
}

pub fn run(
    model_path: &Path,
    x: Option<&str>,
    batch: Option<&Path>,
    alpha: Option<f64>,
) -> anyhow::Result<()> {
    let model = SavedModel::load(model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    let level = alpha.unwrap_or(model.alpha);
    if !(level > 0.0 && level < 1.0) {
        anyhow::bail!("invalid config: field `alpha`: must be in (0, 1)");
    }

    let queries: Vec<Vec<f64>> = match (x, batch) {
        (Some(text), None) => vec![parse_query(text, model.forest.dim(), "--x")?],
        (None, Some(path)) => load_batch(path, model.forest.dim())?,
        _ => anyhow::bail!("provide exactly one of --x or --batch"),
    };

    // the calibrated offset is tied to the level it was computed at
    let calibrated_here = model.calibration.is_some() && level == model.alpha;
    if model.calibration.is_some() && !calibrated_here {
        eprintln!(
            "note: calibration was computed at alpha={}, so only the base \
             estimate is reported at alpha={level}",
            model.alpha
        );
    }

    if calibrated_here {
        println!("quantile,conformal");
    } else {
        println!("quantile");
    }
    let start = Instant::now();
    let mut outputs = Vec::with_capacity(queries.len());
    for query in &queries {
        let base = model.predict_base(query, level)?;
        if calibrated_here {
            let calibrated = model
                .predict_calibrated(query)?
                .expect("calibration checked above");
            outputs.push(format!("{base},{calibrated}"));
        } else {
            outputs.push(format!("{base}"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    for line in &outputs {
        println!("{line}");
    }
    eprintln!(
        "predict_micros_per_point={:.3} (n={}, trees={}, alpha={level})",
        elapsed * 1e6 / queries.len() as f64,
        queries.len(),
        model.forest.n_trees()
    );
    Ok(())
}
