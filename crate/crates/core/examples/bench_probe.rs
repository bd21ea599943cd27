use rtvar_core::market::{generate_offline_dataset, LossMode, Market, MarketConfig};
use rtvar_core::qrf::{Forest, ForestConfig};
use rtvar_core::rng::StreamId;
use std::time::Instant;

fn main() {
    let market = Market::new(MarketConfig::symmetric(
        4, 100.0, 0.08, 0.05, 0.15, 0.3,
        vec![90.0, 95.0, 100.0, 105.0, 110.0],
        1.0 / 252.0, 1.0 / 52.0, 1.0 / 12.0,
    )).unwrap();
    let x_u = vec![100.2, 99.5, 100.8, 99.9];

    let t = Instant::now();
    let losses = market.conditional_losses(&x_u, 200_000, LossMode::ClosedForm, 0, StreamId::root(1));
    println!("oracle 200k closed-form: {:.2}s (len {})", t.elapsed().as_secs_f64(), losses.len());

    let t = Instant::now();
    let data = generate_offline_dataset(&market, 16_000, 500, LossMode::Nested, 1).unwrap();
    println!("offline 16k nested(500): {:.2}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let forest = Forest::fit(&data, &ForestConfig { n_trees: 500, seed: 1, ..ForestConfig::default() }).unwrap();
    println!("fit 16k x 500 trees: {:.2}s", t.elapsed().as_secs_f64());

    let query = vec![100.0; 4];
    let t = Instant::now();
    let mut acc = 0.0;
    for i in 0..100 {
        acc += forest.predict_quantile(&query, 0.9 + (i % 9) as f64 * 0.01);
    }
    println!("100 single-level predictions: {:.1}us each (acc {acc:.1})", t.elapsed().as_secs_f64() * 1e4);
    let (mean_leaf, max_leaf) = forest.leaf_stats();
    println!("leaf stats: mean {mean_leaf:.1} max {max_leaf}");
}
