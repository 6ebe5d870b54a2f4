//! Prepare a self-contained demo workspace for the `partscope` CLI:
//! fixture scenes with bounding-box annotations, held-out test images, a
//! trained holonym classifier over the bundled projection backend, and a
//! ready-to-run config file.
//!
//! Usage: cargo run --release -p partscope-core --example synthetic_demo -- <dir>

use std::path::PathBuf;

use partscope_core::datakit::SplitRatios;
use partscope_core::netcore::{
    train_head, FeatureExtractor, Head, PooledProjectionBackend, TrainConfig,
};
use partscope_core::synthetic::{self, SyntheticSpec};

const BACKEND_SEED: u64 = 77;

fn main() {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "demo-workspace".to_string()),
    );
    let spec = SyntheticSpec::default();
    println!("writing fixtures to {} ...", dir.display());
    synthetic::write_fixture_tree(&spec, &dir).expect("fixture tree");

    println!("training the holonym classifier (ruby / teal / background) ...");
    let extractor = FeatureExtractor::new(Box::new(PooledProjectionBackend::new(
        16,
        14,
        BACKEND_SEED,
    )));
    let ds = synthetic::holonym_dataset(&spec)
        .expect("holonym dataset")
        .split(SplitRatios::default(), 11)
        .expect("split");
    let template = Head::compact(
        [16, 14, 14],
        32,
        0.25,
        vec![
            synthetic::CLASS_RUBY.to_string(),
            synthetic::CLASS_TEAL.to_string(),
            synthetic::CLASS_BACKGROUND.to_string(),
        ],
    )
    .expect("head template");
    let cfg = TrainConfig {
        epochs: 60,
        batch: 16,
        lr: 0.01,
        seed: 21,
        augment: true,
        ..TrainConfig::default()
    };
    let outcome = train_head(&extractor, &template, &ds, &cfg).expect("training");
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "  {} epochs, best epoch {} (val acc {:.3})",
        outcome.history.len(),
        outcome.best_epoch,
        best.val_accuracy
    );
    outcome
        .head
        .save(&dir.join("holonym_model"))
        .expect("save holonym head");

    let config = format!(
        r#"seed = 42
output_dir = "out"
holonym_model = "holonym_model"

[kb]
path = "kb.json"

[backend]
kind = "projection"
channels = 16
grid = 14
seed = {BACKEND_SEED}

[data]
annotations = "scenes/annotations.json"
images = "scenes"

[train]
epochs = 60
batch = 16
lr = 0.01
momentum = 0.9
patience = 5
augment = true
head = "auto"
hidden = 32
dropout = 0.1

[explain]
percentile = 83.0
t_score = 10.0
t_f1 = 0.7

[eval]
steps = 100
cell = 16
grid_lo = 75
grid_hi = 90
"#
    );
    std::fs::write(dir.join("partscope.toml"), config).expect("write config");
    println!("done; config at {}", dir.join("partscope.toml").display());
    println!("next:");
    println!("  partscope build   --config {0}/partscope.toml --holonym ruby", dir.display());
    println!("  partscope train   --config {0}/partscope.toml --holonym ruby", dir.display());
    println!("  partscope explain --config {0}/partscope.toml {0}/test/ruby/000.png", dir.display());
    println!("  partscope eval    --config {0}/partscope.toml --against-gradcam --gt {0}/test/annotations.json --plots", dir.display());
}
