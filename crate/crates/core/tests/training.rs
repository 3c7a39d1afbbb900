use see360::scene::{build_scene, emit_dataset, grid_locations};
use see360::trainer::{train, TrainConfig};

#[test]
fn short_run_reduces_reconstruction_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    emit_dataset(&build_scene(3, 1).unwrap(), &grid_locations(1, false), 15, 32, 32, &data).unwrap();
    let cfg = TrainConfig {
        dataset: data,
        out_dir: dir.path().join("run"),
        height: 32,
        width: 32,
        widths: [8, 8, 16],
        decoder_width: 8,
        latent_width: 16,
        disc_widths: [4, 8, 8],
        batch_size: 2,
        iterations: 200,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let outcome = train(&cfg).unwrap();
    let first = outcome.curve.first().unwrap().l1;
    let last = outcome.curve.last().unwrap().l1;
    let tail = outcome.curve[180..].iter().map(|s| s.l1).sum::<f64>() / 20.0;
    assert!(last < first && tail < first, "iteration-1 L1 {first}, final {last}, last-20 mean {tail}");
    assert_eq!(outcome.checkpoint.iteration, 200);
}
