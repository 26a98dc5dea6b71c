use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssimadv::data::save_mnist_dir;
use ssimadv::model::{save_checkpoint, LayerSpec};
use ssimadv::{Dataset, Image, Network, ScoreModel, Shape, Split};

fn ssimadv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssimadv")).args(args).output().unwrap()
}

/// Writes a small random model to `dir/model.bin` and a test split it
/// classifies perfectly, since labels are its own predictions.
fn fixture(dir: &Path) {
    let shape = Shape::new(1, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Network::random(shape, &[LayerSpec::Dense { units: 16 }], 10, &mut rng).unwrap();
    let images: Vec<Image> = (0..4)
        .map(|_| Image::new(shape, (0..64).map(|_| f64::from(rng.gen::<u8>()) / 255.0).collect()).unwrap())
        .collect();
    let labels = images.iter().map(|i| net.predict(i.as_slice()).unwrap()).collect();
    save_mnist_dir(&Dataset::new(images, labels, 10, Split::Test).unwrap(), dir).unwrap();
    save_checkpoint(&net, dir.join("model.bin")).unwrap();
}

#[test]
fn single_ssim_attack_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = ssimadv(&[
        "attack", "--attacks", "ssim", "--limit", "1", "--iters", "20", "--search-steps", "2", "--data", d, "--out", d,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("outcomes.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{csv}");
    assert!(rows[0].starts_with("0,ssim,"));
    assert!(dir.path().join("tail_curve.csv").exists());

    let again = ssimadv(&["report", "--out", d]);
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("ssim"));
}

#[test]
fn out_of_range_threshold_exits_2() {
    let out = ssimadv(&["attack", "--zeta1", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zeta1"));
}

#[test]
fn unknown_flags_and_attacks_exit_2() {
    assert_eq!(ssimadv(&["attack", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(ssimadv(&["launch"]).status.code(), Some(2));
    assert_eq!(ssimadv(&["attack", "--attacks", "fgsm"]).status.code(), Some(2));
}

#[test]
fn config_file_keys_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "zeta2 = 2.0\n").unwrap();
    let out = ssimadv(&["attack", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&path, "zeta3 = 0.5\n").unwrap();
    let out = ssimadv(&["attack", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssimadv(&["attack", "--out", dir.path().to_str().unwrap(), "--data", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let out = ssimadv(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).lines().all(|l| l.starts_with("PASS")));
}
