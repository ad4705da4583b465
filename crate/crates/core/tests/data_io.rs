use std::path::PathBuf;

use ndarray::{array, Array2};
use neb_core::checkpoint;
use neb_core::data::{
    load_idx, load_matrix, make_gaussian_mixture, parse_csv, read_csv, render_image_grid, write_csv,
};
use neb_core::diff::eval_scalar;
use neb_core::{ArchSpec, EnergyModel};
use proptest::prelude::*;

fn mnist_dir() -> PathBuf {
    std::env::var_os("NEB_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn be_u32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as usize
}

#[test]
fn mnist_test_set_agrees_with_minimal_parser() {
    let dir = mnist_dir();
    let images = dir.join("t10k-images-idx3-ubyte");
    let labels = dir.join("t10k-labels-idx1-ubyte");
    if !images.exists() {
        eprintln!(
            "skipping: {} missing (run scripts/fetch_mnist.sh)",
            images.display()
        );
        return;
    }
    let ds = load_idx(&images, Some(&labels)).unwrap();
    let raw = std::fs::read(&images).unwrap();
    let raw_labels = std::fs::read(&labels).unwrap();
    assert_eq!(be_u32(&raw, 0), 0x0803);
    let (n, rows, cols) = (be_u32(&raw, 4), be_u32(&raw, 8), be_u32(&raw, 12));
    assert_eq!((ds.len(), ds.dim()), (n, rows * cols));
    assert_eq!((n, rows, cols), (10_000, 28, 28));
    for i in (0..n).step_by(97) {
        for p in 0..rows * cols {
            assert_eq!(ds.samples[[i, p]], raw[16 + i * 784 + p] as f64 / 255.0);
        }
    }
    let got = ds.labels.as_ref().unwrap();
    assert_eq!(got.as_slice(), &raw_labels[8..]);
    // the first test digit is a 7
    assert_eq!(got[0], 7);
    let sniffed = load_matrix(&images, None).unwrap();
    assert_eq!(sniffed.samples, ds.samples);
}

#[test]
fn mixture_matches_its_construction() {
    let centers = array![[-2.0, 0.0], [2.0, 0.0]];
    let sd = 0.5;
    let n = 20_000;
    let ds = make_gaussian_mixture(centers.view(), sd, n, 4).unwrap();
    let labels = ds.labels.clone().unwrap();
    for k in 0..2 {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == k as u8).collect();
        let frac = rows.len() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.05, "component {k} fraction {frac}");
        let se = sd / (rows.len() as f64).sqrt();
        for c in 0..2 {
            let mean = rows.iter().map(|&i| ds.samples[[i, c]]).sum::<f64>() / rows.len() as f64;
            assert!(
                (mean - centers[[k, c]]).abs() < 3.0 * se,
                "component {k} coord {c}"
            );
        }
    }
    let again = make_gaussian_mixture(centers.view(), sd, n, 4).unwrap();
    assert_eq!(again, ds);
}

#[test]
fn pgm_grid_layout() {
    let samples = array![[0.0, 1.0, 0.5, 2.0], [-1.0, 0.25, 0.75, 1.0]];
    let pgm = render_image_grid(samples.view(), 1, 3, None).unwrap();
    let header = b"P5\n6 2\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    let px = &pgm[header.len()..];
    assert_eq!(px, &[0, 255, 0, 64, 0, 0, 128, 255, 191, 255, 0, 0]);
}

#[test]
fn checkpoint_file_round_trip_preserves_energy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let mut m = EnergyModel::init(ArchSpec::new(4, vec![6, 5]).unwrap(), 3).unwrap();
    m.set_sigma_train(0.25);
    checkpoint::save(&m, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    let y = [0.1, -0.7, 3.0, 1e-3];
    assert_eq!(
        eval_scalar(&back, &y).unwrap().to_bits(),
        eval_scalar(&m, &y).unwrap().to_bits()
    );
    assert_eq!(back.sigma_train(), Some(0.25));
}

#[test]
fn csv_reader_rejects_ragged_rows() {
    assert!(parse_csv("1,2\n3\n".as_bytes()).is_err());
    assert!(parse_csv("1,x\n".as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn csv_round_trip_is_lossless(
        rows in 1usize..6,
        cols in 1usize..6,
        values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 36),
    ) {
        let m = Array2::from_shape_fn((rows, cols), |(i, j)| values[i * 6 + j]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_csv(m.view(), &path).unwrap();
        let back = read_csv(&path).unwrap();
        prop_assert_eq!(back.dim(), m.dim());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
