mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tara_calib::store::{emb1, k_shot_indices, labels, load_dataset, load_embeddings, save_dataset, sample_k_shot};
use tara_calib::store::{generate_narrow_cone, SyntheticConfig};
use tara_calib::{AnchorSet, CalibrationHead, Checkpoint, DistanceKind, Error, InitScheme, LabeledDataset, Matrix};

fn f32_exact(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| common::gauss(&mut rng, 3.0) as f32 as f64)
}

#[test]
fn large_block_size_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.emb");
    let m = f32_exact(1500, 768, 1);
    std::fs::write(&path, emb1::encode(&m)).unwrap();
    let size = std::fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(size, 16 + 1500 * 768 * 4);
    assert_eq!(size, emb1::encoded_len(1500, 768));
    assert_eq!(load_embeddings(&path).unwrap(), m);
}

#[test]
fn values_are_rounded_to_f32() {
    let m = Matrix::from_rows(&[vec![0.1, 1.0 / 3.0]]).unwrap();
    let (back, _) = emb1::decode(&emb1::encode(&m)).unwrap();
    assert_eq!(back[(0, 0)], 0.1f32 as f64);
    assert_eq!(back[(0, 1)], (1.0f32 / 3.0) as f64);
}

#[test]
fn malformed_files_are_format_errors() {
    let good = emb1::encode(&f32_exact(3, 2, 2));
    let truncated = &good[..good.len() - 1];
    assert!(matches!(emb1::decode(truncated), Err(Error::Format(_))));
    assert!(matches!(emb1::decode(&good[..10]), Err(Error::Format(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trailing.emb");
    let mut extra = good.clone();
    extra.push(0);
    std::fs::write(&path, &extra).unwrap();
    assert!(matches!(load_embeddings(&path), Err(Error::Format(_))));

    let mut reserved = good.clone();
    reserved[12] = 1;
    assert!(matches!(emb1::decode(&reserved), Err(Error::Format(_))));

    let mut nan = good;
    nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(emb1::decode(&nan).is_err());
}

#[test]
fn missing_file_is_io_error() {
    let err = load_embeddings(std::path::Path::new("/nonexistent/x.emb")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn dataset_round_trip() {
    let cfg = SyntheticConfig {
        d: 6,
        per_class: 4,
        ..Default::default()
    };
    let ds = generate_narrow_cone(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (e, l) = (dir.path().join("d.emb"), dir.path().join("d.csv"));
    save_dataset(&ds, &e, &l).unwrap();
    let back = load_dataset(&e, &l).unwrap();
    assert_eq!(back.fine_labels(), ds.fine_labels());
    assert_eq!(back.coarse_labels(), ds.coarse_labels());
    assert_eq!(back.fine_to_coarse(), ds.fine_to_coarse());
    for (a, b) in back.embeddings().as_slice().iter().zip(ds.embeddings().as_slice()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let text = std::fs::read_to_string(&l).unwrap();
    assert!(text.starts_with("#map,0,0\n"));
    assert!(text.contains("index,fine,coarse\n0,0,0\n"));
}

#[test]
fn label_errors() {
    // coarse label disagrees with the map
    let bad = "#map,0,0\n#map,1,1\nindex,fine,coarse\n0,1,0\n";
    let table = labels::decode(bad);
    let rejected = match table {
        Err(_) => true,
        Ok(t) => LabeledDataset::with_coarse(Matrix::zeros(1, 2), t.fine, t.coarse, t.fine_to_coarse).is_err(),
    };
    assert!(rejected);
    assert!(labels::decode("index,fine,coarse\n0,x,0\n").is_err());

    let dir = tempfile::tempdir().unwrap();
    let (e, l) = (dir.path().join("d.emb"), dir.path().join("d.csv"));
    std::fs::write(&e, emb1::encode(&Matrix::zeros(2, 2))).unwrap();
    std::fs::write(&l, "#map,0,0\nindex,fine,coarse\n0,0,0\n").unwrap();
    assert!(matches!(load_dataset(&e, &l), Err(Error::Consistency(_))));
}

#[test]
fn k_shot_needs_a_holdout_example() {
    let cfg = SyntheticConfig {
        d: 4,
        per_class: 5,
        ..Default::default()
    };
    let ds = generate_narrow_cone(&cfg).unwrap();
    assert!(matches!(
        sample_k_shot(&ds, 5, 0),
        Err(Error::InsufficientData { available: 5, required: 6, .. })
    ));
    assert!(sample_k_shot(&ds, 0, 0).is_err());
}

#[test]
fn checkpoint_round_trip_through_a_file() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut head = CalibrationHead::init(4, 5, 3, InitScheme::Orthogonal, &mut rng).unwrap();
    // round to f32 first so the comparison is exact
    for t in head.tensors_mut() {
        t.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
    let anchors = AnchorSet::new(Matrix::from_fn(2, 5, |i, j| (0.1 * (i + j) as f64) as f32 as f64), 1e-5).unwrap();
    let ckpt = Checkpoint {
        head,
        anchors,
        distance: DistanceKind::Euclidean,
        meta: BTreeMap::from([("seed".to_string(), "9".to_string())]),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.head, ckpt.head);
    assert_eq!(back.distance, DistanceKind::Euclidean);
    assert_eq!(back.meta, ckpt.meta);
    assert_eq!(back.anchors, ckpt.anchors);
    assert!(Checkpoint::decode(b"garbage").is_err());
}

proptest! {
    #[test]
    fn emb1_round_trips_f32_values(
        n in 1usize..20,
        d in 1usize..20,
        seed in any::<u64>(),
    ) {
        let m = f32_exact(n, d, seed);
        let bytes = emb1::encode(&m);
        prop_assert_eq!(bytes.len(), emb1::encoded_len(n, d));
        let (back, used) = emb1::decode(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn k_shot_is_a_partition(per_class in 2usize..12, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let cfg = SyntheticConfig { d: 3, per_class, ..Default::default() };
        let ds = generate_narrow_cone(&cfg).unwrap();
        let k = 1 + ((per_class - 2) as f64 * k_frac) as usize;
        let (train, holdout) = k_shot_indices(&ds, k, seed).unwrap();
        prop_assert_eq!(train.len() + holdout.len(), ds.len());
        let mut all: Vec<usize> = train.iter().chain(&holdout).copied().collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), ds.len());
        let mut per = vec![0usize; ds.num_fine()];
        for &i in &train {
            per[ds.fine_labels()[i]] += 1;
        }
        prop_assert!(per.iter().all(|&c| c == k));
        prop_assert_eq!(k_shot_indices(&ds, k, seed).unwrap(), (train, holdout));
    }
}
