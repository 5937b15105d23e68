use std::path::Path;

use acdl::data::dataset::constant_image;
use acdl::data::{
    index_dataset, index_split, make_synthetic_dataset, merge_augmented, normalize, ppm, preprocess, resize,
    ClassNames, EnhanceParams, ImageBuffer, Split, SynthConfig,
};
use acdl::Error;
use proptest::prelude::*;

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synthetic_dataset_layout_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::new(7, 32, 32);
    let manifest = make_synthetic_dataset(a.path(), &cfg, false).unwrap();
    make_synthetic_dataset(b.path(), &cfg, false).unwrap();
    assert_eq!(manifest.seed, 7);
    assert_eq!(read_tree(a.path()), read_tree(b.path()));

    let splits = index_dataset(a.path(), &ClassNames::default()).unwrap();
    for split in Split::ALL {
        let idx = splits.get(split);
        assert_eq!(idx.counts(), [32, 32]);
        for (path, _) in idx.entries() {
            let img = ppm::read(path).unwrap();
            assert_eq!((img.height, img.width, img.channels), (32, 32, 3));
        }
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 7);
    assert_eq!(json["n_per_class"], 32);
    assert!(json["generator_version"].is_number());

    let c = tempfile::tempdir().unwrap();
    make_synthetic_dataset(c.path(), &SynthConfig::new(8, 32, 32), false).unwrap();
    assert_ne!(read_tree(a.path()), read_tree(c.path()));
}

#[test]
fn synthetic_refuses_non_empty_target_without_force() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep.txt"), b"x").unwrap();
    let cfg = SynthConfig::new(1, 2, 16);
    assert!(matches!(make_synthetic_dataset(dir.path(), &cfg, false), Err(Error::Dataset(_))));
    make_synthetic_dataset(dir.path(), &cfg, true).unwrap();
    assert!(dir.path().join("keep.txt").exists());
    make_synthetic_dataset(dir.path(), &SynthConfig::new(1, 1, 16), true).unwrap();
    let idx = index_split(dir.path(), Split::Train, &ClassNames::default()).unwrap();
    assert_eq!(idx.counts(), [1, 1]);
    assert!(make_synthetic_dataset(dir.path(), &SynthConfig::new(1, 1, 8), true).is_err());
}

fn features(img: &ImageBuffer<u8>) -> [f64; 3] {
    let f = normalize(img);
    let n = f.data.len() as f64;
    let mean = f.data.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = f.data.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let p = 4;
    let mut best = 0.0f64;
    for y in (0..f.height).step_by(p) {
        for x in (0..f.width).step_by(p) {
            let mut s = 0.0;
            let mut k = 0.0;
            for yy in y..(y + p).min(f.height) {
                for xx in x..(x + p).min(f.width) {
                    s += f.pixel(yy, xx).iter().map(|&v| f64::from(v)).sum::<f64>();
                    k += 3.0;
                }
            }
            best = best.max(s / k);
        }
    }
    [mean, var, best]
}

/// Logistic regression over three global statistics, trained by plain
/// gradient descent on train and scored on test.
#[test]
fn synthetic_classes_are_linearly_separable() {
    let dir = tempfile::tempdir().unwrap();
    make_synthetic_dataset(dir.path(), &SynthConfig::new(3, 40, 32), false).unwrap();
    let splits = index_dataset(dir.path(), &ClassNames::default()).unwrap();
    let load = |split: Split| -> Vec<([f64; 3], f64)> {
        splits
            .get(split)
            .entries()
            .map(|(p, l)| (features(&ppm::read(p).unwrap()), f64::from(l)))
            .collect()
    };
    let train = load(Split::Train);
    let test = load(Split::Test);
    let mut mu = [0.0; 3];
    let mut sd = [0.0; 3];
    for k in 0..3 {
        mu[k] = train.iter().map(|(f, _)| f[k]).sum::<f64>() / train.len() as f64;
        sd[k] = (train.iter().map(|(f, _)| (f[k] - mu[k]).powi(2)).sum::<f64>() / train.len() as f64).sqrt() + 1e-12;
    }
    let z = |f: &[f64; 3]| [(f[0] - mu[0]) / sd[0], (f[1] - mu[1]) / sd[1], (f[2] - mu[2]) / sd[2]];
    let mut w = [0.0; 3];
    let mut b = 0.0;
    for _ in 0..2000 {
        let mut gw = [0.0; 3];
        let mut gb = 0.0;
        for (f, y) in &train {
            let x = z(f);
            let p = 1.0 / (1.0 + (-(w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + b)).exp());
            for k in 0..3 {
                gw[k] += (p - y) * x[k];
            }
            gb += p - y;
        }
        for k in 0..3 {
            w[k] -= 0.1 * gw[k] / train.len() as f64;
        }
        b -= 0.1 * gb / train.len() as f64;
    }
    let correct = test
        .iter()
        .filter(|(f, y)| {
            let x = z(f);
            let s = w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + b;
            (s >= 0.0) == (*y == 1.0)
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.95, "probe accuracy {acc}");
}

fn write(path: &Path, img: &ImageBuffer<u8>) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    ppm::write(path, img).unwrap();
}

fn tiny_dataset(root: &Path) {
    let c = ClassNames::default();
    for split in Split::ALL {
        for label in 0..2 {
            for i in 0..2u8 {
                let v = 10 + 100 * label as u8 + i;
                write(
                    &root.join(split.as_str()).join(c.name(label)).join(format!("f{i}.ppm")),
                    &constant_image(4, 4, v),
                );
            }
        }
    }
}

#[test]
fn index_is_lexicographic_and_labels_by_directory() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let c = ClassNames::default();
    write(&dir.path().join("train/Accident/a0.ppm"), &constant_image(4, 4, 250));
    std::fs::write(dir.path().join("train/Accident/notes.txt"), b"ignored").unwrap();
    let idx = index_split(dir.path(), Split::Train, &c).unwrap();
    let names: Vec<_> = idx
        .entries()
        .map(|(p, l)| (p.file_name().unwrap().to_string_lossy().into_owned(), l))
        .collect();
    assert_eq!(
        names,
        vec![
            ("f0.ppm".into(), 0),
            ("f1.ppm".into(), 0),
            ("a0.ppm".into(), 1),
            ("f0.ppm".into(), 1),
            ("f1.ppm".into(), 1)
        ]
    );
    let set = idx.load(None).unwrap();
    assert_eq!(set.inputs.shape(), &[5, 4, 4, 3]);
    assert_eq!(set.labels, vec![0, 0, 1, 1, 1]);
    assert!((set.inputs.data()[0] - 10.0 / 255.0).abs() < 1e-7);
    let resized = idx.load(Some((2, 3))).unwrap();
    assert_eq!(resized.inputs.shape(), &[5, 2, 3, 3]);
}

#[test]
fn index_errors() {
    let c = ClassNames::default();
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    std::fs::remove_dir_all(dir.path().join("val/Accident")).unwrap();
    match index_dataset(dir.path(), &c) {
        Err(Error::MissingDir(p)) => assert!(p.ends_with("val/Accident")),
        other => panic!("{other:?}"),
    }
    match index_dataset(&dir.path().join("absent"), &c) {
        Err(Error::MissingDir(p)) => assert!(p.ends_with("absent")),
        other => panic!("{other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    for f in ["f0.ppm", "f1.ppm"] {
        std::fs::remove_file(dir.path().join("test/Non Accident").join(f)).unwrap();
    }
    assert!(matches!(index_dataset(dir.path(), &c), Err(Error::Dataset(_))));

    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    std::fs::copy(dir.path().join("train/Non Accident/f0.ppm"), dir.path().join("train/Accident/dup.ppm")).unwrap();
    match index_split(dir.path(), Split::Train, &c) {
        Err(Error::Dataset(m)) => assert!(m.contains("ambiguous"), "{m}"),
        other => panic!("{other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    std::fs::write(dir.path().join("train/Accident/bad.ppm"), b"P6\n4 4\n255\n").unwrap();
    assert!(matches!(index_split(dir.path(), Split::Train, &c), Err(Error::Dataset(_))));
}

#[test]
fn merge_is_idempotent_and_touches_only_train() {
    let dir = tempfile::tempdir().unwrap();
    make_synthetic_dataset(dir.path(), &SynthConfig::new(5, 4, 16), false).unwrap();
    let c = ClassNames::default();
    let before = index_dataset(dir.path(), &c).unwrap();
    let val_digest = before.val.digest().unwrap();
    let test_digest = before.test.digest().unwrap();
    let generated: Vec<_> = (0..6)
        .map(|i| (normalize(&constant_image(16, 16, 30 * i as u8 + 1)), (i % 2) as u8))
        .collect();
    let merged = merge_augmented(dir.path(), &c, &generated, "b1").unwrap();
    assert_eq!(merged.counts(), [7, 7]);
    let digest = merged.digest().unwrap();
    let again = merge_augmented(dir.path(), &c, &generated, "b1").unwrap();
    assert_eq!(again.counts(), [7, 7]);
    assert_eq!(again.digest().unwrap(), digest);
    assert_ne!(before.train.digest().unwrap(), digest);
    assert!(dir.path().join("train/Accident/gan_b1_0000.ppm").exists());

    let after = index_dataset(dir.path(), &c).unwrap();
    assert_eq!(after.val.digest().unwrap(), val_digest);
    assert_eq!(after.test.digest().unwrap(), test_digest);

    let wrong = vec![(normalize(&constant_image(8, 8, 1)), 0u8)];
    assert!(matches!(merge_augmented(dir.path(), &c, &wrong, "b2"), Err(Error::Dataset(_))));
    assert!(merge_augmented(dir.path(), &c, &generated, "../x").is_err());
}

#[test]
fn preprocess_output_size_and_range() {
    let img = ImageBuffer::new(3, 5, 3, (0..45).map(|v| (v * 5) as u8).collect()).unwrap();
    let out = preprocess(&img, 8, 8, &EnhanceParams::default()).unwrap();
    assert_eq!((out.height, out.width, out.channels), (8, 8, 3));
    let same = preprocess(&img, 3, 5, &EnhanceParams::IDENTITY).unwrap();
    assert_eq!(same.data, img.data);
}

fn arb_image() -> impl Strategy<Value = ImageBuffer<u8>> {
    (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<u8>(), h * w * 3).prop_map(move |d| ImageBuffer::new(h, w, 3, d).unwrap())
    })
}

proptest! {
    #[test]
    fn ppm_round_trip(img in arb_image()) {
        let bytes = ppm::encode(&img).unwrap();
        prop_assert_eq!(ppm::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn resize_stays_within_input_range(img in arb_image(), h in 1usize..12, w in 1usize..12) {
        let out = resize(&img, h, w).unwrap();
        let lo = *img.data.iter().min().unwrap();
        let hi = *img.data.iter().max().unwrap();
        prop_assert_eq!(out.data.len(), h * w * 3);
        prop_assert!(out.data.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn normalize_is_in_unit_interval(img in arb_image()) {
        let n = normalize(&img);
        prop_assert!(n.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (&a, &b) in n.data.iter().zip(&img.data) {
            prop_assert!((f64::from(a) * 255.0 - f64::from(b)).abs() < 1e-4);
        }
    }
}
