//! The on-disk trace directory, written by hand the way an external
//! exporter would, then read back through the library.

use std::fs;
use std::path::Path;

use nlcov_core::criteria::{Criterion, Nlc};
use nlcov_core::trace::{ActivationTrace, Layer};

fn write_dir(dir: &Path, manifest: &str, layers: &[(&str, &[f32])], labels: Option<&[i64]>) {
    fs::create_dir_all(dir.join("layers")).unwrap();
    fs::write(dir.join("manifest.json"), manifest).unwrap();
    for (name, values) in layers {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join("layers").join(format!("{name}.f32")), bytes).unwrap();
    }
    if let Some(labels) = labels {
        let bytes: Vec<u8> = labels.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join("labels.i64"), bytes).unwrap();
    }
}

const MANIFEST: &str = r#"{"version":1,"model":"external","num_inputs":4,"dtype":"f32","endianness":"little","layers":[{"name":"fc1","neurons":2},{"name":"fc2","neurons":1}],"has_labels":true,"has_predictions":false}"#;

#[test]
fn hand_written_directory_loads() {
    let tmp = tempfile::tempdir().unwrap();
    let fc1: [f32; 8] = [1.0, 0.5, -1.0, 0.25, 2.0, -0.5, 0.0, 0.0];
    let fc2: [f32; 4] = [5.0, -5.0, 10.0, -10.0];
    write_dir(tmp.path(), MANIFEST, &[("fc1", &fc1), ("fc2", &fc2)], Some(&[0, 1, 0, 1]));

    let t = ActivationTrace::load(tmp.path()).unwrap();
    assert_eq!(t.model(), "external");
    assert_eq!(t.num_inputs(), 4);
    assert_eq!(t.layer("fc1").unwrap().row(2), &[2.0, -0.5]);
    assert_eq!(t.labels(), Some(&[0i64, 1, 0, 1][..]));
    let r = Nlc.evaluate(&t, &t.full_view()).unwrap();
    assert_eq!(r.layer_value("fc2"), Some(62.5));
}

#[test]
fn save_reproduces_hand_written_bytes() {
    let src = tempfile::tempdir().unwrap();
    let fc1: [f32; 8] = [1.0, 0.5, -1.0, 0.25, 2.0, -0.5, 0.0, 0.0];
    let fc2: [f32; 4] = [5.0, -5.0, 10.0, -10.0];
    write_dir(src.path(), MANIFEST, &[("fc1", &fc1), ("fc2", &fc2)], Some(&[0, 1, 0, 1]));
    let t = ActivationTrace::load(src.path()).unwrap();

    let dst = tempfile::tempdir().unwrap();
    let out = dst.path().join("copy");
    t.save(&out).unwrap();
    for file in ["manifest.json", "labels.i64", "layers/fc1.f32", "layers/fc2.f32"] {
        assert_eq!(fs::read(src.path().join(file)).unwrap(), fs::read(out.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn malformed_directories_are_rejected() {
    let cases: [(&str, &str, usize); 4] = [
        ("short payload", MANIFEST, 3),
        ("extra key", &MANIFEST.replace("\"version\":1", "\"version\":1,\"extra\":0"), 4),
        ("f64 dtype", &MANIFEST.replace("f32\",\"endianness", "f64\",\"endianness"), 4),
        ("version 2", &MANIFEST.replace("\"version\":1", "\"version\":2"), 4),
    ];
    for (what, manifest, rows) in cases {
        let tmp = tempfile::tempdir().unwrap();
        let fc1 = vec![0.5f32; rows * 2];
        let fc2 = vec![1.0f32; rows];
        write_dir(tmp.path(), manifest, &[("fc1", &fc1), ("fc2", &fc2)], Some(&[0, 1, 0, 1]));
        assert!(ActivationTrace::load(tmp.path()).is_err(), "{what} accepted");
    }

    let tmp = tempfile::tempdir().unwrap();
    let fc1 = [0.5f32, f32::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    write_dir(tmp.path(), MANIFEST, &[("fc1", &fc1), ("fc2", &[1.0; 4])], Some(&[0, 1, 0, 1]));
    assert!(ActivationTrace::load(tmp.path()).is_err(), "NaN accepted");
}

#[test]
fn save_load_round_trip_is_exact_for_f32_values() {
    let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.125, -(i as f64)]).collect();
    let t = ActivationTrace::new("rt", 7, vec![Layer::from_rows("h", &rows).unwrap()])
        .unwrap()
        .with_predictions(vec![3; 7])
        .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("t");
    t.save(&dir).unwrap();
    assert_eq!(ActivationTrace::load(&dir).unwrap(), t);
}
