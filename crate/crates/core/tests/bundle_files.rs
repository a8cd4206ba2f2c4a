use eraki_core::bundle::{header_path, load_bundle, payload_path, save_bundle};
use eraki_core::{Axis, CTensor, Error, C64};
use proptest::prelude::*;
use serde_json::{json, Map};

fn tensor(shape: Vec<usize>, vals: &[(f64, f64)]) -> CTensor {
    let axes = [Axis::Coil, Axis::Echo, Axis::Kx, Axis::Ky][..shape.len()].to_vec();
    let n: usize = shape.iter().product();
    CTensor::new(axes, shape, vals[..n].iter().map(|&(r, i)| C64::new(r, i)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn file_round_trip_is_bit_exact(
        shape in prop::collection::vec(1usize..4, 1..4),
        vals in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 64),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let x = tensor(shape, &vals);
        let mut meta = Map::new();
        meta.insert("te_ms".into(), json!([5.0, 15.0]));
        save_bundle(&x, dir.path().join("x"), meta.clone()).unwrap();
        let (y, m) = load_bundle(dir.path().join("x")).unwrap();
        prop_assert_eq!(&m, &meta);
        prop_assert_eq!(x.axes(), y.axes());
        for (a, b) in x.data().iter().zip(y.data()) {
            prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
            prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        // a second write produces identical bytes
        save_bundle(&y, dir.path().join("y"), m).unwrap();
        prop_assert_eq!(std::fs::read(payload_path(&dir.path().join("x"))).unwrap(),
                        std::fs::read(payload_path(&dir.path().join("y"))).unwrap());
        prop_assert_eq!(std::fs::read(header_path(&dir.path().join("x"))).unwrap(),
                        std::fs::read(header_path(&dir.path().join("y"))).unwrap());
    }
}

#[test]
fn payload_layout_is_interleaved_little_endian() {
    let dir = tempfile::tempdir().unwrap();
    let x = CTensor::new(vec![Axis::Kx], vec![2], vec![C64::new(1.0, -2.0), C64::new(0.5, 3.0)]).unwrap();
    save_bundle(&x, dir.path().join("t"), Map::new()).unwrap();
    let bytes = std::fs::read(payload_path(&dir.path().join("t"))).unwrap();
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(vals, vec![1.0, -2.0, 0.5, 3.0]);
    let header: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(header_path(&dir.path().join("t"))).unwrap()).unwrap();
    assert_eq!(header["dtype"], "complex128");
    assert_eq!(header["byte_order"], "little");
    assert_eq!(header["axes"], json!(["kx"]));
}

#[test]
fn corrupted_payloads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("t");
    let x = CTensor::zeros(vec![Axis::Ky, Axis::Kz], vec![3, 2]).unwrap();
    save_bundle(&x, &stem, Map::new()).unwrap();
    std::fs::write(payload_path(&stem), vec![0u8; 17]).unwrap();
    assert!(matches!(load_bundle(&stem), Err(Error::LengthMismatch { expected: 96, found: 17 })));
    let text = std::fs::read_to_string(header_path(&stem)).unwrap().replace("complex128", "float32");
    std::fs::write(header_path(&stem), text).unwrap();
    assert!(matches!(load_bundle(&stem), Err(Error::UnknownDtype(_))));
}
