use proptest::prelude::*;

use super::*;

#[test]
fn zero_flow_round_trip() {
    let f = FlowField::zeros(2, 2);
    let back = read_flo(&write_flo(&f).unwrap()).unwrap();
    assert_eq!((back.width(), back.height()), (2, 2));
    assert!(back.u().iter().chain(back.v()).all(|&x| x == 0.0));
}

#[test]
fn flo_rejects_bad_magic_and_truncation() {
    let mut bytes = write_flo(&FlowField::uniform(3, 2, 1.5, -2.0)).unwrap();
    let full = bytes.len();
    let short = &bytes[..full - 5];
    match read_flo(short) {
        Err(CodecError::CorruptFlow { expected, actual }) => assert_eq!((expected, actual), (full, full - 5)),
        other => panic!("unexpected {other:?}"),
    }
    bytes[0..4].copy_from_slice(&0.0f32.to_le_bytes());
    assert_eq!(read_flo(&bytes).unwrap_err().to_string(), "not a flow file");
}

#[test]
fn flo_keeps_unknown_sentinels() {
    let f = FlowField::new(2, 1, vec![1e10, 0.5], vec![0.0, f32::NAN]).unwrap();
    let back = read_flo(&write_flo(&f).unwrap()).unwrap();
    assert_eq!(back.u()[0], 1e10);
    assert!(back.v()[1].is_nan());
    assert!(!back.is_known(0) && !back.is_known(1));
}

#[test]
fn flo_rejects_empty_field() {
    assert!(write_flo(&FlowField::zeros(0, 3)).is_err());
}

#[test]
fn ppm_scale_and_zero_image() {
    let bytes = b"P6\n1 1\n255\n\xff\x00\x00";
    let f = read_image(bytes).unwrap();
    assert_eq!((f.get(0, 0, 0), f.get(1, 0, 0), f.get(2, 0, 0)), (1.0, 0.0, 0.0));
    let z = Frame::filled(4, 3, [0.0; 3]);
    assert_eq!(read_image(&write_image(&z).unwrap()).unwrap(), z);
}

#[test]
fn ppm_header_with_comments() {
    let bytes = b"P6 # comment\n2 # w\n1\n255\n\x00\x80\xff\x01\x02\x03";
    let f = read_image(bytes).unwrap();
    assert_eq!((f.width(), f.height()), (2, 1));
    assert_eq!(f.get(1, 0, 0), 128.0 / 255.0);
}

#[test]
fn ppm_rejects_other_maxvals_and_formats() {
    assert!(read_image(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap_err().to_string().contains("maxval"));
    assert!(read_image(b"P3\n1 1\n255\n0 0 0").is_err());
    assert!(read_image(b"P6\n1 x\n255\n\x00\x00\x00").is_err());
}

#[test]
fn ppm_encode_clamps() {
    let f = Frame::new(1, 1, vec![1.4, -0.2, 0.5]).unwrap();
    let bytes = write_image(&f).unwrap();
    assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 128]);
}

#[test]
fn container_basics() {
    let empty = TensorContainer::new();
    assert_eq!(read_container(&write_container(&empty).unwrap()).unwrap(), empty);

    let mut c = TensorContainer::new();
    c.push("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let back = read_container(&write_container(&c).unwrap()).unwrap();
    assert_eq!(back.get("w").unwrap().data, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(back.get("w").unwrap().dims, vec![2, 2]);
    assert!(c.push("w", vec![1], vec![0.0]).is_err());
}

#[test]
fn container_rejects_duplicates_on_read() {
    let mut c = TensorContainer::new();
    c.push("a", vec![1], vec![1.0]).unwrap();
    let mut bytes = write_container(&c).unwrap();
    let entry = bytes[12..].to_vec();
    bytes.extend_from_slice(&entry);
    bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
    assert!(read_container(&bytes).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn container_rejects_oversized_dims() {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"CTXC");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.push(b'x');
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&65536u32.to_le_bytes());
    bytes.extend_from_slice(&65536u32.to_le_bytes());
    assert!(read_container(&bytes).unwrap_err().to_string().contains("2^31"));
    assert!(TensorContainer::new().push("x", vec![1 << 16, 1 << 16], Vec::new()).is_err());
}

#[test]
fn container_typed_access_names_entry() {
    let mut c = TensorContainer::new();
    c.push("ctx.weight", vec![2], vec![0.0; 2]).unwrap();
    let err = c.tensor::<f32>("ctx.bias", None).unwrap_err().to_string();
    assert!(err.contains("ctx.bias"));
    let err = c.tensor::<f32>("ctx.weight", Some(&[3])).unwrap_err().to_string();
    assert!(err.contains("ctx.weight"));
}

fn flow_strategy() -> impl Strategy<Value = FlowField> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        (prop::collection::vec(any::<f32>(), w * h), prop::collection::vec(any::<f32>(), w * h))
            .prop_map(move |(u, v)| FlowField::new(w, h, u, v).unwrap())
    })
}

fn image_bytes_strategy() -> impl Strategy<Value = Vec<u8>> {
    (1usize..10, 1usize..10).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), 3 * w * h).prop_map(move |px| {
            let mut b = format!("P6\n{w} {h}\n255\n").into_bytes();
            b.extend(px);
            b
        })
    })
}

fn container_strategy() -> impl Strategy<Value = TensorContainer> {
    prop::collection::vec((prop::collection::vec(1usize..4, 0..4), any::<u32>()), 0..6).prop_map(|specs| {
        let mut c = TensorContainer::new();
        for (i, (dims, seed)) in specs.into_iter().enumerate() {
            let n: usize = dims.iter().product();
            let data = (0..n).map(|k| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(k as u32))).collect();
            c.push(format!("entry.{i}.é"), dims, data).unwrap();
        }
        c
    })
}

proptest! {
    #[test]
    fn flo_round_trip_is_bit_exact(f in flow_strategy()) {
        let bytes = write_flo(&f).unwrap();
        let back = read_flo(&bytes).unwrap();
        prop_assert_eq!(write_flo(&back).unwrap(), bytes);
    }

    #[test]
    fn image_round_trip_is_idempotent(bytes in image_bytes_strategy()) {
        let f = read_image(&bytes).unwrap();
        prop_assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let again = write_image(&f).unwrap();
        prop_assert_eq!(&again, &bytes);
        prop_assert_eq!(read_image(&again).unwrap(), f);
    }

    #[test]
    fn container_round_trip_is_bit_exact(c in container_strategy()) {
        let bytes = write_container(&c).unwrap();
        prop_assert_eq!(write_container(&read_container(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn truncations_fail_cleanly(f in flow_strategy(), img in image_bytes_strategy(), c in container_strategy(), cut in any::<prop::sample::Index>()) {
        let flo = write_flo(&f).unwrap();
        prop_assert!(read_flo(&flo[..cut.index(flo.len())]).is_err());
        prop_assert!(read_image(&img[..cut.index(img.len())]).is_err());
        let ctx = write_container(&c).unwrap();
        prop_assert!(read_container(&ctx[..cut.index(ctx.len())]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = read_flo(&bytes);
        let _ = read_image(&bytes);
        let _ = read_container(&bytes);
    }
}
