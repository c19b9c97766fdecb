use cola_nets::{load_arrays, save_arrays};
use cola_tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn round_trip_is_bit_exact(
        arrays in prop::collection::vec(
            (
                "[a-z][a-z0-9_.]{0,24}",
                prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
            ),
            0..6,
        )
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let named: Vec<(String, Tensor)> = arrays
            .into_iter()
            .map(|(name, data)| {
                let len = data.len();
                (name, Tensor::new(&[len], data))
            })
            .collect();
        let refs: Vec<(String, &Tensor)> =
            named.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_arrays(&path, &refs).unwrap();
        let loaded = load_arrays(&path).unwrap();
        prop_assert_eq!(loaded.len(), named.len());
        for ((n0, t0), (n1, t1)) in named.iter().zip(&loaded) {
            prop_assert_eq!(n0, n1);
            prop_assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.data().iter().zip(t1.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

#[test]
fn rank_two_arrays_preserve_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    let t = Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, -0.0, f64::MIN_POSITIVE]);
    save_arrays(&path, &[("w".to_string(), &t)]).unwrap();
    let loaded = load_arrays(&path).unwrap();
    assert_eq!(loaded[0].0, "w");
    assert_eq!(loaded[0].1.shape(), &[2, 3]);
    for (a, b) in t.data().iter().zip(loaded[0].1.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
