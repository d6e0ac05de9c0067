use proptest::prelude::*;

use rcdm_core::metrics::ssim;
use rcdm_core::nn::{conv2d, pixel_shuffle, pixel_unshuffle, ConvSpec};
use rcdm_core::par;
use rcdm_core::rng::RngStream;
use rcdm_core::wavelet::{dwt2d_stacked, idwt2d_stacked};
use rcdm_core::{DType, Tensor};

fn tensor(shape: &[usize], seed: u64, dtype: DType) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut RngStream::new(seed), dtype)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn haar_round_trip(c in 1usize..4, h in 1usize..9, w in 1usize..9, seed: u64) {
        let x = tensor(&[c, 2 * h, 2 * w], seed, DType::F64);
        let back = idwt2d_stacked(&dwt2d_stacked(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn shuffle_inverts_unshuffle(c in 1usize..4, r in 1usize..4, h in 1usize..6, w in 1usize..6, seed: u64) {
        let x = tensor(&[c * r * r, h, w], seed, DType::F32);
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), &[c, r * h, r * w][..]);
        prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
    }

    #[test]
    fn conv_is_linear(cin in 1usize..4, cout in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
                      h in 3usize..10, w in 3usize..10, a in -3.0f64..3.0, seed: u64) {
        let spec = ConvSpec::new2d(cin, cout, k).with_bias(false);
        let x = tensor(&[cin, h, w], seed, DType::F64);
        let y = tensor(&[cin, h, w], seed ^ 1, DType::F64);
        let wt = tensor(&spec.weight_shape(), seed ^ 2, DType::F64);
        let lhs = conv2d(&x.scalar_mul(a).add(&y).unwrap(), &wt, None, &spec).unwrap();
        let rhs = conv2d(&x, &wt, None, &spec).unwrap().scalar_mul(a).add(&conv2d(&y, &wt, None, &spec).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn conv_dispatch_is_bit_identical(cin in 1usize..5, cout in 1usize..5, h in 3usize..12, w in 3usize..12, seed: u64) {
        let spec = ConvSpec::new2d(cin, cout, 3);
        let x = tensor(&[cin, h, w], seed, DType::F32);
        let wt = tensor(&spec.weight_shape(), seed ^ 3, DType::F32);
        let b = tensor(&[cout], seed ^ 4, DType::F32);
        let fast = conv2d(&x, &wt, Some(&b), &spec).unwrap();
        prop_assert_eq!(par::sequential(|| conv2d(&x, &wt, Some(&b), &spec).unwrap()), fast);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(h in 11usize..20, w in 11usize..20, seed: u64) {
        let a = Tensor::uniform(&[1, h, w], 0.0, 1.0, &mut RngStream::new(seed), DType::F64);
        let b = Tensor::uniform(&[1, h, w], 0.0, 1.0, &mut RngStream::new(seed ^ 5), DType::F64);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
