use glpge::diffcore::{Backend, Eager, Shape, Tensor};
use glpge::evalkit::psnr;
use glpge::imageio::{apply_filter, FilterKind, ImageBuffer, ResizeMethod};
use glpge::losses::ssim;
use glpge::synthdoc::{degrade, DegradeConfig};
use proptest::prelude::*;

fn image(max_side: usize) -> impl Strategy<Value = ImageBuffer> {
    (1..=max_side, 1..=max_side, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
        proptest::collection::vec(0.0f32..=1.0, h * w * c).prop_map(move |d| ImageBuffer::new(h, w, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_filter_is_identity(img in image(24), k in 0usize..3) {
        let out = apply_filter(&img, FilterKind::ALL[k], 0.0).unwrap();
        prop_assert_eq!(out, img);
    }

    #[test]
    fn filters_stay_in_range(img in image(16), k in 0usize..3, p in -0.99f64..0.99) {
        let out = apply_filter(&img, FilterKind::ALL[k], p).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn reflect_pad_then_crop_round_trips(img in image(20), b in 0usize..20, r in 0usize..20) {
        prop_assume!(b < img.height() && r < img.width());
        let padded = img.reflect_pad(b, r).unwrap();
        prop_assert_eq!((padded.height(), padded.width()), (img.height() + b, img.width() + r));
        prop_assert_eq!(padded.crop(0, 0, img.height(), img.width()).unwrap(), img);
    }

    #[test]
    fn shuffle_inverts_unshuffle(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
        let shape = Shape::new(1, c, 2 * h, 2 * w);
        let mut s = seed;
        let t = Tensor::<f32>::from_fn(shape, |_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); (s >> 40) as f32 });
        let mut e = Eager::<f32>::new();
        let x = e.wrap(t.clone());
        let u = e.pixel_unshuffle(&x, 2).unwrap();
        let y = e.pixel_shuffle(&u, 2).unwrap();
        prop_assert_eq!(y.data(), t.data());
    }

    #[test]
    fn constant_images_survive_resampling(v in 0.0f32..=1.0, h in 2usize..40, w in 2usize..40, th in 1usize..50, tw in 1usize..50) {
        let img = ImageBuffer::filled(h, w, 3, v);
        let out = img.resize(th, tw, ResizeMethod::Bilinear).unwrap();
        prop_assert!(out.data().iter().all(|x| *x == v));
    }

    #[test]
    fn zero_intensity_degradation_is_identity(seed in any::<u64>(), side in 16usize..40) {
        let img = ImageBuffer::from_fn(side, side, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f32 / 10.0);
        let cfg = DegradeConfig { intensity: 0.0, seed, ..DegradeConfig::default() };
        prop_assert_eq!(degrade(&img, &cfg).unwrap(), img);
    }

    #[test]
    fn metrics_are_symmetric(a in image(16), seed in any::<u64>()) {
        prop_assume!(a.height() >= 11 && a.width() >= 11);
        let b = ImageBuffer::from_fn(a.height(), a.width(), a.channels(), |y, x, c| {
            ((seed as usize + y * 31 + x * 17 + c) % 97) as f32 / 96.0
        });
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
}
