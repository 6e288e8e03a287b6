mod support;

use glpge::diffcore::{Backend, Eager, Graph, Shape};
use glpge::losses::ssim_index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{rand_tensor, ssim_reference};

#[test]
fn matches_brute_force_window_sums() {
    let shape = Shape::new(1, 3, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..50 {
        let x = rand_tensor(shape, &mut rng, 0.0, 1.0);
        // Correlated partner so the structure term is exercised.
        let noise = rand_tensor(shape, &mut rng, -0.3, 0.3);
        let y = glpge::diffcore::Tensor::from_fn(shape, |[n, c, h, w]| {
            (x.at(n, c, h, w) + noise.at(n, c, h, w)).clamp(0.0, 1.0)
        });
        let mut e = Eager::<f64>::new();
        let (xv, yv) = (e.wrap(x.clone()), e.wrap(y.clone()));
        let got = ssim_index(&mut e, &xv, &yv).unwrap().item();
        let want = ssim_reference(x.data(), y.data(), 3, 16, 16);
        assert!((got - want).abs() < 1e-6, "case {case}: {got} vs {want}");
    }
}

#[test]
fn self_similarity_is_exactly_one() {
    let shape = Shape::new(2, 3, 16, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let x = rand_tensor(shape, &mut rng, 0.0, 1.0);
        let mut e = Eager::<f64>::new();
        let xv = e.wrap(x.clone());
        assert_eq!(ssim_index(&mut e, &xv, &xv).unwrap().item(), 1.0);
        let mut g = Graph::<f32>::new();
        let xf = g.leaf(x.cast(), false);
        let s = ssim_index(&mut g, &xf, &xf).unwrap();
        assert_eq!(g.value(s).item(), 1.0);
        let _ = g.shape(&s);
    }
}
