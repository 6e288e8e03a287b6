//! Shared gradient-check cases and reference implementations for the
//! integration and acceptance tests.
#![allow(dead_code)]

use glpge::dblrnet::{build_dblrnet, DblrnetConfig, RefineMode};
use glpge::diffcore::{
    grad_check, Axis, Backend, CheckLeaf, GradCheckOptions, GradCheckReport, Graph, ParamStore, Shape, Tensor, Var,
};
use glpge::gppnet::{build_gppnet, FusionStrategy, GppnetConfig};
use glpge::imageio::{filter, gray, FilterKind};
use glpge::losses::{
    discriminator_loss, gaussian_kernel, generator_objective, l1_loss, smoothness_reg, ssim_loss, tv_loss, AdvInput,
    Discriminator, DiscriminatorConfig, LossWeights, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};
use glpge::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type G = Graph<f64>;

/// A seeded gradient-check case.
pub type Case = fn(u64) -> Result<GradCheckReport>;

pub fn rand_tensor(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// `Σ r ⊙ y` with a fixed random `r`, so every output element matters.
fn probe_sum(g: &mut G, y: &Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = rand_tensor(g.shape(y), &mut rng, -1.0, 1.0);
    let r = g.leaf(r, false);
    let p = g.mul(y, &r)?;
    Ok(g.sum(&p))
}

fn opts(seed: u64, probes: usize) -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-4,
        max_probes_per_leaf: probes,
        seed,
    }
}

type Unary = fn(&mut G, &Var) -> Result<Var>;

fn unary(seed: u64, shape: Shape, lo: f64, hi: f64, op: Unary) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = [CheckLeaf::probed(rand_tensor(shape, &mut rng, lo, hi))];
    grad_check(
        &leaves,
        |g, v| {
            let y = op(g, &v[0])?;
            probe_sum(g, &y, seed)
        },
        opts(seed, 32),
    )
}

type Binary = fn(&mut G, &Var, &Var) -> Result<Var>;

fn binary(seed: u64, a: Shape, b: Shape, lo: f64, op: Binary) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = [
        CheckLeaf::probed(rand_tensor(a, &mut rng, -1.0, 1.0)),
        CheckLeaf::probed(rand_tensor(b, &mut rng, lo, lo + 1.0)),
    ];
    grad_check(
        &leaves,
        |g, v| {
            let y = op(g, &v[0], &v[1])?;
            probe_sum(g, &y, seed)
        },
        opts(seed, 32),
    )
}

const S: Shape = Shape::new(2, 3, 8, 8);

/// One entry per differentiable operator of the engine.
pub fn op_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", |s| conv_case(s, 1, 1)),
        ("conv2d_strided", |s| conv_case(s, 2, 1)),
        ("conv2d_1x1", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let leaves = [
                CheckLeaf::probed(rand_tensor(Shape::new(1, 4, 6, 6), &mut rng, -1.0, 1.0)),
                CheckLeaf::probed(rand_tensor(Shape::new(3, 4, 1, 1), &mut rng, -1.0, 1.0)),
            ];
            grad_check(
                &leaves,
                |g, v| {
                    let y = g.conv2d(&v[0], &v[1], None, 1, 0)?;
                    probe_sum(g, &y, s)
                },
                opts(s, 32),
            )
        }),
        ("linear", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let leaves = [
                CheckLeaf::probed(rand_tensor(Shape::new(3, 5, 1, 1), &mut rng, -1.0, 1.0)),
                CheckLeaf::probed(rand_tensor(Shape::new(4, 5, 1, 1), &mut rng, -1.0, 1.0)),
                CheckLeaf::probed(rand_tensor(Shape::new(1, 4, 1, 1), &mut rng, -1.0, 1.0)),
            ];
            grad_check(
                &leaves,
                |g, v| {
                    let y = g.linear(&v[0], &v[1], Some(&v[2]))?;
                    probe_sum(g, &y, s)
                },
                opts(s, 32),
            )
        }),
        ("leaky_relu", |s| {
            unary(s, S, -1.0, 1.0, |g, x| Ok(g.leaky_relu(x, 0.2)))
        }),
        ("relu", |s| unary(s, S, -1.0, 1.0, |g, x| Ok(g.relu(x)))),
        ("tanh", |s| unary(s, S, -2.0, 2.0, |g, x| Ok(g.tanh(x)))),
        ("sigmoid", |s| unary(s, S, -3.0, 3.0, |g, x| Ok(g.sigmoid(x)))),
        ("clamp01", |s| unary(s, S, -0.5, 1.5, |g, x| Ok(g.clamp01(x)))),
        ("square", |s| unary(s, S, -1.0, 1.0, |g, x| Ok(g.square(x)))),
        ("abs", |s| unary(s, S, -1.0, 1.0, |g, x| Ok(g.abs(x)))),
        ("scale", |s| unary(s, S, -1.0, 1.0, |g, x| Ok(g.scale(x, -1.7)))),
        ("add_scalar", |s| {
            unary(s, S, -1.0, 1.0, |g, x| Ok(g.add_scalar(x, 0.3)))
        }),
        ("add", |s| binary(s, S, S, -1.0, |g, a, b| g.add(a, b))),
        ("sub", |s| binary(s, S, S, -1.0, |g, a, b| g.sub(a, b))),
        ("mul", |s| binary(s, S, S, -1.0, |g, a, b| g.mul(a, b))),
        ("div", |s| binary(s, S, S, 0.5, |g, a, b| g.div(a, b))),
        ("mul_broadcast", |s| {
            binary(s, S, Shape::new(1, 3, 1, 1), -1.0, |g, a, b| g.mul(a, b))
        }),
        ("div_broadcast", |s| {
            binary(s, S, Shape::new(2, 1, 1, 1), 0.5, |g, a, b| g.div(a, b))
        }),
        ("concat_channels", |s| {
            binary(s, S, Shape::new(2, 2, 8, 8), -1.0, |g, a, b| {
                g.concat_channels(&[*a, *b])
            })
        }),
        ("global_avg_pool", |s| {
            unary(s, S, -1.0, 1.0, |g, x| Ok(g.global_avg_pool(x)))
        }),
        ("mean", |s| unary(s, S, -1.0, 1.0, |g, x| Ok(g.mean(x)))),
        ("sum", |s| unary(s, S, -1.0, 1.0, |g, x| Ok(g.sum(x)))),
        ("pixel_unshuffle", |s| {
            unary(s, S, -1.0, 1.0, |g, x| g.pixel_unshuffle(x, 2))
        }),
        ("pixel_shuffle", |s| {
            unary(s, Shape::new(1, 8, 4, 4), -1.0, 1.0, |g, x| g.pixel_shuffle(x, 2))
        }),
        ("resize_down", |s| {
            unary(s, Shape::new(1, 3, 16, 12), -1.0, 1.0, |g, x| {
                g.resize_bilinear(x, 5, 7)
            })
        }),
        ("resize_up", |s| {
            unary(s, Shape::new(1, 2, 4, 5), -1.0, 1.0, |g, x| g.resize_bilinear(x, 9, 13))
        }),
        ("upsample_bilinear", |s| {
            unary(s, Shape::new(1, 2, 4, 4), -1.0, 1.0, |g, x| g.upsample_bilinear(x, 2))
        }),
        ("max_pool2", |s| unary(s, S, -1.0, 1.0, |g, x| g.max_pool2(x))),
        ("blur_valid", |s| {
            unary(s, Shape::new(1, 3, 16, 16), -1.0, 1.0, |g, x| {
                g.blur_valid(x, &gaussian_kernel(11, 1.5))
            })
        }),
        ("forward_diff_x", |s| {
            unary(s, S, -1.0, 1.0, |g, x| g.forward_diff(x, Axis::Width))
        }),
        ("forward_diff_y", |s| {
            unary(s, S, -1.0, 1.0, |g, x| g.forward_diff(x, Axis::Height))
        }),
        ("gray", |s| unary(s, Shape::new(1, 3, 8, 8), 0.0, 1.0, gray)),
        ("filter_brightness", |s| filter_case(s, FilterKind::Brightness)),
        ("filter_contrast", |s| filter_case(s, FilterKind::Contrast)),
        ("filter_saturation", |s| filter_case(s, FilterKind::Saturation)),
    ]
}

fn conv_case(s: u64, stride: usize, pad: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let leaves = [
        CheckLeaf::probed(rand_tensor(Shape::new(2, 3, 9, 8), &mut rng, -1.0, 1.0)),
        CheckLeaf::probed(rand_tensor(Shape::new(4, 3, 3, 3), &mut rng, -1.0, 1.0)),
        CheckLeaf::probed(rand_tensor(Shape::new(1, 4, 1, 1), &mut rng, -1.0, 1.0)),
    ];
    grad_check(
        &leaves,
        |g, v| {
            let y = g.conv2d(&v[0], &v[1], Some(&v[2]), stride, pad)?;
            probe_sum(g, &y, s)
        },
        opts(s, 32),
    )
}

fn filter_case(s: u64, kind: FilterKind) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    // Interior values keep the output clamp inactive.
    let leaves = [
        CheckLeaf::probed(rand_tensor(Shape::new(1, 3, 8, 8), &mut rng, 0.35, 0.65)),
        CheckLeaf::probed(rand_tensor(Shape::scalar(), &mut rng, -0.3, 0.3)),
    ];
    grad_check(
        &leaves,
        |g, v| {
            let y = filter(g, &v[0], kind, &v[1])?;
            probe_sum(g, &y, s)
        },
        opts(s, 32),
    )
}

/// Leaves for every tensor of `store` (perturbed so no layer is exactly
/// zero) followed by the extra leaves.
fn store_leaves(store: &ParamStore, rng: &mut ChaCha8Rng) -> Vec<CheckLeaf> {
    store
        .iter()
        .map(|(_, t)| {
            let mut v: Tensor<f64> = t.cast();
            v.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
            CheckLeaf::probed(v)
        })
        .collect()
}

pub fn micro_gppnet_case(seed: u64, fusion: FusionStrategy) -> Result<GradCheckReport> {
    let model = build_gppnet(&GppnetConfig::micro())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaves = store_leaves(&model.store, &mut rng);
    let np = leaves.len();
    leaves.push(CheckLeaf::fixed(rand_tensor(
        Shape::new(1, 3, 16, 16),
        &mut rng,
        0.3,
        0.7,
    )));
    grad_check(
        &leaves,
        |g, v| {
            let out = model.forward(g, &v[..np], &v[np], fusion)?;
            probe_sum(g, &out.image, seed)
        },
        opts(seed, 4),
    )
}

pub fn micro_dblrnet_case(seed: u64, k: usize, mode: RefineMode) -> Result<GradCheckReport> {
    let model = build_dblrnet(&DblrnetConfig::micro())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaves = store_leaves(&model.store, &mut rng);
    let np = leaves.len();
    leaves.push(CheckLeaf::probed(rand_tensor(
        Shape::new(1, 3, 16, 16),
        &mut rng,
        0.3,
        0.7,
    )));
    grad_check(
        &leaves,
        |g, v| {
            let out = model.forward(g, &v[..np], &v[np], k, mode)?;
            probe_sum(g, &out.image, seed)
        },
        opts(seed, 4),
    )
}

fn pair_leaves(seed: u64, side: usize) -> [CheckLeaf; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(1, 3, side, side);
    [
        CheckLeaf::probed(rand_tensor(shape, &mut rng, 0.0, 1.0)),
        CheckLeaf::fixed(rand_tensor(shape, &mut rng, 0.0, 1.0)),
    ]
}

pub fn loss_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("l1_loss", |s| {
            grad_check(&pair_leaves(s, 12), |g, v| l1_loss(g, &v[0], &v[1]), opts(s, 32))
        }),
        ("ssim_loss", |s| {
            grad_check(&pair_leaves(s, 16), |g, v| ssim_loss(g, &v[0], &v[1]), opts(s, 32))
        }),
        ("tv_loss", |s| {
            grad_check(&pair_leaves(s, 12), |g, v| tv_loss(g, &v[0]), opts(s, 32))
        }),
        ("smoothness_reg", |s| {
            grad_check(&pair_leaves(s, 12), |g, v| smoothness_reg(g, &v[0], &v[1]), opts(s, 32))
        }),
        ("composite", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let shape = Shape::new(1, 3, 16, 16);
            let leaves = [
                CheckLeaf::probed(rand_tensor(shape, &mut rng, 0.0, 1.0)),
                CheckLeaf::fixed(rand_tensor(shape, &mut rng, 0.0, 1.0)),
                CheckLeaf::probed(rand_tensor(shape, &mut rng, 0.5, 1.5)),
                CheckLeaf::probed(rand_tensor(shape, &mut rng, -0.2, 0.2)),
            ];
            let w = LossWeights {
                adv: 0.0,
                ..LossWeights::default()
            };
            grad_check(
                &leaves,
                |g, v| {
                    let maps = (v[2], v[3]);
                    Ok(generator_objective(g, &w, &v[0], &v[1], Some(&maps), None)?.0)
                },
                opts(s, 32),
            )
        }),
        ("discriminator_loss", discriminator_case),
        ("generator_loss", generator_case),
    ]
}

/// The discriminator's five k4 convolutions need at least 24² input.
pub const ADV_SIDE: usize = 24;

fn micro_disc() -> Result<Discriminator> {
    Discriminator::new(&DiscriminatorConfig {
        widths: vec![2, 3, 3, 4],
        seed: 5,
    })
}

/// Discriminator objective with the fake batch held fixed (it is detached
/// inside the loss).
fn discriminator_case(s: u64) -> Result<GradCheckReport> {
    adversarial(s, false)
}

/// Generator objective through a fixed discriminator.
fn generator_case(s: u64) -> Result<GradCheckReport> {
    adversarial(s, true)
}

fn adversarial(s: u64, generator: bool) -> Result<GradCheckReport> {
    let disc = micro_disc()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let mut leaves = store_leaves(&disc.store, &mut rng);
    let np = leaves.len();
    let shape = Shape::new(1, 3, ADV_SIDE, ADV_SIDE);
    leaves.push(CheckLeaf::probed(rand_tensor(shape, &mut rng, 0.0, 1.0)));
    leaves.push(CheckLeaf {
        value: rand_tensor(shape, &mut rng, 0.0, 1.0),
        probe: generator,
    });
    let w = LossWeights {
        l1: 0.0,
        ssim: 0.0,
        tv: 0.0,
        adv: 1.0,
        reg: 0.0,
    };
    grad_check(
        &leaves,
        |g, v| {
            let (real, fake) = (&v[np], &v[np + 1]);
            if generator {
                let adv = AdvInput {
                    disc: &disc,
                    params: &v[..np],
                };
                Ok(generator_objective(g, &w, fake, real, None, Some(adv))?.0)
            } else {
                discriminator_loss(g, &disc, &v[..np], real, fake)
            }
        },
        opts(s, 4),
    )
}

/// Brute-force SSIM: explicit window sums at every valid position.
pub fn ssim_reference(x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let n = SSIM_WINDOW;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for oy in 0..=h - n {
            for ox in 0..=w - n {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..n {
                    for dx in 0..n {
                        let wgt = k[dy] * k[dx];
                        let i = (ch * h + oy + dy) * w + ox + dx;
                        mx += wgt * x[i];
                        my += wgt * y[i];
                        sxx += wgt * x[i] * x[i];
                        syy += wgt * y[i] * y[i];
                        sxy += wgt * x[i] * y[i];
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
    }
    total / count as f64
}
