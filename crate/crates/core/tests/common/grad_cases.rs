//! The finite-difference case list, shared by the per-group gradient tests
//! and the acceptance runner.

use semgan_core::autodiff::{Tensor, Var};
use semgan_core::losses::{adversarial_loss, cycle_loss, patch_nce_loss};
use semgan_core::models::l2_normalize_rows;
use semgan_core::rng::SplitMix64;
use semgan_core::Result;

use super::{gradient_error, positive, randn, randn_away_from_zero, weighted_sum, SEEDS};

pub type Loss = for<'t> fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>;
pub type Make = fn(&mut SplitMix64) -> Vec<Tensor<f64>>;

pub struct GradCase {
    pub group: &'static str,
    pub name: &'static str,
    pub make: Make,
    pub loss: Loss,
}

fn case(group: &'static str, name: &'static str, make: Make, loss: Loss) -> GradCase {
    GradCase {
        group,
        name,
        make,
        loss,
    }
}

pub const GROUPS: [&str; 8] = [
    "binary",
    "unary",
    "matmul",
    "conv",
    "reduction",
    "shape",
    "composite",
    "loss",
];

impl GradCase {
    /// Worst relative error over all seeds, with the seed that produced it.
    pub fn worst(&self) -> (f64, u64) {
        SEEDS
            .iter()
            .map(|&seed| {
                let inputs = (self.make)(&mut SplitMix64::new(seed));
                (gradient_error(&inputs, self.loss), seed)
            })
            .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
    }
}

fn keep_off_kink(r: &mut SplitMix64) -> Vec<Tensor<f64>> {
    let a = randn(&[2, 3, 4, 4], r);
    // |a - b| stays away from the kink of abs at 0
    let b = Tensor::from_fn(a.shape().to_vec(), |i| {
        let off = r.uniform(0.05, 1.0);
        if i % 2 == 0 {
            a.data()[i] + off
        } else {
            a.data()[i] - off
        }
    });
    vec![a, b]
}

pub fn gradient_cases() -> Vec<GradCase> {
    vec![
        case(
            "binary",
            "add",
            |r| vec![randn(&[2, 3, 4], r), randn(&[3, 1], r)],
            |v| weighted_sum(&v[0].add(&v[1])?, 1),
        ),
        case(
            "binary",
            "sub",
            |r| vec![randn(&[4], r), randn(&[2, 3, 4], r)],
            |v| weighted_sum(&v[0].sub(&v[1])?, 2),
        ),
        case(
            "binary",
            "mul",
            |r| vec![randn(&[2, 3, 2, 2], r), randn(&[3, 1, 1], r)],
            |v| weighted_sum(&v[0].mul(&v[1])?, 3),
        ),
        case(
            "binary",
            "div",
            |r| vec![randn(&[3, 4], r), positive(&[4], r)],
            |v| weighted_sum(&v[0].div(&v[1])?, 4),
        ),
        case(
            "unary",
            "neg",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].neg(), 5),
        ),
        case(
            "unary",
            "relu",
            |r| vec![randn_away_from_zero(&[3, 5], r)],
            |v| weighted_sum(&v[0].relu(), 6),
        ),
        case(
            "unary",
            "leaky_relu",
            |r| vec![randn_away_from_zero(&[3, 5], r)],
            |v| weighted_sum(&v[0].leaky_relu(), 7),
        ),
        case(
            "unary",
            "tanh",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].tanh(), 8),
        ),
        case(
            "unary",
            "sigmoid",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].sigmoid(), 9),
        ),
        case(
            "unary",
            "abs",
            |r| vec![randn_away_from_zero(&[3, 5], r)],
            |v| weighted_sum(&v[0].abs(), 10),
        ),
        case(
            "unary",
            "square",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].square(), 11),
        ),
        case(
            "unary",
            "log",
            |r| vec![positive(&[3, 5], r)],
            |v| weighted_sum(&v[0].log()?, 12),
        ),
        case(
            "unary",
            "exp",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].exp(), 13),
        ),
        case(
            "unary",
            "sqrt",
            |r| vec![positive(&[3, 5], r)],
            |v| weighted_sum(&v[0].sqrt()?, 14),
        ),
        case(
            "unary",
            "scale",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].scale(-2.5), 15),
        ),
        case(
            "unary",
            "add_scalar",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].add_scalar(0.75), 16),
        ),
        case(
            "matmul",
            "matmul 3x4·4x2",
            |r| vec![randn(&[3, 4], r), randn(&[4, 2], r)],
            |v| weighted_sum(&v[0].matmul(&v[1])?, 17),
        ),
        case(
            "matmul",
            "batched matmul",
            |r| vec![randn(&[2, 3, 4], r), randn(&[2, 4, 5], r)],
            |v| weighted_sum(&v[0].matmul(&v[1])?, 18),
        ),
        case(
            "conv",
            "conv 1x2x5x5 * 3x2x3x3",
            |r| vec![randn(&[1, 2, 5, 5], r), randn(&[3, 2, 3, 3], r)],
            |v| weighted_sum(&v[0].conv2d(&v[1], 1, 0)?, 19),
        ),
        case(
            "conv",
            "conv padded",
            |r| vec![randn(&[2, 2, 5, 5], r), randn(&[3, 2, 3, 3], r)],
            |v| weighted_sum(&v[0].conv2d(&v[1], 1, 1)?, 20),
        ),
        case(
            "conv",
            "conv strided",
            |r| vec![randn(&[2, 3, 6, 6], r), randn(&[2, 3, 4, 4], r)],
            |v| weighted_sum(&v[0].conv2d(&v[1], 2, 1)?, 21),
        ),
        case(
            "reduction",
            "sum axis",
            |r| vec![randn(&[3, 4, 2], r)],
            |v| weighted_sum(&v[0].sum(&[1], false)?, 22),
        ),
        case(
            "reduction",
            "mean axes keepdim",
            |r| vec![randn(&[3, 4, 2], r)],
            |v| weighted_sum(&v[0].mean(&[0, 2], true)?, 23),
        ),
        // distinct values spaced far beyond the FD step so the argmax is stable
        case(
            "reduction",
            "max",
            |r| {
                let mut vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
                r.shuffle(&mut vals);
                vec![Tensor::new([3, 4], vals).unwrap()]
            },
            |v| weighted_sum(&v[0].max(&[1], false)?, 24),
        ),
        case(
            "reduction",
            "sum_all",
            |r| vec![randn(&[2, 3], r)],
            |v| Ok(v[0].square().sum_all()),
        ),
        case(
            "reduction",
            "mean_all",
            |r| vec![randn(&[2, 3], r)],
            |v| Ok(v[0].exp().mean_all()),
        ),
        case(
            "shape",
            "reshape",
            |r| vec![randn(&[2, 6], r)],
            |v| weighted_sum(&v[0].reshape(&[3, 4])?, 25),
        ),
        case(
            "shape",
            "transpose",
            |r| vec![randn(&[2, 3, 4], r)],
            |v| weighted_sum(&v[0].transpose_last2()?, 26),
        ),
        case(
            "shape",
            "instance_norm",
            |r| vec![randn(&[2, 3, 4, 4], r)],
            |v| weighted_sum(&v[0].instance_norm()?, 27),
        ),
        case(
            "shape",
            "upsample2x",
            |r| vec![randn(&[1, 2, 3, 3], r)],
            |v| weighted_sum(&v[0].upsample2x()?, 28),
        ),
        case(
            "shape",
            "select_patches",
            |r| vec![randn(&[2, 3, 4, 4], r)],
            |v| weighted_sum(&v[0].select_patches(&[0, 5, 15, 9])?, 29),
        ),
        case(
            "shape",
            "log_softmax",
            |r| vec![randn(&[3, 5], r)],
            |v| weighted_sum(&v[0].log_softmax()?, 30),
        ),
        case(
            "composite",
            "conv->leaky->mean",
            |r| vec![randn(&[1, 2, 5, 5], r), randn(&[3, 2, 3, 3], r)],
            |v| Ok(v[0].conv2d(&v[1], 1, 1)?.leaky_relu().mean_all()),
        ),
        case(
            "loss",
            "adversarial real",
            |r| vec![randn(&[2, 1, 3, 3], r)],
            |v| adversarial_loss(&v[0], true),
        ),
        case(
            "loss",
            "adversarial fake",
            |r| vec![randn(&[2, 1, 3, 3], r)],
            |v| adversarial_loss(&v[0], false),
        ),
        case("loss", "cycle", keep_off_kink, |v| cycle_loss(&v[0], &v[1])),
        case(
            "loss",
            "patch_nce",
            |r| vec![randn(&[6, 4], r), randn(&[6, 4], r)],
            |v| {
                let q = l2_normalize_rows(&v[0])?;
                let k = l2_normalize_rows(&v[1])?;
                patch_nce_loss(&q, &k, 0.5)
            },
        ),
        case(
            "loss",
            "patch_nce batched",
            |r| vec![randn(&[2, 5, 3], r), randn(&[2, 5, 3], r)],
            |v| patch_nce_loss(&v[0], &v[1], 0.7),
        ),
    ]
}
