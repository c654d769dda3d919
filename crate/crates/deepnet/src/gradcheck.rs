//! Finite-difference verification of [`Network::backward`].

use rand::seq::index::sample;

use dlnice_core::rng::{stream_rng, StreamRng};

use crate::network::{Network, SequenceBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: usize,
    pub checked: usize,
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares backpropagated gradients against central differences on
/// `coords` random coordinates (all of them if there are fewer). When
/// `dropout` is positive every evaluation uses the same mask, drawn from
/// `dropout_seed`.
pub fn gradient_check(
    net: &Network,
    batch: &SequenceBatch,
    eps: f64,
    coords: usize,
    rng: &mut StreamRng,
    dropout: f64,
    dropout_seed: u64,
) -> GradientCheck {
    let all: Vec<usize> = (0..net.params.len()).collect();
    gradient_check_on(net, batch, eps, coords, rng, dropout, dropout_seed, &all)
}

/// [`gradient_check`] restricted to the parameter indices in `pool`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_on(
    net: &Network,
    batch: &SequenceBatch,
    eps: f64,
    coords: usize,
    rng: &mut StreamRng,
    dropout: f64,
    dropout_seed: u64,
    pool: &[usize],
) -> GradientCheck {
    let run = |n: &Network| {
        let mut drng = stream_rng(dropout_seed, 0);
        let cache = n.forward(batch, (dropout > 0.0).then_some((dropout, &mut drng)));
        (n.loss(batch, &cache).total, cache)
    };
    let (_, cache) = run(net);
    let grad = net.backward(batch, &cache);
    let picked: Vec<usize> = if coords >= pool.len() {
        pool.to_vec()
    } else {
        sample(rng, pool.len(), coords).into_iter().map(|i| pool[i]).collect()
    };
    let mut probe = net.clone();
    let mut out = GradientCheck { max_rel_error: 0.0, worst: 0, checked: picked.len() };
    for &i in &picked {
        let x = probe.params[i];
        probe.params[i] = x + eps;
        let up = run(&probe).0;
        probe.params[i] = x - eps;
        let down = run(&probe).0;
        probe.params[i] = x;
        let fd = (up - down) / (2.0 * eps);
        let e = rel_error(grad[i], fd);
        if e > out.max_rel_error {
            out.max_rel_error = e;
            out.worst = i;
        }
    }
    out
}
