//! Random small MLP instances and a central-difference gradient check.

use gradkit::model::{Activation, ModelParams, ModelSpec};
use gradkit::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-6;
/// Keeps pre-activations this far from the ReLU kink so that a ±h
/// perturbation cannot cross it.
pub const KINK_MARGIN: f64 = 1e-3;

pub struct Instance {
    pub params: ModelParams,
    pub batch: Tensor,
    pub labels: Vec<usize>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, activation: Activation) -> Instance {
    let depth = rng.gen_range(1..=2);
    let mut layers = vec![rng.gen_range(1..=6)];
    for _ in 0..depth {
        layers.push(rng.gen_range(2..=7));
    }
    let classes = rng.gen_range(2..=5);
    layers.push(classes);
    let spec = ModelSpec::new(layers.clone(), activation, rng.gen()).unwrap();
    let mut params = spec.init().unwrap();
    // non-zero biases so their gradients are exercised away from init
    for t in params.tensors.iter_mut().skip(1).step_by(2) {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let n = rng.gen_range(1..=6);
    let batch = Tensor::new(
        (0..n * layers[0])
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        vec![n, layers[0]],
    )
    .unwrap();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    Instance {
        params,
        batch,
        labels,
    }
}

/// Smallest |pre-activation| over the hidden layers, computed by hand.
pub fn kink_distance(inst: &Instance) -> f64 {
    let p = &inst.params;
    let n = inst.batch.shape()[0];
    let mut acts: Vec<Vec<f64>> = (0..n).map(|i| inst.batch.row(i).to_vec()).collect();
    let mut closest = f64::INFINITY;
    for l in 0..p.layer_count() - 1 {
        let (w, b) = (&p.tensors[2 * l], &p.tensors[2 * l + 1]);
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        for a in acts.iter_mut() {
            let z: Vec<f64> = (0..out)
                .map(|o| b.data()[o] + (0..inp).map(|k| w.data()[o * inp + k] * a[k]).sum::<f64>())
                .collect();
            closest = z.iter().fold(closest, |c, v| c.min(v.abs()));
            *a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    closest
}

fn loss(params: &ModelParams, inst: &Instance) -> f64 {
    params.loss_and_grads(&inst.batch, &inst.labels).unwrap().0
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        // both vanish: compare absolutely
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn check(inst: &Instance) -> f64 {
    let (_, grads) = inst
        .params
        .loss_and_grads(&inst.batch, &inst.labels)
        .unwrap();
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let mut plus = inst.params.clone();
            plus.tensors[ti].data_mut()[j] += H;
            let mut minus = inst.params.clone();
            minus.tensors[ti].data_mut()[j] -= H;
            let numeric = (loss(&plus, inst) - loss(&minus, inst)) / (2.0 * H);
            worst = worst.max(relative_error(g.data()[j], numeric));
        }
    }
    worst
}

/// Draws instances until `count` usable ones have been checked; returns
/// the worst relative error.
pub fn check_many(rng: &mut ChaCha8Rng, activation: Activation, count: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < count {
        let inst = random_instance(rng, activation);
        if activation == Activation::Relu && kink_distance(&inst) < KINK_MARGIN {
            continue;
        }
        worst = worst.max(check(&inst));
        checked += 1;
    }
    worst
}
