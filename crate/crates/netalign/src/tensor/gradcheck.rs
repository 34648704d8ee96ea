//! Central finite differences over [`ParamStore`] tensors.
//!
//! Test support: the loss closure must recompute the value from scratch on
//! every call (plain kernels, no tape), so the numeric gradients form an
//! oracle that is independent of the tape's backward pass.

use crate::tensor::params::{ParamId, ParamStore};

/// Numeric gradient of `f` w.r.t. every component of each target tensor,
/// via (f(p + h) - f(p - h)) / 2h. The store is restored afterwards.
pub fn finite_difference<F>(
    store: &mut ParamStore,
    targets: &[ParamId],
    mut f: F,
    h: f64,
) -> Vec<Vec<f64>>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut out = Vec::with_capacity(targets.len());
    for &id in targets {
        let len = store.get(id).len();
        let mut grad = vec![0.0; len];
        for k in 0..len {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let fp = f(store);
            store.get_mut(id).data_mut()[k] = orig - h;
            let fm = f(store);
            store.get_mut(id).data_mut()[k] = orig;
            grad[k] = (fp - fm) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Worst relative error between analytic and numeric gradients.
/// Components where both magnitudes fall below `floor` count as exact,
/// keeping finite-difference noise out of the comparison.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale < floor {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn two_layer_net_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new(11);
        let w1 = store
            .register("w1", Tensor::uniform_init(3, 2, &mut rng))
            .unwrap();
        let b1 = store
            .register("b1", Tensor::uniform_init(3, 1, &mut rng))
            .unwrap();
        let w2 = store
            .register("w2", Tensor::uniform_init(2, 3, &mut rng))
            .unwrap();
        let b2 = store
            .register("b2", Tensor::uniform_init(2, 1, &mut rng))
            .unwrap();
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = [0.4, -0.9];

        let loss_of = |s: &ParamStore| {
            let y = crate::tensor::kernels::mlp2(
                s.get(w1).data(),
                s.get(b1).data(),
                s.get(w2).data(),
                s.get(b2).data(),
                3,
                2,
                2,
                &x,
            );
            y.iter().zip(&target).map(|(a, t)| (a - t) * (a - t)).sum()
        };

        let mut tape = Tape::new(&store);
        let xn = tape.constant(x.clone());
        let y = tape.mlp2(w1, b1, w2, b2, xn);
        // (y - t) . (y - t), with the negated target entering as a constant.
        let neg_t = tape.constant(target.iter().map(|t| -t).collect());
        let diff = tape.add(y, neg_t);
        let loss = tape.dot(diff, diff);
        let grads = tape.backward(loss);

        let targets = [w1, b1, w2, b2];
        let numeric = finite_difference(&mut store, &targets, loss_of, 1e-5);
        for (id, num) in targets.iter().zip(&numeric) {
            let ana = grads.get(*id).expect("gradient present");
            let err = max_rel_err(ana, num, 1e-6);
            assert!(err < 1e-4, "param {:?} rel err {}", id, err);
        }
    }
}
