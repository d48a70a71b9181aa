//! Central finite-difference gradient checking against analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::tensor::ParamStore;

/// Noise floor for the relative-error denominator: keeps roundoff on
/// near-zero gradient entries from dominating the check.
const REL_DENOM_FLOOR: f64 = 1e-3;

/// Zero the gradients and run one backward pass.
pub fn loss_and_grads<F: FnOnce(&mut ParamStore)>(store: &mut ParamStore, backward: F) {
    store.zero_grads();
    backward(store);
}

/// Max relative error between stored analytic gradients and central finite
/// differences over every entry of every parameter.
pub fn max_param_rel_error<F: Fn(&ParamStore) -> f64>(
    store: &mut ParamStore,
    loss: F,
    h: f64,
) -> f64 {
    let entries: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(name, t)| (0..t.numel()).map(move |i| (name.to_string(), i)))
        .collect();
    check_entries(store, &entries, loss, h)
}

/// Like [`max_param_rel_error`] but checking at most `per_param` randomly
/// chosen entries of each parameter. Used where a full sweep would be slow.
pub fn max_param_rel_error_sampled<F: Fn(&ParamStore) -> f64, R: Rng>(
    store: &mut ParamStore,
    loss: F,
    h: f64,
    per_param: usize,
    rng: &mut R,
) -> f64 {
    let mut entries: Vec<(String, usize)> = Vec::new();
    let names: Vec<(String, usize)> =
        store.iter().map(|(n, t)| (n.to_string(), t.numel())).collect();
    for (name, numel) in names {
        let mut idx: Vec<usize> = (0..numel).collect();
        idx.shuffle(rng);
        idx.truncate(per_param);
        entries.extend(idx.into_iter().map(|i| (name.clone(), i)));
    }
    check_entries(store, &entries, loss, h)
}

fn check_entries<F: Fn(&ParamStore) -> f64>(
    store: &mut ParamStore,
    entries: &[(String, usize)],
    loss: F,
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (name, i) in entries {
        let analytic = store.tensor(name).unwrap().grad.as_ref().expect("run backward first")[*i];
        let original = store.tensor(name).unwrap().values[*i];

        store.tensor_mut(name).unwrap().values[*i] = original + h;
        let plus = loss(store);
        store.tensor_mut(name).unwrap().values[*i] = original - h;
        let minus = loss(store);
        store.tensor_mut(name).unwrap().values[*i] = original;

        let fd = (plus - minus) / (2.0 * h);
        let denom = analytic.abs().max(fd.abs()).max(REL_DENOM_FLOOR);
        worst = worst.max((fd - analytic).abs() / denom);
    }
    worst
}
