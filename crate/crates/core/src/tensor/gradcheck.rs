use rand::seq::index::sample;
use rand::Rng;

use super::{ParamSet, Tensor};

/// Worst disagreement between reverse-mode and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (parameter name, flat index, analytic, numeric) at the worst point.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// |a - n| / max(|a|, |n|, floor).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients against central differences of `loss` with
/// step `h`, on up to `per_tensor` random coordinates of every tensor.
pub fn check_gradients<R: Rng>(
    params: &ParamSet,
    analytic: &[Tensor],
    loss: impl Fn(&ParamSet) -> f64,
    h: f64,
    floor: f64,
    per_tensor: usize,
    rng: &mut R,
) -> GradCheck {
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for (slot, name) in names.iter().enumerate() {
        let n = params.tensor(slot).numel();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(rng, n, per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = probe.tensor(slot).data()[i];
            probe.tensor_mut(slot).data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.tensor_mut(slot).data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.tensor_mut(slot).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[slot].data()[i];
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    report
}
