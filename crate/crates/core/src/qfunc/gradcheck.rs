use rand::seq::index;

use super::QModel;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient returned by `loss` against central
/// differences with step `1e-5·max(1, |θ_i|)`.
///
/// Half of the sampled coordinates are those with the largest analytic
/// gradient magnitude (sparse tabular gradients would otherwise be checked
/// mostly on zeros), the rest a seeded random draw.
pub fn finite_difference_check<F>(model: &QModel, loss: F, sample_count: usize) -> GradReport
where
    F: Fn(&QModel) -> (f64, Vec<f64>),
{
    let n = model.param_count();
    let sample_count = sample_count.min(n);
    let (_, analytic) = loss(model);
    assert_eq!(analytic.len(), n, "loss returned a gradient of the wrong length");

    let mut by_magnitude: Vec<usize> = (0..n).collect();
    by_magnitude.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()));
    let mut coords: Vec<usize> = by_magnitude[..sample_count / 2].to_vec();
    let mut rng = rng::seeded(0x5eed_0ffd);
    for i in index::sample(&mut rng, n, n.min(sample_count * 2)) {
        if coords.len() == sample_count {
            break;
        }
        if !coords.contains(&i) {
            coords.push(i);
        }
    }

    let mut probe = model.clone();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
    };
    for &i in &coords {
        let p = model.params()[i];
        let h = 1e-5 * p.abs().max(1.0);
        probe.params_mut()[i] = p + h;
        let (up, _) = loss(&probe);
        probe.params_mut()[i] = p - h;
        let (down, _) = loss(&probe);
        probe.params_mut()[i] = p;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if rel > report.max_rel_error {
            report = GradReport {
                max_rel_error: rel,
                worst_index: i,
            };
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qfunc::Grid;
    use crate::types::State;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut m = QModel::dense(&[8], 3, 0.5, 4);
        m.params_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, p)| *p += i as f64 * 0.01);
        let loss = |m: &QModel| {
            let v = m.params().iter().map(|p| p * p).sum();
            (v, m.params().iter().map(|p| 2.0 * p).collect())
        };
        let r = finite_difference_check(&m, loss, 30);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let m = QModel::dense(&[4], 2, 0.5, 1);
        let loss = |m: &QModel| {
            let v = m.params().iter().map(|p| p * p).sum();
            (v, m.params().iter().map(|p| 3.0 * p).collect())
        };
        assert!(finite_difference_check(&m, loss, 10).max_rel_error > 0.1);
    }

    #[test]
    fn dense_backprop_matches_differences() {
        let m = QModel::dense(&[7, 5], 4, 0.5, 9);
        let states = [State::new(0.1, -0.3, false), State::new(-0.45, 0.2, true)];
        let coef = [0.3, -1.2, 0.7, 2.0];
        let loss = |m: &QModel| {
            let mut value = 0.0;
            let mut grad = vec![0.0; m.param_count()];
            for s in &states {
                let q = m.q_values(s);
                value += q.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
                m.accumulate_grad(s, &coef, &mut grad);
            }
            (value, grad)
        };
        let r = finite_difference_check(&m, loss, m.param_count());
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn tabular_sparse_gradient() {
        let m = QModel::tabular(Grid::new(4, 0.5), 3);
        let s = State::new(0.2, 0.2, false);
        let loss = |m: &QModel| {
            let q = m.q_values(&s);
            let v = q[1] * 2.0 + q[2];
            let mut g = vec![0.0; m.param_count()];
            m.accumulate_grad(&s, &[0.0, 2.0, 1.0], &mut g);
            (v, g)
        };
        assert!(finite_difference_check(&m, loss, 20).max_rel_error < 1e-6);
    }
}
