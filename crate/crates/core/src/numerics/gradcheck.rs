use super::{Graph, NodeId, NumericsError, ParamStore};

/// Outcome of a central-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub elements_checked: usize,
}

/// Compares analytic gradients with `(L(θ+ε) − L(θ−ε)) / 2ε` for every
/// parameter element. `build` must construct the scalar loss on the given
/// graph deterministically (any dropout or sampling mask fixed by the
/// caller). The relative error uses `max(|analytic|, |numeric|, 1e-8)` as
/// its denominator. `params` is never modified.
pub fn finite_diff_check<F, E>(params: &ParamStore, epsilon: f64, build: F) -> Result<GradCheckReport, E>
where
    F: for<'g> Fn(&mut Graph<'g>) -> Result<NodeId, E>,
    E: From<NumericsError>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(NumericsError::Epsilon(epsilon).into());
    }
    let grads = {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let eval = |ps: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new(ps);
        let loss = build(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        elements_checked: 0,
    };
    for id in params.ids() {
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + epsilon;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - epsilon;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads.get(id).data()[j];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.elements_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = j;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::{init_rng, Dense};
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_is_exact_to_roundoff() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", Tensor::row(&[0.7, -1.3, 2.1]));
        let report = finite_diff_check::<_, NumericsError>(&ps, 1e-4, |g| {
            let wn = g.param(w);
            let c = g.constant(Tensor::row(&[1.0, 2.0, 3.0]));
            let d = g.sub(wn, c)?;
            let sq = g.hadamard(d, d)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
        assert_eq!(report.elements_checked, 3);
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        let ps = ParamStore::new();
        let r = finite_diff_check::<_, NumericsError>(&ps, 0.1, |g| Ok(g.constant(Tensor::scalar(0.0))));
        assert!(matches!(r, Err(NumericsError::Epsilon(_))));
    }

    #[test]
    fn three_layer_net_passes() {
        let mut rng = init_rng(7);
        let mut ps = ParamStore::new();
        let l1 = Dense::new(&mut ps, "l1", 4, 6, &mut rng);
        let l2 = Dense::new(&mut ps, "l2", 6, 5, &mut rng);
        let l3 = Dense::new(&mut ps, "l3", 5, 2, &mut rng);
        let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let report = finite_diff_check::<_, NumericsError>(&ps, 1e-4, |g| {
            let xi = g.constant(x.clone());
            let h = l1.forward(g, xi)?;
            let h = g.tanh(h)?;
            let h = l2.forward(g, h)?;
            let h = g.sigmoid(h)?;
            let y = l3.forward(g, h)?;
            let y = g.hadamard(y, y)?;
            g.mean(y)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
        assert!(report.elements_checked > 60);
    }
}
