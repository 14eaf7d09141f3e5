//! Central finite-difference checks of analytic gradients.

use crate::error::NnError;
use crate::graph::{Graph, NodeId};
use crate::params::ParameterStore;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic| + |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    pub checked: usize,
}

/// Compares backprop against `(f(θ+ε) - f(θ-ε)) / 2ε` for every trainable element.
pub fn check_gradients<F, E>(store: &ParameterStore<f64>, eps: f64, build: F) -> std::result::Result<GradCheck, E>
where
    F: Fn(&mut Graph<'_, f64>) -> std::result::Result<NodeId, E>,
    E: From<NnError>,
{
    const FLOOR: f64 = 1e-6;
    let eval = |s: &ParameterStore<f64>| -> std::result::Result<f64, E> {
        let mut g = Graph::new(s);
        let loss = build(&mut g)?;
        Ok(g.value(loss).data()[0])
    };
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    // Elements whose gradient is many orders below the largest one are compared
    // against a floor that grows with it; there the difference is pure roundoff.
    let largest = analytic.iter().flatten().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = FLOOR * largest.max(1.0);
    let mut probe = store.clone();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = store.value(id).data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = format!("{}[{i}]", store.get(id).name);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
