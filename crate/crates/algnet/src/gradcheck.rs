//! Finite-difference verification of analytic gradients.
//!
//! The harness perturbs every component of every parameter in a store by
//! `±eps`, recomputes the loss, and compares the central difference against
//! the gradient the tape produced. Results are aggregated per parameter
//! group so a failure points at the responsible block of the model.
//!
//! Central differences carry cancellation noise of order
//! `machine-eps · |loss| / (2 eps)`; derivatives below that floor cannot be
//! resolved numerically no matter how correct they are. The comparison
//! therefore floors its denominator at `noise / tol` — agreement within the
//! noise floor passes, while any error a central difference can actually
//! resolve still fails. Real defects (a dropped term, a wrong sign, a missing
//! backward rule) sit orders of magnitude above the floor.

use std::fmt;

use crate::optim::GradMap;
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub group: String,
    pub max_rel_err: f64,
    pub worst_param: String,
    /// flat index of the worst component within that parameter
    pub worst_component: usize,
    pub components_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    /// denominator floor used for the relative errors (see module docs)
    pub scale: f64,
    pub groups: Vec<GroupResult>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < self.tol)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check (eps = {:.0e}, tol = {:.0e}, denominator floor = {:.1e})",
            self.eps, self.tol, self.scale
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<20} max rel err {:.3e}  ({} components, worst {}[{}])  {}",
                g.group,
                g.max_rel_err,
                g.components_checked,
                g.worst_param,
                g.worst_component,
                if g.max_rel_err < self.tol { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Relative error between an analytic and a numeric derivative, with the
/// denominator floored at `scale` so that derivatives smaller than what
/// central differences can resolve are judged against the noise floor
/// instead of their own magnitude.
pub fn rel_err(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(scale).max(1e-300);
    (analytic - numeric).abs() / denom
}

/// Magnitude of the cancellation noise a central difference of this loss
/// carries: a few ulps of the loss value, amplified by the `1 / (2 eps)`
/// division. The factor of 10 covers roundoff accumulation across the graph
/// (measured at 1–2 ulps for this model; 10 leaves headroom without masking
/// real defects, which sit orders of magnitude higher).
pub fn fd_noise(loss: f64, eps: f64) -> f64 {
    10.0 * f64::EPSILON * loss.abs().max(1.0) / (2.0 * eps)
}

/// Checks the gradients of `f` for every parameter in `store`.
///
/// `f` evaluates the model loss at the store's current values; when its second
/// argument is true it must also return gradients for every parameter. It must
/// be deterministic: any sampling inside has to be frozen across calls.
/// `group_of` maps a parameter name to a reporting group.
pub fn check_gradients(
    store: &mut ParamStore,
    eps: f64,
    tol: f64,
    group_of: impl Fn(&str) -> String,
    f: impl Fn(&ParamStore, bool) -> (f64, Option<GradMap>),
) -> GradCheckReport {
    let (f0, grads) = f(store, true);
    let grads = grads.expect("gradient closure returned no gradients");
    let scale = fd_noise(f0, eps) / tol;

    let names: Vec<String> = store.names().map(String::from).collect();
    let mut groups: Vec<GroupResult> = Vec::new();
    let mut group_index: std::collections::HashMap<String, usize> =
        std::collections::HashMap::new();

    for name in &names {
        let group = group_of(name);
        let gi = *group_index.entry(group.clone()).or_insert_with(|| {
            groups.push(GroupResult {
                group,
                max_rel_err: 0.0,
                worst_param: String::new(),
                worst_component: 0,
                components_checked: 0,
            });
            groups.len() - 1
        });
        let analytic = grads
            .get(name)
            .unwrap_or_else(|| panic!("no analytic gradient for {name}"))
            .clone();
        let n = store.get(name).numel();
        assert_eq!(analytic.len(), n, "gradient length mismatch for {name}");
        for k in 0..n {
            let original = store.get(name).data[k];
            store.data_mut(name)[k] = original + eps;
            let (up, _) = f(store, false);
            store.data_mut(name)[k] = original - eps;
            let (down, _) = f(store, false);
            store.data_mut(name)[k] = original;
            let numeric = (up - down) / (2.0 * eps);
            let e = rel_err(analytic[k], numeric, scale);
            let gr = &mut groups[gi];
            gr.components_checked += 1;
            if e > gr.max_rel_err {
                gr.max_rel_err = e;
                gr.worst_param = name.clone();
                gr.worst_component = k;
            }
        }
    }

    GradCheckReport {
        eps,
        tol,
        scale,
        groups,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use std::rc::Rc;

    fn quadratic_loss(store: &ParamStore, want_grads: bool) -> (f64, Option<GradMap>) {
        // loss = sum((w*x - y)^2) over a couple of fixed points
        let mut tape = Tape::new();
        let w = tape.param(&[2], Rc::clone(&store.get("w").data));
        let b = tape.param(&[2], Rc::clone(&store.get("b").data));
        let x = tape.constant(&[2], vec![0.7, -1.3]);
        let y = tape.constant(&[2], vec![0.2, 0.9]);
        let wx = tape.mul(w, x);
        let pred = tape.add(wx, b);
        let err = tape.sub(pred, y);
        let sq = tape.mul(err, err);
        let loss = tape.sum_all(sq);
        let value = tape.scalar_value(loss);
        if !want_grads {
            return (value, None);
        }
        tape.backward(loss);
        let mut grads = GradMap::new();
        grads.insert("w".into(), tape.grad(w).unwrap().to_vec());
        grads.insert("b".into(), tape.grad(b).unwrap().to_vec());
        (value, Some(grads))
    }

    #[test]
    fn correct_gradients_pass() {
        let mut store = ParamStore::new();
        store.insert("w", vec![2], vec![0.3, -0.4]);
        store.insert("b", vec![2], vec![0.1, 0.0]);
        let report = check_gradients(&mut store, 1e-5, 1e-4, |n| n.to_string(), quadratic_loss);
        assert!(report.passed(), "{report}");
        assert_eq!(report.groups.len(), 2);
        assert_eq!(report.groups.iter().map(|g| g.components_checked).sum::<usize>(), 4);
    }

    #[test]
    fn broken_gradients_fail() {
        let mut store = ParamStore::new();
        store.insert("w", vec![2], vec![0.3, -0.4]);
        store.insert("b", vec![2], vec![0.1, 0.0]);
        let report = check_gradients(&mut store, 1e-5, 1e-4, |_| "all".into(), |s, want| {
            let (v, g) = quadratic_loss(s, want);
            let g = g.map(|mut g| {
                g.get_mut("w").unwrap()[0] += 0.5; // sabotage
                g
            });
            (v, g)
        });
        assert!(!report.passed());
        assert!(report.max_rel_err() > 1e-2);
    }

    #[test]
    fn perturbation_is_restored() {
        let mut store = ParamStore::new();
        store.insert("w", vec![2], vec![0.3, -0.4]);
        store.insert("b", vec![2], vec![0.1, 0.0]);
        check_gradients(&mut store, 1e-5, 1e-4, |n| n.to_string(), quadratic_loss);
        assert_eq!(store.get("w").data.as_slice(), &[0.3, -0.4]);
        assert_eq!(store.get("b").data.as_slice(), &[0.1, 0.0]);
    }

    // loss = 1e4 + 1e-6 (w - 0.3)^2: the derivative near w = 0.5 is ~4e-7,
    // far below what a central difference of a value around 1e4 can resolve
    fn offset_tiny_slope(store: &ParamStore, want_grads: bool) -> (f64, Option<GradMap>) {
        let w = store.get("w").data[0];
        let value = 1e4 + 1e-6 * (w - 0.3) * (w - 0.3);
        let grads = want_grads.then(|| {
            let mut g = GradMap::new();
            g.insert("w".into(), vec![2e-6 * (w - 0.3)]);
            g
        });
        (value, grads)
    }

    #[test]
    fn derivatives_below_fd_resolution_pass_on_the_noise_floor() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1], vec![0.5]);
        let report =
            check_gradients(&mut store, 1e-5, 1e-4, |n| n.to_string(), offset_tiny_slope);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn errors_above_fd_resolution_still_fail() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1], vec![0.5]);
        let report = check_gradients(&mut store, 1e-5, 1e-4, |n| n.to_string(), |s, want| {
            let (v, g) = offset_tiny_slope(s, want);
            // claim a gradient well above the noise floor of this loss
            let g = g.map(|mut g| {
                g.get_mut("w").unwrap()[0] = 0.5;
                g
            });
            (v, g)
        });
        assert!(!report.passed(), "{report}");
    }
}
