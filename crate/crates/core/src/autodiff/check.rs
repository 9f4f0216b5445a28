use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Gradients, ParamId, ParamStore, Tape, Var};

/// Settings for [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct FiniteDiffOptions {
    /// Central-difference steps, largest first. A coordinate falls back to
    /// the next step when the second difference suggests the current one
    /// straddles a kink (ReLU, clamp).
    pub steps: Vec<f64>,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for FiniteDiffOptions {
    fn default() -> Self {
        Self {
            steps: vec![1e-5],
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<(ParamId, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients of `loss` against central differences.
///
/// `loss` must build a scalar on the tape it is given and must be a pure
/// function of the parameter values (freeze any noise outside the closure).
/// The error for a coordinate is `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn finite_diff_check<F>(
    store: &ParamStore,
    loss: F,
    opts: &FiniteDiffOptions,
) -> Result<FiniteDiffReport, AutodiffError>
where
    F: Fn(&mut Tape) -> Result<Var, AutodiffError>,
{
    let analytic: Gradients = {
        let mut tape = Tape::new(store);
        let out = loss(&mut tape)?;
        tape.backward(out)?
    };
    let eval = |s: &ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new(s);
        let out = loss(&mut tape)?;
        Ok(tape.value(out).item())
    };

    let centre = eval(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coords_checked: 0,
    };
    for id in store.ids() {
        let len = store.get(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for c in coords {
            let orig = store.get(id).as_slice()[c];
            let mut probes = Vec::with_capacity(opts.steps.len());
            for &h in &opts.steps {
                probe.get_mut(id).as_mut_slice()[c] = orig + h;
                let plus = eval(&probe)?;
                probe.get_mut(id).as_mut_slice()[c] = orig - h;
                let minus = eval(&probe)?;
                probe.get_mut(id).as_mut_slice()[c] = orig;
                let curvature = (plus - 2.0 * centre + minus).abs() / (h * h);
                probes.push(((plus - minus) / (2.0 * h), curvature));
            }
            // A kink inside a wider interval shows up as a curvature estimate
            // far above what the narrower steps see.
            let pick = (0..probes.len())
                .find(|&k| {
                    let narrower = probes[k + 1..].iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                    probes[k].1 <= 10.0 * narrower + 1e-6
                })
                .unwrap_or(0);
            let numeric = probes.get(pick).map_or(0.0, |p| p.0);
            let exact = analytic.param(id).map_or(0.0, |g| g.as_slice()[c]);
            let err = (exact - numeric).abs() / (numeric.abs() + 1e-8);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((id, c));
                report.worst_values = (exact, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::scalar(3.0));
        let report = finite_diff_check(
            &store,
            |t| {
                let v = t.param(w);
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &FiniteDiffOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn second_step_avoids_a_nearby_kink() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::scalar(3e-6));
        let relu_sum = |t: &mut Tape| {
            let w = t.param(ParamId(0));
            let r = t.relu(w);
            Ok(t.sum(r))
        };
        let single = finite_diff_check(&store, relu_sum, &FiniteDiffOptions::default()).unwrap();
        assert!((single.worst_values.1 - 0.65).abs() < 1e-9, "{single:?}");
        let opts = FiniteDiffOptions {
            steps: vec![1e-5, 1e-7],
            ..FiniteDiffOptions::default()
        };
        let multi = finite_diff_check(&store, relu_sum, &opts).unwrap();
        assert!(multi.max_rel_error < 1e-6, "{multi:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::from_rows(&[[1.0, 2.0]]));
        let report = finite_diff_check(
            &store,
            |t| {
                let c = t.constant(Matrix::scalar(4.2));
                Ok(t.sum(c))
            },
            &FiniteDiffOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6);
        assert_eq!(report.coords_checked, 2);
    }
}
