use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per parameter tensor (all of them if the tensor is smaller).
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, samples_per_param: 16, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub per_param: Vec<ParamCheck>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences of `loss` at
/// randomly sampled coordinates of every parameter.
pub fn grad_check<F>(
    names: &[String],
    params: &[Tensor],
    analytic: &[Tensor],
    mut loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[Tensor]) -> Result<f64, NumericsError>,
{
    if names.len() != params.len() || analytic.len() != params.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "grad_check",
            detail: format!("{} names, {} params, {} gradients", names.len(), params.len(), analytic.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut total = 0;
    let mut worst = 0.0f64;
    for (p, name) in names.iter().enumerate() {
        if analytic[p].shape() != params[p].shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "grad_check",
                detail: format!("gradient of {name} has shape {:?}", analytic[p].shape()),
            });
        }
        let n = params[p].len();
        let k = cfg.samples_per_param.min(n);
        let mut coords: Vec<usize> = sample(&mut rng, n, k).into_vec();
        coords.sort_unstable();
        let mut param_worst = 0.0f64;
        for &c in &coords {
            let orig = work[p].data()[c];
            work[p].data_mut()[c] = orig + cfg.step;
            let plus = loss(&work)?;
            work[p].data_mut()[c] = orig - cfg.step;
            let minus = loss(&work)?;
            work[p].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[p].data()[c];
            if !(plus.is_finite() && minus.is_finite() && a.is_finite()) {
                return Err(NumericsError::NonFinite { context: format!("parameter {name}[{c}]") });
            }
            param_worst = param_worst.max(relative_error(a, numeric));
        }
        total += coords.len();
        worst = worst.max(param_worst);
        per_param.push(ParamCheck { name: name.clone(), coordinates: coords.len(), max_rel_error: param_worst });
    }
    Ok(GradCheckReport { max_rel_error: worst, coordinates: total, per_param })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tape};

    #[test]
    fn square_at_three() {
        let x = Tensor::from_vec(vec![3.0]);
        let mut tape = Tape::new();
        let v = tape.param(&x);
        let y = tape.mul(&v, &v).unwrap();
        let g = tape.backward(y).unwrap().take(v).unwrap();
        assert_eq!(g.data(), &[6.0]);
        let report = grad_check(
            &["x".to_string()],
            std::slice::from_ref(&x),
            &[g],
            |p| Ok(p[0].data()[0].powi(2)),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn non_finite_names_the_parameter() {
        let x = Tensor::from_vec(vec![0.0]);
        let err = grad_check(
            &["w".to_string()],
            std::slice::from_ref(&x),
            &[Tensor::from_vec(vec![1.0])],
            |_| Ok(f64::NAN),
            &GradCheckConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("w[0]"));
    }
}
