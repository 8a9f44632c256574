//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encode::{reference_loss, stream_loss, Encoded};
use super::network::{backward, forward, LogitGrads};
use super::params::Parameters;
use super::ModelError;
use crate::interleaver::InterleaveConfig;

/// Denominator floor so that two vanishing gradients compare as equal.
pub const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Index and tensor name of the worst coordinate.
    pub worst: Option<(usize, String)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares `analytic` against central differences of `f` at `coords`.
pub fn check_coordinates(
    mut f: impl FnMut(&[f64]) -> Result<f64, ModelError>,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    epsilon: f64,
) -> Result<(f64, Option<usize>, f64, f64), ModelError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ModelError::InvalidEpsilon(epsilon));
    }
    let mut x = x.to_vec();
    let mut worst = (0.0, None, 0.0, 0.0);
    for &i in coords {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = f(&x)?;
        x[i] = orig - epsilon;
        let minus = f(&x)?;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if worst.1.is_none() || err > worst.0 {
            worst = (err, Some(i), analytic[i], numeric);
        }
    }
    Ok(worst)
}

/// Summed stream loss over a batch, computed through `hybrid_nll`.
fn reference_total(params: &Parameters, batch: &[Encoded], cfg: InterleaveConfig) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for enc in batch {
        let fp = forward(params, &enc.inputs)?;
        total += reference_loss(&fp, enc, &params.config.vocab, cfg)?;
    }
    Ok(total)
}

/// Analytic gradient of the summed batch loss.
pub fn analytic_gradient(params: &Parameters, batch: &[Encoded]) -> Result<Vec<f64>, ModelError> {
    let mut grad = vec![0.0; params.len()];
    for enc in batch {
        let fp = forward(params, &enc.inputs)?;
        let mut dl = LogitGrads::zeros_like(&fp);
        stream_loss(&fp, enc, &params.config.vocab, Some((&mut dl, 1.0)));
        backward(params, &fp, &dl, &mut grad);
    }
    Ok(grad)
}

/// Picks about `count` coordinates spread evenly over all tensors, then
/// compares backprop against central differences of the loss computed by
/// `hybrid_nll`. Returns the worst relative error.
pub fn grad_check(
    params: &Parameters,
    batch: &[Encoded],
    cfg: InterleaveConfig,
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ModelError::InvalidEpsilon(epsilon));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = &params.layout.params;
    let per = count.div_ceil(tensors.len());
    let mut coords = Vec::new();
    for info in tensors {
        let k = per.min(info.len());
        coords.extend(sample(&mut rng, info.len(), k).into_iter().map(|i| info.offset + i));
    }
    let analytic = analytic_gradient(params, batch)?;
    let mut probe = params.clone();
    let (max_rel_error, worst, a, n) = check_coordinates(
        |x| {
            probe.data.copy_from_slice(x);
            reference_total(&probe, batch, cfg)
        },
        &params.data,
        &analytic,
        &coords,
        epsilon,
    )?;
    Ok(GradCheckReport {
        max_rel_error,
        coordinates: coords.len(),
        worst: worst.map(|i| (i, tensors.iter().find(|p| p.range().contains(&i)).unwrap().name.clone())),
        worst_analytic: a,
        worst_numeric: n,
    })
}
