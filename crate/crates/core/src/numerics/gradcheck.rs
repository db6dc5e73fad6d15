use super::graph::{Graph, Var};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst mismatch found for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Magnitudes below this are compared absolutely: a central difference with
/// step 1e-5 carries roughly 1e-11 of rounding noise.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn eval<F>(f: &F, store: &ParamStore, stops: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::inference(store).with_frozen_stops(stops.to_vec());
    let loss = f(&mut g)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite("loss during finite-difference probe".into()));
    }
    Ok(v)
}

/// Analytic gradients of `f` with respect to every parameter.
pub fn analytic_gradients<F>(f: &F, store: &ParamStore) -> Result<(f64, Gradients)>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut grads = Gradients::zeros_like(store);
    let mut g = Graph::with_params(store);
    let loss = f(&mut g)?;
    g.backward_into(loss, &mut grads)?;
    Ok((g.scalar(loss), grads))
}

/// Compares analytic gradients against central differences for every entry of
/// every parameter in `params`. Stop-gradient nodes hold their unperturbed
/// values during the probes.
pub fn finite_difference_check<F>(f: F, params: &ParamStore, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let (_, grads) = analytic_gradients(&f, params)?;
    let ids: Vec<ParamId> = params.ids().collect();
    check_selected(&f, params, &grads, &ids, step)
}

fn check_selected<F>(
    f: &F,
    params: &ParamStore,
    grads: &Gradients,
    ids: &[ParamId],
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let stops = {
        let mut g = Graph::inference(params);
        f(&mut g)?;
        g.stopped_values()
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        params: Vec::new(),
    };
    for &id in ids {
        let analytic = grads.get(id);
        if !analytic.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", params.name(id))));
        }
        let mut worst = 0.0f64;
        for k in 0..analytic.len() {
            let orig = probe.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + step;
            let plus = eval(f, &probe, &stops)?;
            probe.get_mut(id).data_mut()[k] = orig - step;
            let minus = eval(f, &probe, &stops)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        report.max_rel_err = report.max_rel_err.max(worst);
        report.params.push(ParamCheck {
            name: params.name(id).to_string(),
            max_rel_err: worst,
            max_abs_analytic: grads.max_abs(id),
        });
    }
    Ok(report)
}
