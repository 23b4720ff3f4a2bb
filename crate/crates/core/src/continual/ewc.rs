//! Elastic weight consolidation baseline.

use serde::{Deserialize, Serialize};

use crate::data::TaskView;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{forward, softmax_row, weighted_squared_example_grads, Gradients, Mlp, ParamSet};
use crate::rng::{fisher_yates_permutation, Prng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwcConfig {
    pub lambda: f64,
    pub fisher_samples: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            fisher_samples: 1000,
        }
    }
}

impl EwcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Argument(format!("EWC lambda must be >= 0, got {}", self.lambda)));
        }
        if self.fisher_samples == 0 {
            return Err(Error::Argument("EWC needs at least one Fisher sample".into()));
        }
        Ok(())
    }
}

/// Parameters and diagonal Fisher information saved at the end of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcAnchor {
    pub params: ParamSet,
    pub fisher: ParamSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EwcState {
    pub lambda: f64,
    pub anchors: Vec<EwcAnchor>,
}

impl EwcState {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            anchors: Vec::new(),
        }
    }

    /// Persistent scalars held by the anchors.
    pub fn scalar_count(&self) -> usize {
        self.anchors
            .iter()
            .map(|a| a.params.scalar_count() + a.fisher.scalar_count())
            .sum()
    }

    /// `λ/2 Σ_k Σ_i F_k,i (w_i − w*_k,i)²`
    pub fn penalty(&self, model: &Mlp) -> f64 {
        let w: Vec<f64> = model.params().values().collect();
        let mut total = 0.0;
        for a in &self.anchors {
            for ((wi, si), fi) in w.iter().zip(a.params.values()).zip(a.fisher.values()) {
                total += fi * (wi - si) * (wi - si);
            }
        }
        0.5 * self.lambda * total
    }
}

/// Diagonal Fisher information of the model's predictive distribution,
/// `E_x Σ_c p(c|x) (∂ log p(c|x) / ∂θ)²`, over `sample_count` rows of `view`
/// drawn without replacement. Uses every row (and reports it) when the view
/// is smaller than requested.
pub fn ewc_estimate_fisher(
    model: &Mlp,
    view: &TaskView,
    sample_count: usize,
    rng: &mut Prng,
) -> Result<(ParamSet, Option<String>)> {
    if sample_count == 0 {
        return Err(Error::Argument("Fisher estimate needs at least one sample".into()));
    }
    if view.is_empty() {
        return Err(Error::Data(format!("{}: no rows for the Fisher estimate", view.name())));
    }
    let mut warning = None;
    let n = if sample_count > view.len() {
        warning = Some(format!(
            "requested {sample_count} Fisher samples but {} has {} rows; using all of them",
            view.name(),
            view.len()
        ));
        view.len()
    } else {
        sample_count
    };
    let mut order = fisher_yates_permutation(rng, view.len())?;
    order.truncate(n);
    order.sort_unstable();

    let classes = model.output_dim();
    let mut fisher = ParamSet::zeros_like(model.params());
    for chunk in order.chunks(256) {
        let (x, _) = view.batch(chunk)?;
        let (out, cache) = forward(model, &x)?;
        let probs: Vec<Vec<f64>> = (0..out.rows()).map(|r| softmax_row(out.row(r))).collect();
        for c in 0..classes {
            let mut d = Vec::with_capacity(out.rows() * classes);
            let mut weights = Vec::with_capacity(out.rows());
            for p in &probs {
                d.extend(p.iter().enumerate().map(|(k, &pk)| if k == c { pk - 1.0 } else { pk }));
                weights.push(p[c]);
            }
            let d = DenseMatrix::new(out.rows(), classes, d)?;
            let part = weighted_squared_example_grads(model, &cache, &d, &weights)?;
            fisher.zip_apply(&part, |f, v, _| *f += v)?;
        }
    }
    let scale = 1.0 / n as f64;
    fisher.layers.iter_mut().for_each(|l| {
        l.weights.data_mut().iter_mut().for_each(|v| *v *= scale);
        l.bias.iter_mut().for_each(|v| *v *= scale);
    });
    fisher.ensure_finite("Fisher estimate")?;
    Ok((fisher, warning))
}

/// `grad + λ Σ_k F_k ⊙ (w − w*_k)`
pub fn ewc_penalized_gradients(grads: &Gradients, model: &Mlp, state: &EwcState) -> Result<Gradients> {
    model.params().check_congruent("ewc_penalized_gradients", grads)?;
    let mut out = grads.clone();
    for anchor in &state.anchors {
        anchor.params.check_congruent("ewc anchor", grads)?;
        let mut diff = model.params().clone();
        diff.zip_apply(&anchor.params, |w, s, _| *w -= s)?;
        diff.zip_apply(&anchor.fisher, |d, f, _| *d *= f)?;
        out.zip_apply(&diff, |g, d, _| *g += state.lambda * d)?;
    }
    out.ensure_finite("EWC gradient")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerParams, LayerSpec};

    fn scalar_model(w: f64) -> Mlp {
        Mlp::from_parts(
            vec![LayerSpec::output(1, 1)],
            ParamSet {
                layers: vec![LayerParams {
                    weights: DenseMatrix::new(1, 1, vec![w]).unwrap(),
                    bias: vec![0.0],
                }],
            },
        )
        .unwrap()
    }

    #[test]
    fn penalty_gradient_matches_hand_value() {
        let model = scalar_model(1.5);
        let anchor = EwcAnchor {
            params: scalar_model(1.0).params().clone(),
            fisher: ParamSet {
                layers: vec![LayerParams {
                    weights: DenseMatrix::new(1, 1, vec![2.0]).unwrap(),
                    bias: vec![0.5],
                }],
            },
        };
        let state = EwcState {
            lambda: 10.0,
            anchors: vec![anchor],
        };
        let grads = ParamSet::zeros_like(model.params());
        let g = ewc_penalized_gradients(&grads, &model, &state).unwrap();
        // 10 * 2 * (1.5 - 1.0)
        assert!((g.layers[0].weights.get(0, 0) - 10.0).abs() < 1e-12);
        assert_eq!(g.layers[0].bias[0], 0.0);
        assert!((state.penalty(&model) - 0.5 * 10.0 * 2.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_leaves_gradients_unchanged() {
        let model = scalar_model(0.3);
        let mut state = EwcState::new(0.0);
        state.anchors.push(EwcAnchor {
            params: scalar_model(-1.0).params().clone(),
            fisher: scalar_model(4.0).params().clone(),
        });
        let mut grads = ParamSet::zeros_like(model.params());
        grads.layers[0].weights.set(0, 0, 0.25);
        let g = ewc_penalized_gradients(&grads, &model, &state).unwrap();
        assert_eq!(g, grads);
    }

    #[test]
    fn config_validation() {
        assert!(EwcConfig::default().validate().is_ok());
        assert!(EwcConfig { lambda: -1.0, fisher_samples: 10 }.validate().is_err());
        assert!(EwcConfig { lambda: 1.0, fisher_samples: 0 }.validate().is_err());
    }
}
