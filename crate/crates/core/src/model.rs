//! Black-box predictor contract.

use crate::error::{Error, Result};

/// A binary classifier queried for positive-class probabilities.
///
/// Implementations must be deterministic for fixed state and must not mutate
/// themselves during evaluation; metric and explainer code may query one
/// model from several threads.
pub trait Predictor: Send + Sync {
    fn n_features(&self) -> usize;

    fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>>;

    fn predict_one(&self, row: &[f64]) -> Result<f64> {
        let out = self.predict_proba(&[row.to_vec()])?;
        out.into_iter()
            .next()
            .ok_or_else(|| Error::Predictor("predictor returned no output".into()))
    }
}

/// Wraps a plain function as a [`Predictor`].
pub struct FnPredictor<F> {
    d: usize,
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(d: usize, f: F) -> Self {
        Self { d, f }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn n_features(&self) -> usize {
        self.d
    }

    fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.d {
                    return Err(Error::Predictor(format!(
                        "row has {} features, model expects {}",
                        r.len(),
                        self.d
                    )));
                }
                Ok((self.f)(r))
            })
            .collect()
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }

    fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        (**self).predict_proba(rows)
    }
}

impl<P: Predictor + ?Sized> Predictor for std::sync::Arc<P> {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }

    fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        (**self).predict_proba(rows)
    }
}
