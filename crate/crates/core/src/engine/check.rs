//! Central-difference verification of [`backward`](super::backward) in
//! 64-bit arithmetic.
//!
//! Derivatives are estimated with the fourth-order central stencil
//! `(-f(x+2e) + 8f(x+e) - 8f(x-e) + f(x-2e)) / 12e`. The plain two-point
//! quotient has truncation error `e^2 f'''/6`, which is larger than 1e-4
//! of the gradient for weights feeding a batch-statistics BatchNorm,
//! where the gradient is small but the curvature is not.

use alloc::string::String;
use alloc::vec::Vec;

use super::{backward, forward, EngineError, Mode};
use crate::graph::CompGraph;
use crate::grouping::GroupTable;
use crate::importance::group_grads;
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// Relative error with a floor on the denominator so that gradients that
/// are zero up to rounding do not blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

const STENCIL: [f64; 4] = [2.0, 1.0, -1.0, -2.0];

fn derivative(f: &[f64; 4], eps: f64) -> f64 {
    (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * eps)
}

/// Outcome of one probed coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// The perturbation crossed a ReLU or max-pool switch, so the
    /// difference quotient does not estimate the derivative.
    pub skipped: bool,
}

/// Inputs shared by every probe.
pub struct CheckCase<'a> {
    pub graph: &'a CompGraph,
    pub groups: &'a GroupTable,
    pub weights: &'a WeightStore<f64>,
    pub masks: &'a [Vec<f64>],
    pub batch: &'a Tensor<f64>,
    pub labels: &'a [usize],
    pub mode: Mode,
}

impl CheckCase<'_> {
    fn eval(
        &self,
        weights: &WeightStore<f64>,
        masks: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>, Vec<u64>), EngineError> {
        let (loss, tape) = forward(
            self.graph,
            self.groups,
            weights,
            masks,
            self.batch,
            self.labels,
            self.mode,
        )?;
        Ok((
            loss,
            tape.sample_losses().to_vec(),
            tape.branch_signature(self.graph),
        ))
    }

    /// Compares `d loss / d weights[name][index]` for every probe.
    pub fn params(&self, probes: &[(String, usize)], eps: f64) -> Result<Vec<Probe>, EngineError> {
        let (_, tape) = forward(
            self.graph,
            self.groups,
            self.weights,
            self.masks,
            self.batch,
            self.labels,
            self.mode,
        )?;
        let base_sig = tape.branch_signature(self.graph);
        let grads = backward(self.graph, self.weights, &tape)?;
        let mut out = Vec::with_capacity(probes.len());
        let mut w = self.weights.clone();
        for (name, index) in probes {
            let analytic = grads.params.get(name).map_or(0.0, |t| t.data()[*index]);
            let orig = w.get(name).expect("probed tensor exists").data()[*index];
            let mut f = [0.0; 4];
            let mut kink = false;
            for (k, step) in STENCIL.iter().enumerate() {
                w.get_mut(name).unwrap().data_mut()[*index] = orig + step * eps;
                let (l, _, sig) = self.eval(&w, self.masks)?;
                f[k] = l;
                kink |= sig != base_sig;
            }
            w.get_mut(name).unwrap().data_mut()[*index] = orig;
            let numeric = derivative(&f, eps);
            out.push(Probe {
                name: name.clone(),
                index: *index,
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric),
                skipped: kink,
            });
        }
        Ok(out)
    }

    /// Compares each sample's own loss derivative with respect to a
    /// continuous perturbation of mask slot `(group, slot)`. Probe names are
    /// `group:slot`, `index` is the sample.
    pub fn masks(&self, probes: &[(usize, usize)], eps: f64) -> Result<Vec<Probe>, EngineError> {
        let (_, tape) = forward(
            self.graph,
            self.groups,
            self.weights,
            self.masks,
            self.batch,
            self.labels,
            self.mode,
        )?;
        let base_sig = tape.branch_signature(self.graph);
        let grads = backward(self.graph, self.weights, &tape)?;
        let per_group = group_grads(self.graph, self.groups, &tape, &grads);
        let n = tape.batch();
        let mut out = Vec::new();
        let mut m = self.masks.to_vec();
        for &(g, s) in probes {
            let width = m[g].len();
            let orig = m[g][s];
            let mut f: [Vec<f64>; 4] = Default::default();
            let mut kink = false;
            for (k, step) in STENCIL.iter().enumerate() {
                m[g][s] = orig + step * eps;
                let (_, l, sig) = self.eval(self.weights, &m)?;
                f[k] = l;
                kink |= sig != base_sig;
            }
            m[g][s] = orig;
            for i in 0..n {
                let analytic = per_group[g][i * width + s];
                let numeric = derivative(&[f[0][i], f[1][i], f[2][i], f[3][i]], eps);
                out.push(Probe {
                    name: alloc::format!("{g}:{s}"),
                    index: i,
                    analytic,
                    numeric,
                    rel_err: rel_err(analytic, numeric),
                    skipped: kink,
                });
            }
        }
        Ok(out)
    }
}
