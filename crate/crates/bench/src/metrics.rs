//! Error metrics of a predicted field against the reference solution.

use serde::{Deserialize, Serialize};
use smt_core::sequential::StitchedModel;
use smt_core::solver::{sample, SolutionField};

use crate::error::{BenchError, Result};

/// `‖pred − ref‖₂ / ‖ref‖₂` over the flattened values.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(pred, reference)?;
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(BenchError::Metric("reference has zero norm".into()));
    }
    let num: f64 = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum();
    Ok((num / den).sqrt())
}

/// Largest elementwise `|pred − ref|`.
pub fn max_abs_error(pred: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(pred, reference)?;
    Ok(pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).abs())
        .fold(0.0, f64::max))
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(BenchError::Metric(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldErrors {
    pub rel_l2_temp: f64,
    pub rel_l2_alpha: f64,
    /// °C.
    pub max_abs_temp: f64,
    pub max_abs_alpha: f64,
}

impl FieldErrors {
    pub fn between(pred: &SolutionField, reference: &SolutionField) -> Result<Self> {
        Ok(Self {
            rel_l2_temp: relative_l2(&pred.temp, &reference.temp)?,
            rel_l2_alpha: relative_l2(&pred.alpha, &reference.alpha)?,
            max_abs_temp: max_abs_error(&pred.temp, &reference.temp)?,
            max_abs_alpha: max_abs_error(&pred.alpha, &reference.alpha)?,
        })
    }
}

/// Evaluation grid: `nt` times over `[0, t_end]`, `nx` positions over `[0, L]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalGrid {
    pub nt: usize,
    pub nx: usize,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { nt: 200, nx: 50 }
    }
}

fn linspace(hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Predicted and reference fields on the full grid and along the mid-plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub pred: SolutionField,
    pub reference: SolutionField,
    pub mid_pred: SolutionField,
    pub mid_reference: SolutionField,
}

impl Comparison {
    pub fn new(
        model: &StitchedModel,
        head: usize,
        oracle: &SolutionField,
        length: f64,
        grid: EvalGrid,
    ) -> Result<Self> {
        if grid.nt < 2 || grid.nx < 2 {
            return Err(BenchError::Config(format!(
                "evaluation grid {}x{} is too small",
                grid.nt, grid.nx
            )));
        }
        let times = linspace(model.schedule.t_end(), grid.nt);
        let xs = linspace(length, grid.nx);
        let mid = [0.5 * length];
        Ok(Self {
            pred: model.field(&times, &xs, head)?,
            reference: reference_field(oracle, &times, &xs)?,
            mid_pred: model.field(&times, &mid, head)?,
            mid_reference: reference_field(oracle, &times, &mid)?,
        })
    }

    pub fn errors(&self) -> Result<(FieldErrors, FieldErrors)> {
        Ok((
            FieldErrors::between(&self.pred, &self.reference)?,
            FieldErrors::between(&self.mid_pred, &self.mid_reference)?,
        ))
    }
}

/// Reference values interpolated onto a tensor grid.
pub fn reference_field(oracle: &SolutionField, times: &[f64], xs: &[f64]) -> Result<SolutionField> {
    let mut temp = Vec::with_capacity(times.len() * xs.len());
    let mut alpha = Vec::with_capacity(temp.capacity());
    for &t in times {
        for &x in xs {
            let (tr, ar) = sample(oracle, t, x)?;
            temp.push(tr);
            alpha.push(ar);
        }
    }
    Ok(SolutionField {
        times: times.to_vec(),
        positions: xs.to_vec(),
        temp,
        alpha,
    })
}

/// Rows `t,x,T_pred,alpha_pred,T_ref,alpha_ref`.
pub fn write_curve(
    path: &std::path::Path,
    pred: &SolutionField,
    reference: &SolutionField,
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,x,T_pred,alpha_pred,T_ref,alpha_ref")?;
    for (it, &t) in pred.times.iter().enumerate() {
        for (ix, &x) in pred.positions.iter().enumerate() {
            writeln!(
                w,
                "{t},{x},{},{},{},{}",
                pred.temp_at(it, ix),
                pred.alpha_at(it, ix),
                reference.temp_at(it, ix),
                reference.alpha_at(it, ix)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
