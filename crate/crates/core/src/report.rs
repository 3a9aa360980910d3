//! Wire formats for run artifacts. The schemas are fixed: bound and
//! solution JSON carry exactly the fields below, restart and curve CSVs
//! exactly the columns below. Floats round-trip (serde_json and the
//! standard float formatter both emit shortest-exact representations).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bound::BoundResult;
use crate::certify::{Certificate, CurveCell};
use crate::error::{Error, Result};
use crate::solvers::{DiscreteSolution, RestartRecord, SolutionProvenance};

/// Serialized form of a bound: `{"ub_ll", "certified_ub", "gap",
/// "iterations", "pi_support": [[index, weight]], "trace": [[ll, gap]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireBound {
    pub ub_ll: f64,
    pub certified_ub: f64,
    pub gap: f64,
    pub iterations: usize,
    pub pi_support: Vec<(usize, f64)>,
    pub trace: Vec<(f64, f64)>,
}

impl From<&BoundResult> for WireBound {
    fn from(bound: &BoundResult) -> Self {
        let pi_support = bound
            .weights
            .effective_support()
            .into_iter()
            .map(|j| (j, bound.weights.weights()[j]))
            .collect();
        WireBound {
            ub_ll: bound.ub_ll,
            certified_ub: bound.certified_ub,
            gap: bound.final_gap,
            iterations: bound.iterations_used,
            pi_support,
            trace: bound.trace.iter().map(|t| (t.ll, t.gap)).collect(),
        }
    }
}

pub fn write_bound<W: Write>(out: W, bound: &BoundResult) -> Result<()> {
    serde_json::to_writer_pretty(out, &WireBound::from(bound))
        .map_err(|e| Error::Format(format!("bound serialization failed: {e}")))
}

pub fn read_bound<R: Read>(input: R) -> Result<WireBound> {
    serde_json::from_reader(input).map_err(|e| Error::Format(format!("bad bound JSON: {e}")))
}

/// Serialized form of a solution: `{"support", "weights", "ll",
/// "provenance"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireSolution {
    support: Vec<usize>,
    weights: Vec<f64>,
    ll: f64,
    provenance: SolutionProvenance,
}

pub fn write_solution<W: Write>(out: W, solution: &DiscreteSolution) -> Result<()> {
    let wire = WireSolution {
        support: solution.support.clone(),
        weights: solution.weights.clone(),
        ll: solution.ll,
        provenance: solution.provenance.clone(),
    };
    serde_json::to_writer_pretty(out, &wire)
        .map_err(|e| Error::Format(format!("solution serialization failed: {e}")))
}

/// Reads a solution; the result carries no input fingerprint, so
/// certification will reject it until the values are recomputed against
/// the actual inputs.
pub fn read_solution<R: Read>(input: R) -> Result<DiscreteSolution> {
    let wire: WireSolution = serde_json::from_reader(input)
        .map_err(|e| Error::Format(format!("bad solution JSON: {e}")))?;
    if wire.support.len() != wire.weights.len() {
        return Err(Error::Format(format!(
            "solution has {} support indices but {} weights",
            wire.support.len(),
            wire.weights.len()
        )));
    }
    Ok(DiscreteSolution {
        support: wire.support,
        weights: wire.weights,
        ll: wire.ll,
        provenance: wire.provenance,
        fingerprint: None,
    })
}

pub fn write_certificate<W: Write>(out: W, certificate: &Certificate) -> Result<()> {
    serde_json::to_writer_pretty(out, certificate)
        .map_err(|e| Error::Format(format!("certificate serialization failed: {e}")))
}

pub fn read_certificate<R: Read>(input: R) -> Result<Certificate> {
    serde_json::from_reader(input)
        .map_err(|e| Error::Format(format!("bad certificate JSON: {e}")))
}

/// Restart records as CSV with header
/// `restart,continuous_ll,projected_ll,refit_ll`.
pub fn write_restarts_csv<W: Write>(mut out: W, records: &[RestartRecord]) -> Result<()> {
    writeln!(out, "restart,continuous_ll,projected_ll,refit_ll")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.restart, r.continuous_ll, r.projected_ll, r.refit_ll
        )?;
    }
    Ok(())
}

/// Curve cells as CSV with header `n,seed,ub,lb,ll_true,opt_ratio`;
/// `ll_true` is empty for misspecified generators.
pub fn write_curve_csv<W: Write>(mut out: W, cells: &[CurveCell]) -> Result<()> {
    writeln!(out, "n,seed,ub,lb,ll_true,opt_ratio")?;
    for c in cells {
        let ll_true = c.ll_true.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.n, c.seed, c.ub, c.lb, ll_true, c.opt_ratio
        )?;
    }
    Ok(())
}
