use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Loss components and diagnostics of one optimization step, evaluated at
/// the cloud before the step is applied.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub logit: f64,
    pub l_am: f64,
    pub l_la: f64,
    pub l_c: f64,
    pub l_lr: f64,
    /// Baseline regularizer penalty (total variation); zero otherwise.
    pub l_reg: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmTrace {
    pub entries: Vec<TraceEntry>,
    pub termination: Termination,
}

impl AmTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,logit,l_am,l_la,l_c,l_lr,l_reg,total,grad_norm\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.iteration, e.logit, e.l_am, e.l_la, e.l_c, e.l_lr, e.l_reg, e.total, e.grad_norm
            );
        }
        s
    }
}
