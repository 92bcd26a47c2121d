use serde::Serialize;

/// A scalar function of several flat `f64` inputs with an analytic gradient.
///
/// Kernels that produce tensors are wrapped by contracting the output with a
/// fixed random projection, so the checked scalar touches every output entry.
pub trait GradOp {
    fn name(&self) -> String;
    /// Names and initial values of each input.
    fn inputs(&self) -> Vec<(String, Vec<f64>)>;
    fn value(&self, inputs: &[Vec<f64>]) -> f64;
    fn gradient(&self, inputs: &[Vec<f64>]) -> Vec<Vec<f64>>;
    /// Entries to probe per input. `None` probes every entry.
    fn probe(&self) -> Option<Vec<Vec<usize>>> {
        None
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InputReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub probed: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub inputs: Vec<InputReport>,
    pub step: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: max rel err {:.3e} (tol {:.0e}, h {:.0e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.op,
            self.max_rel_error(),
            self.tolerance,
            self.step
        )?;
        for r in &self.inputs {
            write!(f, " [{}: {:.3e} @{}]", r.name, r.max_rel_error, r.worst_index)?;
        }
        if let Some(msg) = &self.failure {
            write!(f, " {msg}")?;
        }
        Ok(())
    }
}

/// Compare the analytic gradient of `op` with central differences of step `h`.
///
/// The error of an entry is `|a - n| / max(|a|, |n|, 1e-2 * max_j |n_j|)`, so
/// entries far below the input's largest derivative are judged on that
/// absolute scale instead of amplifying the O(h^2) truncation error.
pub fn grad_check(op: &dyn GradOp, h: f64, tol: f64) -> GradCheckReport {
    let named = op.inputs();
    let mut values: Vec<Vec<f64>> = named.iter().map(|(_, v)| v.clone()).collect();
    let mut report = GradCheckReport {
        op: op.name(),
        inputs: Vec::new(),
        step: h,
        tolerance: tol,
        pass: false,
        failure: None,
    };
    if !(h > 0.0) {
        report.failure = Some(format!("step must be positive, got {h}"));
        return report;
    }
    let base = op.value(&values);
    let analytic = op.gradient(&values);
    if !base.is_finite() || analytic.iter().flatten().any(|g| !g.is_finite()) {
        report.failure = Some("non-finite value or gradient".into());
        return report;
    }
    if analytic.len() != values.len() || analytic.iter().zip(&values).any(|(g, v)| g.len() != v.len()) {
        report.failure = Some("gradient shape does not match inputs".into());
        return report;
    }
    let probe = op.probe();
    for (k, (name, _)) in named.iter().enumerate() {
        let idx: Vec<usize> = match &probe {
            Some(p) => p[k].clone(),
            None => (0..values[k].len()).collect(),
        };
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = values[k][i];
            values[k][i] = orig + h;
            let up = op.value(&values);
            values[k][i] = orig - h;
            let down = op.value(&values);
            values[k][i] = orig;
            if !up.is_finite() || !down.is_finite() {
                report.failure = Some(format!("non-finite value while perturbing {name}[{i}]"));
                return report;
            }
            numeric.push((up - down) / (2.0 * h));
        }
        let floor = 1e-2 * numeric.iter().fold(0.0f64, |m, n| m.max(n.abs()));
        let mut worst = (0.0f64, idx.first().copied().unwrap_or(0));
        for (&i, &n) in idx.iter().zip(&numeric) {
            let a = analytic[k][i];
            let scale = a.abs().max(n.abs()).max(floor);
            let err = if scale > 0.0 { (a - n).abs() / scale } else { 0.0 };
            if err > worst.0 {
                worst = (err, i);
            }
        }
        report.inputs.push(InputReport {
            name: name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            probed: idx.len(),
        });
    }
    report.pass = report.max_rel_error() < tol;
    report
}
