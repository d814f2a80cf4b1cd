//! Backend-neutral conic program: Hermitian PSD matrix variables, scalar
//! variables, a linear objective over trace terms and scalars, and
//! trace-linear, rotated-cone and entry-fixing constraints.

use crate::error::{Error, Result};
use crate::linalg::{trace_inner, CMat, CVec, C64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PsdVar(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScalarVar(pub usize);

/// A Hermitian coefficient matrix `C`, acting on a variable `X` through
/// `Re tr(C X)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Dense(CMat),
    /// `(row, col, value)`; an off-diagonal entry also sets its mirror to
    /// the conjugate. Diagonal values use only the real part.
    Entries(Vec<(usize, usize, C64)>),
    /// `sum_k s_k u_k u_k^H`.
    LowRank(Vec<(f64, CVec)>),
}

impl Coefficient {
    pub fn entry(row: usize, col: usize, value: f64) -> Self {
        Coefficient::Entries(vec![(row, col, C64::new(value, 0.0))])
    }

    pub fn rank_one(scale: f64, u: CVec) -> Self {
        Coefficient::LowRank(vec![(scale, u)])
    }

    pub fn identity(n: usize) -> Self {
        Coefficient::Entries((0..n).map(|i| (i, i, C64::new(1.0, 0.0))).collect())
    }

    /// Largest row/column index referenced plus one, or the vector length.
    pub(crate) fn required_dim(&self) -> Option<usize> {
        match self {
            Coefficient::Dense(m) => {
                if m.nrows() != m.ncols() {
                    None
                } else {
                    Some(m.nrows())
                }
            }
            Coefficient::Entries(e) => Some(e.iter().map(|&(r, c, _)| r.max(c) + 1).max().unwrap_or(0)),
            Coefficient::LowRank(terms) => {
                let n = terms.first().map_or(0, |(_, u)| u.len());
                if terms.iter().all(|(_, u)| u.len() == n) {
                    Some(n)
                } else {
                    None
                }
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> CMat {
        let mut m = CMat::zeros(n, n);
        self.add_scaled_to(&mut m, 1.0);
        m
    }

    /// `M += a C`.
    pub fn add_scaled_to(&self, m: &mut CMat, a: f64) {
        match self {
            Coefficient::Dense(c) => *m += c * C64::new(a, 0.0),
            Coefficient::Entries(entries) => {
                for &(r, c, v) in entries {
                    if r == c {
                        m[(r, r)] += C64::new(a * v.re, 0.0);
                    } else {
                        m[(r, c)] += v * a;
                        m[(c, r)] += v.conj() * a;
                    }
                }
            }
            Coefficient::LowRank(terms) => {
                for (s, u) in terms {
                    m.gerc(C64::new(a * s, 0.0), u, u, C64::new(1.0, 0.0));
                }
            }
        }
    }

    /// `Re tr(C X)` for Hermitian `X`.
    pub fn dot(&self, x: &CMat) -> f64 {
        match self {
            Coefficient::Dense(c) => trace_inner(c, x),
            Coefficient::Entries(entries) => entries
                .iter()
                .map(|&(r, c, v)| {
                    if r == c {
                        v.re * x[(r, r)].re
                    } else {
                        2.0 * (v * x[(c, r)]).re
                    }
                })
                .sum(),
            Coefficient::LowRank(terms) => terms.iter().map(|(s, u)| s * quad_form(x, u)).sum(),
        }
    }

    /// `W C W` for Hermitian `W`.
    pub fn sandwich(&self, w: &CMat) -> CMat {
        let n = w.nrows();
        match self {
            Coefficient::Dense(c) => w * c * w,
            Coefficient::Entries(entries) => {
                let mut out = CMat::zeros(n, n);
                for &(r, c, v) in entries {
                    let wr = w.column(r);
                    if r == c {
                        out.gerc(C64::new(v.re, 0.0), &wr, &wr, C64::new(1.0, 0.0));
                    } else {
                        let wc = w.column(c);
                        out.gerc(v, &wr, &wc, C64::new(1.0, 0.0));
                        out.gerc(v.conj(), &wc, &wr, C64::new(1.0, 0.0));
                    }
                }
                out
            }
            Coefficient::LowRank(terms) => {
                let mut out = CMat::zeros(n, n);
                for (s, u) in terms {
                    let wu = w * u;
                    out.gerc(C64::new(*s, 0.0), &wu, &wu, C64::new(1.0, 0.0));
                }
                out
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        match self {
            Coefficient::Dense(c) => *c *= C64::new(a, 0.0),
            Coefficient::Entries(entries) => entries.iter_mut().for_each(|e| e.2 *= a),
            Coefficient::LowRank(terms) => terms.iter_mut().for_each(|t| t.0 *= a),
        }
    }

    pub fn frobenius_sq(&self, n: usize) -> f64 {
        match self {
            Coefficient::Dense(c) => c.norm_squared(),
            _ => self.to_dense(n).norm_squared(),
        }
    }

    /// Upper-triangle `(row, col, value)` triplets of the dense matrix.
    pub fn triplets(&self, n: usize) -> Vec<(usize, usize, f64, f64)> {
        let d = self.to_dense(n);
        let mut out = Vec::new();
        for c in 0..n {
            for r in 0..=c {
                let z = d[(r, c)];
                if z != C64::new(0.0, 0.0) {
                    out.push((r, c, z.re, z.im));
                }
            }
        }
        out
    }
}

/// `u^H X u` (real for Hermitian `X`).
pub fn quad_form(x: &CMat, u: &CVec) -> f64 {
    let xu = x * u;
    u.iter().zip(xu.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearExpr {
    pub traces: Vec<(PsdVar, Coefficient)>,
    pub scalars: Vec<(ScalarVar, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    pub fn scalar(v: ScalarVar, a: f64) -> Self {
        Self {
            scalars: vec![(v, a)],
            ..Self::default()
        }
    }

    pub fn trace(v: PsdVar, c: Coefficient) -> Self {
        Self {
            traces: vec![(v, c)],
            ..Self::default()
        }
    }

    pub fn add_trace(mut self, v: PsdVar, c: Coefficient) -> Self {
        self.traces.push((v, c));
        self
    }

    pub fn add_scalar(mut self, v: ScalarVar, a: f64) -> Self {
        self.scalars.push((v, a));
        self
    }

    pub fn add_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn extend(mut self, other: LinearExpr) -> Self {
        self.traces.extend(other.traces);
        self.scalars.extend(other.scalars);
        self.constant += other.constant;
        self
    }

    pub fn scaled(mut self, a: f64) -> Self {
        self.traces.iter_mut().for_each(|(_, c)| c.scale(a));
        self.scalars.iter_mut().for_each(|(_, s)| *s *= a);
        self.constant *= a;
        self
    }

    pub fn eval(&self, psd: &[CMat], scalars: &[f64]) -> f64 {
        self.constant
            + self.traces.iter().map(|(v, c)| c.dot(&psd[v.0])).sum::<f64>()
            + self.scalars.iter().map(|(v, a)| a * scalars[v.0]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `expr <= 0`
    LessEq,
    /// `expr == 0`
    Equal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Linear { expr: LinearExpr, sense: Sense },
    /// `t^2 <= x y` with `x, y >= 0`.
    RotatedCone { t: ScalarVar, x: LinearExpr, y: LinearExpr },
    FixEntry { var: PsdVar, row: usize, col: usize, value: C64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdDecl {
    pub name: String,
    pub dim: usize,
}

/// Maximize `objective` subject to `constraints`, every PSD variable
/// Hermitian positive semidefinite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub psd: Vec<PsdDecl>,
    pub scalars: Vec<String>,
    pub objective: LinearExpr,
    pub constraints: Vec<(String, Constraint)>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_psd(&mut self, name: impl Into<String>, dim: usize) -> PsdVar {
        self.psd.push(PsdDecl { name: name.into(), dim });
        PsdVar(self.psd.len() - 1)
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> ScalarVar {
        self.scalars.push(name.into());
        ScalarVar(self.scalars.len() - 1)
    }

    pub fn maximize(&mut self, objective: LinearExpr) {
        self.objective = objective;
    }

    pub fn less_eq(&mut self, label: impl Into<String>, expr: LinearExpr) {
        self.constraints.push((label.into(), Constraint::Linear { expr, sense: Sense::LessEq }));
    }

    pub fn equal(&mut self, label: impl Into<String>, expr: LinearExpr) {
        self.constraints.push((label.into(), Constraint::Linear { expr, sense: Sense::Equal }));
    }

    pub fn rotated_cone(&mut self, label: impl Into<String>, t: ScalarVar, x: LinearExpr, y: LinearExpr) {
        self.constraints.push((label.into(), Constraint::RotatedCone { t, x, y }));
    }

    pub fn fix_entry(&mut self, label: impl Into<String>, var: PsdVar, row: usize, col: usize, value: C64) {
        self.constraints.push((label.into(), Constraint::FixEntry { var, row, col, value }));
    }

    pub fn dim(&self, v: PsdVar) -> usize {
        self.psd[v.0].dim
    }

    /// Count of constraints of each kind: `(linear, rotated cone, fix entry)`.
    pub fn constraint_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for (_, c) in &self.constraints {
            match c {
                Constraint::Linear { .. } => counts.0 += 1,
                Constraint::RotatedCone { .. } => counts.1 += 1,
                Constraint::FixEntry { .. } => counts.2 += 1,
            }
        }
        counts
    }

    fn check_expr(&self, label: &str, e: &LinearExpr) -> Result<()> {
        for (v, c) in &e.traces {
            let decl = self
                .psd
                .get(v.0)
                .ok_or_else(|| Error::Program(format!("{label}: undeclared PSD variable {}", v.0)))?;
            match c.required_dim() {
                Some(d) if d == decl.dim || matches!(c, Coefficient::Entries(_)) && d <= decl.dim => {}
                Some(d) => {
                    return Err(Error::Program(format!(
                        "{label}: coefficient of size {d} on {} ({}x{})",
                        decl.name, decl.dim, decl.dim
                    )))
                }
                None => return Err(Error::Program(format!("{label}: malformed coefficient on {}", decl.name))),
            }
        }
        for (v, _) in &e.scalars {
            if v.0 >= self.scalars.len() {
                return Err(Error::Program(format!("{label}: undeclared scalar {}", v.0)));
            }
        }
        Ok(())
    }

    /// Every reference resolves and every coefficient has the right size.
    pub fn validate(&self) -> Result<()> {
        self.check_expr("objective", &self.objective)?;
        for (label, c) in &self.constraints {
            match c {
                Constraint::Linear { expr, .. } => self.check_expr(label, expr)?,
                Constraint::RotatedCone { t, x, y } => {
                    if t.0 >= self.scalars.len() {
                        return Err(Error::Program(format!("{label}: undeclared scalar {}", t.0)));
                    }
                    self.check_expr(label, x)?;
                    self.check_expr(label, y)?;
                }
                Constraint::FixEntry { var, row, col, .. } => {
                    let decl = self
                        .psd
                        .get(var.0)
                        .ok_or_else(|| Error::Program(format!("{label}: undeclared PSD variable {}", var.0)))?;
                    if *row >= decl.dim || *col >= decl.dim {
                        return Err(Error::Program(format!(
                            "{label}: entry ({row}, {col}) outside {} ({}x{})",
                            decl.name, decl.dim, decl.dim
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Self-describing JSON form for cross-checking with external tools.
    pub fn dump(&self) -> serde_json::Value {
        let expr = |e: &LinearExpr| {
            serde_json::json!({
                "constant": e.constant,
                "scalars": e.scalars.iter().map(|(v, a)| serde_json::json!({"var": self.scalars[v.0], "coef": a})).collect::<Vec<_>>(),
                "traces": e.traces.iter().map(|(v, c)| serde_json::json!({
                    "var": self.psd[v.0].name,
                    "upper_triplets": c.triplets(self.psd[v.0].dim)
                        .into_iter()
                        .map(|(r, c, re, im)| serde_json::json!([r, c, re, im]))
                        .collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            })
        };
        let constraints: Vec<_> = self
            .constraints
            .iter()
            .map(|(label, c)| match c {
                Constraint::Linear { expr: e, sense } => serde_json::json!({
                    "label": label, "kind": "linear", "sense": sense, "expr": expr(e),
                }),
                Constraint::RotatedCone { t, x, y } => serde_json::json!({
                    "label": label, "kind": "rotated_cone", "t": self.scalars[t.0], "x": expr(x), "y": expr(y),
                }),
                Constraint::FixEntry { var, row, col, value } => serde_json::json!({
                    "label": label, "kind": "fix_entry", "var": self.psd[var.0].name,
                    "row": row, "col": col, "value": [value.re, value.im],
                }),
            })
            .collect();
        serde_json::json!({
            "sense": "maximize",
            "inner_product": "re_trace",
            "psd_variables": self.psd,
            "scalar_variables": self.scalars,
            "objective": expr(&self.objective),
            "constraints": constraints,
        })
    }
}
