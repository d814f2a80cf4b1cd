//! Cross-check backend: the compiled block program handed to Clarabel via
//! the real symmetric embedding `[[Re X, -Im X], [Im X, Re X]]`.

use super::native::StandardForm;
use super::program::ConicProgram;
use super::{ConicSolution, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};

/// Real coordinates of one Hermitian block: `Re X[i][j]` for `i <= j`,
/// then `Im X[i][j]` for `i < j`.
struct BlockVars {
    offset: usize,
    n: usize,
}

impl BlockVars {
    fn re(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.offset + j * (j + 1) / 2 + i
    }

    fn im(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        self.offset + self.n * (self.n + 1) / 2 + j * (j - 1) / 2 + i
    }

    fn len(&self) -> usize {
        self.n * self.n
    }

    /// `(variable, weight)` pairs with `Re tr(C X) = sum weight * x[variable]`.
    fn functional(&self, c: &CMat) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.n {
            if c[(j, j)].re != 0.0 {
                out.push((self.re(j, j), c[(j, j)].re));
            }
            for i in 0..j {
                let z = c[(i, j)];
                if z.re != 0.0 {
                    out.push((self.re(i, j), 2.0 * z.re));
                }
                if z.im != 0.0 {
                    out.push((self.im(i, j), 2.0 * z.im));
                }
            }
        }
        out
    }

    /// Entry `(p, q)` of the real embedding as `(variable, sign)`, or `None`
    /// when it is identically zero.
    fn embedded(&self, p: usize, q: usize) -> Option<(usize, f64)> {
        let n = self.n;
        let im = |i: usize, j: usize| -> Option<(usize, f64)> {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => Some((self.im(i, j), 1.0)),
                std::cmp::Ordering::Greater => Some((self.im(j, i), -1.0)),
                std::cmp::Ordering::Equal => None,
            }
        };
        match (p < n, q < n) {
            (true, true) => Some((self.re(p, q), 1.0)),
            (false, false) => Some((self.re(p - n, q - n), 1.0)),
            (true, false) => im(p, q - n).map(|(v, s)| (v, -s)),
            (false, true) => im(p - n, q),
        }
    }

    fn assemble(&self, x: &[f64]) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| {
            let re = x[self.re(i, j)];
            let im = match i.cmp(&j) {
                std::cmp::Ordering::Less => x[self.im(i, j)],
                std::cmp::Ordering::Greater => -x[self.im(j, i)],
                std::cmp::Ordering::Equal => 0.0,
            };
            C64::new(re, im)
        })
    }
}

pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution> {
    let sf = StandardForm::compile(program);
    if !sf.inconsistent.is_empty() {
        return Ok(super::native::inconsistent_solution(program, &sf));
    }
    let mut offset = 0;
    let vars: Vec<BlockVars> = sf
        .dims
        .iter()
        .map(|&n| {
            let v = BlockVars { offset, n };
            offset += v.len();
            v
        })
        .collect();
    let nvar = offset;

    let mut q = vec![0.0; nvar];
    for (v, c) in vars.iter().zip(&sf.c) {
        for (k, w) in v.functional(c) {
            q[k] += w;
        }
    }

    let (mut ri, mut ci, mut vi) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    for (i, row) in sf.rows.iter().enumerate() {
        let mut dense = vec![0.0; nvar];
        for (blk, coef) in row {
            for (k, w) in vars[*blk].functional(&coef.to_dense(sf.dims[*blk])) {
                dense[k] += w;
            }
        }
        for (k, w) in dense.into_iter().enumerate() {
            if w != 0.0 {
                ri.push(i);
                ci.push(k);
                vi.push(w);
            }
        }
        b.push(sf.b[i]);
    }
    cones.push(ZeroConeT(sf.rows.len()));
    let mut row = sf.rows.len();
    for v in &vars {
        if v.n == 1 {
            ri.push(row);
            ci.push(v.re(0, 0));
            vi.push(-1.0);
            b.push(0.0);
            row += 1;
            cones.push(NonnegativeConeT(1));
            continue;
        }
        let dim = 2 * v.n;
        for qq in 0..dim {
            for p in 0..=qq {
                if let Some((k, s)) = v.embedded(p, qq) {
                    let scale = if p == qq { 1.0 } else { std::f64::consts::SQRT_2 };
                    ri.push(row);
                    ci.push(k);
                    vi.push(-s * scale);
                }
                b.push(0.0);
                row += 1;
            }
        }
        cones.push(PSDTriangleConeT(dim));
    }

    let a = CscMatrix::new_from_triplets(row, nvar, ri, ci, vi);
    let p = CscMatrix::zeros((nvar, nvar));
    let opts = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iter as u32)
        .tol_feas(settings.tol)
        .tol_gap_abs(settings.tol)
        .tol_gap_rel(settings.tol)
        .build()
        .map_err(|e| Error::Numerical(format!("clarabel settings: {e}")))?;
    let mut solver =
        DefaultSolver::new(&p, &q, &a, &b, &cones, opts).map_err(|e| Error::Numerical(format!("clarabel setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        _ => SolveStatus::NumericalFailure,
    };
    let blocks: Vec<CMat> = vars.iter().map(|v| v.assemble(&sol.x)).collect();
    let (psd, scalars) = sf.recover(&blocks);
    let objective = program.objective.eval(&psd, &scalars);
    let gap = (sol.obj_val - sol.obj_val_dual).abs() / (1.0 + sol.obj_val.abs());
    Ok(ConicSolution {
        status,
        objective,
        psd,
        scalars,
        iterations: sol.iterations as usize,
        primal_residual: sol.r_prim,
        dual_residual: sol.r_dual,
        gap,
        detail: Some(format!("clarabel: {:?}", sol.status)),
    })
}
