//! Homogeneous self-dual interior-point method for block-diagonal complex
//! Hermitian semidefinite programs, with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector.
//!
//! A [`ConicProgram`] is compiled to the standard form
//! `min <c, X>  s.t.  <A_i, X> = b_i,  X = diag(X_1, ..., X_B) ⪰ 0`.
//! Scalars in a rotated cone live in the off-diagonal of a 2x2 block,
//! other scalars are split into two 1x1 blocks, and each inequality gets a
//! 1x1 slack block.

use super::program::{Coefficient, ConicProgram, Constraint, LinearExpr, Sense};
use super::{ConicSolution, SolveStatus, SolverSettings};
use crate::linalg::{min_eigenvalue, trace_inner, CMat, C64};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
enum ScalarMap {
    Cone { block: usize },
    Split { pos: usize, neg: usize },
}

type Row = Vec<(usize, Coefficient)>;

pub(crate) struct StandardForm {
    pub(crate) dims: Vec<usize>,
    pub(crate) rows: Vec<Row>,
    pub(crate) b: Vec<f64>,
    pub(crate) c: Vec<CMat>,
    psd_blocks: Vec<usize>,
    scalar_map: Vec<ScalarMap>,
    /// Rows with no variable terms and a nonzero right-hand side.
    pub(crate) inconsistent: Vec<String>,
}

fn merge(row: &mut Row, block: usize, coef: Coefficient, dim: usize) {
    if let Some(slot) = row.iter_mut().find(|(b, _)| *b == block) {
        let merged = match (std::mem::replace(&mut slot.1, Coefficient::Entries(Vec::new())), coef) {
            (Coefficient::Entries(mut a), Coefficient::Entries(b)) => {
                a.extend(b);
                Coefficient::Entries(a)
            }
            (Coefficient::LowRank(mut a), Coefficient::LowRank(b)) => {
                a.extend(b);
                Coefficient::LowRank(a)
            }
            (a, b) => {
                let mut d = a.to_dense(dim);
                b.add_scaled_to(&mut d, 1.0);
                Coefficient::Dense(d)
            }
        };
        slot.1 = merged;
    } else {
        row.push((block, coef));
    }
}

impl StandardForm {
    fn new_block(&mut self, dim: usize) -> usize {
        self.dims.push(dim);
        self.c.push(CMat::zeros(dim, dim));
        self.dims.len() - 1
    }

    fn scalar_terms(&self, row: &mut Row, map: ScalarMap, a: f64) {
        match map {
            ScalarMap::Cone { block } => merge(row, block, Coefficient::Entries(vec![(0, 1, C64::new(0.5 * a, 0.0))]), 2),
            ScalarMap::Split { pos, neg } => {
                merge(row, pos, Coefficient::entry(0, 0, a), 1);
                merge(row, neg, Coefficient::entry(0, 0, -a), 1);
            }
        }
    }

    fn expr_terms(&self, row: &mut Row, e: &LinearExpr, sign: f64) {
        for (v, c) in &e.traces {
            let block = self.psd_blocks[v.0];
            let mut c = c.clone();
            if sign != 1.0 {
                c.scale(sign);
            }
            merge(row, block, c, self.dims[block]);
        }
        for (v, a) in &e.scalars {
            self.scalar_terms(row, self.scalar_map[v.0], sign * a);
        }
    }

    fn push_row(&mut self, label: &str, row: Row, rhs: f64) {
        let norm: f64 = row.iter().map(|(b, c)| c.frobenius_sq(self.dims[*b])).sum::<f64>().sqrt();
        if norm == 0.0 {
            if rhs.abs() > 1e-12 {
                self.inconsistent.push(label.to_string());
            }
            return;
        }
        let row = row
            .into_iter()
            .map(|(b, mut c)| {
                c.scale(1.0 / norm);
                (b, c)
            })
            .collect();
        self.rows.push(row);
        self.b.push(rhs / norm);
    }

    pub(crate) fn compile(program: &ConicProgram) -> Self {
        let mut sf = StandardForm {
            dims: Vec::new(),
            rows: Vec::new(),
            b: Vec::new(),
            c: Vec::new(),
            psd_blocks: Vec::new(),
            scalar_map: Vec::new(),
            inconsistent: Vec::new(),
        };
        for decl in &program.psd {
            let b = sf.new_block(decl.dim);
            sf.psd_blocks.push(b);
        }

        // The first cone naming a scalar owns it; later cones get their own
        // 2x2 block tied back by an equality.
        let mut owner: Vec<Option<usize>> = vec![None; program.scalars.len()];
        let mut cone_blocks = Vec::new();
        let mut links = Vec::new();
        for (_, c) in &program.constraints {
            if let Constraint::RotatedCone { t, .. } = c {
                let block = sf.new_block(2);
                cone_blocks.push(block);
                match owner[t.0] {
                    None => owner[t.0] = Some(block),
                    Some(_) => links.push((t.0, block)),
                }
            }
        }
        for o in &owner {
            let map = match o {
                Some(block) => ScalarMap::Cone { block: *block },
                None => {
                    let pos = sf.new_block(1);
                    let neg = sf.new_block(1);
                    ScalarMap::Split { pos, neg }
                }
            };
            sf.scalar_map.push(map);
        }

        for (t, block) in links {
            let mut row = vec![(block, Coefficient::Entries(vec![(0, 1, C64::new(0.5, 0.0))]))];
            sf.scalar_terms(&mut row, sf.scalar_map[t], -1.0);
            sf.push_row("cone scalar link", row, 0.0);
        }

        let mut cones = cone_blocks.into_iter();
        for (label, c) in &program.constraints {
            match c {
                Constraint::Linear { expr, sense } => {
                    let mut row = Row::new();
                    sf.expr_terms(&mut row, expr, 1.0);
                    if *sense == Sense::LessEq {
                        let s = sf.new_block(1);
                        row.push((s, Coefficient::entry(0, 0, 1.0)));
                    }
                    sf.push_row(label, row, -expr.constant);
                }
                Constraint::RotatedCone { x, y, .. } => {
                    let block = cones.next().expect("one block per cone");
                    for (idx, side) in [x, y].into_iter().enumerate() {
                        let mut row = vec![(block, Coefficient::entry(idx, idx, 1.0))];
                        sf.expr_terms(&mut row, side, -1.0);
                        sf.push_row(label, row, side.constant);
                    }
                }
                Constraint::FixEntry { var, row: r, col, value } => {
                    let block = sf.psd_blocks[var.0];
                    if r == col {
                        sf.push_row(label, vec![(block, Coefficient::entry(*r, *r, 1.0))], value.re);
                    } else {
                        let re = Coefficient::Entries(vec![(*r, *col, C64::new(0.5, 0.0))]);
                        let im = Coefficient::Entries(vec![(*r, *col, C64::new(0.0, 0.5))]);
                        sf.push_row(label, vec![(block, re)], value.re);
                        sf.push_row(label, vec![(block, im)], value.im);
                    }
                }
            }
        }

        // Objective: maximize f  <=>  minimize <c, X> with c = -f.
        let mut obj = Row::new();
        sf.expr_terms(&mut obj, &program.objective, -1.0);
        for (b, coef) in obj {
            coef.add_scaled_to(&mut sf.c[b], 1.0);
        }
        sf
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn a_op(&self, x: &[CMat]) -> DVector<f64> {
        DVector::from_iterator(
            self.m(),
            self.rows.iter().map(|row| row.iter().map(|(b, c)| c.dot(&x[*b])).sum::<f64>()),
        )
    }

    fn at_op(&self, y: &DVector<f64>) -> Vec<CMat> {
        let mut out: Vec<CMat> = self.dims.iter().map(|&n| CMat::zeros(n, n)).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for (b, c) in row {
                c.add_scaled_to(&mut out[*b], y[i]);
            }
        }
        out
    }

    fn c_dot(&self, x: &[CMat]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| trace_inner(c, x)).sum()
    }

    /// Primal values of the original program's variables from block values.
    pub(crate) fn recover(&self, blocks: &[CMat]) -> (Vec<CMat>, Vec<f64>) {
        let psd = self.psd_blocks.iter().map(|&b| blocks[b].clone()).collect();
        let scalars = self
            .scalar_map
            .iter()
            .map(|m| match *m {
                ScalarMap::Cone { block } => blocks[block][(0, 1)].re,
                ScalarMap::Split { pos, neg } => blocks[pos][(0, 0)].re - blocks[neg][(0, 0)].re,
            })
            .collect();
        (psd, scalars)
    }
}

struct Scaling {
    r: CMat,
    r_inv: CMat,
    lam: Vec<f64>,
    w: CMat,
}

fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)].im = 0.0;
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

fn nt_scaling(x: &CMat, z: &CMat) -> Option<Scaling> {
    let n = x.nrows();
    if n == 1 {
        let (xv, zv) = (x[(0, 0)].re, z[(0, 0)].re);
        if !(xv > 0.0 && zv > 0.0) {
            return None;
        }
        let w = (xv / zv).sqrt();
        let r = w.sqrt();
        return Some(Scaling {
            r: CMat::from_element(1, 1, C64::new(r, 0.0)),
            r_inv: CMat::from_element(1, 1, C64::new(1.0 / r, 0.0)),
            lam: vec![(xv * zv).sqrt()],
            w: CMat::from_element(1, 1, C64::new(w, 0.0)),
        });
    }
    let lx = x.clone().cholesky()?.l();
    let lz = z.clone().cholesky()?.l();
    let svd = (lz.adjoint() * &lx).svd(false, true);
    let v = svd.v_t?.adjoint();
    let s = svd.singular_values;
    if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    let mut r = &lx * &v;
    for j in 0..n {
        let f = 1.0 / s[j].sqrt();
        r.column_mut(j).scale_mut(f);
    }
    let lx_inv = lx.solve_lower_triangular(&CMat::identity(n, n))?;
    let mut r_inv = v.adjoint() * lx_inv;
    for i in 0..n {
        let f = s[i].sqrt();
        r_inv.row_mut(i).scale_mut(f);
    }
    let mut w = &r * r.adjoint();
    hermitize(&mut w);
    Some(Scaling {
        r,
        r_inv,
        lam: s.iter().copied().collect(),
        w,
    })
}

/// Largest `a` with `Λ + a Δ ⪰ 0`, given the scaled direction `Δ`.
fn max_step(lam: &[f64], delta: &CMat) -> f64 {
    let n = lam.len();
    let m = CMat::from_fn(n, n, |i, j| delta[(i, j)] / (lam[i] * lam[j]).sqrt());
    let e = if n == 1 { m[(0, 0)].re } else { min_eigenvalue(&m) };
    if e >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / e
    }
}

struct Direction {
    dx: Vec<CMat>,
    dy: DVector<f64>,
    dz: Vec<CMat>,
    dtau: f64,
    dkappa: f64,
}

/// Iterations without halving the worst residual before a stall is declared.
const STALL_ITERS: usize = 8;

struct Outcome {
    status: SolveStatus,
    blocks: Vec<CMat>,
    iterations: usize,
    pres: f64,
    dres: f64,
    gap: f64,
    detail: Option<String>,
}

fn norm_blocks(m: &[CMat]) -> f64 {
    m.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
}

fn run(sf: &StandardForm, settings: &SolverSettings) -> Outcome {
    let tol = settings.tol;
    let nb = sf.dims.len();
    let m = sf.m();
    let nu: f64 = sf.dims.iter().sum::<usize>() as f64;
    let b = DVector::from_vec(sf.b.clone());

    // Objective scaling; undone when reporting.
    let c_scale = norm_blocks(&sf.c).max(1e-300);
    let c_scale = if norm_blocks(&sf.c) == 0.0 { 1.0 } else { c_scale };
    let c: Vec<CMat> = sf.c.iter().map(|cb| cb / C64::new(c_scale, 0.0)).collect();
    let c_dot = |x: &[CMat]| sf.c_dot(x) / c_scale;

    let mut x: Vec<CMat> = sf.dims.iter().map(|&n| CMat::identity(n, n)).collect();
    let mut z = x.clone();
    let mut y = DVector::<f64>::zeros(m);
    let (mut tau, mut kappa) = (1.0_f64, 1.0_f64);
    let bnorm = b.norm();
    let cnorm = norm_blocks(&c);
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    // Iteration at which the worst residual last improved by half.
    let (mut best_worst, mut best_it) = (f64::INFINITY, 0usize);

    let finish = |status, x: &[CMat], tau: f64, it, (pres, dres, gap): (f64, f64, f64), detail: Option<String>| Outcome {
        status,
        blocks: x.iter().map(|b| b / C64::new(tau, 0.0)).collect(),
        iterations: it,
        pres,
        dres,
        gap,
        detail,
    };

    for it in 0..=settings.max_iter {
        let ax = sf.a_op(&x);
        let rp = &ax - &b * tau;
        let aty = sf.at_op(&y);
        let rd: Vec<CMat> = (0..nb).map(|k| &aty[k] + &z[k] - &c[k] * C64::new(tau, 0.0)).collect();
        let cx = c_dot(&x);
        let by = b.dot(&y);
        let rg = cx - by + kappa;
        let xz: f64 = (0..nb).map(|k| trace_inner(&x[k], &z[k])).sum();
        let mu = (xz + tau * kappa) / (nu + 1.0);

        let pres = rp.norm() / (tau * (1.0 + bnorm));
        let dres = norm_blocks(&rd) / (tau * (1.0 + cnorm));
        let (pobj, dobj) = (cx / tau, by / tau);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs().min(dobj.abs()));
        last = (pres, dres, gap);

        if pres <= tol && dres <= tol && gap <= tol {
            return finish(SolveStatus::Optimal, &x, tau, it, last, None);
        }
        let worst = pres.max(dres).max(gap);
        if worst < 0.5 * best_worst {
            (best_worst, best_it) = (worst, it);
        } else if it >= best_it + STALL_ITERS && worst <= reduced_tol(tol) {
            return finish(
                SolveStatus::AlmostOptimal,
                &x,
                tau,
                it,
                last,
                Some("stalled within the reduced tolerance".into()),
            );
        }
        if kappa > tau {
            let atyz = norm_blocks(&(0..nb).map(|k| &aty[k] + &z[k]).collect::<Vec<_>>());
            if by > 0.0 && atyz <= tol.max(1e-9) * by * (1.0 + cnorm) {
                return finish(
                    SolveStatus::Infeasible,
                    &x,
                    tau.max(1e-300),
                    it,
                    last,
                    Some("primal infeasibility certificate".into()),
                );
            }
            if cx < 0.0 && ax.norm() <= tol.max(1e-9) * (-cx) * (1.0 + bnorm) {
                return finish(
                    SolveStatus::NumericalFailure,
                    &x,
                    tau.max(1e-300),
                    it,
                    last,
                    Some("dual infeasible: objective unbounded".into()),
                );
            }
        }
        if it == settings.max_iter {
            break;
        }

        let Some(scal) = (0..nb).map(|k| nt_scaling(&x[k], &z[k])).collect::<Option<Vec<_>>>() else {
            return finish(
                SolveStatus::NumericalFailure,
                &x,
                tau,
                it,
                last,
                Some("iterate left the cone interior".into()),
            );
        };

        // Schur complement M_ij = sum_b <A_ib, W_b A_jb W_b>.
        let mut mm = DMatrix::<f64>::zeros(m, m);
        let mut per_block: Vec<Vec<(usize, &Coefficient)>> = vec![Vec::new(); nb];
        for (i, row) in sf.rows.iter().enumerate() {
            for (blk, coef) in row {
                per_block[*blk].push((i, coef));
            }
        }
        for (blk, list) in per_block.iter().enumerate() {
            let w = &scal[blk].w;
            for (k, (i, ci)) in list.iter().enumerate() {
                let s = ci.sandwich(w);
                for (j, cj) in &list[..=k] {
                    let v = cj.dot(&s);
                    mm[(*i, *j)] += v;
                    if i != j {
                        mm[(*j, *i)] += v;
                    }
                }
            }
        }
        let diag_max = (0..m).map(|i| mm[(i, i)]).fold(0.0_f64, f64::max).max(1e-300);
        let mut reg = 1e-14 * diag_max;
        let chol = loop {
            let mut trial = mm.clone();
            for i in 0..m {
                trial[(i, i)] += reg;
            }
            if let Some(ch) = trial.cholesky() {
                break Some(ch);
            }
            reg *= 100.0;
            if reg > 1e-4 * diag_max {
                break None;
            }
        };
        let Some(chol) = chol else {
            return finish(
                SolveStatus::NumericalFailure,
                &x,
                tau,
                it,
                last,
                Some("Schur complement not positive definite".into()),
            );
        };

        let h = |u: &[CMat]| -> Vec<CMat> {
            (0..nb)
                .map(|k| {
                    let mut o = &scal[k].w * &u[k] * &scal[k].w;
                    hermitize(&mut o);
                    o
                })
                .collect()
        };
        let hc = h(&c);
        let ahc = sf.a_op(&hc);
        let dy2 = chol.solve(&(&ahc + &b));
        let chc: f64 = (0..nb).map(|k| trace_inner(&c[k], &hc[k])).sum();
        let hrd = h(&rd);
        let ahc_b = &ahc - &b;

        let direction = |d: &[CMat], eta: f64, rtk: f64| -> Direction {
            let e: Vec<CMat> = (0..nb).map(|k| &d[k] + &hrd[k] * C64::new(eta, 0.0)).collect();
            let dy1 = chol.solve(&(-(&rp * eta) - sf.a_op(&e)));
            let ce: f64 = (0..nb).map(|k| trace_inner(&c[k], &e[k])).sum();
            let denom = ahc_b.dot(&dy2) - chc - kappa / tau;
            let dtau = (-eta * rg - ce - ahc_b.dot(&dy1) - rtk / tau) / denom;
            let dy = &dy1 + &dy2 * dtau;
            let atdy = sf.at_op(&dy);
            let hatdy = h(&atdy);
            let dz: Vec<CMat> = (0..nb)
                .map(|k| -(&rd[k] * C64::new(eta, 0.0)) - &atdy[k] + &c[k] * C64::new(dtau, 0.0))
                .collect();
            let dx: Vec<CMat> = (0..nb)
                .map(|k| &e[k] + &hatdy[k] - &hc[k] * C64::new(dtau, 0.0))
                .collect();
            let dkappa = (rtk - kappa * dtau) / tau;
            Direction { dx, dy, dz, dtau, dkappa }
        };

        let scaled = |dir: &Direction| -> (Vec<CMat>, Vec<CMat>) {
            let dxt = (0..nb).map(|k| &scal[k].r_inv * &dir.dx[k] * scal[k].r_inv.adjoint()).collect();
            let dzt = (0..nb).map(|k| scal[k].r.adjoint() * &dir.dz[k] * &scal[k].r).collect();
            (dxt, dzt)
        };
        let step = |dir: &Direction, dxt: &[CMat], dzt: &[CMat]| -> f64 {
            let mut a = f64::INFINITY;
            for k in 0..nb {
                a = a.min(max_step(&scal[k].lam, &dxt[k]));
                a = a.min(max_step(&scal[k].lam, &dzt[k]));
            }
            if dir.dtau < 0.0 {
                a = a.min(-tau / dir.dtau);
            }
            if dir.dkappa < 0.0 {
                a = a.min(-kappa / dir.dkappa);
            }
            a
        };

        // Predictor.
        let neg_x: Vec<CMat> = x.iter().map(|xb| -xb).collect();
        let aff = direction(&neg_x, 1.0, -tau * kappa);
        let (dxt_aff, dzt_aff) = scaled(&aff);
        let a_aff = step(&aff, &dxt_aff, &dzt_aff).min(1.0);
        let mu_aff = ((0..nb)
            .map(|k| {
                trace_inner(
                    &(&x[k] + &aff.dx[k] * C64::new(a_aff, 0.0)),
                    &(&z[k] + &aff.dz[k] * C64::new(a_aff, 0.0)),
                )
            })
            .sum::<f64>()
            + (tau + a_aff * aff.dtau) * (kappa + a_aff * aff.dkappa))
            / (nu + 1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let d: Vec<CMat> = (0..nb)
            .map(|k| {
                let lam = &scal[k].lam;
                let n = lam.len();
                let prod = &dxt_aff[k] * &dzt_aff[k];
                let rhs = CMat::from_fn(n, n, |i, j| {
                    let mut v = -(prod[(i, j)] + prod[(j, i)].conj()) * 0.5;
                    if i == j {
                        v += sigma * mu - lam[i] * lam[i];
                    }
                    v
                });
                let dl = CMat::from_fn(n, n, |i, j| rhs[(i, j)] * (2.0 / (lam[i] + lam[j])));
                &scal[k].r * dl * scal[k].r.adjoint()
            })
            .collect();
        let rtk = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
        let dir = direction(&d, 1.0 - sigma, rtk);
        let (dxt, dzt) = scaled(&dir);
        let alpha = (0.99 * step(&dir, &dxt, &dzt)).min(1.0);
        if !(alpha > 1e-12) || !alpha.is_finite() {
            return finish(
                SolveStatus::NumericalFailure,
                &x,
                tau,
                it,
                last,
                Some("step length collapsed".into()),
            );
        }

        let ac = C64::new(alpha, 0.0);
        for k in 0..nb {
            x[k] += &dir.dx[k] * ac;
            z[k] += &dir.dz[k] * ac;
            hermitize(&mut x[k]);
            hermitize(&mut z[k]);
        }
        y += &dir.dy * alpha;
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;

        // Keep the embedding well scaled: the HSD iterates are homogeneous.
        let scale = tau.max(kappa);
        if !(scale > 1e-200) {
            break;
        }
        if scale > 1e8 || scale < 1e-8 {
            let s = C64::new(1.0 / scale, 0.0);
            x.iter_mut().for_each(|b| *b *= s);
            z.iter_mut().for_each(|b| *b *= s);
            y /= scale;
            tau /= scale;
            kappa /= scale;
        }
    }
    finish(
        SolveStatus::NumericalFailure,
        &x,
        tau,
        settings.max_iter,
        last,
        Some("iteration limit reached".into()),
    )
}

/// Reduced tolerance accepted when the iteration stalls.
fn reduced_tol(tol: f64) -> f64 {
    tol.sqrt().max(tol)
}

/// Solve a validated program with the native backend.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
    let sf = StandardForm::compile(program);
    if !sf.inconsistent.is_empty() {
        return inconsistent_solution(program, &sf);
    }
    let mut out = run(&sf, settings);
    let red = reduced_tol(settings.tol);
    if out.status == SolveStatus::NumericalFailure && out.pres <= red && out.dres <= red && out.gap <= red {
        out.status = SolveStatus::AlmostOptimal;
    }
    let (psd, scalars) = sf.recover(&out.blocks);
    let objective = program.objective.eval(&psd, &scalars);
    ConicSolution {
        status: out.status,
        objective,
        psd,
        scalars,
        iterations: out.iterations,
        primal_residual: out.pres,
        dual_residual: out.dres,
        gap: out.gap,
        detail: out.detail,
    }
}

pub(crate) fn inconsistent_solution(program: &ConicProgram, sf: &StandardForm) -> ConicSolution {
    ConicSolution {
            status: SolveStatus::Infeasible,
            objective: f64::NAN,
            psd: program.psd.iter().map(|d| CMat::zeros(d.dim, d.dim)).collect(),
            scalars: vec![0.0; program.scalars.len()],
            iterations: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::NAN,
            gap: f64::NAN,
        detail: Some(format!("constant constraints violated: {}", sf.inconsistent.join(", "))),
    }
}
