//! Dense tableau simplex for small linear programs.
//!
//! Solves `max c^T x` subject to equality rows, `<=` rows and `x >= 0`.
//! A caller that knows a primal-feasible basis can pass it as
//! `(row, column)` pairs and skip phase one entirely; otherwise artificial
//! variables are added where no obvious basic column exists.
//!
//! Pricing is Dantzig's rule, falling back to Bland's rule during long runs
//! of degenerate pivots so the method cannot cycle.

use crate::error::{Error, Result};

/// Reduced-cost and feasibility tolerance.
pub const SOLVER_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Default)]
pub struct SimplexOptions {
    /// `None` picks `50 * (rows + columns)`, at least 10 000.
    pub max_pivots: Option<usize>,
}

impl LinearProgram {
    pub fn new(num_vars: usize, objective: Vec<f64>) -> Self {
        LinearProgram {
            num_vars,
            objective,
            rows: Vec::new(),
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }
}

struct Tableau {
    m: usize,
    width: usize,
    /// Row-major `m x width` coefficients.
    a: Vec<f64>,
    rhs: Vec<f64>,
    /// Reduced costs `c_j - c_B B^-1 A_j` of the current phase.
    d: Vec<f64>,
    value: f64,
    basis: Vec<usize>,
    /// Columns that may never enter (artificials during phase two).
    blocked: Vec<bool>,
    pivots: usize,
    /// Unperturbed right-hand side, carried through pivots while `rhs`
    /// holds a perturbed copy. Empty when no perturbation is active.
    rhs_true: Vec<f64>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width + j]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let w = self.width;
        let p = self.a[r * w + col];
        let inv = 1.0 / p;
        {
            let row = &mut self.a[r * w..(r + 1) * w];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[col] = 1.0;
        }
        self.rhs[r] *= inv;
        let tracked = !self.rhs_true.is_empty();
        if tracked {
            self.rhs_true[r] *= inv;
        }
        let true_r = if tracked { self.rhs_true[r] } else { 0.0 };

        let (before, rest) = self.a.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let rhs_r = self.rhs[r];
        for (i, row) in before.chunks_exact_mut(w).enumerate().chain(
            after
                .chunks_exact_mut(w)
                .enumerate()
                .map(|(k, row)| (k + r + 1, row)),
        ) {
            let f = row[col];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in row.iter_mut().zip(prow.iter()) {
                if *pv != 0.0 {
                    *v -= f * pv;
                }
            }
            row[col] = 0.0;
            self.rhs[i] -= f * rhs_r;
            if self.rhs[i].abs() < 1e-15 {
                self.rhs[i] = 0.0;
            }
            if tracked {
                self.rhs_true[i] -= f * true_r;
                if self.rhs_true[i].abs() < 1e-15 {
                    self.rhs_true[i] = 0.0;
                }
            }
        }

        let f = self.d[col];
        if f != 0.0 {
            for (v, pv) in self.d.iter_mut().zip(prow.iter()) {
                if *pv != 0.0 {
                    *v -= f * pv;
                }
            }
            self.d[col] = 0.0;
            self.value += f * rhs_r;
        }
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Recompute reduced costs for objective `c` (length `width`).
    fn set_objective(&mut self, c: &[f64]) {
        self.d.copy_from_slice(c);
        self.value = 0.0;
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.a[i * self.width..(i + 1) * self.width];
            for (d, v) in self.d.iter_mut().zip(row) {
                *d -= cb * v;
            }
            self.value += cb * self.rhs[i];
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let candidates = self
            .d
            .iter()
            .enumerate()
            .filter(|(j, &d)| d > SOLVER_TOL && !self.blocked[*j]);
        if bland {
            candidates.map(|(j, _)| j).next()
        } else {
            candidates
                .fold(None, |best: Option<(usize, f64)>, (j, &d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((j, d)),
                })
                .map(|(j, _)| j)
        }
    }

    fn leaving(&self, col: usize, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..self.m {
            let t = self.at(i, col);
            if t <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs[i].max(0.0) / t;
            best = match best {
                None => Some((i, ratio, t)),
                Some((bi, br, bt)) => {
                    let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                    let better = if tie {
                        if bland {
                            self.basis[i] < self.basis[bi]
                        } else {
                            t > bt
                        }
                    } else {
                        ratio < br
                    };
                    if better {
                        Some((i, ratio, t))
                    } else {
                        Some((bi, br, bt))
                    }
                }
            };
        }
        best.map(|(i, _, _)| i)
    }

    /// Runs the simplex method on the current objective. Returns `false` when
    /// the objective is unbounded.
    fn optimize(&mut self, max_pivots: usize) -> Result<bool> {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_STREAK;
            let Some(col) = self.entering(bland) else {
                return Ok(true);
            };
            let Some(r) = self.leaving(col, bland) else {
                return Ok(false);
            };
            if self.pivots >= max_pivots {
                return Err(Error::IterationCap {
                    iterations: self.pivots,
                    best_bound: self.value,
                });
            }
            if self.rhs[r] <= SOLVER_TOL {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, col);
        }
    }

    /// Shift every basic value not held by an artificial up by a small,
    /// row-specific amount so that no basic variable sits at zero. This
    /// removes the long degenerate stalls occupancy LPs otherwise produce.
    fn perturb(&mut self) {
        const GOLDEN: f64 = 0.618_033_988_749_894_9;
        self.rhs_true = self.rhs.clone();
        for i in 0..self.m {
            if self.blocked[self.basis[i]] {
                continue;
            }
            let u = ((i + 1) as f64 * GOLDEN).fract();
            self.rhs[i] += 1e-7 * (1.0 + self.rhs[i].abs()) * (1.0 + u);
        }
    }

    /// Drop the perturbation and restore primal feasibility with dual
    /// simplex pivots; reduced costs stay optimal throughout.
    fn unperturb(&mut self, max_pivots: usize) -> Result<()> {
        self.rhs = std::mem::take(&mut self.rhs_true);
        loop {
            let Some(r) = (0..self.m)
                .filter(|&i| self.rhs[i] < -SOLVER_TOL)
                .min_by(|&x, &y| self.rhs[x].total_cmp(&self.rhs[y]))
            else {
                break;
            };
            let mut best: Option<(usize, f64, f64)> = None;
            for j in 0..self.width {
                let a = self.at(r, j);
                if self.blocked[j] || a >= -PIVOT_TOL {
                    continue;
                }
                let ratio = self.d[j].min(0.0) / a;
                best = match best {
                    Some((_, br, ba)) if ratio > br || (ratio == br && a.abs() <= ba) => best,
                    _ => Some((j, ratio, a.abs())),
                };
            }
            let Some((col, _, _)) = best else {
                return Err(Error::Numerical(
                    "basis lost feasibility after removing the perturbation".into(),
                ));
            };
            if self.pivots >= max_pivots {
                return Err(Error::IterationCap {
                    iterations: self.pivots,
                    best_bound: self.value,
                });
            }
            self.pivot(r, col);
        }
        for v in &mut self.rhs {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(())
    }
}

/// Solve `lp`. `initial_basis` lists `(row, column)` pairs of structural
/// columns forming part of a feasible basis; rows it leaves uncovered get a
/// slack or artificial basic variable. An infeasible or singular hint is
/// dropped silently in favour of a cold start.
pub fn solve(
    lp: &LinearProgram,
    initial_basis: Option<&[(usize, usize)]>,
    opts: &SimplexOptions,
) -> Result<LpOutcome> {
    if lp.objective.len() != lp.num_vars {
        return Err(Error::Dimension {
            table: "LP objective",
            expected: lp.num_vars,
            found: lp.objective.len(),
        });
    }
    if let Some(hint) = initial_basis {
        if let Some(out) = try_solve(lp, Some(hint), opts)? {
            return Ok(out);
        }
    }
    Ok(try_solve(lp, None, opts)?.expect("cold start always produces an outcome"))
}

fn try_solve(
    lp: &LinearProgram,
    hint: Option<&[(usize, usize)]>,
    opts: &SimplexOptions,
) -> Result<Option<LpOutcome>> {
    let m = lp.rows.len();
    let n = lp.num_vars;
    let slack_of: Vec<Option<usize>> = {
        let mut next = n;
        lp.rows
            .iter()
            .map(|r| match r.kind {
                RowKind::Le => {
                    next += 1;
                    Some(next - 1)
                }
                RowKind::Eq => None,
            })
            .collect()
    };
    let num_slack = slack_of.iter().flatten().count();
    let base_width = n + num_slack;

    let mut a = vec![0.0; m * base_width];
    let mut rhs = vec![0.0; m];
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, v) in &row.coeffs {
            if j >= n {
                return Err(Error::OutOfRange {
                    what: "LP column",
                    index: j,
                    limit: n,
                });
            }
            a[i * base_width + j] += v;
        }
        if let Some(s) = slack_of[i] {
            a[i * base_width + s] = 1.0;
        }
        rhs[i] = row.rhs;
    }

    let mut t = Tableau {
        m,
        width: base_width,
        a,
        rhs,
        d: vec![0.0; base_width],
        value: 0.0,
        basis: vec![usize::MAX; m],
        blocked: vec![false; base_width],
        pivots: 0,
        rhs_true: Vec::new(),
    };

    if let Some(hint) = hint {
        for &(r, col) in hint {
            if r >= m || col >= n || t.basis[r] != usize::MAX {
                return Ok(None);
            }
            if t.at(r, col).abs() < 1e-9 {
                return Ok(None);
            }
            t.pivot(r, col);
        }
        if (0..m).any(|i| t.basis[i] != usize::MAX && t.rhs[i] < -SOLVER_TOL) {
            return Ok(None);
        }
        for i in 0..m {
            if t.basis[i] != usize::MAX && t.rhs[i] < 0.0 {
                t.rhs[i] = 0.0;
            }
        }
    }

    // Remaining rows: slack if it can be basic at a non-negative value,
    // otherwise flip the sign of the row and add an artificial.
    let mut needs_art = Vec::new();
    for i in 0..m {
        if t.basis[i] != usize::MAX {
            continue;
        }
        match slack_of[i] {
            Some(s) if t.rhs[i] >= 0.0 && t.at(i, s) == 1.0 => t.basis[i] = s,
            _ => {
                if t.rhs[i] < 0.0 {
                    for v in &mut t.a[i * base_width..(i + 1) * base_width] {
                        *v = -*v;
                    }
                    t.rhs[i] = -t.rhs[i];
                }
                needs_art.push(i);
            }
        }
    }

    let max_pivots = opts
        .max_pivots
        .unwrap_or_else(|| (50 * (m + base_width + needs_art.len())).max(10_000));

    if !needs_art.is_empty() {
        let width = base_width + needs_art.len();
        let mut a = vec![0.0; m * width];
        for i in 0..m {
            a[i * width..i * width + base_width]
                .copy_from_slice(&t.a[i * base_width..(i + 1) * base_width]);
        }
        for (k, &i) in needs_art.iter().enumerate() {
            a[i * width + base_width + k] = 1.0;
            t.basis[i] = base_width + k;
        }
        t.a = a;
        t.width = width;
        t.d = vec![0.0; width];
        t.blocked = vec![false; width];

        let mut phase1 = vec![0.0; width];
        for c in &mut phase1[base_width..] {
            *c = -1.0;
        }
        t.set_objective(&phase1);
        if !t.optimize(max_pivots)? {
            return Err(Error::Numerical("phase one reported unbounded".into()));
        }
        let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if t.value < -1e-9 * scale {
            return Ok(Some(LpOutcome::Infeasible));
        }
        // Drive zero-valued artificials out of the basis where possible.
        for i in 0..m {
            if t.basis[i] < base_width {
                continue;
            }
            let col = (0..base_width)
                .filter(|&j| t.at(i, j).abs() > 1e-9)
                .max_by(|&x, &y| t.at(i, x).abs().total_cmp(&t.at(i, y).abs()));
            if let Some(col) = col {
                t.pivot(i, col);
            }
        }
        for b in &mut t.blocked[base_width..] {
            *b = true;
        }
    }

    let mut c = vec![0.0; t.width];
    c[..n].copy_from_slice(&lp.objective);
    t.set_objective(&c);
    t.perturb();
    if !t.optimize(max_pivots)? {
        return Ok(Some(LpOutcome::Unbounded));
    }
    t.unperturb(max_pivots)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        let b = t.basis[i];
        if b < n {
            x[b] = t.rhs[i].max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(Some(LpOutcome::Optimal { x, objective }))
}
