//! Modelling layer for the convex subproblems: linear, second-order-cone and
//! complex semidefinite constraints over affine expressions, solved with
//! Clarabel through the real embedding of Hermitian matrices.

mod expr;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

pub use expr::{linear_combination, sum, Affine, ComplexAffine, HermitianVar};

use crate::linalg::{hermitian_defect, min_eigenvalue, CMat, C64};
use crate::{Error, Result};

/// Residual bound under which a solve is reported as optimal.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// `[[Re H, −Im H], [Im H, Re H]]`.
pub fn embed_hermitian(h: &CMat) -> Result<DMatrix<f64>> {
    if !h.is_square() {
        return Err(Error::dim("embedding needs a square matrix"));
    }
    let scale = h.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    if hermitian_defect(h) > 1e-10 * scale {
        return Err(Error::domain("embedding needs a Hermitian matrix"));
    }
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    Ok(out)
}

/// Upper-left complex block of an embedded matrix.
pub fn extract_hermitian(s: &DMatrix<f64>) -> CMat {
    let n = s.nrows() / 2;
    CMat::from_fn(n, n, |i, j| {
        C64::new(
            0.5 * (s[(i, j)] + s[(i + n, j + n)]),
            0.5 * (s[(i + n, j)] - s[(i, j + n)]),
        )
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// Every expression equals zero.
    Zero(Vec<Affine>),
    /// Every expression is nonnegative.
    NonNeg(Vec<Affine>),
    /// `‖(x_1, …)‖ ≤ x_0`.
    Soc(Vec<Affine>),
    /// The Hermitian matrix whose upper triangle (column-major, `i ≤ j`) is
    /// listed is positive semidefinite.
    Psd { n: usize, upper: Vec<ComplexAffine> },
}

impl Constraint {
    fn psd_entry(upper: &[ComplexAffine], i: usize, j: usize) -> ComplexAffine {
        if i <= j {
            upper[j * (j + 1) / 2 + i].clone()
        } else {
            upper[i * (i + 1) / 2 + j].conj()
        }
    }
}

/// Minimize an affine objective subject to conic constraints.
#[derive(Clone, Debug, Default)]
pub struct ConicProblem {
    num_vars: usize,
    objective: Affine,
    constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest constraint violation at `x`, relative to the constraint's scale.
    pub max_residual: f64,
    /// Dual ray certifying infeasibility.
    pub certificate: Option<Vec<f64>>,
    pub iterations: u32,
    pub detail: String,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }

    pub fn value(&self, a: &Affine) -> f64 {
        a.eval(&self.x)
    }

    pub fn cvalue(&self, z: &ComplexAffine) -> C64 {
        z.eval(&self.x)
    }

    pub fn hermitian(&self, h: &HermitianVar) -> CMat {
        h.value(&self.x)
    }

    /// Errors unless the status is optimal.
    pub fn require_optimal(&self, context: &str) -> Result<()> {
        match self.status {
            ConicStatus::Optimal => Ok(()),
            ConicStatus::Infeasible => Err(Error::Infeasible(context.to_string())),
            ConicStatus::NumericalFailure => Err(Error::Solver {
                context: context.to_string(),
                detail: self.detail.clone(),
            }),
        }
    }
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn real(&mut self) -> Affine {
        self.num_vars += 1;
        Affine::var(self.num_vars - 1)
    }

    pub fn reals(&mut self, n: usize) -> Vec<Affine> {
        (0..n).map(|_| self.real()).collect()
    }

    pub fn complex(&mut self) -> ComplexAffine {
        let re = self.real();
        let im = self.real();
        ComplexAffine::new(re, im)
    }

    pub fn complex_vec(&mut self, n: usize) -> Vec<ComplexAffine> {
        (0..n).map(|_| self.complex()).collect()
    }

    pub fn hermitian(&mut self, n: usize) -> HermitianVar {
        let h = HermitianVar {
            n,
            offset: self.num_vars,
        };
        self.num_vars += HermitianVar::num_params(n);
        h
    }

    pub fn minimize(&mut self, objective: Affine) {
        self.objective = objective.compacted();
    }

    pub fn eq(&mut self, a: Affine) {
        self.constraints.push(Constraint::Zero(vec![a.compacted()]));
    }

    pub fn eq_many(&mut self, items: Vec<Affine>) {
        if !items.is_empty() {
            self.constraints
                .push(Constraint::Zero(items.into_iter().map(Affine::compacted).collect()));
        }
    }

    /// `a ≥ 0`.
    pub fn nonneg(&mut self, a: Affine) {
        self.constraints.push(Constraint::NonNeg(vec![a.compacted()]));
    }

    pub fn nonneg_many(&mut self, items: Vec<Affine>) {
        if !items.is_empty() {
            self.constraints
                .push(Constraint::NonNeg(items.into_iter().map(Affine::compacted).collect()));
        }
    }

    /// `lhs ≤ rhs`.
    pub fn le(&mut self, lhs: &Affine, rhs: &Affine) {
        self.nonneg(rhs - lhs);
    }

    /// `‖xs‖ ≤ t`.
    pub fn soc(&mut self, t: Affine, xs: Vec<Affine>) {
        let mut items = Vec::with_capacity(xs.len() + 1);
        items.push(t.compacted());
        items.extend(xs.into_iter().map(Affine::compacted));
        self.constraints.push(Constraint::Soc(items));
    }

    /// `‖zs‖ ≤ t` for complex entries.
    pub fn soc_complex(&mut self, t: Affine, zs: &[ComplexAffine]) {
        let mut xs = Vec::with_capacity(2 * zs.len());
        for z in zs {
            xs.push(z.re.clone());
            xs.push(z.im.clone());
        }
        self.soc(t, xs);
    }

    /// `H ⪰ 0` where `entry(i, j)` gives `H_ij` for `i ≤ j`.
    pub fn psd<F: FnMut(usize, usize) -> ComplexAffine>(&mut self, n: usize, mut entry: F) {
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                let mut e = entry(i, j);
                if i == j {
                    e.im = Affine::zero();
                }
                upper.push(e.compacted());
            }
        }
        self.constraints.push(Constraint::Psd { n, upper });
    }

    pub fn psd_var(&mut self, h: &HermitianVar) {
        let h = h.clone();
        self.psd(h.n, |i, j| h.entry(i, j));
    }

    /// Largest relative violation of any constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let v = match c {
                Constraint::Zero(items) => {
                    let vals: Vec<f64> = items.iter().map(|a| a.eval(x)).collect();
                    let scale = items.iter().fold(1.0_f64, |m, a| m.max(a.constant.abs()));
                    vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale
                }
                Constraint::NonNeg(items) => {
                    let mut w: f64 = 0.0;
                    for a in items {
                        let scale = 1.0_f64.max(a.constant.abs());
                        w = w.max((-a.eval(x)).max(0.0) / scale);
                    }
                    w
                }
                Constraint::Soc(items) => {
                    let t = items[0].eval(x);
                    let norm = items[1..].iter().map(|a| a.eval(x).powi(2)).sum::<f64>().sqrt();
                    (norm - t).max(0.0) / 1.0_f64.max(t.abs()).max(norm)
                }
                Constraint::Psd { n, upper } => {
                    let m = CMat::from_fn(*n, *n, |i, j| Constraint::psd_entry(upper, i, j).eval(x));
                    let scale = m.iter().fold(1.0_f64, |s, z| s.max(z.norm()));
                    (-min_eigenvalue(&m)).max(0.0) / scale
                }
            };
            worst = worst.max(v);
        }
        worst
    }

    fn has_large_psd(&self) -> bool {
        self.constraints
            .iter()
            .any(|c| matches!(c, Constraint::Psd { n, .. } if 2 * n >= 16))
    }

    /// Assembles `A x + s = b`, `s ∈ K` for Clarabel.
    fn assemble(&self) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut push_row = |a: &Affine, scale: f64, b: &mut Vec<f64>| {
            let r = b.len();
            for &(j, c) in &a.terms {
                if c != 0.0 {
                    rows.push(r);
                    cols.push(j);
                    vals.push(-c * scale);
                }
            }
            b.push(a.constant * scale);
        };
        for c in &self.constraints {
            match c {
                Constraint::Zero(items) => {
                    items.iter().for_each(|a| push_row(a, 1.0, &mut b));
                    cones.push(SupportedConeT::ZeroConeT(items.len()));
                }
                Constraint::NonNeg(items) => {
                    items.iter().for_each(|a| push_row(a, 1.0, &mut b));
                    cones.push(SupportedConeT::NonnegativeConeT(items.len()));
                }
                Constraint::Soc(items) => {
                    items.iter().for_each(|a| push_row(a, 1.0, &mut b));
                    cones.push(SupportedConeT::SecondOrderConeT(items.len()));
                }
                Constraint::Psd { n, upper } => {
                    let n = *n;
                    let sqrt2 = std::f64::consts::SQRT_2;
                    // Real symmetric embedding of order 2n, upper triangle by columns.
                    for col in 0..2 * n {
                        for row in 0..=col {
                            let (expr, sign) = match (row < n, col < n) {
                                (true, true) => (Constraint::psd_entry(upper, row, col).re, 1.0),
                                (true, false) => {
                                    (Constraint::psd_entry(upper, row, col - n).im, -1.0)
                                }
                                (false, false) => {
                                    (Constraint::psd_entry(upper, row - n, col - n).re, 1.0)
                                }
                                (false, true) => unreachable!("row ≤ col"),
                            };
                            let scale = if row == col { sign } else { sign * sqrt2 };
                            push_row(&expr, scale, &mut b);
                        }
                    }
                    #[cfg(feature = "sdp")]
                    cones.push(SupportedConeT::PSDTriangleConeT(2 * n));
                }
            }
        }
        let a = CscMatrix::new_from_triplets(b.len(), self.num_vars, rows, cols, vals);
        (a, b, cones)
    }

    pub fn solve(&self) -> Result<ConicSolution> {
        if self.num_vars == 0 {
            return Err(Error::dim("problem has no variables"));
        }
        if !cfg!(feature = "sdp") && self.constraints.iter().any(|c| matches!(c, Constraint::Psd { .. })) {
            return Err(Error::Unsupported("semidefinite cones need the `sdp` feature".into()));
        }
        for c in &self.constraints {
            let bad = match c {
                Constraint::Soc(items) => items.is_empty(),
                Constraint::Psd { n, upper } => upper.len() != n * (n + 1) / 2,
                _ => false,
            };
            if bad {
                return Err(Error::dim("malformed cone constraint"));
            }
        }
        let (a, b, cones) = self.assemble();
        let n = self.num_vars;
        let p = CscMatrix::<f64>::zeros((n, n));
        let mut q = vec![0.0; n];
        for &(j, c) in &self.objective.terms {
            q[j] += c;
        }
        let method = if cfg!(feature = "sdp") && self.has_large_psd() {
            "faer"
        } else {
            "qdldl"
        };
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(200)
            .tol_feas(1e-9)
            .tol_gap_abs(1e-9)
            .tol_gap_rel(1e-9)
            .max_threads(1)
            .direct_solve_method(method.to_string())
            .build()
            .map_err(|e| Error::Solver {
                context: "settings".into(),
                detail: format!("{e:?}"),
            })?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| {
            Error::Solver {
                context: "setup".into(),
                detail: format!("{e:?}"),
            }
        })?;
        solver.solve();
        let sol = &solver.solution;
        let x = sol.x.clone();
        let objective = self.objective.eval(&x);
        let iterations = sol.iterations;
        let status = sol.status;
        let out = match status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let res = self.max_violation(&x);
                let ok = res <= FEASIBILITY_TOL && x.iter().all(|v| v.is_finite());
                ConicSolution {
                    status: if ok {
                        ConicStatus::Optimal
                    } else {
                        ConicStatus::NumericalFailure
                    },
                    x,
                    objective,
                    max_residual: res,
                    certificate: None,
                    iterations,
                    detail: if ok {
                        format!("{status:?}")
                    } else {
                        format!("{status:?} but residual {res:.3e} exceeds {FEASIBILITY_TOL:e}")
                    },
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => ConicSolution {
                status: ConicStatus::Infeasible,
                max_residual: f64::INFINITY,
                x,
                objective: f64::INFINITY,
                certificate: Some(sol.z.clone()),
                iterations,
                detail: format!("{status:?}"),
            },
            other => ConicSolution {
                status: ConicStatus::NumericalFailure,
                max_residual: self.max_violation(&x),
                x,
                objective,
                certificate: None,
                iterations,
                detail: format!("{other:?}"),
            },
        };
        Ok(out)
    }
}
