//! Dense convex QP: equality elimination through a null-space basis, then a
//! primal active-set method on the remaining inequality rows.
//!
//! The Hessian may be singular (switch flows and generators carry no cost),
//! so the subproblem solve follows descent rays in the Hessian null space
//! until a constraint blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold for treating singular values as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub struct QpOptions {
    pub max_iterations: usize,
    /// Constraint violation still accepted as feasible.
    pub feasibility_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            max_iterations: 500,
            feasibility_tol: 1e-9,
        }
    }
}

/// `min 1/2 x'Hx + c'x  s.t.  A x = b,  lower <= x <= upper` (bounds may be infinite).
#[derive(Clone, Debug)]
pub struct EqualityQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// `min 1/2 w'Hw + c'w  s.t.  G w <= h`.
#[derive(Clone, Debug)]
pub struct InequalityQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Affine parametrisation `x = x_p + Z w` of the equality-feasible set.
#[derive(Clone, Debug)]
pub struct Elimination {
    pub particular: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl Elimination {
    pub fn expand(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.particular + &self.basis * w
    }
}

/// Orthonormal basis of the null space of `a` (columns).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to at least n rows so the SVD returns a full right basis
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.max().max(1.0);
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= RANK_TOL * smax)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max().max(1.0);
    svd.solve(b, RANK_TOL * smax)
        .expect("both singular vector sets computed")
}

impl EqualityQp {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Fixed variables (`lower == upper`) join the equality rows before elimination.
    pub fn eliminate(&self, tol: f64) -> Result<Elimination> {
        let n = self.dim();
        let fixed: Vec<usize> = (0..n).filter(|&i| self.lower[i] == self.upper[i]).collect();
        let m = self.a_eq.nrows();
        let mut a = DMatrix::zeros(m + fixed.len(), n);
        let mut b = DVector::zeros(m + fixed.len());
        a.view_mut((0, 0), (m, n)).copy_from(&self.a_eq);
        b.rows_mut(0, m).copy_from(&self.b_eq);
        for (k, &i) in fixed.iter().enumerate() {
            a[(m + k, i)] = 1.0;
            b[m + k] = self.lower[i];
        }
        let particular = least_squares(&a, &b);
        let residual = (&a * &particular - &b).amax();
        if residual > tol {
            return Err(Error::Infeasible(format!(
                "equality constraints are inconsistent (residual {residual:.3e})"
            )));
        }
        Ok(Elimination {
            particular,
            basis: null_space(&a),
        })
    }

    /// Bound rows expressed in the reduced variables.
    pub fn reduce(&self, elim: &Elimination, tol: f64) -> Result<InequalityQp> {
        let z = &elim.basis;
        let xp = &elim.particular;
        let k = z.ncols();
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..self.dim() {
            if self.lower[i] == self.upper[i] {
                continue;
            }
            let zi = z.row(i).transpose();
            let movable = zi.amax() > RANK_TOL;
            if self.upper[i].is_finite() {
                if movable {
                    rows.push(zi.clone());
                    rhs.push(self.upper[i] - xp[i]);
                } else if xp[i] > self.upper[i] + tol {
                    return Err(Error::Infeasible(format!("variable {i} pinned above its upper bound")));
                }
            }
            if self.lower[i].is_finite() {
                if movable {
                    rows.push(-zi);
                    rhs.push(xp[i] - self.lower[i]);
                } else if xp[i] < self.lower[i] - tol {
                    return Err(Error::Infeasible(format!("variable {i} pinned below its lower bound")));
                }
            }
        }
        let g = if rows.is_empty() {
            DMatrix::zeros(0, k)
        } else {
            DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>())
        };
        Ok(InequalityQp {
            hessian: z.transpose() * &self.hessian * z,
            linear: z.transpose() * (&self.hessian * xp + &self.linear),
            g,
            h: DVector::from_vec(rhs),
        })
    }

    pub fn solve(&self, opts: &QpOptions) -> Result<QpSolution> {
        let elim = self.eliminate(opts.feasibility_tol)?;
        let reduced = self.reduce(&elim, opts.feasibility_tol)?;
        let inner = reduced.solve(opts)?;
        let mut x = elim.expand(&inner.x);
        for i in 0..self.dim() {
            if self.lower[i] == self.upper[i] {
                x[i] = self.lower[i];
            }
        }
        let eq_residual = if self.a_eq.nrows() > 0 {
            (&self.a_eq * &x - &self.b_eq).amax()
        } else {
            0.0
        };
        Ok(QpSolution {
            objective: self.objective(&x),
            kkt_residual: inner.kkt_residual.max(eq_residual),
            iterations: inner.iterations,
            x,
        })
    }
}

struct ActiveSetResult {
    w: DVector<f64>,
    working: Vec<usize>,
    multipliers: DVector<f64>,
    iterations: usize,
}

impl InequalityQp {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.hessian * w)) + self.linear.dot(w)
    }

    pub fn max_violation(&self, w: &DVector<f64>) -> f64 {
        if self.g.nrows() == 0 {
            return 0.0;
        }
        (&self.g * w - &self.h).max().max(0.0)
    }

    /// Phase 1 (minimise a shared slack) followed by the active-set phase.
    pub fn solve(&self, opts: &QpOptions) -> Result<QpSolution> {
        let k = self.dim();
        let start = DVector::zeros(k);
        let w0 = if self.max_violation(&start) > 0.0 {
            self.phase_one(start, opts)?
        } else {
            start
        };
        let res = active_set(
            &self.hessian,
            &self.linear,
            &self.g,
            &self.h,
            w0,
            opts.max_iterations,
        )?;
        let kkt = self.kkt_residual(&res.w, &res.working, &res.multipliers);
        Ok(QpSolution {
            objective: self.objective(&res.w),
            kkt_residual: kkt,
            iterations: res.iterations,
            x: res.w,
        })
    }

    fn phase_one(&self, w0: DVector<f64>, opts: &QpOptions) -> Result<DVector<f64>> {
        let k = self.dim();
        let rows = self.g.nrows();
        // variables (w, s): G w - s <= h, -s <= 0
        let mut g = DMatrix::zeros(rows + 1, k + 1);
        g.view_mut((0, 0), (rows, k)).copy_from(&self.g);
        for r in 0..rows {
            g[(r, k)] = -1.0;
        }
        g[(rows, k)] = -1.0;
        let mut h = DVector::zeros(rows + 1);
        h.rows_mut(0, rows).copy_from(&self.h);
        let mut c = DVector::zeros(k + 1);
        c[k] = 1.0;
        let mut start = DVector::zeros(k + 1);
        start.rows_mut(0, k).copy_from(&w0);
        start[k] = self.max_violation(&w0);
        let res = active_set(&DMatrix::zeros(k + 1, k + 1), &c, &g, &h, start, opts.max_iterations)?;
        let s = res.w[k];
        if s > opts.feasibility_tol {
            return Err(Error::Infeasible(format!(
                "no point satisfies the inequality rows (min violation {s:.3e})"
            )));
        }
        Ok(res.w.rows(0, k).into_owned())
    }

    fn kkt_residual(&self, w: &DVector<f64>, working: &[usize], lambda: &DVector<f64>) -> f64 {
        let mut stationarity = &self.hessian * w + &self.linear;
        let mut dual = 0.0f64;
        let mut complementarity = 0.0f64;
        for (idx, &row) in working.iter().enumerate() {
            let l = lambda[idx];
            stationarity += self.g.row(row).transpose() * l;
            dual = dual.max(-l);
            let slack = self.h[row] - self.g.row(row).dot(&w.transpose());
            complementarity = complementarity.max((l * slack).abs());
        }
        let stat = if stationarity.is_empty() { 0.0 } else { stationarity.amax() };
        stat.max(dual).max(complementarity).max(self.max_violation(w))
    }
}

fn working_rows(g: &DMatrix<f64>, working: &[usize]) -> DMatrix<f64> {
    let k = g.ncols();
    let mut out = DMatrix::zeros(working.len(), k);
    for (i, &r) in working.iter().enumerate() {
        out.row_mut(i).copy_from(&g.row(r));
    }
    out
}

/// Primal active-set iteration from a feasible `w`. Blocking rows enter the
/// working set; the row with the most negative multiplier leaves it.
fn active_set(
    hess: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    mut w: DVector<f64>,
    max_iterations: usize,
) -> Result<ActiveSetResult> {
    let k = w.len();
    let mut working: Vec<usize> = Vec::new();
    let hscale = hess.amax().max(1.0);
    for iter in 0..max_iterations {
        let grad = hess * &w + c;
        let gw = working_rows(g, &working);
        let z = null_space(&gw);
        let mut direction = DVector::zeros(k);
        let mut ray = false;
        if z.ncols() > 0 {
            let hr = z.transpose() * hess * &z;
            let gr = z.transpose() * &grad;
            let eig = SymmetricEigen::new(hr);
            let mut u_null = DVector::zeros(z.ncols());
            let mut u_newton = DVector::zeros(z.ncols());
            for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                let e = eig.eigenvectors.column(i);
                let coef = e.dot(&gr);
                if lam <= RANK_TOL * hscale {
                    u_null -= e * coef;
                } else {
                    u_newton -= e * (coef / lam);
                }
            }
            if u_null.norm() > 1e-13 * (1.0 + gr.norm()) {
                ray = true;
                direction = &z * u_null;
            } else {
                direction = &z * u_newton;
            }
        }

        if !ray && direction.amax() <= 1e-15 * (1.0 + w.amax()) {
            let lambda = if working.is_empty() {
                DVector::zeros(0)
            } else {
                least_squares(&gw.transpose(), &(-&grad))
            };
            let tol = 1e-12 * (1.0 + grad.amax());
            let worst = lambda
                .iter()
                .enumerate()
                .filter(|(_, &l)| l < -tol)
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i);
            match worst {
                None => {
                    return Ok(ActiveSetResult {
                        w,
                        working,
                        multipliers: lambda,
                        iterations: iter + 1,
                    })
                }
                Some(i) => {
                    working.remove(i);
                    continue;
                }
            }
        }

        // ratio test over rows outside the working set
        let mut step = if ray { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        let dnorm = direction.norm();
        for r in 0..g.nrows() {
            if working.contains(&r) {
                continue;
            }
            let gr = g.row(r);
            let rate = gr.dot(&direction.transpose());
            if rate <= 1e-14 * gr.norm() * dnorm {
                continue;
            }
            let slack = (h[r] - gr.dot(&w.transpose())).max(0.0);
            let alpha = slack / rate;
            if alpha < step {
                step = alpha;
                blocking = Some(r);
            }
        }
        if !step.is_finite() {
            return Err(Error::Infeasible("objective unbounded below".into()));
        }
        w += &direction * step;
        if let Some(r) = blocking {
            working.push(r);
        }
    }
    Err(Error::IterationLimit(max_iterations))
}
