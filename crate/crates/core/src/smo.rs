//! Pairwise dual coordinate descent (SMO) for box- and equality-constrained
//! quadratic programs of the form
//!
//! ```text
//! min_a  0.5 a'Qa + p'a   s.t.  s'a = 0,  0 <= a_t <= C_t
//! ```
//!
//! with `Q_tu = s_t s_u K[idx_t, idx_u]` for a precomputed kernel matrix `K`.
//! Both the support vector classifier and the epsilon-insensitive regressor
//! reduce to this form. Working pairs are chosen by the second-order rule and
//! the solver stops once the maximal KKT violation falls below `tol`.

use nalgebra::DMatrix;

const TAU: f64 = 1e-12;

pub struct SmoProblem<'a> {
    pub kernel: &'a DMatrix<f64>,
    /// Kernel row/column of each dual variable.
    pub index: Vec<usize>,
    /// +1 or -1 per dual variable.
    pub sign: Vec<f64>,
    pub linear: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    /// Offset such that the decision function is `sum_t s_t a_t K(x_t, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal KKT violation.
    pub gap: f64,
}

impl SmoProblem<'_> {
    fn q(&self, t: usize, u: usize) -> f64 {
        self.sign[t] * self.sign[u] * self.kernel[(self.index[t], self.index[u])]
    }

    /// Entries of row `t` of `Q` at the active positions, read down a kernel
    /// column so the access is contiguous.
    fn fill_row(&self, t: usize, active: &[usize], out: &mut [f64]) {
        let col = self.kernel.column(self.index[t]);
        let st = self.sign[t];
        for &u in active {
            out[u] = st * self.sign[u] * col[self.index[u]];
        }
    }

    /// Maximal violating pair over the active set: the first index by
    /// largest violation, the second by second-order decrease. Returns the
    /// pair and the KKT gap; `qi` receives row `i` of `Q`.
    fn select(
        &self,
        alpha: &[f64],
        grad: &[f64],
        qd: &[f64],
        active: &[usize],
        qi: &mut [f64],
    ) -> Option<(usize, usize, f64)> {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for &t in active {
            let v = -self.sign[t] * grad[t];
            if self.in_up(alpha, t) && v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        let i = i_sel?;
        self.fill_row(i, active, qi);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for &t in active {
            if !self.in_low(alpha, t) {
                continue;
            }
            let sg = self.sign[t] * grad[t];
            gmax2 = gmax2.max(sg);
            let diff = gmax + sg;
            if diff > 0.0 {
                let quad = qd[i] + qd[t] - 2.0 * self.sign[i] * self.sign[t] * qi[t];
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(diff * diff) / quad;
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        j_sel.map(|j| (i, j, gmax + gmax2))
    }

    fn in_up(&self, alpha: &[f64], t: usize) -> bool {
        if self.sign[t] > 0.0 {
            !self.is_upper(alpha, t)
        } else {
            !Self::is_lower(alpha, t)
        }
    }

    fn in_low(&self, alpha: &[f64], t: usize) -> bool {
        if self.sign[t] > 0.0 {
            !Self::is_lower(alpha, t)
        } else {
            !self.is_upper(alpha, t)
        }
    }

    /// `grad = p + Q alpha` from scratch.
    fn reconstruct(&self, alpha: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(&self.linear);
        let all: Vec<usize> = (0..alpha.len()).collect();
        let mut row = vec![0.0; alpha.len()];
        for (u, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.fill_row(u, &all, &mut row);
                for (g, q) in grad.iter_mut().zip(&row) {
                    *g += q * a;
                }
            }
        }
    }

    /// Drops bounded variables that cannot re-enter a violating pair. The
    /// first time the gap gets close to `tol` everything is restored once.
    fn shrink(&self, alpha: &[f64], grad: &mut [f64], active: &mut Vec<usize>, unshrunk: &mut bool, tol: f64) {
        let (mut gmax1, mut gmax2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in active.iter() {
            let sg = self.sign[t] * grad[t];
            if self.in_up(alpha, t) {
                gmax1 = gmax1.max(-sg);
            }
            if self.in_low(alpha, t) {
                gmax2 = gmax2.max(sg);
            }
        }
        if !*unshrunk && gmax1 + gmax2 <= 10.0 * tol {
            *unshrunk = true;
            self.reconstruct(alpha, grad);
            *active = (0..alpha.len()).collect();
        }
        active.retain(|&t| {
            let sg = self.sign[t] * grad[t];
            match (self.in_up(alpha, t), self.in_low(alpha, t)) {
                (true, true) => true,
                (true, false) => -sg >= -gmax2,
                (false, true) => sg >= -gmax1,
                (false, false) => false,
            }
        });
    }

    fn is_upper(&self, alpha: &[f64], t: usize) -> bool {
        alpha[t] >= self.upper[t]
    }

    fn is_lower(alpha: &[f64], t: usize) -> bool {
        alpha[t] <= 0.0
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> SmoSolution {
        let l = self.linear.len();
        let qd: Vec<f64> = (0..l).map(|t| self.q(t, t)).collect();
        let mut alpha = vec![0.0; l];
        let mut grad = self.linear.clone();
        let mut iterations = 0;
        let mut converged = false;
        let mut gap = f64::INFINITY;
        let mut qi = vec![0.0; l];
        let mut qj = vec![0.0; l];
        let mut active: Vec<usize> = (0..l).collect();
        let mut unshrunk = false;
        let mut counter = l.min(1000);

        while iterations < max_iter {
            counter -= 1;
            if counter == 0 {
                counter = l.min(1000);
                self.shrink(&alpha, &mut grad, &mut active, &mut unshrunk, tol);
            }
            let step = self.select(&alpha, &grad, &qd, &active, &mut qi);
            let pair = match step {
                Some((i, j, g)) if g >= tol => Some((i, j, g)),
                other => {
                    if active.len() < l {
                        // Optimal on the shrunk set; recheck on the full set.
                        self.reconstruct(&alpha, &mut grad);
                        active = (0..l).collect();
                        counter = 1;
                        match self.select(&alpha, &grad, &qd, &active, &mut qi) {
                            Some((i, j, g)) if g >= tol => Some((i, j, g)),
                            other => {
                                gap = other.map_or(0.0, |(_, _, g)| g);
                                None
                            }
                        }
                    } else {
                        gap = other.map_or(0.0, |(_, _, g)| g);
                        None
                    }
                }
            };
            let Some((i, j, g)) = pair else {
                converged = true;
                break;
            };
            gap = g;
            iterations += 1;
            self.fill_row(j, &active, &mut qj);

            let (ci, cj) = (self.upper[i], self.upper[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if self.sign[i] != self.sign[j] {
                let quad = qd[i] + qd[j] + 2.0 * qi[j];
                let quad = if quad > 0.0 { quad } else { TAU };
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > ci - cj {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = ci - diff;
                    }
                } else if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = cj + diff;
                }
            } else {
                let quad = qd[i] + qd[j] - 2.0 * qi[j];
                let quad = if quad > 0.0 { quad } else { TAU };
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > ci {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = sum - ci;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > cj {
                    if alpha[j] > cj {
                        alpha[j] = cj;
                        alpha[i] = sum - cj;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for &t in &active {
                grad[t] += qi[t] * di + qj[t] * dj;
            }
        }

        let rho = self.rho(&alpha, &grad);
        SmoSolution {
            alpha,
            rho,
            iterations,
            converged,
            gap,
        }
    }

    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut n_free = 0usize;
        let mut sum_free = 0.0;
        for t in 0..alpha.len() {
            let yg = self.sign[t] * grad[t];
            if self.is_upper(alpha, t) {
                if self.sign[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if Self::is_lower(alpha, t) {
                if self.sign[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else if ub.is_finite() && lb.is_finite() {
            0.5 * (ub + lb)
        } else if ub.is_finite() {
            ub
        } else if lb.is_finite() {
            lb
        } else {
            0.0
        }
    }
}

/// Gram matrix of the rows of `x`.
pub fn linear_gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x * x.transpose()
}
