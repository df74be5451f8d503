//! Damped Newton for constrained saddle systems
//!
//! ```text
//! A(u) - M λ = rhs
//!      B u   = targets
//! ```
//!
//! with a Picard fallback. Without constraints this is plain damped Newton.

use super::tpfa::NonlinearOperator;
use crate::error::{NlmcError, Result};
use crate::linalg::{norm_inf, SparseLu, TripletBuilder};
use faer::sparse::linalg::solvers::SymbolicLu;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Backtracking factor applied to rejected steps.
    pub damping: f64,
    pub max_backtracks: usize,
    pub picard_fallback: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_iter: 40,
            damping: 0.5,
            max_backtracks: 12,
            picard_fallback: true,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(NlmcError::InvalidArgument(
                "Newton tolerances must be > 0 and max_iter >= 1".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(NlmcError::InvalidArgument("damping must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Sparse constraint rows `B` and multiplier columns `M` (defaults to `Bᵀ`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub columns: Option<Vec<Vec<(usize, f64)>>>,
}

impl Constraints {
    pub fn none() -> Self {
        Self::default()
    }
    pub fn transpose_columns(rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self {
            rows,
            columns: None,
        }
    }
    pub fn len(&self) -> usize {
        self.rows.len()
    }
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
    fn column(&self, c: usize) -> &[(usize, f64)] {
        match &self.columns {
            Some(cols) => &cols[c],
            None => &self.rows[c],
        }
    }
    pub fn apply_b(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(i, w)| w * u[i]).sum())
            .collect()
    }
    fn magnitude_b(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(i, w)| (w * u[i]).abs()).sum())
            .collect()
    }
    /// out -= M λ
    fn sub_m(&self, lambda: &[f64], out: &mut [f64]) {
        for (c, &l) in lambda.iter().enumerate() {
            for &(i, w) in self.column(c) {
                out[i] -= w * l;
            }
        }
    }
    fn add_abs_m(&self, lambda: &[f64], out: &mut [f64]) {
        for (c, &l) in lambda.iter().enumerate() {
            for &(i, w) in self.column(c) {
                out[i] += (w * l).abs();
            }
        }
    }
    fn push_blocks(&self, n: usize, t: &mut TripletBuilder) {
        for (c, row) in self.rows.iter().enumerate() {
            for &(i, w) in row {
                t.push(n + c, i, w);
            }
            for &(i, w) in self.column(c) {
                t.push(i, n + c, -w);
            }
        }
    }
}

/// Which KKT factorization a solution keeps for tangent solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorPolicy {
    None,
    /// The last Newton Jacobian, which for nonlinear problems lags the
    /// returned state by one step.
    Reuse,
    /// The Jacobian at the returned state.
    Exact,
}

pub struct SaddleSolution {
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    /// ‖A(u) - Mλ - rhs‖∞ at the returned state.
    pub residual_u: f64,
    /// ‖B u - targets‖∞ at the returned state.
    pub residual_c: f64,
    pub used_picard: bool,
    factor: Option<SparseLu>,
}

impl SaddleSolution {
    /// Solves `J [du; dλ] = [ru; rc]` with the KKT Jacobian at the solution;
    /// requires a [`FactorPolicy`] other than `None`.
    pub fn solve_jacobian(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let f = self
            .factor
            .as_ref()
            .ok_or_else(|| NlmcError::InvalidArgument("solution kept no factorization".into()))?;
        f.solve_columns(rhs)
    }

    /// Sensitivities d(u, λ)/d targets_c for each listed constraint `c`.
    pub fn tangents(&self, constraints: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.u.len();
        let total = n + self.lambda.len();
        let rhs: Vec<Vec<f64>> = constraints
            .iter()
            .map(|&c| {
                let mut e = vec![0.0; total];
                e[n + c] = 1.0;
                e
            })
            .collect();
        self.solve_jacobian(&rhs)
    }

    pub fn has_factor(&self) -> bool {
        self.factor.is_some()
    }
}

struct Residual {
    ru: Vec<f64>,
    rc: Vec<f64>,
    tol_u: f64,
    tol_c: f64,
}

impl Residual {
    fn converged(&self) -> bool {
        norm_inf(&self.ru) <= self.tol_u && norm_inf(&self.rc) <= self.tol_c
    }
    fn merit(&self, su: f64, sc: f64) -> f64 {
        let a: f64 = self.ru.iter().map(|v| v * v).sum::<f64>().sqrt() / su;
        let b: f64 = self.rc.iter().map(|v| v * v).sum::<f64>().sqrt() / sc;
        a + b
    }
}

pub struct SaddleProblem<'a> {
    pub op: &'a dyn NonlinearOperator,
    pub rhs: &'a [f64],
    pub constraints: &'a Constraints,
    pub targets: &'a [f64],
    /// Shared symbolic factorization for repeated solves with the same pattern.
    pub symbolic: Option<&'a OnceLock<SymbolicLu<usize>>>,
}

impl<'a> SaddleProblem<'a> {
    pub fn new(
        op: &'a dyn NonlinearOperator,
        rhs: &'a [f64],
        constraints: &'a Constraints,
        targets: &'a [f64],
    ) -> Self {
        Self {
            op,
            rhs,
            constraints,
            targets,
            symbolic: None,
        }
    }

    pub fn with_symbolic(mut self, s: &'a OnceLock<SymbolicLu<usize>>) -> Self {
        self.symbolic = Some(s);
        self
    }

    fn dims(&self) -> (usize, usize) {
        (self.op.dim(), self.constraints.len())
    }

    fn residual(&self, u: &[f64], lambda: &[f64], cfg: &NewtonConfig) -> Residual {
        let (n, _) = self.dims();
        let mut ru = vec![0.0; n];
        self.op.apply(u, &mut ru);
        let mut mag = vec![0.0; n];
        self.op.magnitude(u, &mut mag);
        self.constraints.sub_m(lambda, &mut ru);
        self.constraints.add_abs_m(lambda, &mut mag);
        for i in 0..n {
            ru[i] -= self.rhs[i];
            mag[i] += self.rhs[i].abs();
        }
        let mut rc = self.constraints.apply_b(u);
        let mut magc = self.constraints.magnitude_b(u);
        for (c, t) in self.targets.iter().enumerate() {
            rc[c] -= t;
            magc[c] += t.abs();
        }
        Residual {
            ru,
            rc,
            tol_u: cfg.abs_tol + cfg.rel_tol * norm_inf(&mag),
            tol_c: cfg.abs_tol + cfg.rel_tol * norm_inf(&magc),
        }
    }

    fn factor(&self, t: &TripletBuilder) -> Result<SparseLu> {
        let a = t.to_matrix()?;
        match self.symbolic {
            Some(cell) => {
                if cell.get().is_none() {
                    let s = SymbolicLu::try_new(a.symbolic())
                        .map_err(|e| NlmcError::Singular(format!("symbolic LU: {e:?}")))?;
                    let _ = cell.set(s);
                }
                SparseLu::factor_matrix(&a, cell.get())
            }
            None => SparseLu::factor_matrix(&a, None),
        }
    }

    fn kkt(&self, u: &[f64], secant: bool) -> Result<SparseLu> {
        let (n, m) = self.dims();
        let mut t = TripletBuilder::with_capacity(n + m, 5 * n + 2 * m);
        if secant {
            self.op.secant(u, &mut t);
        } else {
            self.op.jacobian(u, &mut t);
        }
        self.constraints.push_blocks(n, &mut t);
        self.factor(&t)
    }

    pub fn solve(
        &self,
        init: Option<(&[f64], &[f64])>,
        cfg: &NewtonConfig,
        policy: FactorPolicy,
    ) -> Result<SaddleSolution> {
        cfg.validate()?;
        let (n, m) = self.dims();
        if self.rhs.len() != n || self.targets.len() != m {
            return Err(NlmcError::InvalidArgument(
                "saddle problem dimensions do not match".into(),
            ));
        }
        let (mut u, mut lambda) = match init {
            Some((u0, l0)) => (u0.to_vec(), l0.to_vec()),
            None => (vec![0.0; n], vec![0.0; m]),
        };
        let linear = self.op.is_linear();
        let mut res = self.residual(&u, &lambda, cfg);
        let mut last_factor: Option<(SparseLu, bool)> = None;
        let mut iterations = 0;
        let mut newton_ok = res.converged();
        let mut history = Vec::new();
        while !newton_ok && iterations < cfg.max_iter {
            iterations += 1;
            let mut rhs = Vec::with_capacity(n + m);
            rhs.extend(res.ru.iter().map(|v| -v));
            rhs.extend(res.rc.iter().map(|v| -v));
            let solved = self.kkt(&u, false).and_then(|lu| lu.solve(&rhs).map(|s| (lu, s)));
            let (lu, step) = match solved {
                Ok(v) => v,
                Err(e) if !linear && cfg.picard_fallback => {
                    log::debug!("Newton Jacobian failed: {e}");
                    break;
                }
                Err(e) => return Err(e),
            };
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=cfg.max_backtracks {
                let ut: Vec<f64> = (0..n).map(|i| u[i] + alpha * step[i]).collect();
                let lt: Vec<f64> = (0..m).map(|c| lambda[c] + alpha * step[n + c]).collect();
                let rt = self.residual(&ut, &lt, cfg);
                // scales from both points: at u = 0 the magnitude terms vanish
                let su = res.tol_u.max(rt.tol_u).max(1e-300);
                let sc = res.tol_c.max(rt.tol_c).max(1e-300);
                let phi0 = res.merit(su, sc);
                let phi = rt.merit(su, sc);
                if phi.is_finite() && (phi <= (1.0 - 1e-4 * alpha) * phi0 || rt.converged()) {
                    accepted = Some((ut, lt, rt));
                    break;
                }
                alpha *= cfg.damping;
            }
            last_factor = Some((lu, linear));
            match accepted {
                Some((ut, lt, rt)) => {
                    let du = norm_inf(&step[..n]) * alpha;
                    u = ut;
                    lambda = lt;
                    res = rt;
                    history.push(norm_inf(&res.ru).max(norm_inf(&res.rc)));
                    if res.converged() {
                        newton_ok = true;
                    } else if du <= 1e-15 * norm_inf(&u).max(1e-300) {
                        // round-off floor: accept if within a few orders of the tolerance
                        newton_ok = norm_inf(&res.ru) <= 1e3 * res.tol_u
                            && norm_inf(&res.rc) <= 1e3 * res.tol_c;
                        break;
                    }
                }
                None => {
                    // no descent at the round-off floor
                    newton_ok = norm_inf(&res.ru) <= 1e3 * res.tol_u && norm_inf(&res.rc) <= 1e3 * res.tol_c;
                    if !newton_ok {
                        log::debug!(
                            "line search failed at residual {:.3e} (tol {:.3e})",
                            norm_inf(&res.ru),
                            res.tol_u
                        );
                    }
                    break;
                }
            }
        }
        let mut used_picard = false;
        if !newton_ok && cfg.picard_fallback && !linear {
            log::debug!("Newton stalled after {iterations} iterations; switching to Picard");
            used_picard = true;
            let (u0, l0) = match init {
                Some((a, b)) => (a.to_vec(), b.to_vec()),
                None => (vec![0.0; n], vec![0.0; m]),
            };
            u = u0;
            lambda = l0;
            res = self.residual(&u, &lambda, cfg);
            let mut k = 0;
            while !res.converged() && k < 4 * cfg.max_iter {
                k += 1;
                iterations += 1;
                // A(u) ≈ S(u_k) u + (A(u_k) - S(u_k) u_k)
                let lu = self.kkt(&u, true)?;
                let mut lag = vec![0.0; n];
                self.op.apply(&u, &mut lag);
                let mut su = TripletBuilder::new(n);
                self.op.secant(&u, &mut su);
                let su_u = su.apply(&u);
                let mut rhs = Vec::with_capacity(n + m);
                for i in 0..n {
                    rhs.push(self.rhs[i] - (lag[i] - su_u[i]));
                }
                rhs.extend_from_slice(self.targets);
                let x = lu.solve(&rhs)?;
                u.copy_from_slice(&x[..n]);
                lambda.copy_from_slice(&x[n..]);
                res = self.residual(&u, &lambda, cfg);
            }
            newton_ok = res.converged();
            last_factor = None;
        }
        if !newton_ok {
            return Err(NlmcError::NotConverged {
                iterations,
                residual: norm_inf(&res.ru).max(norm_inf(&res.rc)),
                context: format!("saddle system of size {}+{} (history {history:?})", n, m),
            });
        }
        let factor = match (policy, last_factor) {
            (FactorPolicy::None, _) => None,
            (FactorPolicy::Reuse, Some((lu, _))) | (FactorPolicy::Exact, Some((lu, true))) => Some(lu),
            _ => Some(self.kkt(&u, false)?),
        };
        Ok(SaddleSolution {
            residual_u: norm_inf(&res.ru),
            residual_c: norm_inf(&res.rc),
            u,
            lambda,
            iterations,
            used_picard,
            factor,
        })
    }
}
