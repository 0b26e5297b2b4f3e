//! Limited-memory BFGS with projected backtracking line search.
//!
//! The attack objectives are smooth almost everywhere but live on constrained
//! domains (pixels in [0,1], spike intensities >= 0), so every trial point is
//! projected before evaluation and curvature pairs are measured between
//! projected iterates.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LbfgsConfig {
    /// Number of (s, y) curvature pairs kept.
    pub history: usize,
    /// Line-search starting step length.
    pub initial_step: f64,
    /// Backtracking trials before giving up on an iteration.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig { history: 100, initial_step: 1.0, max_line_search: 25 }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.max_line_search == 0 {
            return Err(Error::validation("lbfgs history and line-search budget must be >= 1"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::validation(format!(
                "lbfgs initial step must be > 0, got {}",
                self.initial_step
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// Line search found a point satisfying sufficient decrease.
    Accepted,
    /// Every trial failed; the iterate is unchanged.
    Stalled,
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const CURVATURE_MIN: f64 = 1e-10;
const GROWTH_CAP: f64 = 1e12;

pub struct Lbfgs {
    cfg: LbfgsConfig,
    s_hist: VecDeque<Vec<f64>>,
    y_hist: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    /// (loss, gradient) at the current iterate, carried over from the last
    /// accepted trial so each step costs one evaluation per trial only.
    cached: Option<(f64, Vec<f64>)>,
    /// Adaptive line-search start: doubled after a first-trial acceptance,
    /// pulled back to the accepted step after backtracking. Without this the
    /// search can crawl when skipped (negative-curvature) pairs freeze the
    /// history at a small scale and t never grows past the initial step.
    next_t: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new(cfg: LbfgsConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Lbfgs {
            cfg,
            s_hist: VecDeque::new(),
            y_hist: VecDeque::new(),
            rho: VecDeque::new(),
            cached: None,
            next_t: cfg.initial_step,
        })
    }

    /// Drop history, cached evaluation, and step-length memory; required
    /// after any discontinuous change to the iterate (in-loop binarization
    /// jumps).
    pub fn reset(&mut self) {
        self.s_hist.clear();
        self.y_hist.clear();
        self.rho.clear();
        self.cached = None;
        self.next_t = self.cfg.initial_step;
    }

    /// Two-loop recursion; with empty history this is the negative gradient.
    fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let k = self.s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s_hist[i], &q);
            for (qv, yv) in q.iter_mut().zip(&self.y_hist[i]) {
                *qv -= alpha[i] * yv;
            }
        }
        if k > 0 {
            let last = k - 1;
            let gamma = dot(&self.s_hist[last], &self.y_hist[last]) / dot(&self.y_hist[last], &self.y_hist[last]);
            for qv in q.iter_mut() {
                *qv *= gamma;
            }
        }
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y_hist[i], &q);
            for (qv, sv) in q.iter_mut().zip(&self.s_hist[i]) {
                *qv += (alpha[i] - beta) * sv;
            }
        }
        for qv in q.iter_mut() {
            *qv = -*qv;
        }
        q
    }

    /// One L-BFGS iteration on `x`. `objective` returns (loss, gradient) at a
    /// projected point; `project` maps any candidate into the feasible set.
    /// On acceptance `x` holds the new projected iterate; on stall it is
    /// untouched.
    pub fn step<F, P>(&mut self, x: &mut Vec<f64>, mut objective: F, project: P) -> Result<(StepOutcome, f64)>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
        P: Fn(&mut [f64]),
    {
        let (f0, g0) = match self.cached.take() {
            Some(c) => c,
            None => objective(x)?,
        };
        if !f0.is_finite() {
            return Err(Error::validation("objective is not finite at the current iterate"));
        }

        let mut dir = self.direction(&g0);
        let mut slope = dot(&g0, &dir);
        if !(slope < 0.0) {
            // History produced a non-descent direction (possible after
            // projections); fall back to steepest descent.
            dir = g0.iter().map(|v| -v).collect();
            slope = -dot(&g0, &g0);
            if slope == 0.0 {
                self.cached = Some((f0, g0));
                return Ok((StepOutcome::Stalled, f0));
            }
        }

        let mut t = self.next_t;
        for trial in 0..self.cfg.max_line_search {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(xv, dv)| xv + t * dv).collect();
            project(&mut cand);
            let (f_new, g_new) = objective(&cand)?;
            if f_new.is_finite() && f_new <= f0 + ARMIJO_C1 * t * slope {
                let s: Vec<f64> = cand.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g0).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > CURVATURE_MIN {
                    if self.s_hist.len() == self.cfg.history {
                        self.s_hist.pop_front();
                        self.y_hist.pop_front();
                        self.rho.pop_front();
                    }
                    self.s_hist.push_back(s);
                    self.y_hist.push_back(y);
                    self.rho.push_back(1.0 / sy);
                }
                *x = cand;
                self.cached = Some((f_new, g_new));
                self.next_t = if trial == 0 { (t * 2.0).min(GROWTH_CAP) } else { t };
                return Ok((StepOutcome::Accepted, f_new));
            }
            t *= BACKTRACK;
        }
        self.cached = Some((f0, g0));
        self.next_t = self.cfg.initial_step;
        Ok((StepOutcome::Stalled, f0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(a: &[f64]) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + '_ {
        move |x: &[f64]| {
            let f: f64 = x.iter().zip(a).map(|(xi, ai)| (xi - ai).powi(2)).sum();
            let g: Vec<f64> = x.iter().zip(a).map(|(xi, ai)| 2.0 * (xi - ai)).collect();
            Ok((f, g))
        }
    }

    #[test]
    fn quadratic_reaches_minimum_within_ten_steps() {
        let a = [3.0, -1.5, 0.25, 8.0, -7.75];
        let mut x = vec![100.0, -40.0, 0.0, 1.0, 55.5];
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        for _ in 0..10 {
            opt.step(&mut x, quadratic(&a), |_| {}).unwrap();
        }
        let dist: f64 = x.iter().zip(&a).map(|(xi, ai)| (xi - ai).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-8, "distance to minimum {dist}");
    }

    #[test]
    fn first_step_moves_along_negative_gradient() {
        let a = [1.0, 2.0];
        let x0 = vec![5.0, 0.0];
        let mut x = x0.clone();
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        let (outcome, _) = opt.step(&mut x, quadratic(&a), |_| {}).unwrap();
        assert_eq!(outcome, StepOutcome::Accepted);
        // g0 = (8, -4); displacement must be a positive multiple of (-8, 4).
        let dx = [x[0] - x0[0], x[1] - x0[1]];
        let ratio = dx[0] / -8.0;
        assert!(ratio > 0.0);
        assert!((dx[1] / 4.0 - ratio).abs() < 1e-12);
    }

    #[test]
    fn accepted_steps_never_increase_the_objective() {
        // Rosenbrock is a standard stress case for line searches.
        let rosen = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (1.0, 100.0);
            let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            let g = vec![
                -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]),
                2.0 * b * (x[1] - x[0] * x[0]),
            ];
            Ok((f, g))
        };
        let mut x = vec![-1.2, 1.0];
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..250 {
            let (outcome, loss) = opt.step(&mut x, rosen, |_| {}).unwrap();
            if outcome == StepOutcome::Accepted {
                assert!(loss <= prev + 1e-12, "loss rose from {prev} to {loss}");
                prev = loss;
            }
        }
        assert!(prev < 1e-6, "rosenbrock not minimized: {prev}");
    }

    #[test]
    fn zero_gradient_stalls_without_moving() {
        let a = [2.0, -3.0];
        let mut x = a.to_vec();
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        let (outcome, loss) = opt.step(&mut x, quadratic(&a), |_| {}).unwrap();
        assert_eq!(outcome, StepOutcome::Stalled);
        assert_eq!(loss, 0.0);
        assert_eq!(x, a.to_vec());
    }

    #[test]
    fn projection_keeps_iterates_feasible() {
        // Minimum at 3.0 but the feasible set is [0,1]; iterates stay inside
        // and converge to the boundary.
        let a = [3.0];
        let mut x = vec![0.2];
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        for _ in 0..20 {
            opt.step(&mut x, quadratic(&a), |c: &mut [f64]| {
                for v in c.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
            })
            .unwrap();
            assert!(x[0] >= 0.0 && x[0] <= 1.0);
        }
        assert!((x[0] - 1.0).abs() < 1e-9, "expected boundary, got {}", x[0]);
    }

    #[test]
    fn non_finite_trials_are_rejected_not_accepted() {
        // Objective explodes to NaN outside |x| <= 2; the search must back
        // off until trials are finite again.
        let weird = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0].abs() > 2.0 {
                Ok((f64::NAN, vec![f64::NAN]))
            } else {
                Ok((x[0] * x[0], vec![2.0 * x[0]]))
            }
        };
        let mut x = vec![1.9];
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        for _ in 0..8 {
            let (_, loss) = opt.step(&mut x, weird, |_| {}).unwrap();
            assert!(loss.is_finite());
            assert!(x[0].is_finite());
        }
        assert!(x[0].abs() < 1e-3);
    }

    #[test]
    fn reset_clears_history() {
        let a = [1.0, 1.0, 1.0];
        let mut x = vec![9.0, -9.0, 4.0];
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        opt.step(&mut x, quadratic(&a), |_| {}).unwrap();
        opt.step(&mut x, quadratic(&a), |_| {}).unwrap();
        assert!(!opt.s_hist.is_empty());
        opt.reset();
        assert!(opt.s_hist.is_empty() && opt.cached.is_none());
    }
}
