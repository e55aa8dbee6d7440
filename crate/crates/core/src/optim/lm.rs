use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::robust::RobustLoss;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub function_tolerance: f64,
    pub parameter_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            function_tolerance: 1e-7,
            parameter_tolerance: 1e-10,
            initial_damping: 1e-4,
        }
    }
}

/// Parameter blocks of a problem. Global blocks enter the reduced (dense)
/// system; local blocks are eliminated by a Schur complement, so a residual
/// may touch any number of global blocks but at most one local block.
#[derive(Debug, Clone, Default)]
pub struct BlockLayout {
    pub global: Vec<usize>,
    pub local: Vec<usize>,
}

impl BlockLayout {
    fn global_offsets(&self) -> (Vec<usize>, usize) {
        let mut off = Vec::with_capacity(self.global.len());
        let mut acc = 0;
        for d in &self.global {
            off.push(acc);
            acc += d;
        }
        (off, acc)
    }
}

/// One evaluated residual block with its Jacobians.
#[derive(Debug, Clone)]
pub struct ResidualEval {
    pub residual: DVector<f64>,
    pub global: Vec<(usize, DMatrix<f64>)>,
    pub local: Option<(usize, DMatrix<f64>)>,
}

/// A nonlinear least-squares problem over a manifold-valued state.
pub trait LeastSquaresProblem: Sync {
    type State: Clone + Send + Sync;

    fn layout(&self) -> BlockLayout;

    fn num_residuals(&self) -> usize;

    /// Residual `k` at `state`; Jacobians are only required when `jacobians`
    /// is set. `None` marks a residual outside its domain at this state.
    fn evaluate(&self, state: &Self::State, k: usize, jacobians: bool) -> Option<ResidualEval>;

    /// Apply tangent-space increments to the state.
    fn retract(&self, state: &Self::State, global: &[DVector<f64>], local: &[DVector<f64>]) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ZeroCost,
    FunctionTolerance,
    ParameterTolerance,
    MaxIterations,
    NoProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
}

/// Robustified total cost `Σ ρ(‖r_k‖²)` over the residuals valid at `state`.
pub fn total_cost<P: LeastSquaresProblem>(problem: &P, state: &P::State, loss: &RobustLoss, exec: Execution) -> f64 {
    let costs = par::map_range(exec, problem.num_residuals(), |k| {
        problem
            .evaluate(state, k, false)
            .map(|e| loss.cost(e.residual.norm_squared()))
            .unwrap_or(0.0)
    });
    costs.iter().sum()
}

fn costs_on<P: LeastSquaresProblem>(
    problem: &P,
    state: &P::State,
    loss: &RobustLoss,
    active: &[bool],
    exec: Execution,
) -> Option<f64> {
    let costs = par::map_range(exec, problem.num_residuals(), |k| {
        if !active[k] {
            return Some(0.0);
        }
        problem
            .evaluate(state, k, false)
            .map(|e| loss.cost(e.residual.norm_squared()))
    });
    let mut total = 0.0;
    for c in costs {
        total += c?;
    }
    total.is_finite().then_some(total)
}

struct LocalAccum {
    hll: DMatrix<f64>,
    gl: DVector<f64>,
    hgl: BTreeMap<usize, DMatrix<f64>>,
}

struct Normal {
    hgg: DMatrix<f64>,
    gg: DVector<f64>,
    locals: Vec<LocalAccum>,
}

fn build_normal(layout: &BlockLayout, evals: &[Option<ResidualEval>], loss: &RobustLoss) -> Normal {
    let (goff, gdim) = layout.global_offsets();
    let mut hgg = DMatrix::<f64>::zeros(gdim, gdim);
    let mut gg = DVector::<f64>::zeros(gdim);
    let mut locals: Vec<LocalAccum> = layout
        .local
        .iter()
        .map(|&d| LocalAccum {
            hll: DMatrix::zeros(d, d),
            gl: DVector::zeros(d),
            hgl: BTreeMap::new(),
        })
        .collect();
    for e in evals.iter().flatten() {
        let s = e.residual.norm_squared();
        let w = loss.evaluate(s)[1];
        let r = &e.residual;
        for (a, (ba, ja)) in e.global.iter().enumerate() {
            let oa = goff[*ba];
            gg.rows_mut(oa, ja.ncols()).gemv_tr(w, ja, r, 1.0);
            for (bb, jb) in e.global.iter().skip(a) {
                let ob = goff[*bb];
                hgg.view_mut((oa, ob), (ja.ncols(), jb.ncols())).gemm_tr(w, ja, jb, 1.0);
                if ob != oa {
                    hgg.view_mut((ob, oa), (jb.ncols(), ja.ncols())).gemm_tr(w, jb, ja, 1.0);
                }
            }
        }
        if let Some((lb, jl)) = &e.local {
            let acc = &mut locals[*lb];
            acc.hll.gemm_tr(w, jl, jl, 1.0);
            acc.gl.gemv_tr(w, jl, r, 1.0);
            for (ba, ja) in &e.global {
                acc.hgl
                    .entry(*ba)
                    .or_insert_with(|| DMatrix::zeros(ja.ncols(), jl.ncols()))
                    .gemm_tr(w, ja, jl, 1.0);
            }
        }
    }
    Normal { hgg, gg, locals }
}

fn clamp_diag(x: f64) -> f64 {
    x.clamp(1e-6, 1e32)
}

/// Solve the damped normal equations; `None` if the damped system is not
/// positive definite.
fn solve_step(layout: &BlockLayout, n: &Normal, lambda: f64) -> Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let (goff, gdim) = layout.global_offsets();
    let mut s = n.hgg.clone();
    for k in 0..gdim {
        s[(k, k)] += lambda * clamp_diag(n.hgg[(k, k)]);
    }
    let mut rhs = -n.gg.clone();
    let mut linv_all = Vec::with_capacity(n.locals.len());
    for acc in &n.locals {
        let m = acc.hll.nrows();
        let mut l = acc.hll.clone();
        for k in 0..m {
            l[(k, k)] += lambda * clamp_diag(acc.hll[(k, k)]);
        }
        let linv = l.cholesky()?.inverse();
        // Y_i = W_i L⁻¹ ; S_ij -= Y_i W_jᵀ ; rhs_i += Y_i g_l
        let ys: Vec<(usize, DMatrix<f64>)> = acc.hgl.iter().map(|(b, w)| (*b, w * &linv)).collect();
        for (bi, yi) in &ys {
            let oi = goff[*bi];
            let mut seg = rhs.rows_mut(oi, yi.nrows());
            seg += yi * &acc.gl;
            for (bj, wj) in &acc.hgl {
                let oj = goff[*bj];
                let blk = yi * wj.transpose();
                let mut view = s.view_mut((oi, oj), (yi.nrows(), wj.nrows()));
                view -= &blk;
            }
        }
        linv_all.push(linv);
    }
    let dg = if gdim > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    let global: Vec<DVector<f64>> = layout
        .global
        .iter()
        .zip(&goff)
        .map(|(d, o)| dg.rows(*o, *d).into_owned())
        .collect();
    let mut local = Vec::with_capacity(n.locals.len());
    for (acc, linv) in n.locals.iter().zip(&linv_all) {
        let mut r = -acc.gl.clone();
        for (b, w) in &acc.hgl {
            r -= w.transpose() * &global[*b];
        }
        local.push(linv * r);
    }
    if global.iter().chain(local.iter()).any(|v| v.iter().any(|x| !x.is_finite())) {
        return None;
    }
    Some((global, local))
}

/// Levenberg-Marquardt with robust re-weighting (each residual block scaled
/// by `ρ'(‖r‖²)`). Only cost-decreasing steps are accepted.
pub fn lm_minimize<P: LeastSquaresProblem>(
    problem: &P,
    initial: P::State,
    loss: &RobustLoss,
    config: &LmConfig,
    exec: Execution,
) -> Result<(P::State, LmReport)> {
    let layout = problem.layout();
    let n = problem.num_residuals();
    if n == 0 {
        return Err(Error::Precondition("least-squares problem has no residuals".into()));
    }
    let mut state = initial;
    let mut evals: Vec<Option<ResidualEval>> = par::map_range(exec, n, |k| problem.evaluate(&state, k, true));
    let mut active: Vec<bool> = evals.iter().map(|e| e.is_some()).collect();
    let mut cost: f64 = evals
        .iter()
        .flatten()
        .map(|e| loss.cost(e.residual.norm_squared()))
        .sum();
    if !cost.is_finite() {
        return Err(Error::NumericalFailure("non-finite initial cost"));
    }
    let initial_cost = cost;
    let mut lambda = config.initial_damping;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    if cost == 0.0 {
        return Ok((
            state,
            LmReport {
                initial_cost,
                final_cost: cost,
                iterations: 0,
                termination: Termination::ZeroCost,
            },
        ));
    }

    'outer: while iterations < config.max_iterations {
        iterations += 1;
        let normal = build_normal(&layout, &evals, loss);
        let mut failures = 0;
        loop {
            let Some((dg, dl)) = solve_step(&layout, &normal, lambda) else {
                lambda *= 10.0;
                failures += 1;
                if failures > 30 || lambda > 1e32 {
                    return Err(Error::NumericalFailure("normal equations indefinite beyond damping recovery"));
                }
                continue;
            };
            let step_norm = dg
                .iter()
                .chain(dl.iter())
                .map(|v| v.norm_squared())
                .sum::<f64>()
                .sqrt();
            let trial = problem.retract(&state, &dg, &dl);
            let trial_cost = costs_on(problem, &trial, loss, &active, exec);
            match trial_cost {
                Some(tc) if tc < cost => {
                    let rel = (cost - tc) / cost;
                    state = trial;
                    evals = par::map_range(exec, n, |k| problem.evaluate(&state, k, true));
                    active = evals.iter().map(|e| e.is_some()).collect();
                    cost = evals
                        .iter()
                        .flatten()
                        .map(|e| loss.cost(e.residual.norm_squared()))
                        .sum();
                    lambda = (lambda / 3.0).max(1e-12);
                    if cost == 0.0 {
                        termination = Termination::ZeroCost;
                        break 'outer;
                    }
                    if rel < config.function_tolerance {
                        termination = Termination::FunctionTolerance;
                        break 'outer;
                    }
                    if step_norm < config.parameter_tolerance {
                        termination = Termination::ParameterTolerance;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    if step_norm < config.parameter_tolerance {
                        termination = Termination::ParameterTolerance;
                        break 'outer;
                    }
                    lambda *= 4.0;
                    if lambda > 1e16 {
                        termination = Termination::NoProgress;
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok((
        state,
        LmReport {
            initial_cost,
            final_cost: cost,
            iterations,
            termination,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Residuals over a plain vector state, all parameters in one global block.
    struct Dense<F: Fn(&[f64]) -> Vec<f64> + Sync> {
        dim: usize,
        m: usize,
        f: F,
    }

    impl<F: Fn(&[f64]) -> Vec<f64> + Sync> LeastSquaresProblem for Dense<F> {
        type State = Vec<f64>;
        fn layout(&self) -> BlockLayout {
            BlockLayout { global: vec![self.dim], local: vec![] }
        }
        fn num_residuals(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &Vec<f64>, _k: usize, jac: bool) -> Option<ResidualEval> {
            let r = DVector::from_vec((self.f)(x));
            let mut global = vec![];
            if jac {
                let mut j = DMatrix::zeros(self.m, self.dim);
                for c in 0..self.dim {
                    let h = 1e-7 * (1.0 + x[c].abs());
                    let (mut a, mut b) = (x.clone(), x.clone());
                    a[c] += h;
                    b[c] -= h;
                    let d = (DVector::from_vec((self.f)(&a)) - DVector::from_vec((self.f)(&b))) / (2.0 * h);
                    j.set_column(c, &d);
                }
                global.push((0, j));
            }
            Some(ResidualEval { residual: r, global, local: None })
        }
        fn retract(&self, x: &Vec<f64>, g: &[DVector<f64>], _l: &[DVector<f64>]) -> Vec<f64> {
            x.iter().zip(g[0].iter()).map(|(a, b)| a + b).collect()
        }
    }

    #[test]
    fn scalar_linear() {
        let p = Dense { dim: 1, m: 1, f: |x: &[f64]| vec![x[0] - 3.0] };
        let (x, rep) = lm_minimize(&p, vec![0.0], &RobustLoss::Trivial, &LmConfig::default(), Execution::Sequential).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-10, "{x:?} {rep:?}");
    }

    #[test]
    fn rosenbrock() {
        let p = Dense { dim: 2, m: 2, f: |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]] };
        let cfg = LmConfig { max_iterations: 500, function_tolerance: 1e-16, parameter_tolerance: 1e-14, ..Default::default() };
        let (x, rep) = lm_minimize(&p, vec![-1.2, 1.0], &RobustLoss::Trivial, &cfg, Execution::Sequential).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?} {rep:?}");
    }

    #[test]
    fn zero_residual_start() {
        let p = Dense { dim: 1, m: 1, f: |x: &[f64]| vec![x[0] - 3.0] };
        let (x, rep) = lm_minimize(&p, vec![3.0], &RobustLoss::default(), &LmConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(x, vec![3.0]);
        assert!(rep.iterations <= 1);
        assert_eq!(rep.termination, Termination::ZeroCost);
    }

    /// Linear problem with a shared global offset and per-group local offsets:
    /// y_gk = a + b_g. Verifies the Schur path against a direct solve.
    struct Grouped {
        obs: Vec<(usize, f64)>,
        groups: usize,
    }

    impl LeastSquaresProblem for Grouped {
        type State = (f64, Vec<f64>);
        fn layout(&self) -> BlockLayout {
            BlockLayout { global: vec![1], local: vec![1; self.groups - 1] }
        }
        fn num_residuals(&self) -> usize {
            self.obs.len()
        }
        fn evaluate(&self, s: &Self::State, k: usize, _jac: bool) -> Option<ResidualEval> {
            let (g, y) = self.obs[k];
            let r = DVector::from_element(1, s.0 + s.1[g] - y);
            let one = DMatrix::from_element(1, 1, 1.0);
            // Group 0 is pinned.
            let local = if g == 0 { None } else { Some((g - 1, one.clone())) };
            Some(ResidualEval { residual: r, global: vec![(0, one)], local })
        }
        fn retract(&self, s: &Self::State, g: &[DVector<f64>], l: &[DVector<f64>]) -> Self::State {
            let mut b = s.1.clone();
            for (k, d) in l.iter().enumerate() {
                b[k + 1] += d[0];
            }
            (s.0 + g[0][0], b)
        }
    }

    #[test]
    fn schur_elimination_solves_grouped_problem() {
        let truth_b = [0.0, 1.0, -2.0, 0.5];
        let mut obs = vec![];
        for (g, b) in truth_b.iter().enumerate() {
            for k in 0..6 {
                obs.push((g, 7.0 + b + if k % 2 == 0 { 0.01 } else { -0.01 }));
            }
        }
        let p = Grouped { obs, groups: 4 };
        let (s, _) = lm_minimize(&p, (0.0, vec![0.0; 4]), &RobustLoss::Trivial, &LmConfig::default(), Execution::Parallel).unwrap();
        assert!((s.0 - 7.0).abs() < 1e-8);
        for g in 1..4 {
            assert!((s.1[g] - truth_b[g]).abs() < 1e-8);
        }
    }

    #[test]
    fn robust_cost_never_increases() {
        let p = Dense {
            dim: 2,
            m: 3,
            f: |x: &[f64]| vec![x[0] - 1.0, x[1] + 2.0, x[0] * x[1] - 40.0],
        };
        let loss = RobustLoss::default();
        let init = vec![0.3, 0.4];
        let c0 = total_cost(&p, &init, &loss, Execution::Sequential);
        let (x, rep) = lm_minimize(&p, init, &loss, &LmConfig::default(), Execution::Sequential).unwrap();
        assert!(rep.final_cost <= c0);
        assert!((total_cost(&p, &x, &loss, Execution::Sequential) - rep.final_cost).abs() < 1e-12);
    }
}
