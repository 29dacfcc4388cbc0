//! Primal-dual interior-point method with filter line search.
//!
//! Handles the LP and NLP kinds directly; the MPCC driver wraps it with a
//! relaxation schedule. Inequality rows get slacks, bounds enter through a
//! log barrier, the Newton KKT system is regularized into quasi-definiteness
//! and factored by the sparse LDL^T backend, with inertia correction.

use crate::collocate::TranscribedProgram;
use crate::expr::VarId;

use super::compiled::{CompiledProgram, HessSrc};
use super::linalg::{ldl_numeric, ldl_symbolic, rcm_order, LdlSymbolic, SymCsc};
use super::{IterationSink, KktResidual, SolveOptions, SolveResult, SolveStatus};

const BOUND_RELAX: f64 = 1e-8;
const KAPPA_1: f64 = 1e-2;
const KAPPA_2: f64 = 1e-2;
const TAU_MIN: f64 = 0.99;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-5;
const DELTA_SWITCH: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const ETA_PHI: f64 = 1e-8;
const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const ALPHA_MIN: f64 = 1e-13;
const SIGMA_MAX: f64 = 1e10;

/// One bounded quantity in the barrier: a free variable or a row slack.
#[derive(Debug, Clone, Copy)]
struct BoundedVar {
    lb: f64,
    ub: f64,
}

pub struct Ipm<'p> {
    program: &'p TranscribedProgram,
    compiled: CompiledProgram,
    /// free (non-fixed) variable ids
    free: Vec<VarId>,
    free_pos: Vec<Option<usize>>,
    /// rows with slacks (non-equality rows), their slack index
    slack_of_row: Vec<Option<usize>>,
    n_slack: usize,
    /// bounded view over w = (x_free, s)
    w_bounds: Vec<BoundedVar>,
    /// scaling
    var_scale: Vec<f64>,
    row_scale: Vec<f64>,
    obj_scale: f64,
    // KKT pattern
    kkt_n: usize,
    kkt_pattern: SymCsc,
    /// logical entries -> slot in kkt_pattern.values
    entry_slots: Vec<usize>,
    perm: Vec<usize>,
    sym: LdlSymbolic,
    /// logical entry descriptors for refresh
    entries: Vec<KktEntry>,
}

#[derive(Debug, Clone, Copy)]
enum KktEntry {
    /// Lagrangian Hessian term (index into the compiled entry table)
    Hess { idx: usize },
    /// barrier diagonal + primal regularization on w_k
    SigmaDiag { k: usize },
    /// Jacobian entry
    Jac { row: usize, idx_in_row: usize },
    /// -1 on (row, slack)
    SlackUnit,
    /// dual regularization diagonal on a row
    DualDiag,
}

struct IterState {
    /// scaled free variables then slacks
    w: Vec<f64>,
    /// row duals (scaled problem)
    y: Vec<f64>,
    z_l: Vec<f64>,
    z_u: Vec<f64>,
    mu: f64,
    /// unscaled full x vector (fixed vars included)
    x_full: Vec<f64>,
}

impl<'p> Ipm<'p> {
    pub fn new(program: &'p TranscribedProgram) -> Self {
        let compiled = CompiledProgram::compile(program);
        let n = program.n_vars();
        let mut free = vec![];
        let mut free_pos = vec![None; n];
        for (i, v) in program.vars.iter().enumerate() {
            if v.lb < v.ub {
                free_pos[i] = Some(free.len());
                free.push(i as VarId);
            }
        }
        let m = program.n_constraints();
        let mut slack_of_row = vec![None; m];
        let mut n_slack = 0;
        for (r, c) in program.constraints.iter().enumerate() {
            if !c.is_equality() {
                slack_of_row[r] = Some(n_slack);
                n_slack += 1;
            }
        }

        // scaling from the initial point
        let x0: Vec<f64> = program.vars.iter().map(|v| v.init.max(v.lb).min(v.ub)).collect();
        let mut buf = vec![];
        compiled.eval_full(&x0, &mut buf);
        let var_scale: Vec<f64> = program
            .vars
            .iter()
            .map(|v| v.init.abs().max(v.scale).clamp(1e-8, 1e12))
            .collect();
        let mut grad_inf = 0.0f64;
        for &(v, slot) in &compiled.obj_grad {
            grad_inf = grad_inf.max((buf[slot as usize] * var_scale[v as usize]).abs());
        }
        let obj_scale = if grad_inf > 100.0 { 100.0 / grad_inf } else { 1.0 };
        // normalize every row's scaled gradient to unit infinity norm
        let mut row_scale = vec![1.0f64; m];
        for (r, row) in compiled.jac.iter().enumerate() {
            let mut inf = 0.0f64;
            for &(v, slot) in row {
                inf = inf.max((buf[slot as usize] * var_scale[v as usize]).abs());
            }
            if inf > 0.0 {
                row_scale[r] = (1.0 / inf).clamp(1e-6, 1e6);
            }
        }

        // bounded view over w (scaled bounds, relaxed)
        let mut w_bounds = Vec::with_capacity(free.len() + n_slack);
        for &v in &free {
            let info = &program.vars[v as usize];
            let s = var_scale[v as usize];
            let relax = |b: f64| BOUND_RELAX * b.abs().max(1.0);
            w_bounds.push(BoundedVar {
                lb: if info.lb.is_finite() { info.lb / s - relax(info.lb / s) } else { f64::NEG_INFINITY },
                ub: if info.ub.is_finite() { info.ub / s + relax(info.ub / s) } else { f64::INFINITY },
            });
        }
        for (r, c) in program.constraints.iter().enumerate() {
            if slack_of_row[r].is_some() {
                let sc = row_scale[r];
                let relax = |b: f64| BOUND_RELAX * b.abs().max(1.0);
                w_bounds.push(BoundedVar {
                    lb: if c.lo.is_finite() { c.lo * sc - relax(c.lo * sc) } else { f64::NEG_INFINITY },
                    ub: if c.up.is_finite() { c.up * sc + relax(c.up * sc) } else { f64::INFINITY },
                });
            }
        }

        // KKT pattern: dimension = n_free + n_slack + m
        let n_w = free.len() + n_slack;
        let kkt_n = n_w + m;
        let mut entries = vec![];
        let mut triplets: Vec<(usize, usize, f64)> = vec![];
        // Hessian entries between free vars
        for (idx, e) in compiled.hess.iter().enumerate() {
            if let (Some(i), Some(j)) = (free_pos[e.row as usize], free_pos[e.col as usize]) {
                let (r, c) = if i >= j { (i, j) } else { (j, i) };
                entries.push(KktEntry::Hess { idx });
                triplets.push((r, c, 0.0));
            }
        }
        // sigma diagonals
        for k in 0..n_w {
            entries.push(KktEntry::SigmaDiag { k });
            triplets.push((k, k, 0.0));
        }
        // jacobian blocks
        for (r, row) in compiled.jac.iter().enumerate() {
            for (irow, &(v, _)) in row.iter().enumerate() {
                if let Some(fp) = free_pos[v as usize] {
                    entries.push(KktEntry::Jac { row: r, idx_in_row: irow });
                    triplets.push((n_w + r, fp, 0.0));
                }
            }
            if let Some(si) = slack_of_row[r] {
                entries.push(KktEntry::SlackUnit);
                triplets.push((n_w + r, free.len() + si, 0.0));
            }
            entries.push(KktEntry::DualDiag);
            triplets.push((n_w + r, n_w + r, 0.0));
        }
        let (pattern0, _) = SymCsc::from_triplets(kkt_n, &triplets);
        let perm = rcm_order(&pattern0);
        // permuted triplets with stable slot tracking
        let mut iperm = vec![0usize; kkt_n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let permuted_triplets: Vec<(usize, usize, f64)> = triplets
            .iter()
            .map(|&(r, c, _)| {
                let (mut nr, mut nc) = (iperm[r], iperm[c]);
                if nr < nc {
                    std::mem::swap(&mut nr, &mut nc);
                }
                (nr, nc, 0.0)
            })
            .collect();
        let (kkt_pattern, entry_slots) = SymCsc::from_triplets(kkt_n, &permuted_triplets);
        let sym = ldl_symbolic(&kkt_pattern);

        Ipm {
            program,
            compiled,
            free,
            free_pos,
            slack_of_row,
            n_slack,
            w_bounds,
            var_scale,
            row_scale,
            obj_scale,
            kkt_n,
            kkt_pattern,
            entry_slots,
            perm,
            sym,
            entries,
        }
    }

    fn n_w(&self) -> usize {
        self.free.len() + self.n_slack
    }

    /// Unscaled full x from scaled w.
    fn unscale_x(&self, w: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.program.vars.iter().map(|v| v.init).collect();
        for (i, v) in self.program.vars.iter().enumerate() {
            if self.free_pos[i].is_none() {
                x[i] = v.lb; // fixed
            }
        }
        for (fp, &v) in self.free.iter().enumerate() {
            x[v as usize] = w[fp] * self.var_scale[v as usize];
        }
        x
    }

    /// Scaled constraint residuals g = c_scaled(x) - rhs(s); rows without
    /// slack use their (scaled) lo.
    fn residuals(&self, cons_unscaled: &[f64], w: &[f64]) -> Vec<f64> {
        let nf = self.free.len();
        (0..cons_unscaled.len())
            .map(|r| {
                let c = cons_unscaled[r] * self.row_scale[r];
                match self.slack_of_row[r] {
                    Some(si) => c - w[nf + si],
                    None => c - self.program.constraints[r].lo * self.row_scale[r],
                }
            })
            .collect()
    }

    fn barrier_phi(&self, obj_unscaled: f64, w: &[f64], mu: f64) -> f64 {
        let mut phi = obj_unscaled * self.obj_scale;
        for (k, b) in self.w_bounds.iter().enumerate() {
            if b.lb.is_finite() {
                phi -= mu * (w[k] - b.lb).ln();
            }
            if b.ub.is_finite() {
                phi -= mu * (b.ub - w[k]).ln();
            }
        }
        phi
    }

    /// Solve with the given options; deterministic.
    pub fn solve(&mut self, opts: &SolveOptions, sink: &mut dyn IterationSink) -> SolveResult {
        let m = self.program.n_constraints();
        let nf = self.free.len();
        let n_w = self.n_w();

        // --- initialization
        let mut st = self.initialize(opts);
        let mut buf: Vec<f64> = vec![];
        let mut filter: Vec<(f64, f64)> = vec![];
        let mut delta_w_last = 0.0f64;
        let mut iter = 0usize;
        let mut restorations = 0usize;
        let mut creep = 0usize;
        let mut last_theta = f64::INFINITY;
        let mut status = SolveStatus::IterationLimit;
        let tol = opts.tolerances.optimality;

        let (_, cons0) = self.compiled.eval_values(&st.x_full, &mut buf);
        let theta0 = self
            .residuals(&cons0, &st.w)
            .iter()
            .fold(0.0f64, |a, g| a + g.abs());
        let theta_max = 1e4 * theta0.max(1.0);
        let theta_min = 1e-4 * theta0.max(1.0);
        filter.push((theta_max, f64::NEG_INFINITY));

        loop {
            if iter >= opts.max_iterations {
                status = SolveStatus::IterationLimit;
                break;
            }
            let (obj_u, cons_u) = self.compiled.eval_full(&st.x_full, &mut buf);
            let g = self.residuals(&cons_u, &st.w);
            let theta: f64 = g.iter().map(|v| v.abs()).sum();

            // stagnating infeasibility under vanishing steps: reset and retry
            if theta > 1e3 * opts.tolerances.feasibility && theta > (1.0 - 1e-6) * last_theta {
                creep += 1;
            } else {
                creep = 0;
            }
            last_theta = theta;
            if creep >= 8 {
                creep = 0;
                restorations += 1;
                if restorations > 3 {
                    status = SolveStatus::Infeasible;
                    break;
                }
                self.restore(&mut st, &mut buf);
                continue;
            }

            // gradient of scaled objective over w
            let mut grad_w = vec![0.0; n_w];
            for &(v, slot) in &self.compiled.obj_grad {
                if let Some(fp) = self.free_pos[v as usize] {
                    grad_w[fp] = buf[slot as usize] * self.var_scale[v as usize] * self.obj_scale;
                }
            }
            // J^T y over w (scaled); slack part: -y
            let mut jty = vec![0.0; n_w];
            for (r, row) in self.compiled.jac.iter().enumerate() {
                let yr = st.y[r];
                if yr != 0.0 {
                    for &(v, slot) in row {
                        if let Some(fp) = self.free_pos[v as usize] {
                            jty[fp] += buf[slot as usize]
                                * self.var_scale[v as usize]
                                * self.row_scale[r]
                                * yr;
                        }
                    }
                }
                if let Some(si) = self.slack_of_row[r] {
                    jty[nf + si] -= yr;
                }
            }

            // convergence measures (scaled space, with IPOPT safeguards)
            let mut stat_inf = 0.0f64;
            let mut comp_inf_0 = 0.0f64;
            let mut comp_inf_mu = 0.0f64;
            let mut y_sum = 0.0f64;
            let mut z_sum = 0.0f64;
            let mut z_count = 0usize;
            for k in 0..n_w {
                let b = self.w_bounds[k];
                let mut r = grad_w[k] + jty[k];
                if b.lb.is_finite() {
                    r -= st.z_l[k];
                    comp_inf_0 = comp_inf_0.max((st.z_l[k] * (st.w[k] - b.lb)).abs());
                    comp_inf_mu = comp_inf_mu.max((st.z_l[k] * (st.w[k] - b.lb) - st.mu).abs());
                    z_sum += st.z_l[k].abs();
                    z_count += 1;
                }
                if b.ub.is_finite() {
                    r += st.z_u[k];
                    comp_inf_0 = comp_inf_0.max((st.z_u[k] * (b.ub - st.w[k])).abs());
                    comp_inf_mu = comp_inf_mu.max((st.z_u[k] * (b.ub - st.w[k]) - st.mu).abs());
                    z_sum += st.z_u[k].abs();
                    z_count += 1;
                }
                stat_inf = stat_inf.max(r.abs());
            }
            for r in 0..m {
                y_sum += st.y[r].abs();
            }
            let theta_inf = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let s_max = 100.0f64;
            let s_d = ((y_sum + z_sum) / ((m + z_count).max(1) as f64)).max(s_max) / s_max;
            let s_c = (z_sum / (z_count.max(1) as f64)).max(s_max) / s_max;
            let e_0 = (stat_inf / s_d).max(theta_inf).max(comp_inf_0 / s_c);
            let e_mu = (stat_inf / s_d).max(theta_inf).max(comp_inf_mu / s_c);

            sink.log(iter, obj_u, theta_inf, stat_inf, comp_inf_0);

            if e_0 <= tol {
                status = SolveStatus::Optimal;
                break;
            }
            if e_mu <= KAPPA_EPS * st.mu {
                let new_mu = (tol / 10.0).max((KAPPA_MU * st.mu).min(st.mu.powf(THETA_MU)));
                if new_mu < st.mu {
                    st.mu = new_mu;
                    filter.clear();
                    filter.push((theta_max, f64::NEG_INFINITY));
                    continue;
                }
            }

            // --- assemble and factor the KKT system with inertia correction
            let mut sigma = vec![0.0; n_w];
            for k in 0..n_w {
                let b = self.w_bounds[k];
                if b.lb.is_finite() {
                    sigma[k] += st.z_l[k] / (st.w[k] - b.lb);
                }
                if b.ub.is_finite() {
                    sigma[k] += st.z_u[k] / (b.ub - st.w[k]);
                }
                sigma[k] = sigma[k].min(SIGMA_MAX);
            }

            let mut delta_w = 0.0f64;
            let mut delta_c = 0.0f64;
            let mut factored = false;
            let mut trial = 0usize;
            while !factored && trial < 40 {
                self.refresh_kkt(&buf, &st, &sigma, delta_w, delta_c);
                match ldl_numeric(&self.kkt_pattern, &self.sym) {
                    Ok(f) => {
                        let (pos, neg, zero) = f.inertia();
                        if pos == n_w && neg == m && zero == 0 {
                            factored = true;
                            // solve
                            let mut rhs = vec![0.0; self.kkt_n];
                            for k in 0..n_w {
                                let b = self.w_bounds[k];
                                let mut r = grad_w[k] + jty[k];
                                if b.lb.is_finite() {
                                    r -= st.mu / (st.w[k] - b.lb);
                                }
                                if b.ub.is_finite() {
                                    r += st.mu / (b.ub - st.w[k]);
                                }
                                rhs[k] = -r;
                            }
                            for r in 0..m {
                                rhs[n_w + r] = -g[r];
                            }
                            // permute, solve, unpermute
                            let mut pb: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
                            f.solve(&mut pb);
                            let mut delta = vec![0.0; self.kkt_n];
                            for (new, &old) in self.perm.iter().enumerate() {
                                delta[old] = pb[new];
                            }

                            log::trace!(target: "cybermet::nlp", "factor ok dw={delta_w:.1e} dc={delta_c:.1e}");
                            let accepted = self.take_step(
                                &mut st,
                                &delta,
                                &g,
                                obj_u,
                                &grad_w,
                                theta,
                                theta_min,
                                &mut filter,
                                &mut buf,
                            );
                            if !accepted {
                                // restoration-lite: re-seat slacks and duals
                                restorations += 1;
                                if restorations > 3 {
                                    status = if theta_inf > opts.tolerances.feasibility {
                                        SolveStatus::Infeasible
                                    } else {
                                        SolveStatus::NumericalFailure
                                    };
                                } else {
                                    self.restore(&mut st, &mut buf);
                                    continue;
                                }
                            }
                        } else {
                            log::trace!(target: "cybermet::nlp", "inertia ({pos},{neg},{zero}) want ({n_w},{m},0) dw={delta_w:.1e}");
                            delta_w = next_delta_w(delta_w, delta_w_last);
                            if zero > 0 && delta_c == 0.0 {
                                delta_c = 1e-8 * st.mu.powf(0.25).max(1e-10);
                            }
                        }
                    }
                    Err(_) => {
                        if delta_c == 0.0 {
                            delta_c = 1e-8 * st.mu.powf(0.25).max(1e-10);
                        } else {
                            delta_w = next_delta_w(delta_w, delta_w_last);
                        }
                    }
                }
                trial += 1;
            }
            if delta_w > 0.0 {
                delta_w_last = delta_w;
            }
            if !factored {
                status = SolveStatus::NumericalFailure;
                break;
            }
            if matches!(status, SolveStatus::Infeasible | SolveStatus::NumericalFailure) {
                break;
            }
            iter += 1;
        }

        self.finish(st, status, iter, opts)
    }

    #[allow(clippy::too_many_arguments)]
    fn take_step(
        &self,
        st: &mut IterState,
        delta: &[f64],
        g: &[f64],
        obj_u: f64,
        grad_w: &[f64],
        theta: f64,
        theta_min: f64,
        filter: &mut Vec<(f64, f64)>,
        buf: &mut Vec<f64>,
    ) -> bool {
        let n_w = self.n_w();
        let m = self.program.n_constraints();
        let dw = &delta[..n_w];
        let dy = &delta[n_w..n_w + m];

        // dual direction for z from the linearized complementarity
        let mut dz_l = vec![0.0; n_w];
        let mut dz_u = vec![0.0; n_w];
        for k in 0..n_w {
            let b = self.w_bounds[k];
            if b.lb.is_finite() {
                let sl = st.w[k] - b.lb;
                dz_l[k] = (st.mu - st.z_l[k] * dw[k]) / sl - st.z_l[k];
            }
            if b.ub.is_finite() {
                let su = b.ub - st.w[k];
                dz_u[k] = (st.mu + st.z_u[k] * dw[k]) / su - st.z_u[k];
            }
        }

        // fraction to boundary
        let tau = TAU_MIN.max(1.0 - st.mu);
        let mut alpha_max = 1.0f64;
        for k in 0..n_w {
            let b = self.w_bounds[k];
            if b.lb.is_finite() && dw[k] < 0.0 {
                alpha_max = alpha_max.min(-tau * (st.w[k] - b.lb) / dw[k]);
            }
            if b.ub.is_finite() && dw[k] > 0.0 {
                alpha_max = alpha_max.min(tau * (b.ub - st.w[k]) / dw[k]);
            }
        }
        let mut alpha_z = 1.0f64;
        for k in 0..n_w {
            if dz_l[k] < 0.0 && st.z_l[k] > 0.0 {
                alpha_z = alpha_z.min(-tau * st.z_l[k] / dz_l[k]);
            }
            if dz_u[k] < 0.0 && st.z_u[k] > 0.0 {
                alpha_z = alpha_z.min(tau * st.z_u[k] / -dz_u[k]);
            }
        }

        // barrier directional derivative
        let mut dphi = 0.0f64;
        for k in 0..n_w {
            let b = self.w_bounds[k];
            let mut gk = grad_w[k];
            if b.lb.is_finite() {
                gk -= st.mu / (st.w[k] - b.lb);
            }
            if b.ub.is_finite() {
                gk += st.mu / (b.ub - st.w[k]);
            }
            dphi += gk * dw[k];
        }
        let phi_0 = self.barrier_phi(obj_u, &st.w, st.mu);

        let mut alpha = alpha_max;
        let mut accepted = false;
        while alpha >= ALPHA_MIN {
            let w_try: Vec<f64> = st.w.iter().zip(dw).map(|(w, d)| w + alpha * d).collect();
            let x_try = self.unscale_x(&w_try);
            let (obj_t, cons_t) = self.compiled.eval_values(&x_try, buf);
            if !obj_t.is_finite() || cons_t.iter().any(|c| !c.is_finite()) {
                alpha *= 0.5;
                continue;
            }
            let g_t = self.residuals(&cons_t, &w_try);
            let theta_t: f64 = g_t.iter().map(|v| v.abs()).sum();
            let phi_t = self.barrier_phi(obj_t, &w_try, st.mu);

            // filter acceptability
            let filter_ok = filter.iter().all(|&(tf, pf)| {
                theta_t < (1.0 - GAMMA_THETA) * tf || phi_t < pf - GAMMA_PHI * tf
            });
            if filter_ok {
                let f_type = dphi < 0.0
                    && alpha * (-dphi).powf(S_PHI) > DELTA_SWITCH * theta.powf(S_THETA)
                    && theta <= theta_min;
                let ok = if f_type {
                    phi_t <= phi_0 + ETA_PHI * alpha * dphi
                } else {
                    theta_t <= (1.0 - GAMMA_THETA) * theta || phi_t <= phi_0 - GAMMA_PHI * theta
                };
                log::trace!(target: "cybermet::nlp", "ls alpha={alpha:.2e} theta {theta:.3e}->{theta_t:.3e} phi {phi_0:.4e}->{phi_t:.4e} ok={ok}");
                if ok {
                    if !f_type {
                        filter.push((
                            (1.0 - GAMMA_THETA) * theta,
                            phi_0 - GAMMA_PHI * theta,
                        ));
                    }
                    // commit
                    st.w = w_try;
                    st.x_full = x_try;
                    for r in 0..m {
                        st.y[r] += alpha * dy[r];
                    }
                    for k in 0..n_w {
                        let b = self.w_bounds[k];
                        if b.lb.is_finite() {
                            st.z_l[k] = (st.z_l[k] + alpha_z * dz_l[k]).max(1e-16);
                            // keep z in a neighborhood of mu/(w-l)
                            let ratio = st.mu / (st.w[k] - b.lb);
                            st.z_l[k] = st.z_l[k].clamp(ratio / 1e10, ratio * 1e10);
                        }
                        if b.ub.is_finite() {
                            st.z_u[k] = (st.z_u[k] + alpha_z * dz_u[k]).max(1e-16);
                            let ratio = st.mu / (b.ub - st.w[k]);
                            st.z_u[k] = st.z_u[k].clamp(ratio / 1e10, ratio * 1e10);
                        }
                    }
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        let _ = g;
        accepted
    }

    fn restore(&self, st: &mut IterState, buf: &mut Vec<f64>) {
        let nf = self.free.len();
        let (_, cons) = self.compiled.eval_values(&st.x_full, buf);
        for (r, c) in self.program.constraints.iter().enumerate() {
            if let Some(si) = self.slack_of_row[r] {
                let b = self.w_bounds[nf + si];
                let target = cons[r] * self.row_scale[r];
                let margin = 1e-8 * (1.0 + target.abs());
                st.w[nf + si] = target.clamp(
                    if b.lb.is_finite() { b.lb + margin } else { f64::NEG_INFINITY },
                    if b.ub.is_finite() { b.ub - margin } else { f64::INFINITY },
                );
                let _ = c;
            }
        }
        for y in st.y.iter_mut() {
            *y = 0.0;
        }
        for k in 0..self.n_w() {
            let b = self.w_bounds[k];
            if b.lb.is_finite() {
                st.z_l[k] = (st.mu / (st.w[k] - b.lb)).clamp(1e-8, 1e8);
            }
            if b.ub.is_finite() {
                st.z_u[k] = (st.mu / (b.ub - st.w[k])).clamp(1e-8, 1e8);
            }
        }
    }

    fn initialize(&self, opts: &SolveOptions) -> IterState {
        let nf = self.free.len();
        let n_w = self.n_w();
        let m = self.program.n_constraints();
        let mu = opts.mu_init;

        let mut w = vec![0.0; n_w];
        for (fp, &v) in self.free.iter().enumerate() {
            let info = &self.program.vars[v as usize];
            let init = match &opts.warm_start {
                Some(ws) => ws.primal[v as usize],
                None => info.init,
            };
            let mut val = init / self.var_scale[v as usize];
            let b = self.w_bounds[fp];
            // push strictly inside
            if b.lb.is_finite() && b.ub.is_finite() {
                let pl = (KAPPA_1 * b.lb.abs().max(1.0)).min(KAPPA_2 * (b.ub - b.lb));
                let pu = (KAPPA_1 * b.ub.abs().max(1.0)).min(KAPPA_2 * (b.ub - b.lb));
                val = val.clamp(b.lb + pl, b.ub - pu);
            } else if b.lb.is_finite() {
                val = val.max(b.lb + KAPPA_1 * b.lb.abs().max(1.0));
            } else if b.ub.is_finite() {
                val = val.min(b.ub - KAPPA_1 * b.ub.abs().max(1.0));
            }
            w[fp] = val;
        }
        let mut st = IterState {
            x_full: vec![],
            w,
            y: vec![0.0; m],
            z_l: vec![0.0; n_w],
            z_u: vec![0.0; n_w],
            mu,
        };
        st.x_full = self.unscale_x(&st.w);

        // slacks at the (scaled) constraint values, pushed interior
        let mut buf = vec![];
        let (_, cons) = self.compiled.eval_values(&st.x_full, &mut buf);
        for (r, _) in self.program.constraints.iter().enumerate() {
            if let Some(si) = self.slack_of_row[r] {
                let b = self.w_bounds[nf + si];
                let mut val = cons[r] * self.row_scale[r];
                if b.lb.is_finite() && b.ub.is_finite() {
                    let pl = (KAPPA_1 * b.lb.abs().max(1.0)).min(KAPPA_2 * (b.ub - b.lb));
                    let pu = (KAPPA_1 * b.ub.abs().max(1.0)).min(KAPPA_2 * (b.ub - b.lb));
                    val = val.clamp(b.lb + pl, b.ub - pu);
                } else if b.lb.is_finite() {
                    val = val.max(b.lb + KAPPA_1 * b.lb.abs().max(1.0));
                } else if b.ub.is_finite() {
                    val = val.min(b.ub - KAPPA_1 * b.ub.abs().max(1.0));
                }
                st.w[nf + si] = val;
            }
        }

        // duals
        if let Some(ws) = &opts.warm_start {
            if ws.row_duals.len() == m {
                for r in 0..m {
                    // scaled-space y from true-space duals
                    st.y[r] = ws.row_duals[r] * self.obj_scale / self.row_scale[r];
                }
            }
        }
        for k in 0..n_w {
            let b = self.w_bounds[k];
            if b.lb.is_finite() {
                st.z_l[k] = (mu / (st.w[k] - b.lb)).clamp(1e-8, 1e8);
            }
            if b.ub.is_finite() {
                st.z_u[k] = (mu / (b.ub - st.w[k])).clamp(1e-8, 1e8);
            }
        }
        st
    }

    fn refresh_kkt(&mut self, buf: &[f64], st: &IterState, sigma: &[f64], delta_w: f64, delta_c: f64) {
        // zero
        for v in self.kkt_pattern.values.iter_mut() {
            *v = 0.0;
        }
        for (e, &slot) in self.entries.iter().zip(&self.entry_slots) {
            let add = match *e {
                KktEntry::Hess { idx } => {
                    let he = &self.compiled.hess[idx];
                    let weight = match he.src {
                        HessSrc::Obj => self.obj_scale,
                        HessSrc::Con(c) => st.y[c as usize] * self.row_scale[c as usize],
                    };
                    weight
                        * buf[he.slot as usize]
                        * self.var_scale[he.row as usize]
                        * self.var_scale[he.col as usize]
                }
                KktEntry::SigmaDiag { k } => sigma[k] + delta_w,
                KktEntry::Jac { row, idx_in_row } => {
                    let (v, slot_j) = self.compiled.jac[row][idx_in_row];
                    buf[slot_j as usize] * self.var_scale[v as usize] * self.row_scale[row]
                }
                KktEntry::SlackUnit => -1.0,
                KktEntry::DualDiag => -delta_c,
            };
            self.kkt_pattern.values[slot] += add;
        }
    }

    fn finish(&self, st: IterState, status: SolveStatus, iterations: usize, opts: &SolveOptions) -> SolveResult {
        // clip into original bounds and unscale everything
        let mut x = st.x_full.clone();
        for (i, v) in self.program.vars.iter().enumerate() {
            x[i] = x[i].max(v.lb).min(v.ub);
        }
        let m = self.program.n_constraints();
        let mut row_duals = vec![0.0; m];
        for r in 0..m {
            row_duals[r] = st.y[r] * self.row_scale[r] / self.obj_scale;
        }
        let nf = self.free.len();
        let mut lower = vec![0.0; self.program.n_vars()];
        let mut upper = vec![0.0; self.program.n_vars()];
        for (fp, &v) in self.free.iter().enumerate() {
            lower[v as usize] = st.z_l[fp] / (self.obj_scale * self.var_scale[v as usize]);
            upper[v as usize] = st.z_u[fp] / (self.obj_scale * self.var_scale[v as usize]);
        }
        // row-range multipliers (slack bound duals), true space
        let mut row_lower = vec![0.0; m];
        let mut row_upper = vec![0.0; m];
        for r in 0..m {
            if let Some(si) = self.slack_of_row[r] {
                row_lower[r] = st.z_l[nf + si] * self.row_scale[r] / self.obj_scale;
                row_upper[r] = st.z_u[nf + si] * self.row_scale[r] / self.obj_scale;
            }
        }

        let residual =
            super::kkt::check_kkt_full(self.program, &self.compiled, &x, &row_duals, &lower, &upper);
        let mut compiled_buf = vec![];
        let (objective, cons) = self.compiled.eval_values(&x, &mut compiled_buf);

        // most violated row for infeasibility reports
        let mut worst: Option<(usize, f64)> = None;
        for (r, c) in self.program.constraints.iter().enumerate() {
            let v = (c.lo - cons[r]).max(cons[r] - c.up).max(0.0);
            if worst.map(|(_, wv)| v > wv).unwrap_or(v > 0.0) {
                worst = Some((r, v));
            }
        }

        let status = match status {
            SolveStatus::Optimal
                if residual.primal_feasibility
                    > opts.tolerances.feasibility.max(opts.tolerances.optimality) * 1e6 =>
            {
                // scaled convergence did not carry to the true problem at all
                SolveStatus::NumericalFailure
            }
            s => s,
        };

        SolveResult {
            status,
            primal: x,
            row_duals,
            bound_duals_lower: lower,
            bound_duals_upper: upper,
            row_duals_lower: row_lower,
            row_duals_upper: row_upper,
            objective,
            kkt_residual: residual,
            iterations,
            max_violated: worst.map(|(r, v)| (self.program.constraints[r].label.to_string(), v)),
        }
    }
}

fn next_delta_w(current: f64, last: f64) -> f64 {
    if current == 0.0 {
        if last == 0.0 {
            1e-4
        } else {
            (last / 3.0).max(1e-20)
        }
    } else {
        (current * 8.0).min(1e40)
    }
}

/// KKT residual report shared by the solver and the independent checker.
impl KktResidual {
    pub fn max_all(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }
}
