//! Dense primal simplex for small linear programs.
//!
//! Solves `max c.x  s.t.  A x <= b` with free variables and `b >= 0`, which
//! is the shape of the flat-metric dual program: the all-slack basis is
//! feasible, so no phase-1 is needed. Free variables are split into
//! positive/negative parts.
//!
//! The instances are heavily degenerate (most right-hand sides are zero),
//! so the ratio test matters: the minimum ratio is matched exactly and ties
//! (bitwise equal ratios, the degenerate-pivot storm) are broken towards
//! the largest pivot entry, which keeps elimination multipliers small
//! without ever leaving the feasible basis the way a tolerance window
//! would. Every solution is verified against the original rows before it
//! is returned; a failed verification falls back to a slow, strictly
//! Bland-ruled run, and only then errors out.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("constraint right-hand side must be nonnegative (row {0})")]
    NegativeRhs(usize),
    #[error("objective unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("solution failed feasibility verification (violation {0:.3e})")]
    Infeasible(f64),
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    #[allow(dead_code)] // consumed by tests and kept for diagnostics
    pub x: Vec<f64>,
}

const ENTER_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-11;
const MAX_ITERS: usize = 200_000;
const STALL_LIMIT: usize = 64;

/// Maximizes `c.x` over `A x <= b` with `x` free. Rows are sparse
/// `(column, coefficient)` lists.
pub fn maximize(
    num_vars: usize,
    rows: &[(Vec<(usize, f64)>, f64)],
    objective: &[f64],
) -> Result<LpSolution, LpError> {
    match run_simplex(num_vars, rows, objective, false) {
        Ok(sol) => Ok(sol),
        // Retry once under Bland's rule from the start: slower, but immune
        // to the pivot-selection pathologies that corrupt fast runs.
        Err(_) => run_simplex(num_vars, rows, objective, true),
    }
}

fn run_simplex(
    num_vars: usize,
    rows: &[(Vec<(usize, f64)>, f64)],
    objective: &[f64],
    always_bland: bool,
) -> Result<LpSolution, LpError> {
    assert_eq!(objective.len(), num_vars);
    let m = rows.len();
    // Columns: x+ (n), x- (n), slacks (m), rhs.
    let n2 = 2 * num_vars;
    let width = n2 + m + 1;
    let mut t = vec![0.0f64; (m + 1) * width];
    let idx = |r: usize, c: usize| r * width + c;

    for (r, (coeffs, rhs)) in rows.iter().enumerate() {
        if *rhs < 0.0 {
            return Err(LpError::NegativeRhs(r));
        }
        for &(c, a) in coeffs {
            debug_assert!(c < num_vars);
            t[idx(r, c)] += a;
            t[idx(r, num_vars + c)] -= a;
        }
        t[idx(r, n2 + r)] = 1.0;
        t[idx(r, n2 + m)] = *rhs;
    }
    // Objective row keeps reduced costs; slack basis has zero cost.
    for (c, &v) in objective.iter().enumerate() {
        t[idx(m, c)] = v;
        t[idx(m, num_vars + c)] = -v;
    }

    let mut basis: Vec<usize> = (n2..n2 + m).collect();
    let mut stall = 0usize;
    let mut safe = always_bland;
    let mut last_value = 0.0f64;
    let mut optimal = false;

    for _iter in 0..MAX_ITERS {
        if stall >= STALL_LIMIT {
            safe = true; // sticky: stay on the anti-cycling rules
        }
        // Entering column: price every nonbasic column, slacks included.
        let mut enter = None;
        if safe {
            for c in 0..n2 + m {
                if t[idx(m, c)] > ENTER_TOL {
                    enter = Some(c);
                    break;
                }
            }
        } else {
            let mut best = ENTER_TOL;
            for c in 0..n2 + m {
                let rc = t[idx(m, c)];
                if rc > best {
                    best = rc;
                    enter = Some(c);
                }
            }
        }
        let Some(enter) = enter else {
            optimal = true;
            break;
        };

        // Exact ratio test; right-hand sides that drifted a hair negative
        // count as zero (degenerate) without being rewritten. Degenerate
        // rows tie at a ratio of exactly zero; among exact ties the fast
        // path prefers the largest pivot entry (small multipliers), the
        // safe path resolves lexicographically, which rules out cycling.
        let mut min_ratio = f64::INFINITY;
        for r in 0..m {
            let a = t[idx(r, enter)];
            if a > PIVOT_TOL {
                let ratio = t[idx(r, n2 + m)].max(0.0) / a;
                if ratio < min_ratio {
                    min_ratio = ratio;
                }
            }
        }
        if min_ratio.is_infinite() {
            return Err(LpError::Unbounded);
        }
        let mut leave: Option<usize> = None;
        for r in 0..m {
            let a = t[idx(r, enter)];
            if a > PIVOT_TOL && t[idx(r, n2 + m)].max(0.0) / a == min_ratio {
                let better = match leave {
                    None => true,
                    Some(l) => {
                        if safe {
                            lex_less(&t, width, r, l, t[idx(r, enter)], t[idx(l, enter)])
                        } else {
                            a > t[idx(l, enter)]
                        }
                    }
                };
                if better {
                    leave = Some(r);
                }
            }
        }
        let leave = leave.expect("a row attained the minimum ratio");

        if std::env::var("NETMASS_LP_TRACE").is_ok() {
            eprintln!(
                "iter {_iter}: safe {safe} enter {enter} leave row {leave} (basis {}) ratio {min_ratio:.6e} pivot {:.6e} value {:.12}",
                basis[leave],
                t[idx(leave, enter)],
                -t[idx(m, n2 + m)]
            );
        }
        pivot(&mut t, width, m, leave, enter);
        basis[leave] = enter;

        let value = -t[idx(m, n2 + m)];
        if (value - last_value).abs() <= 1e-14 * (1.0 + value.abs()) {
            stall += 1;
        } else {
            stall = 0;
        }
        last_value = value;
    }
    if !optimal {
        return Err(LpError::IterationLimit);
    }

    let mut x = vec![0.0f64; num_vars];
    for (r, &col) in basis.iter().enumerate() {
        let v = t[idx(r, n2 + m)];
        if col < num_vars {
            x[col] += v;
        } else if col < n2 {
            x[col - num_vars] -= v;
        }
    }
    let value = objective
        .iter()
        .zip(&x)
        .map(|(c, xi)| c * xi)
        .sum::<f64>();

    // Verify the reconstructed point against the original data; a corrupted
    // tableau must surface as an error, not as a wrong number.
    let mut scale = 1.0f64;
    for (coeffs, rhs) in rows {
        let lhs: f64 = coeffs.iter().map(|&(c, a)| a * x[c]).sum();
        scale = scale.max(rhs.abs());
        if lhs - rhs > 1e-7 * scale.max(lhs.abs()) {
            return Err(LpError::Infeasible(lhs - rhs));
        }
    }
    Ok(LpSolution { value, x })
}

/// Lexicographic comparison of two candidate pivot rows, each scaled by its
/// pivot entry; the strictly smaller row wins. Rows start lexicographically
/// positive (identity slack block) and stay so under this rule, which makes
/// every pivot a strict lexicographic decrease and cycling impossible.
fn lex_less(t: &[f64], width: usize, r: usize, l: usize, ar: f64, al: f64) -> bool {
    for c in 0..width - 1 {
        let vr = t[r * width + c] / ar;
        let vl = t[l * width + c] / al;
        let diff = vr - vl;
        if diff.abs() > 1e-12 * (1.0 + vr.abs().max(vl.abs())) {
            return diff < 0.0;
        }
    }
    false
}

fn pivot(t: &mut [f64], width: usize, m: usize, prow: usize, pcol: usize) {
    let piv = t[prow * width + pcol];
    let inv = 1.0 / piv;
    for c in 0..width {
        t[prow * width + c] *= inv;
    }
    t[prow * width + pcol] = 1.0;
    for r in 0..=m {
        if r == prow {
            continue;
        }
        let factor = t[r * width + pcol];
        if factor == 0.0 {
            continue;
        }
        for c in 0..width {
            t[r * width + c] -= factor * t[prow * width + c];
        }
        t[r * width + pcol] = 0.0;
    }
}
