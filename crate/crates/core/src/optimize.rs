//! Nelder–Mead simplex minimisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Initial simplex offset for rotation parameters (rad).
    pub rot_step: f64,
    /// Initial simplex offset for translation parameters (mm).
    pub trans_step: f64,
    /// Relative spread of simplex values.
    pub tol_f: f64,
    /// Largest coordinate distance of any vertex from the best one.
    pub tol_x: f64,
    pub max_evals: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            rot_step: 2f64.to_radians(),
            trans_step: 1.0,
            tol_f: 1e-6,
            tol_x: 1e-4,
            max_evals: 2000,
        }
    }
}

impl SimplexOptions {
    /// Per-parameter initial steps for `(rx, ry, rz, tx, ty, tz)`.
    pub fn pose_steps(&self) -> [f64; 6] {
        let (r, t) = (self.rot_step, self.trans_step);
        [r, r, r, t, t, t]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.rot_step > 0.0
            && self.trans_step > 0.0
            && self.tol_f >= 0.0
            && self.tol_x >= 0.0
            && self.max_evals > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid simplex options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimises `f` from `start` with an initial simplex `start + steps[i]·e_i`.
///
/// Stops when both the value spread (relative to the best value) is within
/// `tol_f` and every vertex is within `tol_x` of the best one in each
/// coordinate, or after `max_evals` evaluations. Non-finite values during the
/// search count as +∞; a non-finite value at `start` is an error.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    steps: &[f64],
    opts: &SimplexOptions,
) -> Result<SimplexResult> {
    opts.validate()?;
    let n = start.len();
    if n == 0 || steps.len() != n {
        return Err(Error::InvalidArgument("start and steps must be non-empty and of equal length".into()));
    }
    let f0 = f(start);
    if !f0.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut evals = 1usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), f0)];
    for i in 0..n {
        if evals >= opts.max_evals {
            break;
        }
        let mut x = start.to_vec();
        x[i] += steps[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    if simplex.len() < n + 1 {
        return Ok(best_of(simplex, evals, false));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let mut converged = false;
    while evals < opts.max_evals {
        if is_converged(&simplex, opts) {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(opts.reflection);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(opts.reflection * opts.expansion);
            let fe = if evals < opts.max_evals { eval(&xe, &mut evals) } else { f64::INFINITY };
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            // Outside contraction when the reflection improved on the worst point, inside otherwise.
            let t = if fr < worst.1 { opts.reflection * opts.contraction } else { -opts.contraction };
            let xc = along(t);
            let fc = eval(&xc, &mut evals);
            if fc < fr.min(worst.1) || (fr < worst.1 && fc <= fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if evals >= opts.max_evals {
                        break;
                    }
                    let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, xi)| b + opts.shrink * (xi - b)).collect();
                    let fx = eval(&x, &mut evals);
                    *v = (x, fx);
                }
            }
        }
        order(&mut simplex);
    }
    if !converged {
        converged = is_converged(&simplex, opts);
    }
    Ok(best_of(simplex, evals, converged))
}

fn is_converged(simplex: &[(Vec<f64>, f64)], opts: &SimplexOptions) -> bool {
    let (best, fbest) = (&simplex[0].0, simplex[0].1);
    let fspread = simplex.iter().map(|v| (v.1 - fbest).abs()).fold(0.0, f64::max);
    let xspread = simplex
        .iter()
        .flat_map(|v| v.0.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    fspread <= opts.tol_f * fbest.abs().max(1.0) && xspread <= opts.tol_x
}

fn best_of(mut simplex: Vec<(Vec<f64>, f64)>, evals: usize, converged: bool) -> SimplexResult {
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        evals,
        converged,
    }
}
