//! Derivative-free Nelder–Mead minimization.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Stop once `max f - min f` over the simplex falls below this.
    pub f_tol: f64,
    pub max_evals: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Rebuild the simplex around the optimum once after convergence.
    pub restart: bool,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-8,
            max_evals: 5000,
            initial_step: 0.5,
            restart: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0`. Non-finite objective values are treated
/// as `+inf`. The returned value never exceeds `f(x0)`.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let (mut best, used) = run(&mut eval, x0, opts.initial_step, opts, 0);
    if opts.restart && used < opts.max_evals {
        let start = best.x.clone();
        let (again, _) = run(&mut eval, &start, opts.initial_step, opts, used);
        if again.value <= best.value {
            best = again;
        }
    }
    best.evaluations = evals;
    best
}

/// One simplex run; returns the minimum and the cumulative evaluation count.
fn run(
    eval: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    opts: &NelderMeadOptions,
    used: usize,
) -> (Minimum, usize) {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = x0.len();
    let mut count = used;
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    vals.push(eval(x0));
    count += 1;
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        vals.push(eval(&p));
        pts.push(p);
        count += 1;
    }
    let mut order: Vec<usize> = (0..=n).collect();
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while count < opts.max_evals {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (lo, hi, second) = (order[0], order[n], order[n - 1]);
        if vals[hi] - vals[lo] < opts.f_tol || (vals[hi].is_infinite() && vals[lo].is_infinite()) {
            converged = vals[lo].is_finite();
            break;
        }
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, p) in centroid.iter_mut().zip(&pts[i]) {
                *c += p / n as f64;
            }
        }
        let along = |coef: f64, out: &mut Vec<f64>, pts: &Vec<Vec<f64>>| {
            for ((o, c), p) in out.iter_mut().zip(&centroid).zip(&pts[hi]) {
                *o = c + coef * (c - p);
            }
        };
        along(REFLECT, &mut trial, &pts);
        let fr = eval(&trial);
        count += 1;
        if fr < vals[lo] {
            along(EXPAND, &mut trial2, &pts);
            let fe = eval(&trial2);
            count += 1;
            if fe < fr {
                pts[hi].copy_from_slice(&trial2);
                vals[hi] = fe;
            } else {
                pts[hi].copy_from_slice(&trial);
                vals[hi] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[hi].copy_from_slice(&trial);
            vals[hi] = fr;
            continue;
        }
        let (coef, reference) = if fr < vals[hi] { (CONTRACT, fr) } else { (-CONTRACT, vals[hi]) };
        along(coef, &mut trial2, &pts);
        let fc = eval(&trial2);
        count += 1;
        if fc < reference || (fc <= reference && fc.is_finite()) {
            pts[hi].copy_from_slice(&trial2);
            vals[hi] = fc;
            continue;
        }
        let anchor = pts[lo].clone();
        for &i in &order[1..] {
            for (p, a) in pts[i].iter_mut().zip(&anchor) {
                *p = a + SHRINK * (*p - a);
            }
            vals[i] = eval(&pts[i]);
            count += 1;
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("nonempty simplex");
    (
        Minimum {
            x: pts[best].clone(),
            value: vals[best],
            evaluations: count - used,
            converged,
        },
        count,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            f_tol: 1e-14,
            max_evals: 20_000,
            ..Default::default()
        };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn never_worse_than_start_and_handles_nan() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) + x[1].abs() };
        let start = [0.1, 0.3];
        let m = nelder_mead(f, &start, &NelderMeadOptions::default());
        assert!(m.value <= f(&start));
        assert!((m.x[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn respects_evaluation_budget() {
        let f = |x: &[f64]| x.iter().map(|v| v.sin() + 0.01 * v * v).sum::<f64>();
        let opts = NelderMeadOptions {
            max_evals: 50,
            f_tol: 0.0,
            ..Default::default()
        };
        let m = nelder_mead(f, &[0.0; 4], &opts);
        // a single iteration may overshoot by at most a shrink step
        assert!(m.evaluations <= 50 + 5);
    }
}
