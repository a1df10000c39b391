//! Derivative-free Nelder–Mead simplex minimizer.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Stop when the spread of simplex values falls below `f_tol * (|f_best| + 1e-12)`.
    pub f_tol: f64,
    /// ...and every vertex lies within `x_tol` of the best one (max-norm).
    pub x_tol: f64,
    pub max_evals: usize,
    /// Fresh simplices started from the best point; the budget is split evenly across runs.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            f_tol: 1e-12,
            x_tol: 1e-9,
            max_evals: 5000,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0` with initial simplex edge lengths `step`.
///
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    // each run gets an equal share so a stalled simplex cannot eat the whole budget
    let share = (opts.max_evals / (opts.restarts + 1)).max(x0.len() + 2);
    let mut best = run(&eval, x0, step, opts, share.min(opts.max_evals));
    let mut evals = best.evals;
    let mut iterations = best.iterations;
    for _ in 0..opts.restarts {
        if evals >= opts.max_evals {
            break;
        }
        let budget = share.min(opts.max_evals - evals);
        // converged: probe with a small simplex; stalled: rebuild at full size
        let scale = if best.converged { 0.1 } else { 1.0 };
        let scaled: Vec<f64> = step.iter().map(|s| scale * s).collect();
        let again = run(&eval, &best.x, &scaled, opts, budget);
        evals += again.evals;
        iterations += again.iterations;
        if best.converged && !(again.value < best.value) {
            break;
        }
        best = again;
    }
    best.evals = evals;
    best.iterations = iterations;
    best
}

fn run<F>(f: &F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions, budget: usize) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    let mut iterations = 0;
    let mut converged = false;

    let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
    while evals < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if values[0].is_finite()
            && spread <= opts.f_tol * (values[0].abs() + 1e-12)
            && size <= opts.x_tol
        {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(gamma);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(rho);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = f(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + shrink * (x - b))
                .collect();
            values[i] = f(&v);
            simplex[i] = v;
        }
        evals += n;
    }

    let best = (0..=n)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .unwrap();
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evals,
        iterations,
        converged,
    }
}
