//! Derivative-free simplex minimization.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when the spread of objective values across the simplex drops
    /// below this.
    pub f_tol: f64,
    /// ... and the simplex fits in a box of this half-width.
    pub x_tol: f64,
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

/// Minimizes `f` starting from the simplex `x0`, `x0 + step_i e_i`.
pub fn minimize<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| sanitize(f(x))).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        order(&mut simplex, &mut values);
        if is_converged(&simplex, &values, opts) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|x| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = &simplex[n];
        let along = |t: f64| -> Vec<f64> { (0..n).map(|d| centroid[d] + t * (worst[d] - centroid[d])).collect() };

        let xr = along(-1.0);
        let fr = sanitize(f(&xr));
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = sanitize(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = sanitize(f(&xc));
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = sanitize(f(&xc));
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = best[d] + 0.5 * (simplex[i][d] - best[d]);
                    }
                    values[i] = sanitize(f(&simplex[i]));
                }
            }
        }
        trace.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    }
    order(&mut simplex, &mut values);
    NelderMeadResult { x: simplex.swap_remove(0), f: values[0], iterations, converged, trace }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn order(simplex: &mut [Vec<f64>], values: &mut [f64]) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let s: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
    let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    simplex.clone_from_slice(&s);
    values.copy_from_slice(&v);
}

fn is_converged(simplex: &[Vec<f64>], values: &[f64], opts: &NelderMeadOptions) -> bool {
    let spread = values[values.len() - 1] - values[0];
    if !(spread.abs() < opts.f_tol) {
        return false;
    }
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .all(|x| x.iter().zip(best).all(|(a, b)| (a - b).abs() <= opts.x_tol))
}
