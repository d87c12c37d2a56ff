//! Small numerical utilities shared by the runners: seeded random streams,
//! noise draws, fixed-step RK4 and a box-constrained Nelder–Mead search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::NoiseKind;

/// Independent random stream `stream` derived from the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One noise draw with standard deviation `sigma`.
pub fn noise(rng: &mut impl Rng, sigma: f64, kind: NoiseKind) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    match kind {
        NoiseKind::Gaussian => Normal::new(0.0, sigma).expect("finite sigma").sample(rng),
        NoiseKind::Uniform => {
            let a = 3f64.sqrt() * sigma;
            rng.random_range(-a..=a)
        }
    }
}

/// `count` points spaced evenly in log scale from `lo` to `hi` inclusive.
pub fn geomspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// `count` points spaced evenly from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

/// One classical fourth-order Runge–Kutta step of size `h` from `(t, y)`.
pub fn rk4_step(rhs: &dyn Fn(f64, &[f64]) -> Vec<f64>, t: f64, y: &[f64], h: f64) -> Vec<f64> {
    let axpy = |k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &axpy(&k1, 0.5 * h));
    let k3 = rhs(t + 0.5 * h, &axpy(&k2, 0.5 * h));
    let k4 = rhs(t + h, &axpy(&k3, h));
    (0..y.len()).map(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect()
}

/// Classical fourth-order Runge–Kutta with `steps` equal steps on
/// `[0, t_end]`. Returns the state at every step, `steps + 1` entries.
pub fn rk4(rhs: &dyn Fn(f64, &[f64]) -> Vec<f64>, y0: &[f64], t_end: f64, steps: usize) -> Vec<Vec<f64>> {
    let h = t_end / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0.to_vec());
    for i in 0..steps {
        let next = rk4_step(rhs, i as f64 * h, &out[i], h);
        out.push(next);
    }
    out
}

/// States at arbitrary `times` in `[0, t_end]` from an RK4 trajectory with
/// `steps` equal steps, finishing each time with one partial step from the
/// grid point below it.
pub fn rk4_at(rhs: &dyn Fn(f64, &[f64]) -> Vec<f64>, y0: &[f64], t_end: f64, steps: usize, times: &[f64]) -> Vec<Vec<f64>> {
    let traj = rk4(rhs, y0, t_end, steps);
    let h = t_end / steps as f64;
    times
        .iter()
        .map(|&t| {
            let k = ((t / h).floor() as usize).min(steps);
            let rest = t - k as f64 * h;
            if rest.abs() <= 1e-12 * h.max(t.abs()) {
                traj[k].clone()
            } else {
                rk4_step(rhs, k as f64 * h, &traj[k], rest)
            }
        })
        .collect()
}

/// Result of a Nelder–Mead search.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Nelder–Mead minimization restricted to a box by clamping every trial
/// point. The initial simplex steps 10% of each box width from `x0`.
/// Stops when the simplex values and vertices agree to `tol`.
pub fn nelder_mead_box(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], bounds: &[[f64; 2]], max_iter: usize, tol: f64) -> Minimum {
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for (v, b) in x.iter_mut().zip(bounds) {
            *v = v.clamp(b[0], b[1]);
        }
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = 0.1 * (bounds[i][1] - bounds[i][0]);
        v[i] = if v[i] + step <= bounds[i][1] { v[i] + step } else { v[i] - step };
        clamp(&mut v);
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= tol * (1.0 + vals[0].abs()) && size <= tol.sqrt() * 1e-3 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let towards = |s: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + s * (w - c)).collect();
            clamp(&mut p);
            p
        };
        let xr = towards(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = towards(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let x = towards(-0.5);
            let v = f(&x);
            (x, v)
        } else {
            let x = towards(0.5);
            let v = f(&x);
            (x, v)
        };
        if fc < vals[n].min(fr) {
            simplex[n] = xc;
            vals[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut p: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
            clamp(&mut p);
            vals[i] = f(&p);
            simplex[i] = p;
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    Minimum { x: simplex[best].clone(), value: vals[best], iterations }
}

/// Integer counts summing exactly to `budget` from a probability vector:
/// ceiling rounding first, then removing single queries where the rounded
/// count overshoots `eta_i * budget` the most (lowest index on ties).
pub fn counts_for_budget(eta: &[f64], budget: usize) -> Vec<usize> {
    let t = budget as f64;
    let mut counts: Vec<usize> = eta.iter().map(|&e| (e * t - 1e-9).ceil().max(0.0) as usize).collect();
    let mut total: usize = counts.iter().sum();
    while total > budget {
        let mut pick = None;
        let mut worst = f64::NEG_INFINITY;
        for (i, (&c, &e)) in counts.iter().zip(eta).enumerate() {
            if c > 0 && c as f64 - e * t > worst {
                worst = c as f64 - e * t;
                pick = Some(i);
            }
        }
        let i = pick.expect("positive total has a positive count");
        counts[i] -= 1;
        total -= 1;
    }
    counts
}
