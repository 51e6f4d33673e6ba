//! Small numeric helpers shared across modules.

/// Fixed-order pairwise summation. Used for every energy/quadrature reduce
/// so that results do not depend on thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Iterate over the multi-index lattice `0..dims[k]` in row-major order.
pub fn decode_index(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = flat % dims[k];
        flat /= dims[k];
    }
}

pub fn total_cells(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distance on a flat torus of the given period (per-axis minimum image).
/// A non-positive period means a plain box (no wrapping).
pub fn torus_dist(a: &[f64], b: &[f64], period: f64) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let mut d = (x - y).abs();
        if period > 0.0 {
            d %= period;
            if d > period / 2.0 {
                d = period - d;
            }
        }
        s += d * d;
    }
    s.sqrt()
}

/// Least-squares line fit `y = slope * x + intercept`; returns
/// (slope, intercept, rms residual).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut res = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let e = y - (slope * x + intercept);
        res += e * e;
    }
    (slope, intercept, (res / n).sqrt())
}
