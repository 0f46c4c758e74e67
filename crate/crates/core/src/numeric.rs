//! Small scalar routines shared by the solvers: bracketed root finding,
//! golden-section maximization, quadrature and kernel smoothing.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}

/// Lattice `lo, lo + step, ...` closed by `hi`.
pub fn lattice(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|i| lo + step * i as f64).collect();
    if hi - v[v.len() - 1] > 1e-9 * step {
        v.push(hi);
    } else {
        let last = v.len() - 1;
        v[last] = hi;
    }
    v
}

/// Bisection on a bracket where `f(lo)` and `f(hi)` do not share a sign.
///
/// Stops when the bracket is narrower than `xtol` (absolute) or after the
/// bracket can no longer be split in floating point.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    let fhi = f(hi);
    if fhi == 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Returns the final bracket; the maximizer lies inside it.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if c <= a || d >= b {
            break;
        }
    }
    (a, b)
}

/// Trapezoidal integral of tabulated `ys` over ascending `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Ordinary-least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Local-linear smoother with a Gaussian kernel, evaluated at `x`.
/// The kernel is truncated at four bandwidths.
pub fn kernel_smooth(grid: &[f64], values: &[f64], bandwidth: f64, x: f64) -> f64 {
    // local-linear fit: exact on lines, no bias at the table edges
    let reach = 4.0 * bandwidth;
    let start = grid.partition_point(|&g| g < x - reach);
    let end = grid.partition_point(|&g| g <= x + reach);
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in start..end {
        let d = grid[i] - x;
        let z = d / bandwidth;
        let w = (-0.5 * z * z).exp();
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
        t0 += w * values[i];
        t1 += w * d * values[i];
    }
    let det = s0 * s2 - s1 * s1;
    if det > 1e-12 * s0 * s2 && s0 > 0.0 {
        (s2 * t0 - s1 * t1) / det
    } else if s0 > 0.0 {
        t0 / s0
    } else {
        0.0
    }
}

/// Central difference of the kernel-smoothed table at `x`, with the
/// difference step equal to the mean grid spacing.
pub fn smoothed_slope(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let n = grid.len();
    let step = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let bw = 2.0 * step;
    (kernel_smooth(grid, values, bw, x + step) - kernel_smooth(grid, values, bw, x - step))
        / (2.0 * step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert_abs_diff_eq!(r, 2f64.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn bisect_accepts_reversed_sign_bracket() {
        let r = bisect(|x| 1.0 - x, 0.0, 3.0, 1e-14);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn golden_section_brackets_parabola_peak() {
        let (a, b) = golden_section_max(|x| -(x - 1.3) * (x - 1.3), -4.0, 5.0, 1e-8);
        assert!(a <= 1.3 + 1e-7 && b >= 1.3 - 1e-7);
        assert!(b - a <= 1e-7);
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let xs = linspace(0.0, 2.0, 7);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert_abs_diff_eq!(trapezoid(&xs, &ys), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_recovers_line_and_flat() {
        let xs = [0.0, 0.1, 0.2, 0.3];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        assert_abs_diff_eq!(ols_slope(&xs, &ys), -2.0, epsilon = 1e-12);
        assert_eq!(ols_slope(&xs, &[0.2; 4]), 0.0);
    }

    #[test]
    fn lattice_closes_at_hi() {
        let l = lattice(0.0, 1.0, 0.3);
        assert_eq!(l.len(), 5);
        assert_eq!(*l.last().unwrap(), 1.0);
        let l = lattice(0.0, 1.0, 0.25);
        assert_eq!(l.len(), 5);
    }

    #[test]
    fn smoothed_slope_of_line() {
        let xs = linspace(0.0, 10.0, 101);
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 * x).collect();
        assert_abs_diff_eq!(smoothed_slope(&xs, &ys, 5.0), 0.7, epsilon = 1e-9);
    }
}
