//! Brute-force evaluation of the minibatch discrimination layer.

/// Triple-loop evaluation of `o[i, b] = sum_{j != i} exp(-||M_ib - M_jb||_1)`.
pub fn features(f: &[f64], t: &[f64], n: usize, a: usize, b: usize, c: usize) -> Vec<f64> {
    let m = |i: usize, kb: usize, kc: usize| (0..a).map(|ka| f[i * a + ka] * t[ka * b * c + kb * c + kc]).sum::<f64>();
    let mut out = vec![0.0; n * b];
    for i in 0..n {
        for kb in 0..b {
            for j in 0..n {
                if j != i {
                    let l1: f64 = (0..c).map(|kc| (m(i, kb, kc) - m(j, kb, kc)).abs()).sum();
                    out[i * b + kb] += (-l1).exp();
                }
            }
        }
    }
    out
}

/// Five-point central difference of `g` along coordinate `idx` of `x`.
pub fn five_point(g: &dyn Fn(&[f64]) -> f64, x: &[f64], idx: usize, h: f64) -> f64 {
    let at = |d: f64| {
        let mut y = x.to_vec();
        y[idx] += d;
        g(&y)
    };
    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
}

/// Smallest |M_ibc - M_jbc| over all pairs; differences must stay clear of the
/// kink of |.| for finite differences to be meaningful.
pub fn min_gap(f: &[f64], t: &[f64], n: usize, a: usize, b: usize, c: usize) -> f64 {
    let m = |i: usize, kb: usize, kc: usize| (0..a).map(|ka| f[i * a + ka] * t[ka * b * c + kb * c + kc]).sum::<f64>();
    let mut gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            for kb in 0..b {
                for kc in 0..c {
                    gap = gap.min((m(i, kb, kc) - m(j, kb, kc)).abs());
                }
            }
        }
    }
    gap
}

/// Relative distance with a unit floor.
pub fn close_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
