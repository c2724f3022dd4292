//! Gradient checks of every tape primitive, shared by the unit tests and the
//! acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topogan::autodiff::*;

fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

/// Uniform values whose magnitude stays at least `gap` away from zero.
pub fn away_from_zero(shape: &[usize], gap: f64, r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(gap..2.0);
            if r.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Scalarizes `y` as `sum(y * R)` for a fixed random `R`, so every output
/// entry contributes with a distinct weight.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let weights = rand_tensor(tape.shape(y), &mut ChaCha8Rng::seed_from_u64(seed));
    let w = tape.constant(weights);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Case = (&'static str, GradCheckReport);

fn run(out: &mut Vec<Case>, name: &'static str, inputs: &[Tensor], h: f64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    out.push((name, grad_check(inputs, f, h).unwrap()));
}

/// One report per primitive (some primitives in more than one layout).
pub fn primitive_reports() -> Vec<Case> {
    let mut out = Vec::new();
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let a = rand_tensor(&[3, 4], &mut r);
    let b = rand_tensor(&[4, 5], &mut r);
    // bilinear in each input, so a wide step is exact up to rounding
    run(&mut out, "matmul", &[a, b], 1e-3, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 10)
    });
    let x = rand_tensor(&[2, 3, 6, 6], &mut r);
    let k = rand_tensor(&[4, 3, 4, 4], &mut r);
    run(&mut out, "conv2d s2", &[x.clone(), k], DEFAULT_STEP, |t, v| {
        let y = t.conv2d(v[0], v[1], 2, 1)?;
        project(t, y, 11)
    });
    let k3 = rand_tensor(&[2, 3, 3, 3], &mut r);
    run(&mut out, "conv2d s1", &[x.clone(), k3], DEFAULT_STEP, |t, v| {
        let y = t.conv2d(v[0], v[1], 1, 1)?;
        project(t, y, 12)
    });
    let kt = rand_tensor(&[3, 2, 4, 4], &mut r);
    run(&mut out, "conv_transpose2d", &[x.clone(), kt], DEFAULT_STEP, |t, v| {
        let y = t.conv_transpose2d(v[0], v[1], 2, 1)?;
        project(t, y, 13)
    });
    let bias = rand_tensor(&[3], &mut r);
    run(&mut out, "add_bias 4d", &[x.clone(), bias.clone()], DEFAULT_STEP, |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, 14)
    });
    let m2 = rand_tensor(&[5, 3], &mut r);
    run(&mut out, "add_bias 2d", &[m2, bias], DEFAULT_STEP, |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, 15)
    });
    run(&mut out, "leaky_relu", &[away_from_zero(&[4, 6], 1e-3, &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.leaky_relu(v[0], 0.2);
        project(t, y, 16)
    });
    run(&mut out, "sigmoid", &[rand_tensor(&[4, 6], &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y, 17)
    });
    run(&mut out, "tanh", &[rand_tensor(&[4, 6], &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.tanh(v[0]);
        project(t, y, 18)
    });
    run(&mut out, "reshape", &[rand_tensor(&[4, 6], &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.reshape(v[0], &[2, 3, 2, 2])?;
        project(t, y, 19)
    });
    let c1 = rand_tensor(&[2, 3, 2, 2], &mut r);
    let c2 = rand_tensor(&[2, 1, 2, 2], &mut r);
    run(&mut out, "concat channels", &[c1, c2], DEFAULT_STEP, |t, v| {
        let y = t.concat(&[v[0], v[1]], 1)?;
        project(t, y, 20)
    });
    let r1 = rand_tensor(&[2, 3], &mut r);
    let r2 = rand_tensor(&[4, 3], &mut r);
    run(&mut out, "concat rows", &[r1, r2], DEFAULT_STEP, |t, v| {
        let y = t.concat(&[v[0], v[1]], 0)?;
        project(t, y, 21)
    });
    run(&mut out, "expand_spatial", &[rand_tensor(&[3, 2], &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.expand_spatial(v[0], 3, 4)?;
        project(t, y, 22)
    });
    run(&mut out, "mean, affine", &[rand_tensor(&[3, 2], &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.mean(v[0]);
        Ok(t.affine(y, 3.0, 0.0))
    });
    let e1 = rand_tensor(&[3, 4], &mut r);
    let e2 = rand_tensor(&[3, 4], &mut r);
    run(&mut out, "add, sub, mul", &[e1, e2], DEFAULT_STEP, |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let d = t.sub(d, v[1])?;
        let y = t.mul(d, v[0])?;
        project(t, y, 23)
    });
    let pos = Tensor::new(&[5], vec![0.01, 0.3, 0.5, 0.9, 2.0]).unwrap();
    run(&mut out, "log_clamped", &[pos.clone()], DEFAULT_STEP, |t, v| {
        let y = t.log_clamped(v[0]);
        project(t, y, 24)
    });
    run(&mut out, "clamp, exp", &[pos], DEFAULT_STEP, |t, v| {
        let y = t.clamp(v[0], 1e-3, 5.0);
        let y = t.exp(y);
        project(t, y, 25)
    });
    run(&mut out, "abs", &[away_from_zero(&[6], 1e-3, &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.abs(v[0]);
        project(t, y, 26)
    });
    run(&mut out, "minibatch_similarity", &[rand_tensor(&[4, 6], &mut r)], DEFAULT_STEP, |t, v| {
        let y = t.minibatch_similarity(v[0], 2, 3)?;
        project(t, y, 27)
    });
    out
}
