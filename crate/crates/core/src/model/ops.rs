//! Dense kernels for valid 3³ convolutions and 1³ channel mixing.
//!
//! Feature maps are `channels × size³`, channel-major, x-fastest.

/// `c = a·b + beta·c` for row-major `c` of shape `m × n`; `a` and `b` are
/// addressed through explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        (rows.saturating_sub(1)) * rs + (cols.saturating_sub(1)) * cs
    };
    assert!(k == 0 || last(m, k, a_strides) < a.len());
    assert!(k == 0 || last(k, n, b_strides) < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: every index addressed by the strides was bounds-checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a `cin × s³` map into a `(cin·27) × (s−2)³` matrix.
pub(crate) fn im2col(input: &[f32], cin: usize, s: usize) -> Vec<f32> {
    let o = s - 2;
    let n = o * o * o;
    let mut cols = vec![0f32; cin * 27 * n];
    for ci in 0..cin {
        let chan = &input[ci * s * s * s..(ci + 1) * s * s * s];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let r = ci * 27 + kz * 9 + ky * 3 + kx;
                    let row = &mut cols[r * n..(r + 1) * n];
                    for oz in 0..o {
                        for oy in 0..o {
                            let src = kx + s * ((oy + ky) + s * (oz + kz));
                            let dst = o * (oy + o * oz);
                            row[dst..dst + o].copy_from_slice(&chan[src..src + o]);
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns back into a `cin × s³` map.
pub(crate) fn col2im_add(cols: &[f32], cin: usize, s: usize, out: &mut [f32]) {
    let o = s - 2;
    let n = o * o * o;
    for ci in 0..cin {
        let chan = &mut out[ci * s * s * s..(ci + 1) * s * s * s];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let r = ci * 27 + kz * 9 + ky * 3 + kx;
                    let row = &cols[r * n..(r + 1) * n];
                    for oz in 0..o {
                        for oy in 0..o {
                            let dst = kx + s * ((oy + ky) + s * (oz + kz));
                            let src = o * (oy + o * oz);
                            for (d, v) in chan[dst..dst + o].iter_mut().zip(&row[src..src + o]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Valid 3³ convolution; returns the `cout × (s−2)³` pre-activation.
pub(crate) fn conv3_forward(
    input: &[f32],
    cin: usize,
    s: usize,
    weight: &[f32],
    bias: &[f32],
    cout: usize,
) -> Vec<f32> {
    let o = s - 2;
    let n = o * o * o;
    let k = cin * 27;
    let cols = im2col(input, cin, s);
    let mut out = vec![0f32; cout * n];
    for (c, b) in bias.iter().enumerate() {
        out[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = *b);
    }
    gemm(cout, k, n, weight, (k, 1), &cols, (n, 1), 1.0, &mut out);
    out
}

/// Backward of [`conv3_forward`] given the pre-activation gradient.
/// Accumulates into `dweight`/`dbias`; returns the input gradient if asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_backward(
    input: &[f32],
    cin: usize,
    s: usize,
    weight: &[f32],
    cout: usize,
    dout: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
    need_dinput: bool,
) -> Option<Vec<f32>> {
    let o = s - 2;
    let n = o * o * o;
    let k = cin * 27;
    let cols = im2col(input, cin, s);
    for (c, db) in dbias.iter_mut().enumerate() {
        *db += dout[c * n..(c + 1) * n].iter().sum::<f32>();
    }
    // dW (cout×k) += dout (cout×n) · colsᵀ (n×k)
    gemm(cout, n, k, dout, (n, 1), &cols, (1, n), 1.0, dweight);
    if !need_dinput {
        return None;
    }
    // dcols (k×n) = Wᵀ (k×cout) · dout (cout×n)
    let mut dcols = vec![0f32; k * n];
    gemm(k, cout, n, weight, (1, k), dout, (n, 1), 0.0, &mut dcols);
    let mut dinput = vec![0f32; cin * s * s * s];
    col2im_add(&dcols, cin, s, &mut dinput);
    Some(dinput)
}

/// 1³ convolution over `n` voxels.
pub(crate) fn pointwise_forward(
    input: &[f32],
    cin: usize,
    n: usize,
    weight: &[f32],
    bias: &[f32],
    cout: usize,
) -> Vec<f32> {
    let mut out = vec![0f32; cout * n];
    for (c, b) in bias.iter().enumerate() {
        out[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = *b);
    }
    gemm(cout, cin, n, weight, (cin, 1), input, (n, 1), 1.0, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pointwise_backward(
    input: &[f32],
    cin: usize,
    n: usize,
    weight: &[f32],
    cout: usize,
    dout: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
) -> Vec<f32> {
    for (c, db) in dbias.iter_mut().enumerate() {
        *db += dout[c * n..(c + 1) * n].iter().sum::<f32>();
    }
    gemm(cout, n, cin, dout, (n, 1), input, (1, n), 1.0, dweight);
    let mut dinput = vec![0f32; cin * n];
    gemm(cin, cout, n, weight, (1, cin), dout, (n, 1), 0.0, &mut dinput);
    dinput
}

pub(crate) const LEAKY_SLOPE: f32 = 0.1;

pub(crate) fn leaky_relu_in_place(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x *= LEAKY_SLOPE;
        }
    }
}

/// Turns a post-activation gradient into a pre-activation gradient, using the
/// activation output (its sign matches the pre-activation).
pub(crate) fn leaky_relu_backward_in_place(activated: &[f32], grad: &mut [f32]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}
