//! Thin wrappers over `matrixmultiply::dgemm` for the layouts used by the
//! network: weights row-major `out × in`, activations column-major `dim × n`.

#[allow(clippy::too_many_arguments)]
fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        )
    }
}

/// `y = W x` for `ncols` columns, overwriting `y`.
pub fn forward(w: &[f64], fan_in: usize, fan_out: usize, x: &[f64], ncols: usize, y: &mut [f64]) {
    dgemm(fan_out, fan_in, ncols, 1.0, w, fan_in, 1, x, 1, fan_in, 0.0, y, 1, fan_out);
}

/// `dW += dy xᵀ`.
pub fn grad_weight(dw: &mut [f64], fan_in: usize, fan_out: usize, dy: &[f64], x: &[f64], ncols: usize) {
    dgemm(fan_out, ncols, fan_in, 1.0, dy, 1, fan_out, x, fan_in, 1, 1.0, dw, fan_in, 1);
}

/// `dx = Wᵀ dy + beta·dx`.
pub fn grad_input(w: &[f64], fan_in: usize, fan_out: usize, dy: &[f64], ncols: usize, beta: f64, dx: &mut [f64]) {
    dgemm(fan_in, fan_out, ncols, 1.0, w, 1, fan_in, dy, 1, fan_out, beta, dx, 1, fan_in);
}

pub fn add_bias(y: &mut [f64], b: &[f64]) {
    for col in y.chunks_exact_mut(b.len()) {
        for (v, bi) in col.iter_mut().zip(b) {
            *v += bi;
        }
    }
}

pub fn grad_bias(db: &mut [f64], dy: &[f64]) {
    for col in dy.chunks_exact(db.len()) {
        for (g, v) in db.iter_mut().zip(col) {
            *g += v;
        }
    }
}
