//! Plain loop kernels. All accumulate into `out`.

/// out[m,n] += a[m,k] · b[k,n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,n] += a[m,k] · b[n,k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

/// out[m,n] += a[k,m]ᵀ · b[k,n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Strides of a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Adds `src` (laid out in `shape`) into `dst`, which is laid out in `shape`
/// permuted by `perm`.
pub(crate) fn permute_into(src: &[f64], shape: &[usize], perm: &[usize], dst: &mut [f64]) {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // stride in the source for each output axis
    let src_step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; rank];
    let mut src_off = 0usize;
    for d in dst.iter_mut() {
        *d += src[src_off];
        // increment the multi-index over out_shape
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            src_off += src_step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src_off -= src_step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}
