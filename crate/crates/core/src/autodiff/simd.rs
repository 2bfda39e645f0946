//! Explicit-SIMD inner kernels for the dense-layer hot loops, with a scalar
//! fallback. The accumulation order over the reduction index is the same in
//! every path, so a given machine and build produce identical runs; paths
//! differ only in whether multiply-add is fused.

#[cfg(target_arch = "x86_64")]
use std::arch::x86_64::*;
use std::sync::OnceLock;

const TILE: usize = 8;

#[derive(Clone, Copy, PartialEq, Debug)]
enum Level {
    Scalar,
    #[cfg(target_arch = "x86_64")]
    Avx2Fma,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx512f") {
                return Level::Avx512;
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                return Level::Avx2Fma;
            }
        }
        Level::Scalar
    })
}

/// y = x·Wᵀ + b into `out`; `wt` is the transposed weight (k-major).
pub fn affine_forward(
    x: &[f64],
    wt: &[f64],
    b: &[f64],
    out: &mut [f64],
    n: usize,
    d_in: usize,
    d_out: usize,
) {
    match level() {
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe { forward_avx512(x, wt, b, out, n, d_in, d_out) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx2Fma => unsafe { forward_avx2(x, wt, b, out, n, d_in, d_out) },
        Level::Scalar => forward_scalar(x, wt, b, out, n, d_in, d_out),
    }
}

/// gx += g·W (rows of W are contiguous over the input index).
pub fn backward_input(
    g: &[f64],
    w: &[f64],
    gx: &mut [f64],
    n: usize,
    d_in: usize,
    d_out: usize,
) {
    match level() {
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe { backward_input_avx512(g, w, gx, n, d_in, d_out) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx2Fma => unsafe { backward_input_avx2(g, w, gx, n, d_in, d_out) },
        Level::Scalar => backward_input_scalar(g, w, gx, n, d_in, d_out),
    }
}

/// gw += gᵀ·x.
pub fn backward_weight(
    g: &[f64],
    x: &[f64],
    gw: &mut [f64],
    n: usize,
    d_in: usize,
    d_out: usize,
) {
    match level() {
        #[cfg(target_arch = "x86_64")]
        Level::Avx512 => unsafe { backward_weight_avx512(g, x, gw, n, d_in, d_out) },
        #[cfg(target_arch = "x86_64")]
        Level::Avx2Fma => unsafe { backward_weight_avx2(g, x, gw, n, d_in, d_out) },
        Level::Scalar => backward_weight_scalar(g, x, gw, n, d_in, d_out),
    }
}

// --- scalar fallback ---------------------------------------------------------

fn forward_scalar(x: &[f64], wt: &[f64], b: &[f64], out: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_out / TILE;
    for i in 0..n {
        let xrow = &x[i * d_in..(i + 1) * d_in];
        let orow = &mut out[i * d_out..(i + 1) * d_out];
        for blk in 0..blocks {
            let o0 = blk * TILE;
            let mut acc = [0.0f64; TILE];
            acc.copy_from_slice(&b[o0..o0 + TILE]);
            for (k, &xk) in xrow.iter().enumerate() {
                let wrow = &wt[k * d_out + o0..k * d_out + o0 + TILE];
                for t in 0..TILE {
                    acc[t] += xk * wrow[t];
                }
            }
            orow[o0..o0 + TILE].copy_from_slice(&acc);
        }
        for o in blocks * TILE..d_out {
            let mut acc = b[o];
            for (k, &xk) in xrow.iter().enumerate() {
                acc += xk * wt[k * d_out + o];
            }
            orow[o] = acc;
        }
    }
}

fn backward_input_scalar(g: &[f64], w: &[f64], gx: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_in / TILE;
    for i in 0..n {
        let grow = &g[i * d_out..(i + 1) * d_out];
        let gxrow = &mut gx[i * d_in..(i + 1) * d_in];
        for blk in 0..blocks {
            let k0 = blk * TILE;
            let mut acc = [0.0f64; TILE];
            for (o, &go) in grow.iter().enumerate() {
                let wrow = &w[o * d_in + k0..o * d_in + k0 + TILE];
                for t in 0..TILE {
                    acc[t] += go * wrow[t];
                }
            }
            for t in 0..TILE {
                gxrow[k0 + t] += acc[t];
            }
        }
        for k in blocks * TILE..d_in {
            let mut acc = 0.0;
            for (o, &go) in grow.iter().enumerate() {
                acc += go * w[o * d_in + k];
            }
            gxrow[k] += acc;
        }
    }
}

fn backward_weight_scalar(g: &[f64], x: &[f64], gw: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_in / TILE;
    for o in 0..d_out {
        let gwrow = &mut gw[o * d_in..(o + 1) * d_in];
        for blk in 0..blocks {
            let k0 = blk * TILE;
            let mut acc = [0.0f64; TILE];
            for i in 0..n {
                let go = g[i * d_out + o];
                let xrow = &x[i * d_in + k0..i * d_in + k0 + TILE];
                for t in 0..TILE {
                    acc[t] += go * xrow[t];
                }
            }
            for t in 0..TILE {
                gwrow[k0 + t] += acc[t];
            }
        }
        for k in blocks * TILE..d_in {
            let mut acc = 0.0;
            for i in 0..n {
                acc += g[i * d_out + o] * x[i * d_in + k];
            }
            gwrow[k] += acc;
        }
    }
}

// --- AVX-512 -----------------------------------------------------------------

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn forward_avx512(x: &[f64], wt: &[f64], b: &[f64], out: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_out / TILE;
    // Tile loop outermost: the 8-column weight slice stays hot across the
    // whole batch.
    let mut wslice = vec![0.0f64; d_in * TILE];
    for blk in 0..blocks {
        let o0 = blk * TILE;
        for k in 0..d_in {
            std::ptr::copy_nonoverlapping(
                wt.as_ptr().add(k * d_out + o0),
                wslice.as_mut_ptr().add(k * TILE),
                TILE,
            );
        }
        let bvec = _mm512_loadu_pd(b.as_ptr().add(o0));
        for i in 0..n {
            let xp = x.as_ptr().add(i * d_in);
            let mut acc = bvec;
            let mut wp = wslice.as_ptr();
            for k in 0..d_in {
                let xk = _mm512_set1_pd(*xp.add(k));
                acc = _mm512_fmadd_pd(xk, _mm512_loadu_pd(wp), acc);
                wp = wp.add(TILE);
            }
            _mm512_storeu_pd(out.as_mut_ptr().add(i * d_out + o0), acc);
        }
    }
    for o in blocks * TILE..d_out {
        for i in 0..n {
            let xp = x.as_ptr().add(i * d_in);
            let mut acc = b[o];
            for k in 0..d_in {
                acc += *xp.add(k) * wt[k * d_out + o];
            }
            *out.as_mut_ptr().add(i * d_out + o) = acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn backward_input_avx512(g: &[f64], w: &[f64], gx: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_in / TILE;
    let mut wslice = vec![0.0f64; d_out * TILE];
    for blk in 0..blocks {
        let k0 = blk * TILE;
        for o in 0..d_out {
            std::ptr::copy_nonoverlapping(
                w.as_ptr().add(o * d_in + k0),
                wslice.as_mut_ptr().add(o * TILE),
                TILE,
            );
        }
        for i in 0..n {
            let gp = g.as_ptr().add(i * d_out);
            let mut acc = _mm512_setzero_pd();
            let mut wp = wslice.as_ptr();
            for o in 0..d_out {
                let go = _mm512_set1_pd(*gp.add(o));
                acc = _mm512_fmadd_pd(go, _mm512_loadu_pd(wp), acc);
                wp = wp.add(TILE);
            }
            let dst = gx.as_mut_ptr().add(i * d_in + k0);
            _mm512_storeu_pd(dst, _mm512_add_pd(_mm512_loadu_pd(dst), acc));
        }
    }
    for k in blocks * TILE..d_in {
        for i in 0..n {
            let gp = g.as_ptr().add(i * d_out);
            let mut acc = 0.0;
            for o in 0..d_out {
                acc += *gp.add(o) * w[o * d_in + k];
            }
            *gx.as_mut_ptr().add(i * d_in + k) += acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn backward_weight_avx512(g: &[f64], x: &[f64], gw: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_in / TILE;
    // Transpose g once so the per-output gradient column reads contiguously.
    let mut gt = vec![0.0f64; d_out * n];
    for i in 0..n {
        for o in 0..d_out {
            *gt.get_unchecked_mut(o * n + i) = *g.get_unchecked(i * d_out + o);
        }
    }
    for blk in 0..blocks {
        let k0 = blk * TILE;
        for o in 0..d_out {
            let gp = gt.as_ptr().add(o * n);
            let mut acc = _mm512_setzero_pd();
            let mut xp = x.as_ptr().add(k0);
            for i in 0..n {
                let go = _mm512_set1_pd(*gp.add(i));
                acc = _mm512_fmadd_pd(go, _mm512_loadu_pd(xp), acc);
                xp = xp.add(d_in);
            }
            let dst = gw.as_mut_ptr().add(o * d_in + k0);
            _mm512_storeu_pd(dst, _mm512_add_pd(_mm512_loadu_pd(dst), acc));
        }
    }
    for k in blocks * TILE..d_in {
        for o in 0..d_out {
            let mut acc = 0.0;
            for i in 0..n {
                acc += g[i * d_out + o] * x[i * d_in + k];
            }
            *gw.as_mut_ptr().add(o * d_in + k) += acc;
        }
    }
}

// --- AVX2 + FMA (two 4-lane registers per tile) -------------------------------

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn forward_avx2(x: &[f64], wt: &[f64], b: &[f64], out: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_out / TILE;
    let mut wslice = vec![0.0f64; d_in * TILE];
    for blk in 0..blocks {
        let o0 = blk * TILE;
        for k in 0..d_in {
            std::ptr::copy_nonoverlapping(
                wt.as_ptr().add(k * d_out + o0),
                wslice.as_mut_ptr().add(k * TILE),
                TILE,
            );
        }
        let blo = _mm256_loadu_pd(b.as_ptr().add(o0));
        let bhi = _mm256_loadu_pd(b.as_ptr().add(o0 + 4));
        for i in 0..n {
            let xp = x.as_ptr().add(i * d_in);
            let (mut lo, mut hi) = (blo, bhi);
            let mut wp = wslice.as_ptr();
            for k in 0..d_in {
                let xk = _mm256_set1_pd(*xp.add(k));
                lo = _mm256_fmadd_pd(xk, _mm256_loadu_pd(wp), lo);
                hi = _mm256_fmadd_pd(xk, _mm256_loadu_pd(wp.add(4)), hi);
                wp = wp.add(TILE);
            }
            _mm256_storeu_pd(out.as_mut_ptr().add(i * d_out + o0), lo);
            _mm256_storeu_pd(out.as_mut_ptr().add(i * d_out + o0 + 4), hi);
        }
    }
    for o in blocks * TILE..d_out {
        for i in 0..n {
            let xp = x.as_ptr().add(i * d_in);
            let mut acc = b[o];
            for k in 0..d_in {
                acc += *xp.add(k) * wt[k * d_out + o];
            }
            *out.as_mut_ptr().add(i * d_out + o) = acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn backward_input_avx2(g: &[f64], w: &[f64], gx: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_in / TILE;
    let mut wslice = vec![0.0f64; d_out * TILE];
    for blk in 0..blocks {
        let k0 = blk * TILE;
        for o in 0..d_out {
            std::ptr::copy_nonoverlapping(
                w.as_ptr().add(o * d_in + k0),
                wslice.as_mut_ptr().add(o * TILE),
                TILE,
            );
        }
        for i in 0..n {
            let gp = g.as_ptr().add(i * d_out);
            let mut lo = _mm256_setzero_pd();
            let mut hi = _mm256_setzero_pd();
            let mut wp = wslice.as_ptr();
            for o in 0..d_out {
                let go = _mm256_set1_pd(*gp.add(o));
                lo = _mm256_fmadd_pd(go, _mm256_loadu_pd(wp), lo);
                hi = _mm256_fmadd_pd(go, _mm256_loadu_pd(wp.add(4)), hi);
                wp = wp.add(TILE);
            }
            let dst = gx.as_mut_ptr().add(i * d_in + k0);
            _mm256_storeu_pd(dst, _mm256_add_pd(_mm256_loadu_pd(dst), lo));
            _mm256_storeu_pd(dst.add(4), _mm256_add_pd(_mm256_loadu_pd(dst.add(4)), hi));
        }
    }
    for k in blocks * TILE..d_in {
        for i in 0..n {
            let gp = g.as_ptr().add(i * d_out);
            let mut acc = 0.0;
            for o in 0..d_out {
                acc += *gp.add(o) * w[o * d_in + k];
            }
            *gx.as_mut_ptr().add(i * d_in + k) += acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn backward_weight_avx2(g: &[f64], x: &[f64], gw: &mut [f64], n: usize, d_in: usize, d_out: usize) {
    let blocks = d_in / TILE;
    let mut gt = vec![0.0f64; d_out * n];
    for i in 0..n {
        for o in 0..d_out {
            *gt.get_unchecked_mut(o * n + i) = *g.get_unchecked(i * d_out + o);
        }
    }
    for blk in 0..blocks {
        let k0 = blk * TILE;
        for o in 0..d_out {
            let gp = gt.as_ptr().add(o * n);
            let mut lo = _mm256_setzero_pd();
            let mut hi = _mm256_setzero_pd();
            let mut xp = x.as_ptr().add(k0);
            for i in 0..n {
                let go = _mm256_set1_pd(*gp.add(i));
                lo = _mm256_fmadd_pd(go, _mm256_loadu_pd(xp), lo);
                hi = _mm256_fmadd_pd(go, _mm256_loadu_pd(xp.add(4)), hi);
                xp = xp.add(d_in);
            }
            let dst = gw.as_mut_ptr().add(o * d_in + k0);
            _mm256_storeu_pd(dst, _mm256_add_pd(_mm256_loadu_pd(dst), lo));
            _mm256_storeu_pd(dst.add(4), _mm256_add_pd(_mm256_loadu_pd(dst.add(4)), hi));
        }
    }
    for k in blocks * TILE..d_in {
        for o in 0..d_out {
            let mut acc = 0.0;
            for i in 0..n {
                acc += g[i * d_out + o] * x[i * d_in + k];
            }
            *gw.as_mut_ptr().add(o * d_in + k) += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn nearly(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!(
                (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0),
                "{x} vs {y}"
            );
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn each_available_simd_path_agrees_with_scalar() {
        let mut rng = Stream::derive(9, "paths");
        let (n, d_in, d_out) = (13usize, 24usize, 40usize);
        let x: Vec<f64> = (0..n * d_in).map(|_| rng.normal()).collect();
        let w: Vec<f64> = (0..d_in * d_out).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..d_out).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..n * d_out).map(|_| rng.normal()).collect();
        let mut wt = vec![0.0; d_in * d_out];
        for o in 0..d_out {
            for k in 0..d_in {
                wt[k * d_out + o] = w[o * d_in + k];
            }
        }
        let mut fwd_ref = vec![0.0; n * d_out];
        forward_scalar(&x, &wt, &b, &mut fwd_ref, n, d_in, d_out);
        let mut gx_ref = vec![0.0; n * d_in];
        backward_input_scalar(&g, &w, &mut gx_ref, n, d_in, d_out);
        let mut gw_ref = vec![0.0; d_out * d_in];
        backward_weight_scalar(&g, &x, &mut gw_ref, n, d_in, d_out);

        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            let mut fwd = vec![0.0; n * d_out];
            unsafe { forward_avx2(&x, &wt, &b, &mut fwd, n, d_in, d_out) };
            nearly(&fwd, &fwd_ref);
            let mut gx = vec![0.0; n * d_in];
            unsafe { backward_input_avx2(&g, &w, &mut gx, n, d_in, d_out) };
            nearly(&gx, &gx_ref);
            let mut gw = vec![0.0; d_out * d_in];
            unsafe { backward_weight_avx2(&g, &x, &mut gw, n, d_in, d_out) };
            nearly(&gw, &gw_ref);
        }
        if is_x86_feature_detected!("avx512f") {
            let mut fwd = vec![0.0; n * d_out];
            unsafe { forward_avx512(&x, &wt, &b, &mut fwd, n, d_in, d_out) };
            nearly(&fwd, &fwd_ref);
            let mut gx = vec![0.0; n * d_in];
            unsafe { backward_input_avx512(&g, &w, &mut gx, n, d_in, d_out) };
            nearly(&gx, &gx_ref);
            let mut gw = vec![0.0; d_out * d_in];
            unsafe { backward_weight_avx512(&g, &x, &mut gw, n, d_in, d_out) };
            nearly(&gw, &gw_ref);
        }
    }

    #[test]
    fn simd_paths_agree_with_scalar() {
        let mut rng = Stream::derive(1, "simd");
        for &(n, d_in, d_out) in &[(7usize, 5usize, 9usize), (16, 128, 64), (3, 12, 8)] {
            let x: Vec<f64> = (0..n * d_in).map(|_| rng.normal()).collect();
            let w: Vec<f64> = (0..d_in * d_out).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..d_out).map(|_| rng.normal()).collect();
            let g: Vec<f64> = (0..n * d_out).map(|_| rng.normal()).collect();

            let mut wt = vec![0.0; d_in * d_out];
            for o in 0..d_out {
                for k in 0..d_in {
                    wt[k * d_out + o] = w[o * d_in + k];
                }
            }

            let mut out_fast = vec![0.0; n * d_out];
            affine_forward(&x, &wt, &b, &mut out_fast, n, d_in, d_out);
            let mut out_ref = vec![0.0; n * d_out];
            forward_scalar(&x, &wt, &b, &mut out_ref, n, d_in, d_out);
            nearly(&out_fast, &out_ref);

            let mut gx_fast = vec![0.0; n * d_in];
            backward_input(&g, &w, &mut gx_fast, n, d_in, d_out);
            let mut gx_ref = vec![0.0; n * d_in];
            backward_input_scalar(&g, &w, &mut gx_ref, n, d_in, d_out);
            nearly(&gx_fast, &gx_ref);

            let mut gw_fast = vec![0.0; d_out * d_in];
            backward_weight(&g, &x, &mut gw_fast, n, d_in, d_out);
            let mut gw_ref = vec![0.0; d_out * d_in];
            backward_weight_scalar(&g, &x, &mut gw_ref, n, d_in, d_out);
            nearly(&gw_fast, &gw_ref);
        }
    }
}
