//! Primitive kernels for the FNO forward pass and their hand-derived
//! adjoints. Everything works on flat row-major `&[f64]` buffers with
//! channels as the last axis; shapes are carried alongside by callers.

use crate::fft::transform_axes_inplace;
use crate::tensor::increment;

/// out[s, o] = sum_i x[s, i] * w[i, o] for every spatial point s.
pub fn channel_matmul(x: &[f64], n_spatial: usize, cin: usize, w: &[f64], cout: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n_spatial * cin);
    debug_assert_eq!(w.len(), cin * cout);
    let mut out = vec![0.0; n_spatial * cout];
    for s in 0..n_spatial {
        let xr = &x[s * cin..(s + 1) * cin];
        let or = &mut out[s * cout..(s + 1) * cout];
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &w[i * cout..(i + 1) * cout];
            for (o, &wv) in wr.iter().enumerate() {
                or[o] += xv * wv;
            }
        }
    }
    out
}

/// Adjoint of [`channel_matmul`]: returns (grad_x, grad_w).
pub fn channel_matmul_backward(
    g: &[f64],
    x: &[f64],
    w: &[f64],
    n_spatial: usize,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; n_spatial * cin];
    let mut gw = vec![0.0; cin * cout];
    for s in 0..n_spatial {
        let gr = &g[s * cout..(s + 1) * cout];
        let xr = &x[s * cin..(s + 1) * cin];
        for i in 0..cin {
            let wr = &w[i * cout..(i + 1) * cout];
            let mut acc = 0.0;
            let gwr = &mut gw[i * cout..(i + 1) * cout];
            let xv = xr[i];
            for o in 0..cout {
                acc += gr[o] * wr[o];
                gwr[o] += xv * gr[o];
            }
            gx[s * cin + i] = acc;
        }
    }
    (gx, gw)
}

/// Dense positional map: out[x, j] = sum_{z,k} a[x, z, k, j] v[z, k].
/// `a` has shape [N, N, cin, cout], `v` has shape [N, cin].
pub fn dense_apply(a: &[f64], v: &[f64], n: usize, cin: usize, cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * cout];
    for x in 0..n {
        let or = &mut out[x * cout..(x + 1) * cout];
        for z in 0..n {
            for k in 0..cin {
                let vv = v[z * cin + k];
                if vv == 0.0 {
                    continue;
                }
                let ar = &a[((x * n + z) * cin + k) * cout..((x * n + z) * cin + k + 1) * cout];
                for j in 0..cout {
                    or[j] += ar[j] * vv;
                }
            }
        }
    }
    out
}

/// Adjoint of [`dense_apply`]: returns (grad_a, grad_v).
pub fn dense_apply_backward(
    g: &[f64],
    a: &[f64],
    v: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; n * n * cin * cout];
    let mut gv = vec![0.0; n * cin];
    for x in 0..n {
        let gr = &g[x * cout..(x + 1) * cout];
        for z in 0..n {
            for k in 0..cin {
                let base = ((x * n + z) * cin + k) * cout;
                let vv = v[z * cin + k];
                let mut acc = 0.0;
                for j in 0..cout {
                    ga[base + j] += vv * gr[j];
                    acc += a[base + j] * gr[j];
                }
                gv[z * cin + k] += acc;
            }
        }
    }
    (ga, gv)
}

/// Multi-channel cross-correlation with centered zero padding.
/// `kernel` has shape [c_1, ..., c_d, cin, cout] (all c_j odd),
/// `v` has shape [spatial..., cin]; output keeps the spatial shape.
pub fn cnn_apply(
    kernel: &[f64],
    kshape: &[usize],
    v: &[f64],
    spatial: &[usize],
    cin: usize,
    cout: usize,
) -> Vec<f64> {
    let d = spatial.len();
    let n_spatial: usize = spatial.iter().product();
    let mut out = vec![0.0; n_spatial * cout];
    // Flat spatial strides.
    let mut strides = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * spatial[i + 1];
    }
    let n_offsets: usize = kshape.iter().product();
    let mut koff = vec![0usize; d];
    for kflat in 0..n_offsets {
        // Signed displacement of this kernel tap from the center.
        let mut disp = vec![0isize; d];
        for ax in 0..d {
            disp[ax] = koff[ax] as isize - ((kshape[ax] as isize - 1) / 2);
        }
        let kbase = kflat * cin * cout;
        let mut z = vec![0usize; d];
        for zflat in 0..n_spatial {
            let mut src = 0usize;
            let mut ok = true;
            for ax in 0..d {
                let p = z[ax] as isize + disp[ax];
                if p < 0 || p >= spatial[ax] as isize {
                    ok = false;
                    break;
                }
                src += p as usize * strides[ax];
            }
            if ok {
                let vr = &v[src * cin..(src + 1) * cin];
                let or = &mut out[zflat * cout..(zflat + 1) * cout];
                for (i, &xv) in vr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kr = &kernel[kbase + i * cout..kbase + (i + 1) * cout];
                    for (o, &kv) in kr.iter().enumerate() {
                        or[o] += kv * xv;
                    }
                }
            }
            increment(&mut z, spatial);
        }
        increment(&mut koff, kshape);
    }
    out
}

/// Adjoint of [`cnn_apply`]: returns (grad_kernel, grad_v).
pub fn cnn_apply_backward(
    g: &[f64],
    kernel: &[f64],
    kshape: &[usize],
    v: &[f64],
    spatial: &[usize],
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = spatial.len();
    let n_spatial: usize = spatial.iter().product();
    let mut gk = vec![0.0; kernel.len()];
    let mut gv = vec![0.0; v.len()];
    let mut strides = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * spatial[i + 1];
    }
    let n_offsets: usize = kshape.iter().product();
    let mut koff = vec![0usize; d];
    for kflat in 0..n_offsets {
        let mut disp = vec![0isize; d];
        for ax in 0..d {
            disp[ax] = koff[ax] as isize - ((kshape[ax] as isize - 1) / 2);
        }
        let kbase = kflat * cin * cout;
        let mut z = vec![0usize; d];
        for zflat in 0..n_spatial {
            let mut src = 0usize;
            let mut ok = true;
            for ax in 0..d {
                let p = z[ax] as isize + disp[ax];
                if p < 0 || p >= spatial[ax] as isize {
                    ok = false;
                    break;
                }
                src += p as usize * strides[ax];
            }
            if ok {
                let gr = &g[zflat * cout..(zflat + 1) * cout];
                for i in 0..cin {
                    let xv = v[src * cin + i];
                    let kr = &kernel[kbase + i * cout..kbase + (i + 1) * cout];
                    let gkr = &mut gk[kbase + i * cout..kbase + (i + 1) * cout];
                    let mut acc = 0.0;
                    for o in 0..cout {
                        gkr[o] += xv * gr[o];
                        acc += kr[o] * gr[o];
                    }
                    gv[src * cin + i] += acc;
                }
            }
            increment(&mut z, spatial);
        }
        increment(&mut koff, kshape);
    }
    (gk, gv)
}

/// Flat spatial index of a retained mode multi-index `k` (k_j in
/// 0..k_max_j) within a grid of shape `spatial`.
fn mode_flat_index(k: &[usize], spatial: &[usize]) -> usize {
    let mut idx = 0usize;
    for (ax, &kj) in k.iter().enumerate() {
        idx = idx * spatial[ax] + kj;
    }
    idx
}

/// Spectral branch of a Fourier layer: FFT the input over its spatial
/// axes, multiply the retained low-frequency box by the complex weights
/// R = r_re + i r_im (shape [k_max..., cin, cout]), zero every other
/// mode, inverse FFT, and keep the real part.
///
/// Returns (output [spatial..., cout], vhat) where `vhat` is the
/// interleaved complex FFT of the input, saved for the adjoint.
pub fn spectral_apply(
    r_re: &[f64],
    r_im: &[f64],
    kmax: &[usize],
    v: &[f64],
    spatial: &[usize],
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = spatial.len();
    let n_spatial: usize = spatial.iter().product();
    // vhat = FFT(v) over spatial axes; channel axis last, untransformed.
    let mut vhat = vec![0.0; 2 * n_spatial * cin];
    for (i, &x) in v.iter().enumerate() {
        vhat[2 * i] = x;
    }
    let mut full_shape: Vec<usize> = spatial.to_vec();
    full_shape.push(cin);
    let axes: Vec<usize> = (0..d).collect();
    transform_axes_inplace(&full_shape, &mut vhat, &axes, false);

    // what[k, o] = sum_i R[k, i, o] * vhat[k, i] on the retained box.
    let mut what = vec![0.0; 2 * n_spatial * cout];
    let n_modes: usize = kmax.iter().product();
    let mut k = vec![0usize; d];
    for kflat in 0..n_modes {
        let pos = mode_flat_index(&k, spatial);
        let rbase = kflat * cin * cout;
        let wb = 2 * pos * cout;
        for i in 0..cin {
            let vr = vhat[2 * (pos * cin + i)];
            let vi = vhat[2 * (pos * cin + i) + 1];
            let rb = 2 * (rbase + i * cout);
            let _ = rb;
            for o in 0..cout {
                let rr = r_re[rbase + i * cout + o];
                let ri = r_im[rbase + i * cout + o];
                what[wb + 2 * o] += rr * vr - ri * vi;
                what[wb + 2 * o + 1] += rr * vi + ri * vr;
            }
        }
        increment(&mut k, kmax);
    }

    // Real part of the inverse transform.
    let mut out_shape: Vec<usize> = spatial.to_vec();
    out_shape.push(cout);
    transform_axes_inplace(&out_shape, &mut what, &axes, true);
    let out: Vec<f64> = (0..n_spatial * cout).map(|i| what[2 * i]).collect();
    (out, vhat)
}

/// Adjoint of [`spectral_apply`]. `vhat` is the saved forward FFT.
/// Returns (grad_r_re, grad_r_im, grad_v).
pub fn spectral_apply_backward(
    g: &[f64],
    r_re: &[f64],
    r_im: &[f64],
    kmax: &[usize],
    vhat: &[f64],
    spatial: &[usize],
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = spatial.len();
    let n_spatial: usize = spatial.iter().product();
    let axes: Vec<usize> = (0..d).collect();

    // Gradient w.r.t. what (as (d/dRe, d/dIm) pairs) is conj(IFFT(g)).
    let mut ghat = vec![0.0; 2 * n_spatial * cout];
    for (i, &x) in g.iter().enumerate() {
        ghat[2 * i] = x;
    }
    let mut gshape: Vec<usize> = spatial.to_vec();
    gshape.push(cout);
    transform_axes_inplace(&gshape, &mut ghat, &axes, true);

    let n_modes: usize = kmax.iter().product();
    let mut grr = vec![0.0; r_re.len()];
    let mut gri = vec![0.0; r_im.len()];
    // Gradient flowing into vhat, nonzero only on the retained box.
    let mut gvhat = vec![0.0; 2 * n_spatial * cin];
    let mut k = vec![0usize; d];
    for kflat in 0..n_modes {
        let pos = mode_flat_index(&k, spatial);
        let rbase = kflat * cin * cout;
        for i in 0..cin {
            let vr = vhat[2 * (pos * cin + i)];
            let vi = vhat[2 * (pos * cin + i) + 1];
            let mut ar = 0.0;
            let mut ai = 0.0;
            for o in 0..cout {
                // gw = conj(ghat) at this mode and output channel.
                let gwr = ghat[2 * (pos * cout + o)];
                let gwi = -ghat[2 * (pos * cout + o) + 1];
                // grad_R = gw * conj(vhat)
                grr[rbase + i * cout + o] += gwr * vr + gwi * vi;
                gri[rbase + i * cout + o] += gwi * vr - gwr * vi;
                // grad_vhat += gw * conj(R)
                let rr = r_re[rbase + i * cout + o];
                let ri = r_im[rbase + i * cout + o];
                ar += gwr * rr + gwi * ri;
                ai += gwi * rr - gwr * ri;
            }
            gvhat[2 * (pos * cin + i)] = ar;
            gvhat[2 * (pos * cin + i) + 1] = ai;
        }
        increment(&mut k, kmax);
    }

    // grad_v = Re(IFFT(gvhat)) over spatial axes.
    let mut vshape: Vec<usize> = spatial.to_vec();
    vshape.push(cin);
    transform_axes_inplace(&vshape, &mut gvhat, &axes, true);
    let gv: Vec<f64> = (0..n_spatial * cin).map(|i| gvhat[2 * i]).collect();
    (grr, gri, gv)
}
