//! Mixed-radix complex FFT for arbitrary lengths.
//!
//! Lengths are factored into 4s, 2s and then odd primes; radix-2 and radix-4
//! stages have dedicated butterflies and every other prime falls back to a
//! generic O(p^2) butterfly, so any `n >= 1` is supported. The recursion
//! follows the classic decimation-in-time layout used by KissFFT.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::math::{cos, sin, PI};

/// A planned forward transform of fixed length.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    /// `(radix, remaining length)` pairs.
    stages: Vec<(usize, usize)>,
    twiddles: Vec<Complex64>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        let twiddles = (0..n)
            .map(|k| {
                let phase = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(cos(phase), sin(phase))
            })
            .collect();
        Self {
            n,
            stages: factorize(n),
            twiddles,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward DFT: `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length does not match plan");
        if self.n == 1 {
            return;
        }
        let input = buf.to_vec();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.stages.iter().map(|s| s.0).max().unwrap_or(1)];
        self.work(buf, &input, 0, 1, &self.stages, &mut scratch);
    }

    /// In-place inverse DFT including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }

    /// Forward transform of a real sequence, returning the `n/2 + 1`
    /// non-negative frequency bins.
    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = input.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.n, Complex64::new(0.0, 0.0));
        self.forward(&mut buf);
        buf.truncate(self.n / 2 + 1);
        buf
    }

    /// Inverse of [`Fft::forward_real`]: rebuilds the Hermitian spectrum from
    /// the one-sided bins and returns the real part. The imaginary parts of
    /// the DC and (for even `n`) Nyquist bins are ignored.
    pub fn inverse_real(&self, half: &[Complex64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(half.len(), n / 2 + 1, "one-sided spectrum length mismatch");
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(half[0].re, 0.0);
        for k in 1..half.len() {
            if 2 * k == n {
                buf[k] = Complex64::new(half[k].re, 0.0);
            } else {
                buf[k] = half[k];
                buf[n - k] = half[k].conj();
            }
        }
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn work(
        &self,
        out: &mut [Complex64],
        input: &[Complex64],
        offset: usize,
        fstride: usize,
        stages: &[(usize, usize)],
        scratch: &mut [Complex64],
    ) {
        let (p, m) = stages[0];
        if m == 1 {
            for (q, o) in out.iter_mut().enumerate().take(p) {
                *o = input[offset + q * fstride];
            }
        } else {
            for q in 0..p {
                self.work(
                    &mut out[q * m..(q + 1) * m],
                    input,
                    offset + q * fstride,
                    fstride * p,
                    &stages[1..],
                    scratch,
                );
            }
        }
        match p {
            2 => self.butterfly2(out, fstride, m),
            4 => self.butterfly4(out, fstride, m),
            _ => self.butterfly_generic(out, fstride, p, m, scratch),
        }
    }

    fn butterfly2(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        for k in 0..m {
            let t = out[k + m] * self.twiddles[k * fstride];
            out[k + m] = out[k] - t;
            out[k] += t;
        }
    }

    fn butterfly4(&self, out: &mut [Complex64], fstride: usize, m: usize) {
        for k in 0..m {
            let s0 = out[k + m] * self.twiddles[k * fstride];
            let s1 = out[k + 2 * m] * self.twiddles[2 * k * fstride];
            let s2 = out[k + 3 * m] * self.twiddles[3 * k * fstride];
            let s5 = out[k] - s1;
            let a = out[k] + s1;
            let s3 = s0 + s2;
            let s4 = s0 - s2;
            out[k + 2 * m] = a - s3;
            out[k] = a + s3;
            out[k + m] = Complex64::new(s5.re + s4.im, s5.im - s4.re);
            out[k + 3 * m] = Complex64::new(s5.re - s4.im, s5.im + s4.re);
        }
    }

    fn butterfly_generic(&self, out: &mut [Complex64], fstride: usize, p: usize, m: usize, scratch: &mut [Complex64]) {
        let n = self.n;
        for u in 0..m {
            for q1 in 0..p {
                scratch[q1] = out[u + q1 * m];
            }
            for q1 in 0..p {
                let k = u + q1 * m;
                let mut acc = scratch[0];
                let mut tw = 0usize;
                for s in scratch.iter().take(p).skip(1) {
                    tw += fstride * k;
                    tw %= n;
                    acc += *s * self.twiddles[tw];
                }
                out[k] = acc;
            }
        }
    }
}

fn factorize(mut n: usize) -> Vec<(usize, usize)> {
    let total = n;
    let mut radices = Vec::new();
    while n.is_multiple_of(4) {
        radices.push(4);
        n /= 4;
    }
    while n.is_multiple_of(2) {
        radices.push(2);
        n /= 2;
    }
    let mut p = 3;
    while n > 1 {
        while n.is_multiple_of(p) {
            radices.push(p);
            n /= p;
        }
        p += 2;
        if p * p > n && n > 1 {
            radices.push(n);
            n = 1;
        }
    }
    if radices.is_empty() {
        radices.push(1);
    }
    let mut remaining = total;
    radices
        .into_iter()
        .map(|r| {
            remaining /= r;
            (r, remaining)
        })
        .collect()
}

/// Smallest power of two `>= n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}
