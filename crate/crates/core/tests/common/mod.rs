//! Host-side oracles shared by the integration tests.

#![allow(dead_code)]

use star_core::engine::EngineConfig;
use star_core::fxp::FxFormat;

/// Host quantizer: scale, round half away from zero, clamp.
pub fn host_quantize(x: f64, fmt: FxFormat) -> (i64, bool) {
    let r = (x * fmt.scale()).round();
    let (lo, hi) = (fmt.min_raw() as f64, fmt.max_raw() as f64);
    (r.clamp(lo, hi) as i64, r < lo || r > hi)
}

/// Rounded integer quotient, ties away from zero, for non-negative operands.
fn host_div(num: i128, den: i128) -> i128 {
    (2 * num + den) / (2 * den)
}

/// The whole datapath recomputed with plain integer arithmetic:
/// quantize, max, subtract, clamp the magnitude, tabulate e^-m, sum, divide.
pub fn composed_softmax(x: &[f64], cfg: &EngineConfig) -> (Vec<i64>, usize) {
    let fmt = cfg.input_format;
    let mut sat = 0;
    let q: Vec<i64> = x
        .iter()
        .map(|&v| {
            let (r, s) = host_quantize(v, fmt);
            sat += s as usize;
            r
        })
        .collect();
    let max = *q.iter().max().unwrap();
    // Sign bit dropped, but never narrower than the fraction plus one bit.
    let dom_bits = if fmt.signed {
        (fmt.total_bits - 1).max(fmt.frac_bits + 1)
    } else {
        fmt.total_bits
    };
    let dom_max = (1i64 << dom_bits) - 1;
    let out_scale = 2f64.powi(cfg.lut_out_format.frac_bits as i32);
    let nums: Vec<i128> = q
        .iter()
        .map(|&r| {
            let mut m = max - r;
            if m > dom_max {
                m = dom_max;
                sat += 1;
            }
            let e = (-(m as f64) / fmt.scale()).exp();
            (e * out_scale).round() as i128
        })
        .collect();
    let den: i128 = nums.iter().sum();
    let f = cfg.divider_frac_bits;
    let cap = (1i128 << (f + 1)) - 1;
    let outs = nums
        .iter()
        .map(|&n| {
            let o = host_div(n << f, den);
            if o > cap {
                sat += 1;
            }
            o.min(cap) as i64
        })
        .collect();
    (outs, sat)
}
