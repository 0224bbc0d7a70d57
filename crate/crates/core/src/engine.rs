//! The softmax engine: quantize, CAM max-find, SUB, sign strip, CAM + LUT
//! exponent with counter accumulation, VMM denominator, divide.
//!
//! Every datapath value moves through the crossbar primitives in
//! [`crate::crossbar`]. Host arithmetic only appears in
//! [`reference_softmax`], the float oracle.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::crossbar::{
    cam_search, first_set_index, lut_read, merge_matches, sub_drive, vmm_dot, CamTable,
    CounterBank, LutTable, MatchVector, VmmUnit,
};
use crate::error::{Error, Result};
use crate::fxp::{div_round, quantize, FxFormat, FxValue, Quantized};

/// Largest supported divider precision.
pub const MAX_DIVIDER_FRAC_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub input_format: FxFormat,
    pub lut_out_format: FxFormat,
    pub divider_frac_bits: u32,
    pub vmm_adc_bits: Option<u32>,
    pub max_seq_len: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            input_format: FxFormat {
                total_bits: 9,
                frac_bits: 3,
                signed: true,
            },
            lut_out_format: FxFormat {
                total_bits: 17,
                frac_bits: 16,
                signed: false,
            },
            divider_frac_bits: 16,
            vmm_adc_bits: None,
            max_seq_len: 512,
        }
    }
}

impl EngineConfig {
    pub fn with_input_format(self, input_format: FxFormat) -> Self {
        Self {
            input_format,
            ..self
        }
    }

    /// Unsigned magnitude format addressed by the exponent CAM/LUT/VMM.
    pub fn lut_domain_format(&self) -> FxFormat {
        self.input_format.magnitude_domain()
    }

    pub fn divider_format(&self) -> FxFormat {
        FxFormat {
            total_bits: self.divider_frac_bits + 1,
            frac_bits: self.divider_frac_bits,
            signed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.input_format.validate()?;
        FxFormat::new(
            self.lut_out_format.total_bits,
            self.lut_out_format.frac_bits,
            self.lut_out_format.signed,
        )?;
        if self.lut_out_format.signed {
            return Err(Error::Config("lut_out_format must be unsigned".into()));
        }
        if !(1..=MAX_DIVIDER_FRAC_BITS).contains(&self.divider_frac_bits) {
            return Err(Error::Config(format!(
                "divider_frac_bits {} outside 1..={MAX_DIVIDER_FRAC_BITS}",
                self.divider_frac_bits
            )));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be >= 1".into()));
        }
        if let Some(b) = self.vmm_adc_bits {
            if !(1..=32).contains(&b) {
                return Err(Error::Config(format!("vmm_adc_bits {b} outside 1..=32")));
            }
        }
        Ok(())
    }
}

/// Output of the CAM/SUB stage.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxSubtract {
    pub quantized_inputs: Vec<FxValue>,
    pub per_input_match: Vec<MatchVector>,
    pub merged_match: MatchVector,
    pub max_row: usize,
    pub max_value: FxValue,
    pub differences: Vec<FxValue>,
    pub saturation_events: usize,
}

/// Output of the exponent stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpStage {
    pub numerators: Vec<FxValue>,
    pub histogram: Vec<i64>,
    pub denominator: FxValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineTrace {
    pub quantized_inputs: Vec<FxValue>,
    pub per_input_match: Vec<MatchVector>,
    pub merged_match: MatchVector,
    pub max_row: usize,
    pub max_value: FxValue,
    pub differences: Vec<FxValue>,
    pub magnitudes: Vec<FxValue>,
    pub histogram: Vec<i64>,
    pub numerators: Vec<FxValue>,
    pub denominator: FxValue,
    pub outputs: Vec<FxValue>,
    pub saturation_events: usize,
}

#[derive(Serialize)]
struct FxJson {
    format: FxFormat,
    raw: i64,
    value: f64,
}

impl From<&FxValue> for FxJson {
    fn from(v: &FxValue) -> Self {
        Self {
            format: v.format,
            raw: v.raw,
            value: v.to_f64(),
        }
    }
}

#[derive(Serialize)]
struct FxListJson {
    format: Option<FxFormat>,
    raw: Vec<i64>,
}

impl From<&[FxValue]> for FxListJson {
    fn from(vs: &[FxValue]) -> Self {
        Self {
            format: vs.first().map(|v| v.format),
            raw: vs.iter().map(|v| v.raw).collect(),
        }
    }
}

impl Serialize for EngineTrace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("EngineTrace", 12)?;
        st.serialize_field(
            "quantized_inputs",
            &FxListJson::from(&self.quantized_inputs[..]),
        )?;
        st.serialize_field("per_input_match", &self.per_input_match)?;
        st.serialize_field("merged_match", &self.merged_match)?;
        st.serialize_field("max_row", &self.max_row)?;
        st.serialize_field("max_value", &FxJson::from(&self.max_value))?;
        st.serialize_field("differences", &FxListJson::from(&self.differences[..]))?;
        st.serialize_field("magnitudes", &FxListJson::from(&self.magnitudes[..]))?;
        st.serialize_field("histogram", &self.histogram)?;
        st.serialize_field("numerators", &FxListJson::from(&self.numerators[..]))?;
        st.serialize_field("denominator", &FxJson::from(&self.denominator))?;
        st.serialize_field("outputs", &FxListJson::from(&self.outputs[..]))?;
        st.serialize_field("saturation_events", &self.saturation_events)?;
        st.end()
    }
}

/// Removes the sign of a non-positive difference, clamping to the LUT
/// domain. The flag reports a clamp.
pub fn strip_sign(d: FxValue, domain: FxFormat) -> Result<Quantized> {
    if d.format.frac_bits != domain.frac_bits || domain.signed {
        return Err(Error::FormatMismatch {
            expected: domain,
            actual: d.format,
        });
    }
    if d.raw > 0 {
        return Err(Error::PositiveDifference(d.to_f64()));
    }
    let mag = -d.raw;
    let saturated = mag > domain.max_raw();
    Ok(Quantized {
        value: FxValue {
            raw: mag.min(domain.max_raw()),
            format: domain,
        },
        saturated,
    })
}

/// Round-to-nearest quotient with `frac_bits` fractional bits, saturating
/// at the divider's output range.
pub fn divide(numerator: FxValue, denominator: FxValue, frac_bits: u32) -> Result<Quantized> {
    if denominator.raw == 0 {
        return Err(Error::DivideByZero);
    }
    if numerator.raw < 0 || denominator.raw < 0 {
        return Err(Error::Config(
            "divider operands must be non-negative".into(),
        ));
    }
    let out = FxFormat::unsigned(frac_bits + 1, frac_bits)?;
    // value = n*2^-fn / (d*2^-fd); raw = value * 2^f
    let shift =
        frac_bits as i32 + denominator.format.frac_bits as i32 - numerator.format.frac_bits as i32;
    let (num, den) = if shift >= 0 {
        ((numerator.raw as i128) << shift, denominator.raw as i128)
    } else {
        (numerator.raw as i128, (denominator.raw as i128) << -shift)
    };
    let q = div_round(num, den);
    let saturated = q > out.max_raw() as i128;
    Ok(Quantized {
        value: FxValue {
            raw: if saturated { out.max_raw() } else { q as i64 },
            format: out,
        },
        saturated,
    })
}

pub fn exp_stage(mags: &[FxValue], lut: &LutTable, vmm: &VmmUnit) -> Result<ExpStage> {
    let mut counters = CounterBank::new(lut.rows(), mags.len().max(1));
    let numerators = mags
        .iter()
        .map(|&m| {
            let hit = cam_search(lut.cam(), m)?;
            counters.accumulate(&hit)?;
            lut_read(lut, &hit)
        })
        .collect::<Result<Vec<_>>>()?;
    let histogram = counters.into_counts();
    let denominator = vmm_dot(vmm, &histogram)?;
    Ok(ExpStage {
        numerators,
        histogram,
        denominator,
    })
}

/// Float64 max-subtracted softmax.
pub fn reference_softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(&bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(bad));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// One engine instance: the four crossbars programmed for a configuration.
#[derive(Debug, Clone)]
pub struct SoftmaxEngine {
    cfg: EngineConfig,
    camsub: CamTable,
    lut: LutTable,
    vmm: VmmUnit,
}

impl SoftmaxEngine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let camsub = CamTable::new(cfg.input_format);
        let lut = LutTable::new(cfg.lut_domain_format(), cfg.lut_out_format)?;
        let vmm = VmmUnit::new(&lut, cfg.vmm_adc_bits, cfg.max_seq_len)?;
        Ok(Self {
            cfg,
            camsub,
            lut,
            vmm,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn camsub(&self) -> &CamTable {
        &self.camsub
    }

    pub fn lut(&self) -> &LutTable {
        &self.lut
    }

    pub fn vmm(&self) -> &VmmUnit {
        &self.vmm
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::Empty);
        }
        if len > self.cfg.max_seq_len {
            return Err(Error::TooLong {
                len,
                max: self.cfg.max_seq_len,
            });
        }
        Ok(())
    }

    pub fn find_max_and_subtract(&self, x: &[f64]) -> Result<MaxSubtract> {
        self.check_len(x.len())?;
        let mut saturation_events = 0;
        let mut quantized_inputs = Vec::with_capacity(x.len());
        let mut per_input_match = Vec::with_capacity(x.len());
        // CAM mode: one parallel search per input.
        for &xi in x {
            let q = quantize(xi, self.cfg.input_format)?;
            saturation_events += q.saturated as usize;
            per_input_match.push(cam_search(&self.camsub, q.value)?);
            quantized_inputs.push(q.value);
        }
        let merged_match = merge_matches(&per_input_match)?;
        let max_row = first_set_index(&merged_match)?;
        let max_value = self.camsub.value(max_row)?;
        // SUB mode: each input's match line drives +V, the max row -V.
        let differences = per_input_match
            .iter()
            .map(|m| sub_drive(&self.camsub, first_set_index(m)?, max_row))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaxSubtract {
            quantized_inputs,
            per_input_match,
            merged_match,
            max_row,
            max_value,
            differences,
            saturation_events,
        })
    }

    pub fn strip_sign(&self, d: FxValue) -> Result<Quantized> {
        strip_sign(d, self.lut.domain_format())
    }

    pub fn exp_stage(&self, mags: &[FxValue]) -> Result<ExpStage> {
        exp_stage(mags, &self.lut, &self.vmm)
    }

    pub fn softmax(&self, x: &[f64]) -> Result<(Vec<FxValue>, EngineTrace)> {
        let ms = self.find_max_and_subtract(x)?;
        let mut saturation_events = ms.saturation_events;
        let magnitudes = ms
            .differences
            .iter()
            .map(|&d| {
                let m = self.strip_sign(d)?;
                saturation_events += m.saturated as usize;
                Ok(m.value)
            })
            .collect::<Result<Vec<_>>>()?;
        let exp = self.exp_stage(&magnitudes)?;
        let outputs = exp
            .numerators
            .iter()
            .map(|&n| {
                let q = divide(n, exp.denominator, self.cfg.divider_frac_bits)?;
                saturation_events += q.saturated as usize;
                Ok(q.value)
            })
            .collect::<Result<Vec<_>>>()?;
        let trace = EngineTrace {
            quantized_inputs: ms.quantized_inputs,
            per_input_match: ms.per_input_match,
            merged_match: ms.merged_match,
            max_row: ms.max_row,
            max_value: ms.max_value,
            differences: ms.differences,
            magnitudes,
            histogram: exp.histogram,
            numerators: exp.numerators,
            denominator: exp.denominator,
            outputs: outputs.clone(),
            saturation_events,
        };
        Ok((outputs, trace))
    }

    /// Probabilities only, as `f64`.
    pub fn softmax_f64(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.softmax(x)?.0.iter().map(FxValue::to_f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn engine() -> SoftmaxEngine {
        SoftmaxEngine::new(EngineConfig::default()).unwrap()
    }

    fn toy_engine() -> SoftmaxEngine {
        let cfg = EngineConfig::default().with_input_format(FxFormat::unsigned(2, 1).unwrap());
        SoftmaxEngine::new(cfg).unwrap()
    }

    #[test]
    fn all_equal_inputs() {
        let e = engine();
        let ms = e.find_max_and_subtract(&[1.3, 1.3, 1.3]).unwrap();
        assert_eq!(
            ms.max_value,
            quantize(1.3, e.config().input_format).unwrap().value
        );
        assert!(ms.differences.iter().all(|d| d.raw == 0));
    }

    #[test]
    fn four_row_scenario() {
        let e = toy_engine();
        // x_1 = 0.5 lives on the third row; the max (1.0) on the second.
        let ms = e.find_max_and_subtract(&[0.5, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(ms.per_input_match[0].to_string(), "0010");
        assert_eq!(ms.merged_match.to_string(), "0111");
        assert_eq!(ms.max_row, 1);
        assert_eq!(ms.max_value.to_f64(), 1.0);
        let diffs: Vec<f64> = ms.differences.iter().map(|d| d.to_f64()).collect();
        assert_eq!(diffs, vec![-0.5, 0.0, -1.0, -0.5]);
    }

    #[test]
    fn random_max_subtract_matches_host() {
        let e = engine();
        let fmt = e.config().input_format;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-20.0..20.0)).collect();
        let ms = e.find_max_and_subtract(&x).unwrap();
        let q: Vec<i64> = x
            .iter()
            .map(|&v| quantize(v, fmt).unwrap().value.raw)
            .collect();
        let max = *q.iter().max().unwrap();
        assert_eq!(ms.max_value.raw, max);
        for (d, qi) in ms.differences.iter().zip(&q) {
            assert_eq!(d.raw, qi - max);
        }
    }

    #[test]
    fn length_limits() {
        let e = engine();
        assert_eq!(e.find_max_and_subtract(&[]).unwrap_err(), Error::Empty);
        let long = vec![0.0; 513];
        assert!(matches!(
            e.softmax(&long),
            Err(Error::TooLong { len: 513, max: 512 })
        ));
        assert!(e.softmax(&vec![0.0; 512]).is_ok());
        assert!(matches!(
            e.softmax(&[0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn strip_sign_examples() {
        let e = engine();
        let wide = e.config().input_format.widened();
        assert_eq!(e.strip_sign(wide.zero()).unwrap().value.raw, 0);
        let d = quantize(-1.25, wide).unwrap().value;
        let m = e.strip_sign(d).unwrap();
        assert_eq!(m.value.to_f64(), 1.25);
        assert!(!m.saturated);

        let far = quantize(-80.0, FxFormat::signed(12, 3).unwrap())
            .unwrap()
            .value;
        let m = e.strip_sign(far).unwrap();
        assert!(m.saturated);
        let domain = e.lut().domain_format();
        assert_eq!(m.value, domain.max_value());
        assert_eq!(m.value.to_f64(), 80.0f64.min(domain.max_value().to_f64()));
        // The clamp is inert: e^-31.875 quantizes to 0 in the LUT output.
        assert_eq!(
            quantize((-80.0f64).exp(), e.config().lut_out_format)
                .unwrap()
                .value
                .raw,
            0
        );
        assert_eq!(
            quantize((-31.875f64).exp(), e.config().lut_out_format)
                .unwrap()
                .value
                .raw,
            0
        );

        let pos = quantize(0.5, wide).unwrap().value;
        assert!(matches!(
            e.strip_sign(pos),
            Err(Error::PositiveDifference(_))
        ));
    }

    #[test]
    fn exp_stage_examples() {
        let e = engine();
        let dom = e.lut().domain_format();
        let out = e.exp_stage(&[dom.zero()]).unwrap();
        assert_eq!(out.numerators[0].to_f64(), 1.0);
        assert_eq!(out.histogram.iter().sum::<i64>(), 1);
        assert_eq!(out.histogram[e.lut().zero_row()], 1);
        assert_eq!(out.denominator.to_f64(), 1.0);

        let one = quantize(1.0, dom).unwrap().value;
        let out = e.exp_stage(&[one, one, dom.zero()]).unwrap();
        let one_row = first_set_index(&cam_search(e.lut().cam(), one).unwrap()).unwrap();
        assert_eq!(out.histogram[one_row], 2);
        assert_eq!(out.histogram[e.lut().zero_row()], 1);
        assert_eq!(out.histogram.iter().sum::<i64>(), 3);
    }

    #[test]
    fn exp_stage_denominator_is_sum_of_numerators() {
        let e = engine();
        let dom = e.lut().domain_format();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mags: Vec<FxValue> = (0..512)
            .map(|_| dom.from_raw(rng.random_range(0..=dom.max_raw())).unwrap())
            .collect();
        let out = e.exp_stage(&mags).unwrap();
        let direct: i64 = out.numerators.iter().map(|n| n.raw).sum();
        assert_eq!(out.denominator.raw, direct);
    }

    #[test]
    fn divide_examples() {
        let f = FxFormat::unsigned(17, 16).unwrap();
        let a = quantize(0.3, f).unwrap().value;
        assert_eq!(divide(a, a, 16).unwrap().value.to_f64(), 1.0);
        let one = quantize(1.0, f).unwrap().value;
        let four = quantize(4.0, FxFormat::unsigned(27, 16).unwrap())
            .unwrap()
            .value;
        assert_eq!(divide(one, four, 16).unwrap().value.to_f64(), 0.25);

        let l = quantize((-0.25f64).exp(), f).unwrap().value;
        let den = FxFormat::unsigned(27, 16)
            .unwrap()
            .from_raw(l.raw + one.raw)
            .unwrap();
        let expect = (l.to_f64() / den.to_f64() * 65536.0).round() / 65536.0;
        assert_eq!(divide(l, den, 16).unwrap().value.to_f64(), expect);

        assert_eq!(divide(one, f.zero(), 16).unwrap_err(), Error::DivideByZero);
    }

    #[test]
    fn divide_is_monotone_in_numerator() {
        let f = FxFormat::unsigned(17, 16).unwrap();
        let den = FxFormat::unsigned(27, 16)
            .unwrap()
            .from_raw(3 * 65536 + 17)
            .unwrap();
        let mut prev = 0;
        for raw in 0..=65536 {
            let q = divide(f.from_raw(raw).unwrap(), den, 12).unwrap().value.raw;
            assert!(q >= prev);
            prev = q;
        }
    }

    #[test]
    fn softmax_examples() {
        let e = engine();
        let (p, _) = e.softmax(&[-3.7]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].to_f64(), 1.0);

        for n in [2usize, 3, 7, 100, 512] {
            let (p, _) = e.softmax(&vec![2.0; n]).unwrap();
            let expect = ((1.0 / n as f64) * 65536.0).round() / 65536.0;
            assert!(p.iter().all(|v| v.to_f64() == expect), "n={n}");
        }
    }

    #[test]
    fn softmax_trace_is_populated() {
        let e = engine();
        let x = [0.1, -2.0, 3.3, 3.3, -40.0];
        let (p, t) = e.softmax(&x).unwrap();
        assert_eq!(t.outputs, p);
        assert_eq!(t.quantized_inputs.len(), 5);
        assert_eq!(t.per_input_match.len(), 5);
        assert_eq!(t.histogram.iter().sum::<i64>(), 5);
        assert_eq!(t.differences[2].raw, 0);
        assert_eq!(t.differences[3].raw, 0);
        assert!(t.differences.iter().all(|d| d.raw <= 0));
        assert_eq!(
            t.denominator.raw,
            t.numerators.iter().map(|n| n.raw).sum::<i64>()
        );
        // -40 saturates at the input quantizer to -32, and -32 - 3.25 then
        // exceeds the 31.875 LUT domain at the sign strip.
        assert_eq!(t.saturation_events, 2);
        assert!(t.denominator.raw >= t.numerators.iter().map(|n| n.raw).max().unwrap());
    }

    #[test]
    fn softmax_tracks_reference() {
        let e = engine();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..128).map(|_| rng.random_range(-8.0..8.0)).collect();
        let p = e.softmax_f64(&x).unwrap();
        let r = reference_softmax(&x).unwrap();
        let err = p
            .iter()
            .zip(&r)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // Input LSB 1/8 moves a probability by at most ~6% relative.
        assert!(err < 0.02, "err={err}");
    }

    #[test]
    fn reference_softmax_examples() {
        assert_eq!(reference_softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(reference_softmax(&[42.0]).unwrap(), vec![1.0]);
        let r = reference_softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-15 && (r[1] - 0.75).abs() < 1e-15);
        assert_eq!(reference_softmax(&[]).unwrap_err(), Error::Empty);
    }

    #[test]
    fn config_validation() {
        let mut c = EngineConfig::default();
        c.divider_frac_bits = 0;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.max_seq_len = 0;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.input_format = FxFormat {
            total_bits: 17,
            frac_bits: 3,
            signed: true,
        };
        assert!(c.validate().is_err());
        assert_eq!(
            EngineConfig::default().lut_domain_format(),
            FxFormat::unsigned(8, 3).unwrap()
        );
    }
}
