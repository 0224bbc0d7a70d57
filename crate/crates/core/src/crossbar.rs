//! Value-level models of the crossbar primitives: the time-multiplexed
//! CAM/SUB array, the exponent CAM, the LUT array and the VMM array.
//!
//! Column counts are physical metadata only (see `costmodel`); every model
//! here works on stored values and match vectors.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fxp::{quantize, FxFormat, FxValue};

/// Matchline output of a CAM search, or the OR of several such outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchVector {
    words: Vec<u64>,
    len: usize,
}

impl MatchVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn one_hot(len: usize, row: usize) -> Result<Self> {
        let mut v = Self::zeros(len);
        v.set(row)?;
        Ok(v)
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.words[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, row: usize) -> bool {
        row < self.len && self.words[row / 64] & (1 << (row % 64)) != 0
    }

    pub fn set(&mut self, row: usize) -> Result<()> {
        if row >= self.len {
            return Err(Error::RowOutOfRange {
                row,
                rows: self.len,
            });
        }
        self.words[row / 64] |= 1 << (row % 64);
        Ok(())
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|r| self.get(r)).collect()
    }

    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&r| self.get(r))
    }

    /// Index of the single set bit, or an error if the vector is not one-hot.
    pub fn one_hot_index(&self) -> Result<usize> {
        match self.count_ones() {
            1 => first_set_index(self),
            n => Err(Error::NotOneHot(n)),
        }
    }
}

impl fmt::Display for MatchVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.len {
            f.write_str(if self.get(r) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for MatchVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Every representable value of a format, stored one per row in strictly
/// descending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CamTable {
    format: FxFormat,
    raws: Vec<i64>,
}

impl CamTable {
    pub fn new(format: FxFormat) -> Self {
        let raws = (format.min_raw()..=format.max_raw()).rev().collect();
        Self { format, raws }
    }

    pub fn format(&self) -> FxFormat {
        self.format
    }

    pub fn rows(&self) -> usize {
        self.raws.len()
    }

    pub fn value(&self, row: usize) -> Result<FxValue> {
        self.raws
            .get(row)
            .map(|&raw| FxValue {
                raw,
                format: self.format,
            })
            .ok_or(Error::RowOutOfRange {
                row,
                rows: self.rows(),
            })
    }

    pub fn values(&self) -> impl Iterator<Item = FxValue> + '_ {
        self.raws.iter().map(|&raw| FxValue {
            raw,
            format: self.format,
        })
    }

    /// Row storing `raw`. The table is complete and descending, so the
    /// matching row sits at a fixed offset from the top.
    fn row_of(&self, raw: i64) -> usize {
        (self.format.max_raw() - raw) as usize
    }
}

/// Parallel search of every row; the matchlines yield a one-hot vector.
pub fn cam_search(table: &CamTable, x: FxValue) -> Result<MatchVector> {
    if x.format != table.format {
        return Err(Error::FormatMismatch {
            expected: table.format,
            actual: x.format,
        });
    }
    MatchVector::one_hot(table.rows(), table.row_of(x.raw))
}

/// OR-gate cascade over the matchline outputs of several searches.
pub fn merge_matches<'a, I>(vs: I) -> Result<MatchVector>
where
    I: IntoIterator<Item = &'a MatchVector>,
{
    let mut iter = vs.into_iter();
    let mut acc = iter.next().ok_or(Error::Empty)?.clone();
    for v in iter {
        if v.len != acc.len {
            return Err(Error::LengthMismatch {
                expected: acc.len,
                actual: v.len,
            });
        }
        for (a, w) in acc.words.iter_mut().zip(&v.words) {
            *a |= w;
        }
    }
    Ok(acc)
}

pub fn first_set_index(v: &MatchVector) -> Result<usize> {
    v.words
        .iter()
        .enumerate()
        .find(|(_, &w)| w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
        .ok_or(Error::NoMatch)
}

/// Subtraction mode of the CAM/SUB array: `+V` on the `x_i` row, `-V` on
/// the max row, source lines sum to `x_i - x_max`. Coinciding rows cancel.
pub fn sub_drive(table: &CamTable, xi_row: usize, max_row: usize) -> Result<FxValue> {
    let rows = table.rows();
    for row in [xi_row, max_row] {
        if row >= rows {
            return Err(Error::RowOutOfRange { row, rows });
        }
    }
    if xi_row < max_row {
        return Err(Error::DriveOrder { xi_row, max_row });
    }
    let out = table.format.widened();
    if xi_row == max_row {
        return Ok(out.zero());
    }
    let drive = [(xi_row, 1i64), (max_row, -1i64)];
    let raw = drive.iter().map(|&(r, v)| v * table.raws[r]).sum();
    Ok(FxValue { raw, format: out })
}

/// Exponent table: row `r` of the CAM holds a difference magnitude `m`,
/// row `r` of the LUT holds `quantize(e^-m)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LutTable {
    cam: CamTable,
    out_format: FxFormat,
    entries: Vec<FxValue>,
}

impl LutTable {
    pub fn new(domain_format: FxFormat, out_format: FxFormat) -> Result<Self> {
        if domain_format.signed {
            return Err(Error::InvalidFormat(format!(
                "LUT domain {domain_format} must be unsigned"
            )));
        }
        check_out_format(out_format)?;
        let cam = CamTable::new(domain_format);
        let entries = cam
            .values()
            .map(|m| quantize((-m.to_f64()).exp(), out_format).map(|q| q.value))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cam,
            out_format,
            entries,
        })
    }

    pub fn cam(&self) -> &CamTable {
        &self.cam
    }

    pub fn domain_format(&self) -> FxFormat {
        self.cam.format
    }

    pub fn out_format(&self) -> FxFormat {
        self.out_format
    }

    pub fn entries(&self) -> &[FxValue] {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.len()
    }

    /// Row holding magnitude zero (the last row, since magnitudes descend).
    pub fn zero_row(&self) -> usize {
        self.rows() - 1
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record(["row", "magnitude", "raw"])
            .map_err(csv_err)?;
        for (r, (m, e)) in self.cam.values().zip(&self.entries).enumerate() {
            w.write_record([r.to_string(), m.to_f64().to_string(), e.raw.to_string()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
    }

    /// Loads preprogrammed contents. Rows must cover the domain in order and
    /// the stored magnitudes must match the domain format.
    pub fn from_csv(text: &str, domain_format: FxFormat, out_format: FxFormat) -> Result<Self> {
        if domain_format.signed {
            return Err(Error::InvalidFormat(format!(
                "LUT domain {domain_format} must be unsigned"
            )));
        }
        check_out_format(out_format)?;
        let cam = CamTable::new(domain_format);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::with_capacity(cam.rows());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let field = |k: usize| -> Result<&str> {
                rec.get(k)
                    .ok_or_else(|| Error::Csv(format!("line {}: missing column {k}", i + 2)))
            };
            let parse_err = |e: &dyn fmt::Display| Error::Csv(format!("line {}: {e}", i + 2));
            let row: usize = field(0)?.parse().map_err(|e| parse_err(&e))?;
            let mag: f64 = field(1)?.parse().map_err(|e| parse_err(&e))?;
            let raw: i64 = field(2)?.parse().map_err(|e| parse_err(&e))?;
            let stored = cam.value(i)?;
            if row != i || mag != stored.to_f64() {
                return Err(Error::Csv(format!(
                    "line {}: expected row {i} magnitude {stored}",
                    i + 2
                )));
            }
            entries.push(out_format.from_raw(raw)?);
        }
        if entries.len() != cam.rows() {
            return Err(Error::LengthMismatch {
                expected: cam.rows(),
                actual: entries.len(),
            });
        }
        Ok(Self {
            cam,
            out_format,
            entries,
        })
    }
}

fn check_out_format(out_format: FxFormat) -> Result<()> {
    if out_format.signed || out_format.max_raw() < (1i64 << out_format.frac_bits) {
        return Err(Error::InvalidFormat(format!(
            "LUT output {out_format} must be unsigned and represent 1.0"
        )));
    }
    Ok(())
}

pub fn lut_read(lut: &LutTable, m: &MatchVector) -> Result<FxValue> {
    if m.len() != lut.rows() {
        return Err(Error::LengthMismatch {
            expected: lut.rows(),
            actual: m.len(),
        });
    }
    Ok(lut.entries[m.one_hot_index()?])
}

/// Bits needed for a counter that never overflows on `max_seq_len` inputs.
pub fn counter_bits(max_seq_len: usize) -> u32 {
    usize::BITS - max_seq_len.leading_zeros()
}

/// Per-row match counters fed by the exponent CAM's matchlines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterBank {
    counts: Vec<i64>,
    bits: u32,
}

impl CounterBank {
    pub fn new(rows: usize, max_seq_len: usize) -> Self {
        Self {
            counts: vec![0; rows],
            bits: counter_bits(max_seq_len),
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn accumulate(&mut self, m: &MatchVector) -> Result<()> {
        if m.len() != self.counts.len() {
            return Err(Error::LengthMismatch {
                expected: self.counts.len(),
                actual: m.len(),
            });
        }
        let limit = (1i64 << self.bits) - 1;
        for r in m.set_indices() {
            if self.counts[r] == limit {
                return Err(Error::Config(format!("counter {r} overflow at {limit}")));
            }
            self.counts[r] += 1;
        }
        Ok(())
    }

    pub fn into_counts(self) -> Vec<i64> {
        self.counts
    }
}

/// VMM array holding a copy of the LUT contents as conductances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmmUnit {
    weights: Vec<FxValue>,
    acc_format: FxFormat,
    adc_bits: Option<u32>,
    max_seq_len: usize,
}

impl VmmUnit {
    pub fn new(lut: &LutTable, adc_bits: Option<u32>, max_seq_len: usize) -> Result<Self> {
        if max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be >= 1".into()));
        }
        if let Some(b) = adc_bits {
            if !(1..=32).contains(&b) {
                return Err(Error::Config(format!("adc_bits {b} outside 1..=32")));
            }
        }
        let out = lut.out_format();
        let acc_format =
            FxFormat::unsigned(out.total_bits + counter_bits(max_seq_len), out.frac_bits)?;
        Ok(Self {
            weights: lut.entries().to_vec(),
            acc_format,
            adc_bits,
            max_seq_len,
        })
    }

    pub fn weights(&self) -> &[FxValue] {
        &self.weights
    }

    pub fn accumulator_format(&self) -> FxFormat {
        self.acc_format
    }

    pub fn adc_bits(&self) -> Option<u32> {
        self.adc_bits
    }

    /// Largest possible sum: every input lands on the `e^0` row.
    fn full_scale(&self) -> i64 {
        let top = self.weights.iter().map(|w| w.raw).max().unwrap_or(0);
        top * self.max_seq_len as i64
    }
}

pub fn vmm_dot(vmm: &VmmUnit, counts: &[i64]) -> Result<FxValue> {
    if counts.len() != vmm.weights.len() {
        return Err(Error::LengthMismatch {
            expected: vmm.weights.len(),
            actual: counts.len(),
        });
    }
    if let Some((row, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 0) {
        return Err(Error::NegativeCount { row, count });
    }
    let total: i64 = counts.iter().sum();
    if total as usize > vmm.max_seq_len {
        return Err(Error::TooLong {
            len: total as usize,
            max: vmm.max_seq_len,
        });
    }
    let mut sum: i64 = counts
        .iter()
        .zip(&vmm.weights)
        .map(|(&c, w)| c * w.raw)
        .sum();
    if let Some(bits) = vmm.adc_bits {
        let levels = ((1i128 << bits) - 1).max(1);
        let fs = vmm.full_scale() as i128;
        if fs > 0 {
            let code = crate::fxp::div_round(sum as i128 * levels, fs);
            sum = crate::fxp::div_round(code * fs, levels) as i64;
        }
    }
    Ok(FxValue {
        raw: sum,
        format: vmm.acc_format,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CamTable {
        // {1.5, 1.0, 0.5, 0.0}
        CamTable::new(FxFormat::unsigned(2, 1).unwrap())
    }

    fn linear_scan(table: &CamTable, x: FxValue) -> Vec<bool> {
        table.values().map(|v| v == x).collect()
    }

    fn default_lut() -> LutTable {
        LutTable::new(
            FxFormat::unsigned(8, 3).unwrap(),
            FxFormat::unsigned(17, 16).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn table_is_descending_and_complete() {
        let t = toy();
        let vals: Vec<f64> = t.values().map(|v| v.to_f64()).collect();
        assert_eq!(vals, vec![1.5, 1.0, 0.5, 0.0]);
        let t = CamTable::new(FxFormat::signed(9, 3).unwrap());
        assert_eq!(t.rows(), 512);
        assert!(t.raws.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn search_examples() {
        let t = toy();
        let half = t.format().from_raw(1).unwrap();
        let m = cam_search(&t, half).unwrap();
        assert_eq!(m.bits(), vec![false, false, true, false]);
        assert_eq!(m.to_string(), "0010");
        let m = cam_search(&t, t.format().max_value()).unwrap();
        assert_eq!(first_set_index(&m).unwrap(), 0);
    }

    #[test]
    fn search_matches_linear_scan_exhaustively() {
        for fmt in [
            FxFormat::signed(6, 2).unwrap(),
            FxFormat::unsigned(5, 0).unwrap(),
            FxFormat::signed(9, 3).unwrap(),
        ] {
            let t = CamTable::new(fmt);
            for raw in fmt.min_raw()..=fmt.max_raw() {
                let x = fmt.from_raw(raw).unwrap();
                let m = cam_search(&t, x).unwrap();
                assert_eq!(m.count_ones(), 1);
                assert_eq!(m.bits(), linear_scan(&t, x));
                assert_eq!(t.value(first_set_index(&m).unwrap()).unwrap(), x);
            }
        }
    }

    #[test]
    fn search_rejects_format_mismatch() {
        let t = toy();
        let x = FxFormat::unsigned(3, 1).unwrap().zero();
        assert!(matches!(
            cam_search(&t, x),
            Err(Error::FormatMismatch { .. })
        ));
    }

    #[test]
    fn merge_examples() {
        let a = MatchVector::from_bits(&[false, false, true, false]);
        assert_eq!(merge_matches([&a]).unwrap(), a);
        let b = MatchVector::from_bits(&[false, true, false, false]);
        assert_eq!(merge_matches([&b, &a]).unwrap().to_string(), "0110");
        assert_eq!(merge_matches(std::iter::empty()), Err(Error::Empty));
        let c = MatchVector::zeros(5);
        assert!(matches!(
            merge_matches([&a, &c]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn merge_counts_distinct_rows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rows: Vec<usize> = (0..8).map(|_| rng.random_range(0..130)).collect();
            let vs: Vec<MatchVector> = rows
                .iter()
                .map(|&r| MatchVector::one_hot(130, r).unwrap())
                .collect();
            let merged = merge_matches(&vs).unwrap();
            let distinct: std::collections::BTreeSet<usize> = rows.iter().copied().collect();
            assert_eq!(merged.count_ones(), distinct.len());
            assert_eq!(
                merged.set_indices().collect::<Vec<_>>(),
                distinct.into_iter().collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn first_set_index_examples() {
        let v = MatchVector::from_bits(&[false, true, true, false]);
        assert_eq!(first_set_index(&v).unwrap(), 1);
        let v = MatchVector::from_bits(&[true, false, false, false]);
        assert_eq!(first_set_index(&v).unwrap(), 0);
        assert_eq!(
            first_set_index(&MatchVector::zeros(300)),
            Err(Error::NoMatch)
        );
        let mut v = MatchVector::zeros(300);
        v.set(260).unwrap();
        v.set(299).unwrap();
        assert_eq!(first_set_index(&v).unwrap(), 260);
    }

    #[test]
    fn sub_drive_examples() {
        let t = toy();
        assert_eq!(sub_drive(&t, 2, 2).unwrap().raw, 0);
        assert_eq!(sub_drive(&t, 3, 1).unwrap().to_f64(), -1.0);
        let d = sub_drive(&t, 2, 1).unwrap();
        assert_eq!(d.to_f64(), -t.format().step());
        assert!(matches!(sub_drive(&t, 0, 1), Err(Error::DriveOrder { .. })));
        assert!(matches!(
            sub_drive(&t, 4, 1),
            Err(Error::RowOutOfRange { .. })
        ));
    }

    #[test]
    fn sub_drive_exhaustive() {
        for fmt in [
            FxFormat::signed(8, 2).unwrap(),
            FxFormat::unsigned(6, 3).unwrap(),
        ] {
            let t = CamTable::new(fmt);
            for m in 0..t.rows() {
                for r in m..t.rows() {
                    let d = sub_drive(&t, r, m).unwrap();
                    assert_eq!(
                        d.to_f64(),
                        t.value(r).unwrap().to_f64() - t.value(m).unwrap().to_f64()
                    );
                }
            }
        }
    }

    #[test]
    fn lut_examples() {
        let lut = default_lut();
        assert_eq!(lut.rows(), 256);
        let zero = MatchVector::one_hot(256, lut.zero_row()).unwrap();
        assert_eq!(lut_read(&lut, &zero).unwrap().to_f64(), 1.0);

        let quarter = lut.domain_format().from_raw(2).unwrap();
        let m = cam_search(lut.cam(), quarter).unwrap();
        let expect = quantize((-0.25f64).exp(), lut.out_format()).unwrap().value;
        assert_eq!(lut_read(&lut, &m).unwrap(), expect);
        assert!((expect.to_f64() - 0.7788).abs() < 1e-4);

        let top = MatchVector::one_hot(256, 0).unwrap();
        let expect = quantize((-31.875f64).exp(), lut.out_format())
            .unwrap()
            .value;
        assert_eq!(lut_read(&lut, &top).unwrap(), expect);
        assert_eq!(expect.raw, 0);
    }

    #[test]
    fn lut_read_requires_one_hot() {
        let lut = default_lut();
        assert_eq!(
            lut_read(&lut, &MatchVector::zeros(256)),
            Err(Error::NotOneHot(0))
        );
        let mut two = MatchVector::zeros(256);
        two.set(3).unwrap();
        two.set(9).unwrap();
        assert_eq!(lut_read(&lut, &two), Err(Error::NotOneHot(2)));
    }

    #[test]
    fn lut_monotone_in_magnitude() {
        let lut = default_lut();
        // Row 0 holds the largest magnitude.
        assert!(lut.entries().windows(2).all(|w| w[0].raw <= w[1].raw));
    }

    #[test]
    fn lut_rejects_bad_formats() {
        let dom = FxFormat::unsigned(4, 1).unwrap();
        let out = FxFormat::unsigned(17, 16).unwrap();
        assert!(LutTable::new(FxFormat::signed(4, 1).unwrap(), out).is_err());
        assert!(LutTable::new(dom, FxFormat::signed(17, 16).unwrap()).is_err());
        assert!(LutTable::new(dom, FxFormat::unsigned(9, 8).unwrap()).is_ok());
    }

    #[test]
    fn lut_csv_round_trip() {
        let lut = LutTable::new(
            FxFormat::unsigned(3, 1).unwrap(),
            FxFormat::unsigned(9, 8).unwrap(),
        )
        .unwrap();
        let text = lut.to_csv().unwrap();
        assert!(text.starts_with("row,magnitude,raw\n0,3.5,8\n"));
        let back = LutTable::from_csv(&text, lut.domain_format(), lut.out_format()).unwrap();
        assert_eq!(back, lut);
        let truncated: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(LutTable::from_csv(&truncated, lut.domain_format(), lut.out_format()).is_err());
        let wrong = text.replace("0,3.5,8", "0,3.0,8");
        assert!(LutTable::from_csv(&wrong, lut.domain_format(), lut.out_format()).is_err());
    }

    #[test]
    fn counter_bits_cover_sequence() {
        assert_eq!(counter_bits(1), 1);
        assert_eq!(counter_bits(512), 10);
        assert_eq!(counter_bits(511), 9);
    }

    #[test]
    fn vmm_examples() {
        let lut = default_lut();
        let vmm = VmmUnit::new(&lut, None, 512).unwrap();
        assert_eq!(vmm.weights(), lut.entries());
        let zeros = vec![0i64; 256];
        assert_eq!(vmm_dot(&vmm, &zeros).unwrap().raw, 0);

        let mut c = zeros.clone();
        c[lut.zero_row()] = 1;
        assert_eq!(vmm_dot(&vmm, &c).unwrap().to_f64(), 1.0);

        // magnitude 1.0 is raw 8 in the domain.
        let one_row = lut.zero_row() - 8;
        let mut c = zeros.clone();
        c[one_row] = 2;
        c[lut.zero_row()] = 1;
        let expect = 2 * lut.entries()[one_row].raw + lut.entries()[lut.zero_row()].raw;
        assert_eq!(vmm_dot(&vmm, &c).unwrap().raw, expect);
    }

    #[test]
    fn vmm_errors() {
        let lut = default_lut();
        let vmm = VmmUnit::new(&lut, None, 4).unwrap();
        assert!(matches!(
            vmm_dot(&vmm, &[0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
        let mut c = vec![0i64; 256];
        c[5] = -1;
        assert!(matches!(
            vmm_dot(&vmm, &c),
            Err(Error::NegativeCount { row: 5, count: -1 })
        ));
        let mut c = vec![0i64; 256];
        c[5] = 5;
        assert!(matches!(vmm_dot(&vmm, &c), Err(Error::TooLong { .. })));
    }

    #[test]
    fn vmm_adc_requantizes_to_full_scale_grid() {
        let lut = default_lut();
        let vmm = VmmUnit::new(&lut, Some(5), 512).unwrap();
        let fs = 512 * 65536i64;
        let mut c = vec![0i64; 256];
        c[lut.zero_row()] = 3;
        let got = vmm_dot(&vmm, &c).unwrap().raw;
        // 3.0 of a 512.0 full scale on a 31-level grid lands on level 0.
        assert_eq!(got, 0);
        c[lut.zero_row()] = 40;
        let got = vmm_dot(&vmm, &c).unwrap().raw;
        let code = (40.0 * 31.0 / 512.0f64).round();
        assert_eq!(got, (code * fs as f64 / 31.0).round() as i64);
    }

    #[test]
    fn counter_bank_accumulates() {
        let mut bank = CounterBank::new(4, 3);
        assert_eq!(bank.bits(), 2);
        let m = MatchVector::one_hot(4, 2).unwrap();
        for _ in 0..3 {
            bank.accumulate(&m).unwrap();
        }
        assert!(bank.accumulate(&m).is_err());
        assert_eq!(bank.into_counts(), vec![0, 0, 3, 0]);
    }
}
