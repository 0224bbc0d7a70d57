//! Area / power / latency accounting for the softmax engine and the tiled
//! MatMul engine, the vector-grained pipeline scheduler, and computing
//! efficiency in GOPs/s/W.
//!
//! Units: area µm², energy pJ, latency ns, power mW (1 pJ/ns == 1 mW).
//!
//! Crossbar component records are per cell; `counter_step` is per counter
//! bit; `divider_step` and `adc_conversion` are per instance. Absolute
//! numbers only mean something after calibration (see [`calibrate`]); the
//! structural properties hold for any non-negative parameters.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::crossbar::counter_bits;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};

/// Describes how [`OpCounts`] are tallied; embedded in every report.
pub const COUNTING_CONVENTIONS: &str = "matmul_ops = 2 ops/MAC x (QK^T + PV) = 4*seq^2*d_model; \
softmax_ops = n_heads*seq rows x stage steps per row (cam n, sub n, exp n, vmm 1, div n at n = seq)";

/// Calibrated parameters reproducing the target area/power ratios and
/// efficiency on the BERT-base, seq-128, 8-bit workload.
pub const CALIBRATED_PARAMS_JSON: &str = include_str!("../data/calibrated_params.json");

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentParams {
    pub area_um2: f64,
    pub energy_pj: f64,
    pub latency_ns: f64,
    pub static_power_mw: f64,
}

impl ComponentParams {
    fn fields_mut(&mut self) -> [&mut f64; 4] {
        [
            &mut self.area_um2,
            &mut self.energy_pj,
            &mut self.latency_ns,
            &mut self.static_power_mw,
        ]
    }

    fn fields(&self) -> [f64; 4] {
        [
            self.area_um2,
            self.energy_pj,
            self.latency_ns,
            self.static_power_mw,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    CamSearchStep,
    SubReadoutStep,
    LutReadStep,
    VmmStep,
    DividerStep,
    CounterStep,
    MatmulTileStep,
    AdcConversion,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::CamSearchStep,
        Component::SubReadoutStep,
        Component::LutReadStep,
        Component::VmmStep,
        Component::DividerStep,
        Component::CounterStep,
        Component::MatmulTileStep,
        Component::AdcConversion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Component::CamSearchStep => "cam_search_step",
            Component::SubReadoutStep => "sub_readout_step",
            Component::LutReadStep => "lut_read_step",
            Component::VmmStep => "vmm_step",
            Component::DividerStep => "divider_step",
            Component::CounterStep => "counter_step",
            Component::MatmulTileStep => "matmul_tile_step",
            Component::AdcConversion => "adc_conversion",
        }
    }

    pub fn in_softmax_engine(&self) -> bool {
        !matches!(self, Component::MatmulTileStep | Component::AdcConversion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentTable {
    pub cam_search_step: ComponentParams,
    pub sub_readout_step: ComponentParams,
    pub lut_read_step: ComponentParams,
    pub vmm_step: ComponentParams,
    pub divider_step: ComponentParams,
    pub counter_step: ComponentParams,
    pub matmul_tile_step: ComponentParams,
    pub adc_conversion: ComponentParams,
}

impl ComponentTable {
    pub fn get(&self, c: Component) -> &ComponentParams {
        match c {
            Component::CamSearchStep => &self.cam_search_step,
            Component::SubReadoutStep => &self.sub_readout_step,
            Component::LutReadStep => &self.lut_read_step,
            Component::VmmStep => &self.vmm_step,
            Component::DividerStep => &self.divider_step,
            Component::CounterStep => &self.counter_step,
            Component::MatmulTileStep => &self.matmul_tile_step,
            Component::AdcConversion => &self.adc_conversion,
        }
    }

    pub fn get_mut(&mut self, c: Component) -> &mut ComponentParams {
        match c {
            Component::CamSearchStep => &mut self.cam_search_step,
            Component::SubReadoutStep => &mut self.sub_readout_step,
            Component::LutReadStep => &mut self.lut_read_step,
            Component::VmmStep => &mut self.vmm_step,
            Component::DividerStep => &mut self.divider_step,
            Component::CounterStep => &mut self.counter_step,
            Component::MatmulTileStep => &mut self.matmul_tile_step,
            Component::AdcConversion => &mut self.adc_conversion,
        }
    }

    /// Mutable access to every scalar, in a fixed order.
    pub fn scalars_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::with_capacity(32);
        for rec in [
            &mut self.cam_search_step,
            &mut self.sub_readout_step,
            &mut self.lut_read_step,
            &mut self.vmm_step,
            &mut self.divider_step,
            &mut self.counter_step,
            &mut self.matmul_tile_step,
            &mut self.adc_conversion,
        ] {
            out.extend(rec.fields_mut());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaPower {
    pub area_um2: f64,
    pub power_mw: f64,
}

/// External reference points. These are constants, not modeled systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    pub cmos_softmax: AreaPower,
    pub softermax: AreaPower,
    pub gpu_gops_per_watt: f64,
    pub pipelayer_gops_per_watt: f64,
    pub retransformer_gops_per_watt: f64,
}

impl Default for Baselines {
    fn default() -> Self {
        Self {
            cmos_softmax: AreaPower {
                area_um2: 1.0,
                power_mw: 1.0,
            },
            softermax: AreaPower {
                area_um2: 1.0,
                power_mw: 1.0,
            },
            gpu_gops_per_watt: 1.0,
            pipelayer_gops_per_watt: 1.0,
            retransformer_gops_per_watt: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTargets {
    pub area_vs_cmos_softmax: f64,
    pub power_vs_cmos_softmax: f64,
    pub efficiency_gops_per_watt: f64,
}

/// Workload and targets the parameters were fitted against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub engine: EngineConfig,
    pub attention: AttentionConfig,
    pub targets: CalibrationTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    /// Max-find and subtraction share the time-multiplexed CAM/SUB array,
    /// so vector `v+1` cannot search until vector `v` has subtracted.
    pub shared_camsub: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            shared_camsub: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub components: ComponentTable,
    #[serde(default)]
    pub baselines: Baselines,
    #[serde(default)]
    pub pipeline: PipelineOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

impl CostParams {
    pub fn calibrated() -> Self {
        serde_json::from_str(CALIBRATED_PARAMS_JSON).expect("shipped calibration parses")
    }

    pub fn zero() -> Self {
        Self {
            components: ComponentTable::default(),
            baselines: Baselines::default(),
            pipeline: PipelineOptions::default(),
            calibration: None,
        }
    }

    /// Uncalibrated starting point: order-of-magnitude per-cell figures
    /// for RRAM arrays with CMOS peripherals.
    pub fn reference() -> Self {
        let rec = |area_um2, energy_pj, latency_ns, static_power_mw| ComponentParams {
            area_um2,
            energy_pj,
            latency_ns,
            static_power_mw,
        };
        Self {
            components: ComponentTable {
                cam_search_step: rec(2.0, 0.5, 1.0, 2e-4),
                sub_readout_step: rec(0.5, 0.3, 1.0, 5e-5),
                lut_read_step: rec(1.0, 0.6, 1.5, 1e-4),
                vmm_step: rec(1.5, 5.0, 5.0, 1.5e-4),
                divider_step: rec(2000.0, 1.0, 2.0, 0.2),
                counter_step: rec(3.0, 0.05, 0.5, 3e-4),
                matmul_tile_step: rec(0.25, 20.0, 10.0, 2.5e-5),
                adc_conversion: rec(300.0, 0.5, 1.0, 0.03),
            },
            baselines: Baselines {
                cmos_softmax: AreaPower {
                    area_um2: 320_000.0,
                    power_mw: 160.0,
                },
                softermax: AreaPower {
                    area_um2: 0.33 * 320_000.0,
                    power_mw: 0.12 * 160.0,
                },
                gpu_gops_per_watt: 612.66 / 30.63,
                pipelayer_gops_per_watt: 612.66 / 4.32,
                retransformer_gops_per_watt: 612.66 / 1.31,
            },
            pipeline: PipelineOptions::default(),
            calibration: Some(Calibration {
                engine: EngineConfig::default().with_input_format(crate::fxp::FxFormat {
                    total_bits: 8,
                    frac_bits: 2,
                    signed: true,
                }),
                attention: AttentionConfig::default(),
                targets: CalibrationTargets {
                    area_vs_cmos_softmax: 0.06,
                    power_vs_cmos_softmax: 0.05,
                    efficiency_gops_per_watt: 612.66,
                },
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in Component::ALL {
            for v in self.components.get(c).fields() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Config(format!(
                        "{}: parameters must be finite and >= 0, got {v}",
                        c.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Crossbar dimensions `rows × cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Array {
    pub rows: usize,
    pub cols: usize,
}

impl Array {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub camsub: Array,
    pub exp_cam: Array,
    pub lut: Array,
    pub vmm: Array,
    pub counters: usize,
    pub counter_bits: u32,
    pub matmul_tiles: usize,
    pub matmul_tile: usize,
    pub adcs: usize,
}

impl Geometry {
    /// Rows hold every representable value; two cells per stored bit.
    pub fn derive(ecfg: &EngineConfig, acfg: &AttentionConfig) -> Self {
        let cols = 2 * ecfg.input_format.total_bits as usize;
        let exp_rows = ecfg.lut_domain_format().cardinality();
        let exp = Array {
            rows: exp_rows,
            cols,
        };
        let t = acfg.matmul_tile.max(1);
        let tiles_per_head = acfg.d_head().div_ceil(t) * acfg.seq_len.div_ceil(t);
        let matmul_tiles = 2 * acfg.n_heads * tiles_per_head;
        Self {
            camsub: Array {
                rows: ecfg.input_format.cardinality(),
                cols,
            },
            exp_cam: exp,
            lut: exp,
            vmm: exp,
            counters: exp_rows,
            counter_bits: counter_bits(ecfg.max_seq_len),
            matmul_tiles,
            matmul_tile: t,
            adcs: matmul_tiles * t,
        }
    }

    /// Checks that CAM rows cover exactly the representable values.
    pub fn check(&self, ecfg: &EngineConfig) -> Result<()> {
        let want_camsub = ecfg.input_format.cardinality();
        let want_exp = ecfg.lut_domain_format().cardinality();
        let checks = [
            ("camsub", self.camsub.rows, want_camsub),
            ("exp_cam", self.exp_cam.rows, want_exp),
            ("lut", self.lut.rows, want_exp),
            ("vmm", self.vmm.rows, want_exp),
            ("counters", self.counters, want_exp),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Geometry(format!(
                    "{name} has {got} rows but format {} needs {want}",
                    ecfg.input_format
                )));
            }
        }
        Ok(())
    }

    /// Instance multiplier applied to a component's per-unit area and
    /// static power.
    pub fn units(&self, c: Component) -> f64 {
        (match c {
            Component::CamSearchStep => self.camsub.cells(),
            Component::SubReadoutStep => self.camsub.cells(),
            Component::LutReadStep => self.exp_cam.cells() + self.lut.cells(),
            Component::VmmStep => self.vmm.cells(),
            Component::DividerStep => 1,
            Component::CounterStep => self.counters * self.counter_bits as usize,
            Component::MatmulTileStep => self.matmul_tiles * self.matmul_tile * self.matmul_tile,
            Component::AdcConversion => self.adcs,
        }) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCost {
    pub component: Component,
    pub area_um2: f64,
    pub static_power_mw: f64,
}

pub fn component_costs(
    ecfg: &EngineConfig,
    acfg: &AttentionConfig,
    params: &CostParams,
) -> Result<Vec<ComponentCost>> {
    component_costs_with_geometry(&Geometry::derive(ecfg, acfg), ecfg, params)
}

pub fn component_costs_with_geometry(
    geom: &Geometry,
    ecfg: &EngineConfig,
    params: &CostParams,
) -> Result<Vec<ComponentCost>> {
    geom.check(ecfg)?;
    params.validate()?;
    Ok(Component::ALL
        .iter()
        .map(|&c| {
            let p = params.components.get(c);
            let units = geom.units(c);
            ComponentCost {
                component: c,
                area_um2: p.area_um2 * units,
                static_power_mw: p.static_power_mw * units,
            }
        })
        .collect())
}

pub const SOFTMAX_STAGES: [&str; 5] = ["cam_search", "subtract", "exp_lookup", "vmm", "divide"];

/// Steps per softmax stage as `per_input * n + fixed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLatencyModel {
    pub per_input: [u64; 5],
    pub fixed: [u64; 5],
}

impl Default for StageLatencyModel {
    /// One search, subtraction, lookup and division per input; the VMM
    /// waits for every lookup and fires once.
    fn default() -> Self {
        Self {
            per_input: [1, 1, 1, 0, 1],
            fixed: [0, 0, 0, 1, 0],
        }
    }
}

impl StageLatencyModel {
    pub fn steps(&self, n: usize) -> [u64; 5] {
        std::array::from_fn(|s| self.per_input[s] * n as u64 + self.fixed[s])
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        self.steps(n).iter().sum()
    }

    /// Stage durations for one vector of length `n`. The counter runs
    /// alongside the lookups, so the exp step is the slower of the two.
    pub fn durations(&self, n: usize, params: &CostParams) -> [f64; 5] {
        let c = &params.components;
        let step = [
            c.cam_search_step.latency_ns,
            c.sub_readout_step.latency_ns,
            c.lut_read_step.latency_ns.max(c.counter_step.latency_ns),
            c.vmm_step.latency_ns,
            c.divider_step.latency_ns,
        ];
        let steps = self.steps(n);
        std::array::from_fn(|s| steps[s] as f64 * step[s])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleEntry {
    pub vector_id: usize,
    pub stage: usize,
    pub start_ns: f64,
    pub end_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub stages: Vec<String>,
    pub entries: Vec<ScheduleEntry>,
    pub makespan_ns: f64,
    pub pipelined: bool,
    /// Groups of stages executed on one physical unit.
    pub shared: Vec<Vec<usize>>,
}

impl Schedule {
    fn entry(&self, v: usize, s: usize) -> &ScheduleEntry {
        &self.entries[v * self.stages.len() + s]
    }

    pub fn vectors(&self) -> usize {
        self.entries.len() / self.stages.len().max(1)
    }

    /// Replays the schedule and reports the first precedence violation.
    pub fn verify(&self, durations: &[f64]) -> Result<()> {
        let ns = self.stages.len();
        let viol = |msg: String| Err(Error::Config(format!("schedule violation: {msg}")));
        for e in &self.entries {
            let (v, s) = (e.vector_id, e.stage);
            if (e.end_ns - e.start_ns - durations[s]).abs() > 1e-9 * e.end_ns.abs().max(1.0) {
                return viol(format!("v{v} s{s} duration"));
            }
            if s > 0 && e.start_ns < self.entry(v, s - 1).end_ns {
                return viol(format!("v{v} s{s} starts before its own stage {}", s - 1));
            }
            if v > 0 && e.start_ns < self.entry(v - 1, s).end_ns {
                return viol(format!("v{v} s{s} starts before v{} drains it", v - 1));
            }
            if !self.pipelined && v > 0 && s == 0 && e.start_ns < self.entry(v - 1, ns - 1).end_ns {
                return viol(format!("v{v} overlaps v{} in sequential mode", v - 1));
            }
            for g in &self.shared {
                if v > 0 && g.first() == Some(&s) {
                    let last = *g.last().unwrap();
                    if e.start_ns < self.entry(v - 1, last).end_ns {
                        return viol(format!("v{v} s{s} reuses a busy shared unit"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Linear pipeline over `m` identical vectors. Stage `s` of vector `v`
/// starts once stage `s-1` of `v` and stage `s` of `v-1` are done, and once
/// any unit it shares with other stages is released by `v-1`.
/// Sequential mode runs one vector at a time.
pub fn schedule(
    m: usize,
    stages: &[&str],
    durations: &[f64],
    shared: &[Vec<usize>],
    pipelined: bool,
) -> Schedule {
    let ns = durations.len();
    let mut entries: Vec<ScheduleEntry> = Vec::with_capacity(m * ns);
    let mut clock = 0.0f64;
    for v in 0..m {
        for s in 0..ns {
            let mut start = if s > 0 {
                entries[v * ns + s - 1].end_ns
            } else {
                0.0
            };
            if pipelined {
                if v > 0 {
                    start = start.max(entries[(v - 1) * ns + s].end_ns);
                    for g in shared {
                        if g.first() == Some(&s) {
                            start = start.max(entries[(v - 1) * ns + g.last().unwrap()].end_ns);
                        }
                    }
                }
            } else {
                start = start.max(clock);
            }
            let end = start + durations[s];
            clock = end;
            entries.push(ScheduleEntry {
                vector_id: v,
                stage: s,
                start_ns: start,
                end_ns: end,
            });
        }
    }
    let makespan_ns = entries.iter().map(|e| e.end_ns).fold(0.0, f64::max);
    Schedule {
        stages: stages.iter().map(|s| s.to_string()).collect(),
        entries,
        makespan_ns,
        pipelined,
        shared: shared.to_vec(),
    }
}

fn softmax_shared(params: &CostParams) -> Vec<Vec<usize>> {
    if params.pipeline.shared_camsub {
        vec![vec![0, 1]]
    } else {
        Vec::new()
    }
}

/// Schedule of `m` softmax vectors of length `n` through the engine.
pub fn softmax_schedule(
    m: usize,
    n: usize,
    model: &StageLatencyModel,
    params: &CostParams,
    pipelined: bool,
) -> Schedule {
    let d = model.durations(n, params);
    schedule(m, &SOFTMAX_STAGES, &d, &softmax_shared(params), pipelined)
}

/// Latency of a single length-`n` softmax (identical in both modes).
pub fn softmax_latency(
    n: usize,
    model: &StageLatencyModel,
    params: &CostParams,
    pipelined: bool,
) -> f64 {
    softmax_schedule(1, n, model, params, pipelined).makespan_ns
}

pub const ATTENTION_STAGES: [&str; 7] = [
    "qk_matmul",
    "cam_search",
    "subtract",
    "exp_lookup",
    "vmm",
    "divide",
    "pv_matmul",
];

/// Stage durations of one attention score row: a QKᵀ tile pass, the five
/// softmax stages, a PV tile pass. Tiles of one pass run in parallel.
pub fn attention_row_durations(
    acfg: &AttentionConfig,
    model: &StageLatencyModel,
    params: &CostParams,
) -> [f64; 7] {
    let c = &params.components;
    let mm = c.matmul_tile_step.latency_ns + c.adc_conversion.latency_ns;
    let sm = model.durations(acfg.seq_len, params);
    [mm, sm[0], sm[1], sm[2], sm[3], sm[4], mm]
}

/// All `n_heads * seq_len` score rows streamed through the attention
/// pipeline.
pub fn attention_schedule(
    acfg: &AttentionConfig,
    model: &StageLatencyModel,
    params: &CostParams,
    pipelined: bool,
) -> Schedule {
    let d = attention_row_durations(acfg, model, params);
    let shared: Vec<Vec<usize>> = softmax_shared(params)
        .into_iter()
        .map(|g| g.into_iter().map(|s| s + 1).collect())
        .collect();
    schedule(
        acfg.seq_len * acfg.n_heads,
        &ATTENTION_STAGES,
        &d,
        &shared,
        pipelined,
    )
}

pub fn attention_latency(
    acfg: &AttentionConfig,
    model: &StageLatencyModel,
    params: &CostParams,
    pipelined: bool,
) -> f64 {
    let d = attention_row_durations(acfg, model, params);
    let m = acfg.seq_len * acfg.n_heads;
    // Closed form of `schedule` for identical vectors; avoids materializing
    // m x 7 entries for long sequences.
    if !pipelined {
        return m as f64 * d.iter().sum::<f64>();
    }
    attention_schedule(acfg, model, params, true).makespan_ns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub matmul_ops: u64,
    pub softmax_ops: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.matmul_ops + self.softmax_ops
    }

    pub fn softmax_share(&self) -> f64 {
        self.softmax_ops as f64 / self.total() as f64
    }
}

pub fn op_count(acfg: &AttentionConfig, model: &StageLatencyModel) -> OpCounts {
    let (s, d, h) = (
        acfg.seq_len as u64,
        acfg.d_model as u64,
        acfg.n_heads as u64,
    );
    OpCounts {
        matmul_ops: 2 * (2 * s * s * d),
        softmax_ops: h * s * model.total_steps(acfg.seq_len),
    }
}

/// Operations per second per watt, in GOPs/s/W.
pub fn efficiency(op_count: f64, time_s: f64, power_w: f64) -> Result<f64> {
    if time_s <= 0.0 || time_s.is_nan() {
        return Err(Error::NonPositive("time"));
    }
    if power_w <= 0.0 || power_w.is_nan() {
        return Err(Error::NonPositive("power"));
    }
    Ok(op_count / time_s / power_w / 1e9)
}

/// Activity counts for one attention layer.
fn activity(acfg: &AttentionConfig, geom: &Geometry, c: Component) -> f64 {
    let rows = (acfg.seq_len * acfg.n_heads) as f64;
    let n = acfg.seq_len as f64;
    let tile_ops = {
        let t = geom.matmul_tile;
        let per_row = acfg.d_head().div_ceil(t) * acfg.seq_len.div_ceil(t);
        2.0 * rows * per_row as f64
    };
    match c {
        Component::CamSearchStep
        | Component::SubReadoutStep
        | Component::LutReadStep
        | Component::CounterStep
        | Component::DividerStep => rows * n,
        Component::VmmStep => rows,
        Component::MatmulTileStep => tile_ops,
        Component::AdcConversion => tile_ops * geom.matmul_tile as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub component: Component,
    pub area_um2: f64,
    pub energy_pj: f64,
    pub static_power_mw: f64,
    pub dynamic_power_mw: f64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratios {
    pub area_vs_cmos_softmax: f64,
    pub power_vs_cmos_softmax: f64,
    pub area_vs_softermax: f64,
    pub power_vs_softermax: f64,
    pub efficiency_vs_gpu: f64,
    pub efficiency_vs_pipelayer: f64,
    pub efficiency_vs_retransformer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub counting_conventions: &'static str,
    /// True when the parameters came from a calibration fit, in which case
    /// ratios and efficiency echo the fit targets by construction.
    pub calibrated: bool,
    pub geometry: Geometry,
    pub components: Vec<ComponentReport>,
    pub softmax_area_um2: f64,
    pub softmax_power_mw: f64,
    pub total_area_um2: f64,
    pub total_energy_pj: f64,
    pub total_static_power_mw: f64,
    pub total_power_mw: f64,
    pub softmax_latency_ns: f64,
    pub attention_latency_ns: f64,
    pub attention_latency_unpipelined_ns: f64,
    pub ops: OpCounts,
    pub throughput_gops: f64,
    pub efficiency_gops_per_watt: f64,
    pub ratios: Ratios,
}

pub fn cost_report(
    ecfg: &EngineConfig,
    acfg: &AttentionConfig,
    params: &CostParams,
) -> Result<CostReport> {
    acfg.validate(ecfg)?;
    let geom = Geometry::derive(ecfg, acfg);
    let statics = component_costs_with_geometry(&geom, ecfg, params)?;
    let model = StageLatencyModel::default();
    let latency = attention_latency(acfg, &model, params, true);
    let components: Vec<ComponentReport> = statics
        .into_iter()
        .map(|sc| {
            let energy_pj =
                params.components.get(sc.component).energy_pj * activity(acfg, &geom, sc.component);
            let dynamic_power_mw = if latency > 0.0 {
                energy_pj / latency
            } else {
                0.0
            };
            ComponentReport {
                component: sc.component,
                area_um2: sc.area_um2,
                energy_pj,
                static_power_mw: sc.static_power_mw,
                dynamic_power_mw,
                power_mw: sc.static_power_mw + dynamic_power_mw,
            }
        })
        .collect();
    let sum = |f: &dyn Fn(&ComponentReport) -> f64, softmax_only: bool| -> f64 {
        components
            .iter()
            .filter(|c| !softmax_only || c.component.in_softmax_engine())
            .map(f)
            .sum()
    };
    let total_power_mw = sum(&|c| c.power_mw, false);
    let ops = op_count(acfg, &model);
    let time_s = latency * 1e-9;
    let throughput_gops = if time_s > 0.0 {
        ops.total() as f64 / time_s / 1e9
    } else {
        0.0
    };
    let eff = efficiency(ops.total() as f64, time_s, total_power_mw * 1e-3).unwrap_or(0.0);
    let softmax_area_um2 = sum(&|c| c.area_um2, true);
    let softmax_power_mw = sum(&|c| c.power_mw, true);
    let b = &params.baselines;
    let ratios = Ratios {
        area_vs_cmos_softmax: softmax_area_um2 / b.cmos_softmax.area_um2,
        power_vs_cmos_softmax: softmax_power_mw / b.cmos_softmax.power_mw,
        area_vs_softermax: softmax_area_um2 / b.softermax.area_um2,
        power_vs_softermax: softmax_power_mw / b.softermax.power_mw,
        efficiency_vs_gpu: eff / b.gpu_gops_per_watt,
        efficiency_vs_pipelayer: eff / b.pipelayer_gops_per_watt,
        efficiency_vs_retransformer: eff / b.retransformer_gops_per_watt,
    };
    Ok(CostReport {
        counting_conventions: COUNTING_CONVENTIONS,
        calibrated: params.calibration.is_some(),
        geometry: geom,
        softmax_area_um2,
        softmax_power_mw,
        total_area_um2: sum(&|c| c.area_um2, false),
        total_energy_pj: sum(&|c| c.energy_pj, false),
        total_static_power_mw: sum(&|c| c.static_power_mw, false),
        total_power_mw,
        softmax_latency_ns: softmax_latency(acfg.seq_len, &model, params, true),
        attention_latency_ns: latency,
        attention_latency_unpipelined_ns: attention_latency(acfg, &model, params, false),
        ops,
        throughput_gops,
        efficiency_gops_per_watt: eff,
        ratios,
        components,
    })
}

/// Report on the workload the parameters were calibrated against.
pub fn calibration_echo(params: &CostParams) -> Result<CostReport> {
    let cal = params
        .calibration
        .ok_or_else(|| Error::Config("parameters carry no calibration section".into()))?;
    cost_report(&cal.engine, &cal.attention, params)
}

/// Fits `base` to its calibration targets by scaling three groups of
/// parameters, each of which enters the model linearly:
///
/// 1. softmax-engine areas, to hit the area ratio;
/// 2. softmax-engine energy and static power, to hit the power ratio;
/// 3. MatMul-engine energy and static power, to hit the efficiency.
///
/// Latencies are untouched, so the three fits do not interact.
pub fn calibrate(base: &CostParams) -> Result<CostParams> {
    let cal = base
        .calibration
        .ok_or_else(|| Error::Config("parameters carry no calibration section".into()))?;
    let t = cal.targets;
    let mut p = base.clone();
    let report = calibration_echo(&p)?;

    let area_scale =
        t.area_vs_cmos_softmax * p.baselines.cmos_softmax.area_um2 / report.softmax_area_um2;
    let power_scale =
        t.power_vs_cmos_softmax * p.baselines.cmos_softmax.power_mw / report.softmax_power_mw;
    for c in Component::ALL
        .into_iter()
        .filter(Component::in_softmax_engine)
    {
        let rec = p.components.get_mut(c);
        rec.area_um2 *= area_scale;
        rec.energy_pj *= power_scale;
        rec.static_power_mw *= power_scale;
    }

    let report = calibration_echo(&p)?;
    let time_s = report.attention_latency_ns * 1e-9;
    let want_total_mw = report.ops.total() as f64 / time_s / 1e9 / t.efficiency_gops_per_watt * 1e3;
    let matmul_mw = report.total_power_mw - report.softmax_power_mw;
    let mm_scale = (want_total_mw - report.softmax_power_mw) / matmul_mw;
    if !(mm_scale.is_finite() && mm_scale > 0.0) {
        return Err(Error::Config(format!(
            "efficiency target unreachable: softmax alone draws {:.3} mW of the {:.3} mW budget",
            report.softmax_power_mw, want_total_mw
        )));
    }
    for c in [Component::MatmulTileStep, Component::AdcConversion] {
        let rec = p.components.get_mut(c);
        rec.energy_pj *= mm_scale;
        rec.static_power_mw *= mm_scale;
    }
    Ok(p)
}
