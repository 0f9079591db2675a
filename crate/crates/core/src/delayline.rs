//! Delay-line planning and a discrete-time model of the splitter/delay bank
//! that turns a layer's pixel stream back into patches.
//!
//! All times are integers in units of the feed period `1/f`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cnn::{ImageTensor, LayerGeometry, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::photonic::PatchStream;

/// Column delay `dt` and row delay `dT` in units of `1/f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    dt: u64,
    #[serde(rename = "dT")]
    d_t: u64,
    f: f64,
}

impl DelayParams {
    pub fn new(dt: u64, d_t: u64, f: f64) -> Result<Self> {
        if dt == 0 || d_t < dt {
            return Err(Error::InvalidParameter(format!("need 1 <= dt <= dT, got dt={dt}, dT={d_t}")));
        }
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidParameter(format!("feed frequency must be positive, got {f}")));
        }
        Ok(Self { dt, d_t, f })
    }

    /// Column delay in units of `1/f`.
    pub fn dt(&self) -> u64 {
        self.dt
    }

    /// Row delay in units of `1/f`.
    pub fn row_delay(&self) -> u64 {
        self.d_t
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt as f64 / self.f
    }

    pub fn row_delay_seconds(&self) -> f64 {
        self.d_t as f64 / self.f
    }
}

/// Delays at the input of the first repatched layer: adjacent pixels are one
/// feed period apart and rows are one output-row apart.
pub fn initial_delays(w: usize, k0: usize, s0: usize, p: usize, f: f64) -> Result<DelayParams> {
    let g = LayerGeometry::new(w, k0, s0, p, 1, 1)?;
    DelayParams::new(1, g.output_width() as u64, f)
}

/// Both delays scale with the previous layer's stride.
pub fn propagate_delays(prev: DelayParams, s_prev: usize) -> DelayParams {
    let s = s_prev.max(1) as u64;
    DelayParams { dt: prev.dt * s, d_t: prev.d_t * s, f: prev.f }
}

/// `(k - 1)·(dT + dt)`.
pub fn max_delay_length(k: usize, params: &DelayParams) -> u64 {
    (k.saturating_sub(1) as u64) * (params.d_t + params.dt)
}

/// Per-element delays for one `k×k` patch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayBank {
    k: usize,
    assignments: Vec<u64>,
    max_length: u64,
}

impl DelayBank {
    /// The bottom-right element is computed last and passes undelayed;
    /// element `(r, c)` waits `(k-1-r)·dT + (k-1-c)·dt`.
    pub fn new(k: usize, params: &DelayParams) -> Self {
        let mut assignments = Vec::with_capacity(k * k);
        for r in 0..k {
            for c in 0..k {
                assignments.push((k - 1 - r) as u64 * params.d_t + (k - 1 - c) as u64 * params.dt);
            }
        }
        Self { k, assignments, max_length: max_delay_length(k, params) }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn delay(&self, r: usize, c: usize) -> u64 {
        self.assignments[r * self.k + c]
    }

    /// Row-major `k×k` grid.
    pub fn assignments(&self) -> &[u64] {
        &self.assignments
    }

    pub fn max_length(&self) -> u64 {
        self.max_length
    }
}

/// One row of a delay plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DelayPlanRow {
    pub layer: usize,
    pub dim: usize,
    pub kernel: usize,
    /// `None` for a fully connected stage.
    pub stride: Option<usize>,
    pub dt: u64,
    #[serde(rename = "dT")]
    pub d_t: u64,
    pub max_len: u64,
}

/// Input width, kernel and stride of a repatched layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelayStage {
    pub dim: usize,
    pub kernel: usize,
    pub stride: Option<usize>,
}

/// Walks the stages, propagating delays by each stage's stride.
pub fn plan_delays(first: DelayParams, stages: &[DelayStage]) -> Result<Vec<DelayPlanRow>> {
    let mut params = first;
    let mut rows = Vec::with_capacity(stages.len());
    for (i, st) in stages.iter().enumerate() {
        if st.kernel == 0 || st.kernel > st.dim || st.stride == Some(0) {
            return Err(Error::GeometryMismatch(format!(
                "stage {}: kernel {} stride {:?} invalid for width {}",
                i + 1,
                st.kernel,
                st.stride,
                st.dim
            )));
        }
        if i > 0 {
            params = propagate_delays(params, stages[i - 1].stride.unwrap_or(1));
        }
        rows.push(DelayPlanRow {
            layer: i + 1,
            dim: st.dim,
            kernel: st.kernel,
            stride: st.stride,
            dt: params.dt,
            d_t: params.d_t,
            max_len: max_delay_length(st.kernel, &params),
        });
    }
    Ok(rows)
}

/// Delay plan for every layer boundary of `net`. The first layer reads its
/// input directly; each later layer gets a delay bank sized to its kernel.
/// A fully connected layer counts as a kernel covering its whole input.
pub fn plan_network_delays(net: &NetworkSpec, f: f64) -> Result<Vec<DelayPlanRow>> {
    let layers = net.layers();
    let first = match layers[0] {
        LayerSpec::Conv { geometry: g, .. } => initial_delays(g.w(), g.k(), g.s(), g.p(), f)?,
        LayerSpec::FullyConnected { .. } => DelayParams::new(1, 1, f)?,
    };
    let mut stages = Vec::with_capacity(layers.len() - 1);
    let mut prev_width = match layers[0] {
        LayerSpec::Conv { geometry: g, .. } => g.output_width(),
        LayerSpec::FullyConnected { .. } => 1,
    };
    for layer in &layers[1..] {
        match *layer {
            LayerSpec::Conv { geometry: g, .. } => {
                stages.push(DelayStage { dim: g.w(), kernel: g.k(), stride: Some(g.s()) });
                prev_width = g.output_width();
            }
            LayerSpec::FullyConnected { .. } => {
                stages.push(DelayStage { dim: prev_width, kernel: prev_width, stride: None });
                prev_width = 1;
            }
        }
    }
    plan_delays(first, &stages)
}

/// Largest delay line anywhere in the plan.
pub fn plan_max_length(rows: &[DelayPlanRow]) -> u64 {
    rows.iter().map(|r| r.max_len).max().unwrap_or(0)
}

pub const PLAN_CSV_HEADER: &str = "layer,dim,kernel,stride,dt_over_1f,dT_over_1f,max_len_over_1f";

pub fn plan_to_csv(rows: &[DelayPlanRow]) -> String {
    let mut out = String::from(PLAN_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let stride = r.stride.map_or_else(|| "NA".to_string(), |s| s.to_string());
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.layer, r.dim, r.kernel, stride, r.dt, r.d_t, r.max_len);
    }
    out
}

/// Stages of the tabulated AlexNet delay plan, fed by a 227-wide input
/// through an 11×11 stride-4 first layer. The stride column is kept as
/// published even where it does not match the next stage's width.
pub const TABLE1_STAGES: [DelayStage; 5] = [
    DelayStage { dim: 55, kernel: 5, stride: Some(2) },
    DelayStage { dim: 27, kernel: 3, stride: Some(2) },
    DelayStage { dim: 13, kernel: 3, stride: Some(2) },
    DelayStage { dim: 13, kernel: 3, stride: Some(1) },
    DelayStage { dim: 13, kernel: 13, stride: None },
];

pub fn table1_plan(f: f64) -> Result<Vec<DelayPlanRow>> {
    plan_delays(initial_delays(227, 11, 4, 0, f)?, &TABLE1_STAGES)
}

/// Valid and invalid sampling instants over one input period.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SamplingSchedule {
    pub valid_times: Vec<u64>,
    pub invalid_times: Vec<u64>,
}

impl SamplingSchedule {
    pub fn invalid_count(&self) -> usize {
        self.invalid_times.len()
    }

    pub fn total(&self) -> usize {
        self.valid_times.len() + self.invalid_times.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepatchTrace {
    pub schedule: SamplingSchedule,
    /// Gathered patches at the valid times, in time order.
    pub patches: PatchStream,
}

#[derive(Serialize)]
struct TraceDoc<'a> {
    valid_times: &'a [u64],
    invalid_times: &'a [u64],
    patches: Vec<Vec<f64>>,
}

impl RepatchTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TraceDoc {
            valid_times: &self.schedule.valid_times,
            invalid_times: &self.schedule.invalid_times,
            patches: self.patches.to_vectors(),
        })?)
    }
}

/// Feeds the pixel stream through a splitter into `k²` delay lines and
/// samples the line outputs every timestep.
///
/// Pixel `(r, c)` of the `w×w` output image leaves the previous layer at
/// `r·dT + c·dt`. A sampling instant is valid when the lines hold exactly
/// the pixels of a stride-aligned window, in window order.
pub fn simulate_repatching(outputs: &PatchStream, g_next: &LayerGeometry, params: &DelayParams) -> Result<RepatchTrace> {
    let img = ImageTensor::from_stream(outputs)?;
    let (w, k, s, d) = (img.width(), g_next.k(), g_next.s(), outputs.width());
    if g_next.w() != w || g_next.c() != d {
        return Err(Error::GeometryMismatch(format!(
            "stream is {w}x{w}x{d}, next layer expects {0}x{0}x{1}",
            g_next.w(),
            g_next.c()
        )));
    }
    if g_next.p() != 0 {
        return Err(Error::GeometryMismatch("the delay-bank simulator does not model padding".into()));
    }
    let (dt, d_t) = (params.dt, params.d_t);
    if d_t < w as u64 * dt {
        return Err(Error::GeometryMismatch(format!(
            "row delay {d_t} shorter than a {w}-pixel row at spacing {dt}"
        )));
    }

    let bank = DelayBank::new(k, params);
    let period = (w as u64 - 1) * (d_t + dt) + 1;
    let mut lines: Vec<VecDeque<Option<usize>>> =
        bank.assignments().iter().map(|&delay| VecDeque::with_capacity(delay as usize + 1)).collect();

    let mut valid_times = Vec::new();
    let mut invalid_times = Vec::new();
    let mut gathered = Vec::with_capacity(g_next.patch_count() * k * k * d);
    let mut taps: Vec<Option<usize>> = vec![None; k * k];

    for t in 0..period {
        let (r, rem) = (t / d_t, t % d_t);
        let emitted = (rem % dt == 0 && rem / dt < w as u64 && r < w as u64).then(|| r as usize * w + (rem / dt) as usize);
        for (line, (&delay, tap)) in lines.iter_mut().zip(bank.assignments().iter().zip(taps.iter_mut())) {
            line.push_back(emitted);
            *tap = if line.len() as u64 > delay { line.pop_front().flatten() } else { None };
        }
        match window_origin(&taps, w, k, s) {
            Some(_) => {
                valid_times.push(t);
                for pixel in taps.iter().flatten() {
                    gathered.extend_from_slice(outputs.get(*pixel));
                }
            }
            None => invalid_times.push(t),
        }
    }
    let patches = PatchStream::from_flat(k * k * d, gathered)?;
    Ok(RepatchTrace { schedule: SamplingSchedule { valid_times, invalid_times }, patches })
}

/// Top-left pixel of the stride-aligned window the taps currently hold.
fn window_origin(taps: &[Option<usize>], w: usize, k: usize, s: usize) -> Option<(usize, usize)> {
    let first = taps[0]?;
    let (top, left) = (first / w, first % w);
    if top % s != 0 || left % s != 0 || top + k > w || left + k > w {
        return None;
    }
    for a in 0..k {
        for b in 0..k {
            if taps[a * k + b]? != (top + a) * w + left + b {
                return None;
            }
        }
    }
    Some((top, left))
}
