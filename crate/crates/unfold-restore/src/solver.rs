//! Joint unfolding solver: alternating closed-form updates for the data
//! terms, prior steps for the regularizers, and the reference-to-target
//! transfer of degradation matrices.
//!
//! One restoration job couples two energies through a shared set of
//! degradation matrices:
//!
//! * restoration:  `(1/2)||O - (T Z + D)||^2 + lambda Phi(B) + (gamma/2)||Z - B||^2`
//! * modeling:     `(1/2)||O_ref - (P B_ref + Q)||^2 + mu Psi(T, D)
//!                  + (alpha/2)||P - T||^2 + (beta/2)||Q - D||^2`
//!
//! Each step runs the closed-form minimizers for `Z`, `P`, `Q`, the proximal
//! steps for `B` and `(T, D)`, and finally the transfer that re-anchors the
//! fitted matrices to the target image. The matrix-side updates are skipped
//! on the final step, which only refines the image.

use serde::{Deserialize, Serialize};

use crate::degrade::{DegradationKind, DegradationMatrices, DEFAULT_EPS};
use crate::dpt::{self, DptConfig};
use crate::error::{Error, Result};
use crate::oracle::{energy_degradation, energy_restoration, EnergyTrace};
use crate::priors::{apply_prior_b, apply_prior_td, TaskPriorProfile};
use crate::raster::{ensure_same_shape, Image};
use crate::util::fnv1a_hex;

/// Full iterate set of one restoration job.
///
/// All six arrays share one shape. `t` stays in `[EPS_T, 1]` and `z`, `b` in
/// `[0, 1]` after their updates' clamps; the auxiliaries `p`, `q` are left
/// unclamped so they remain the exact minimizers of their subproblems.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub b: Image,
    pub z: Image,
    pub t: Image,
    pub d: Image,
    pub p: Image,
    pub q: Image,
    pub k: usize,
}

impl SolverState {
    /// Initial state: `B_0 = O` (and `Z_0 = B_0` for the split constraint),
    /// matrices from the initial estimate, auxiliaries set to the same
    /// values.
    pub fn initialize(o: &Image, m0: &DegradationMatrices) -> Result<Self> {
        ensure_same_shape(o, &m0.t)?;
        ensure_same_shape(o, &m0.d)?;
        Ok(Self {
            b: o.clone(),
            z: o.clone(),
            t: m0.t.clone(),
            d: m0.d.clone(),
            p: m0.t.clone(),
            q: m0.d.clone(),
            k: 0,
        })
    }
}

/// Linearly growing penalty weights: `value(k) = base + increment * (k - 1)`
/// for 1-based step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySchedule {
    pub alpha0: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub increment: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            beta0: 0.5,
            gamma0: 0.5,
            increment: 0.05,
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.beta0 > 0.0 && self.gamma0 > 0.0) {
            return Err(Error::InvalidArgument("penalty bases must be > 0".into()));
        }
        if !(self.increment >= 0.0) {
            return Err(Error::InvalidArgument(
                "penalty increment must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha0 + self.increment * (k - 1) as f64
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta0 + self.increment * (k - 1) as f64
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 + self.increment * (k - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Interleave modeling and restoration updates within each step.
    Parallel,
    /// Fit the degradation matrices first, then restore with them frozen.
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelingForm {
    /// Generalized form `O = T B + D`.
    #[serde(rename = "tbd")]
    TbPlusD,
    /// Multiplicative-only ablation `O = H B`: `D` frozen at zero and the
    /// `Q` updates skipped.
    #[serde(rename = "hb")]
    Hb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub steps: usize,
    pub schedule: PenaltySchedule,
    pub mode: ScheduleMode,
    pub modeling_form: ModelingForm,
    pub priors: TaskPriorProfile,
    pub dpt: DptConfig,
    pub eps: f64,
}

impl SolverConfig {
    pub fn default_for(kind: DegradationKind) -> Self {
        Self {
            steps: 6,
            schedule: PenaltySchedule::default(),
            mode: ScheduleMode::Parallel,
            modeling_form: ModelingForm::TbPlusD,
            priors: TaskPriorProfile::default_for(kind),
            dpt: DptConfig::default(),
            eps: DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be > 0".into()));
        }
        self.schedule.validate()?;
        self.dpt.validate()
    }

    /// Stable content hash of the configuration, recorded in result
    /// metadata.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a_hex(json.as_bytes())
    }
}

/// Closed-form minimizer of the restoration data subproblem, elementwise:
/// `Z = (T O + gamma B_prev - T D) / (gamma + T^2)`. The denominator is at
/// least `gamma`, so the update never divides by zero.
pub fn update_z(
    o: &Image,
    b_prev: &Image,
    t_prev: &Image,
    d_prev: &Image,
    gamma: f64,
) -> Result<Image> {
    for img in [b_prev, t_prev, d_prev] {
        ensure_same_shape(o, img)?;
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument("gamma must be > 0".into()));
    }
    let mut out = o.clone();
    let (b, t, d) = (b_prev.data(), t_prev.data(), d_prev.data());
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (t[i] * *v + gamma * b[i] - t[i] * d[i]) / (gamma + t[i] * t[i]);
    }
    Ok(out)
}

/// Closed-form minimizer of the transmission auxiliary subproblem:
/// `P = (O_ref B_ref + alpha T_prev - Q_prev B_ref) / (B_ref^2 + alpha)`.
pub fn update_p(
    o_ref: &Image,
    b_ref: &Image,
    t_prev: &Image,
    q_prev: &Image,
    alpha: f64,
) -> Result<Image> {
    for img in [b_ref, t_prev, q_prev] {
        ensure_same_shape(o_ref, img)?;
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be > 0".into()));
    }
    let mut out = o_ref.clone();
    let (br, t, q) = (b_ref.data(), t_prev.data(), q_prev.data());
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (*v * br[i] + alpha * t[i] - q[i] * br[i]) / (br[i] * br[i] + alpha);
    }
    Ok(out)
}

/// Closed-form minimizer of the offset auxiliary subproblem:
/// `Q = (O_ref + beta D_prev - P_prev B_ref) / (beta + 1)`.
pub fn update_q(
    o_ref: &Image,
    b_ref: &Image,
    p_prev: &Image,
    d_prev: &Image,
    beta: f64,
) -> Result<Image> {
    for img in [b_ref, p_prev, d_prev] {
        ensure_same_shape(o_ref, img)?;
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument("beta must be > 0".into()));
    }
    let mut out = o_ref.clone();
    let (br, p, d) = (b_ref.data(), p_prev.data(), d_prev.data());
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (*v + beta * d[i] - p[i] * br[i]) / (beta + 1.0);
    }
    Ok(out)
}

/// Result metadata carried alongside the traces.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResultMeta {
    pub kind: Option<DegradationKind>,
    pub config_hash: String,
    pub reference_ids: Vec<String>,
}

/// Full record of one restoration: final image, per-step traces of the
/// image and the matrices (pre- and post-transfer), per-step attention,
/// energy checkpoints, and metadata.
#[derive(Debug, Clone)]
pub struct RestorationResult {
    pub final_b: Image,
    pub trace_b: Vec<Image>,
    pub trace_td: Vec<(Image, Image)>,
    pub trace_td_hat: Vec<(Image, Image)>,
    pub attention: Vec<Vec<Vec<f64>>>,
    pub energy: EnergyTrace,
    pub metadata: ResultMeta,
}

struct StepBudget<'a> {
    o: &'a Image,
    o_ref: &'a Image,
    b_ref: &'a Image,
    cfg: &'a SolverConfig,
}

/// Advances the state by one step (1-based step index `state.k + 1`).
///
/// Order within a step: `Z`, `B`, then — only while further steps remain —
/// `P`, `Q`, the matrix prior, and the transfer. The final step refines only
/// the image.
pub fn step(
    state: &SolverState,
    o: &Image,
    reference: (&Image, &Image),
    cfg: &SolverConfig,
) -> Result<SolverState> {
    let budget = StepBudget {
        o,
        o_ref: reference.0,
        b_ref: reference.1,
        cfg,
    };
    let (state, _) = step_detailed(state, &budget)?;
    Ok(state)
}

struct StepRecord {
    td_hat: Option<(Image, Image)>,
    attention: Option<Vec<Vec<f64>>>,
    restoration_energy: Vec<f64>,
    degradation_energy: Option<Vec<f64>>,
}

/// Matrix-side half of one step: the `P`/`Q` Jacobi pair, the matrix prior,
/// and the transfer anchored on `transfer_b`. Energy checkpoints:
/// [start, after P+Q, after prior].
struct ModelingOutcome {
    p: Image,
    q: Image,
    t: Image,
    d: Image,
    td_hat: (Image, Image),
    attention: Vec<Vec<f64>>,
    energy: Vec<f64>,
}

fn modeling_half(
    state: &SolverState,
    budget: &StepBudget<'_>,
    alpha: f64,
    beta: f64,
    transfer_b: &Image,
) -> Result<ModelingOutcome> {
    let cfg = budget.cfg;
    let hb = cfg.modeling_form == ModelingForm::Hb;
    let mut energy = Vec::with_capacity(3);
    energy.push(energy_degradation(
        budget.o_ref,
        budget.b_ref,
        &state.p,
        &state.q,
        &state.t,
        &state.d,
        alpha,
        beta,
        1.0,
        &cfg.priors.t,
        &cfg.priors.d,
    )?);

    // P and Q both read the previous iterates (a Jacobi pair update).
    let p = update_p(budget.o_ref, budget.b_ref, &state.t, &state.q, alpha)?;
    let q = if hb {
        Image::zeros(state.q.height(), state.q.width())
    } else {
        update_q(budget.o_ref, budget.b_ref, &state.p, &state.d, beta)?
    };
    energy.push(energy_degradation(
        budget.o_ref,
        budget.b_ref,
        &p,
        &q,
        &state.t,
        &state.d,
        alpha,
        beta,
        1.0,
        &cfg.priors.t,
        &cfg.priors.d,
    )?);

    let (t_hat, d_hat) = apply_prior_td(&cfg.priors, &p, &q, alpha, beta)?;
    let d_hat = if hb {
        Image::zeros(d_hat.height(), d_hat.width())
    } else {
        d_hat
    };
    energy.push(energy_degradation(
        budget.o_ref,
        budget.b_ref,
        &p,
        &q,
        &t_hat,
        &d_hat,
        alpha,
        beta,
        1.0,
        &cfg.priors.t,
        &cfg.priors.d,
    )?);

    let (t, d, attention) = dpt::transfer_with_attention(
        &t_hat,
        &d_hat,
        transfer_b,
        budget.b_ref,
        &state.t,
        &state.d,
        &cfg.dpt,
    )?;
    let d = if hb {
        Image::zeros(d.height(), d.width())
    } else {
        d
    };
    Ok(ModelingOutcome {
        p,
        q,
        t,
        d,
        td_hat: (t_hat, d_hat),
        attention,
        energy,
    })
}

/// Image-side half of one step: the closed-form `Z` update and the image
/// prior, both clamped to `[0, 1]`. Energy checkpoints:
/// [start, after Z, after B].
fn restoration_half(
    state_b: &Image,
    state_z: &Image,
    t: &Image,
    d: &Image,
    budget: &StepBudget<'_>,
    gamma: f64,
) -> Result<(Image, Image, Vec<f64>)> {
    let cfg = budget.cfg;
    let lambda_b = cfg.priors.b.lambda();
    let mut energy = Vec::with_capacity(3);
    energy.push(energy_restoration(
        budget.o,
        state_b,
        state_z,
        t,
        d,
        gamma,
        lambda_b,
        &cfg.priors.b,
    )?);
    let z = update_z(budget.o, state_b, t, d, gamma)?.clamped(0.0, 1.0);
    energy.push(energy_restoration(
        budget.o,
        state_b,
        &z,
        t,
        d,
        gamma,
        lambda_b,
        &cfg.priors.b,
    )?);
    let b = apply_prior_b(&cfg.priors, &z, gamma)?;
    energy.push(energy_restoration(
        budget.o,
        &b,
        &z,
        t,
        d,
        gamma,
        lambda_b,
        &cfg.priors.b,
    )?);
    Ok((b, z, energy))
}

fn step_detailed(
    state: &SolverState,
    budget: &StepBudget<'_>,
) -> Result<(SolverState, StepRecord)> {
    let cfg = budget.cfg;
    cfg.validate()?;
    if state.k >= cfg.steps {
        return Err(Error::InvalidArgument(format!(
            "step {} out of range for {} total steps",
            state.k + 1,
            cfg.steps
        )));
    }
    let k1 = state.k + 1;
    let gamma = cfg.schedule.gamma(k1);

    let (b, z, restoration_energy) =
        restoration_half(&state.b, &state.z, &state.t, &state.d, budget, gamma)?;
    let mut next = SolverState {
        b,
        z,
        t: state.t.clone(),
        d: state.d.clone(),
        p: state.p.clone(),
        q: state.q.clone(),
        k: k1,
    };
    let mut record = StepRecord {
        td_hat: None,
        attention: None,
        restoration_energy,
        degradation_energy: None,
    };

    if k1 < cfg.steps {
        let outcome = modeling_half(
            state,
            budget,
            cfg.schedule.alpha(k1),
            cfg.schedule.beta(k1),
            &next.b,
        )?;
        next.t = outcome.t;
        next.d = outcome.d;
        next.p = outcome.p;
        next.q = outcome.q;
        record.td_hat = Some(outcome.td_hat);
        record.attention = Some(outcome.attention);
        record.degradation_energy = Some(outcome.energy);
    }

    Ok((next, record))
}

/// Runs the full job from an initial matrix estimate.
///
/// Parallel mode interleaves `steps` joint steps. Serial mode first runs
/// `steps` modeling iterations with the image frozen at `B_0`, then `steps`
/// restoration iterations with the fitted matrices frozen; the penalty
/// schedule restarts for the second phase.
pub fn run(
    o: &Image,
    o_ref: &Image,
    b_ref: &Image,
    m0: &DegradationMatrices,
    cfg: &SolverConfig,
    kind: Option<DegradationKind>,
    reference_ids: Vec<String>,
) -> Result<RestorationResult> {
    cfg.validate()?;
    ensure_same_shape(o, o_ref)?;
    ensure_same_shape(o, b_ref)?;
    let m0 = if cfg.modeling_form == ModelingForm::Hb {
        DegradationMatrices {
            t: m0.t.clone(),
            d: Image::zeros(o.height(), o.width()),
        }
    } else {
        m0.clone()
    };
    let mut state = SolverState::initialize(o, &m0)?;

    let mut trace_b = Vec::with_capacity(cfg.steps);
    let mut trace_td = Vec::with_capacity(cfg.steps);
    let mut trace_td_hat = Vec::new();
    let mut attention = Vec::new();
    let mut energy = EnergyTrace::default();

    let budget = StepBudget {
        o,
        o_ref,
        b_ref,
        cfg,
    };
    match cfg.mode {
        ScheduleMode::Parallel => {
            for _ in 0..cfg.steps {
                let (next, record) = step_detailed(&state, &budget)?;
                state = next;
                trace_b.push(state.b.clone());
                trace_td.push((state.t.clone(), state.d.clone()));
                if let Some(td) = record.td_hat {
                    trace_td_hat.push(td);
                }
                if let Some(a) = record.attention {
                    attention.push(a);
                }
                energy.restoration.push(record.restoration_energy);
                if let Some(seg) = record.degradation_energy {
                    energy.degradation.push(seg);
                }
            }
        }
        ScheduleMode::Serial => {
            // Modeling phase: only the matrix side advances; the transfer
            // sees the frozen initial image.
            for k in 1..=cfg.steps {
                let outcome = modeling_half(
                    &state,
                    &budget,
                    cfg.schedule.alpha(k),
                    cfg.schedule.beta(k),
                    &state.b,
                )?;
                state.t = outcome.t;
                state.d = outcome.d;
                state.p = outcome.p;
                state.q = outcome.q;
                state.k = k;
                trace_td_hat.push(outcome.td_hat);
                attention.push(outcome.attention);
                energy.degradation.push(outcome.energy);
            }
            // Restoration phase: matrices frozen, schedule restarted.
            for k in 1..=cfg.steps {
                let (b, z, seg) = restoration_half(
                    &state.b,
                    &state.z,
                    &state.t,
                    &state.d,
                    &budget,
                    cfg.schedule.gamma(k),
                )?;
                state.b = b;
                state.z = z;
                energy.restoration.push(seg);
                trace_b.push(state.b.clone());
                trace_td.push((state.t.clone(), state.d.clone()));
            }
        }
    }

    Ok(RestorationResult {
        final_b: state.b,
        trace_b,
        trace_td,
        trace_td_hat,
        attention,
        energy,
        metadata: ResultMeta {
            kind,
            config_hash: cfg.content_hash(),
            reference_ids,
        },
    })
}
