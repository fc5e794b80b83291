//! Time-dependent propagation of pure states and densities under piecewise
//! schedules, plus a frozen-Hamiltonian matrix-exponential oracle.
//!
//! All propagation happens in the excitation rotating frame, where a JC-form
//! segment generates H(t) = delta(t) sigma_z/2 + lambda(t)(a sigma+ + a† sigma-)
//! (+ the counterdiabatic term when requested) and a Gaussian pulse segment
//! generates A(t) sigma_x alone. Populations, excitation number, Mandel Q,
//! spin purity and Wigner negativity are frame-invariant; only the reported
//! relative phases and the Wigner orientation are frame-referenced.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{JcError, Result};
use crate::hilbert::{Representation, SpaceSpec, SystemState};
use crate::linalg::{self, c, I};
use crate::pulses::{fourier_eval, BaseProtocol, FourierPulse, GaussianPulse, StaPulse};

/// One piecewise segment of a drive schedule.
#[derive(Clone, Debug)]
pub enum Segment {
    /// Bare JC drive (omega_q(t), lambda(t)).
    Jc { base: BaseProtocol },
    /// Locally-counterdiabatic drive (omega_q~, lambda~).
    Lcd { sta: StaPulse },
    /// Bare drive plus the explicit counterdiabatic term.
    JcPlusCd { sta: StaPulse },
    /// Gaussian sigma_x spin pulse; coupling off, qubit at resonance.
    Gaussian { pulse: GaussianPulse },
    /// Fourier-approximated LCD fields.
    FourierLcd {
        omega_fp: FourierPulse,
        lambda_fp: FourierPulse,
        base: BaseProtocol,
    },
    /// Static qubit splitting, no coupling.
    Idle { duration: f64, omega_q: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Jc { base } | Segment::FourierLcd { base, .. } => base.tau,
            Segment::Lcd { sta } | Segment::JcPlusCd { sta } => sta.base.tau,
            Segment::Gaussian { pulse } => pulse.duration(),
            Segment::Idle { duration, .. } => *duration,
        }
    }

    /// Instantaneous field coefficients at local time t.
    pub fn fields(&self, omega: f64, t: f64) -> Result<SegmentFields> {
        let mut f = SegmentFields::default();
        match self {
            Segment::Jc { base } => {
                let b = base.eval(t)?;
                f.delta = b.omega_q - omega;
                f.lambda = b.lambda;
            }
            Segment::Lcd { sta } => {
                let (wq, l) = sta.lcd_fields(omega, t)?;
                f.delta = wq - omega;
                f.lambda = l;
            }
            Segment::JcPlusCd { sta } => {
                let b = sta.base.eval(t)?;
                let (theta, _) = sta.theta(omega, t)?;
                f.delta = b.omega_q - omega;
                f.lambda = b.lambda;
                f.theta_cd = theta;
            }
            Segment::Gaussian { pulse } => {
                if !(0.0..=pulse.duration() * (1.0 + 1e-12)).contains(&t) {
                    return Err(JcError::TimeOutOfRange { t, span: pulse.duration() });
                }
                f.pulse_x = pulse.field(t);
            }
            Segment::FourierLcd { omega_fp, lambda_fp, base } => {
                if !(0.0..=base.tau * (1.0 + 1e-12)).contains(&t) {
                    return Err(JcError::TimeOutOfRange { t, span: base.tau });
                }
                let mut wq = fourier_eval(omega_fp, t);
                let mut l = fourier_eval(lambda_fp, t);
                if omega_fp.correction_only {
                    let b = base.eval(t)?;
                    wq += b.omega_q;
                    l += b.lambda;
                }
                f.delta = wq - omega;
                f.lambda = l;
            }
            Segment::Idle { duration, omega_q } => {
                if !(0.0..=duration * (1.0 + 1e-12)).contains(&t) {
                    return Err(JcError::TimeOutOfRange { t, span: *duration });
                }
                f.delta = omega_q - omega;
            }
        }
        Ok(f)
    }
}

/// Coefficients of the rotating-frame Hamiltonian
/// H = delta sz/2 + lambda (a sp + a† sm) + theta_cd i(a† sm − a sp) + pulse_x sx.
#[derive(Clone, Copy, Debug, Default)]
pub struct SegmentFields {
    pub delta: f64,
    pub lambda: f64,
    pub theta_cd: f64,
    pub pulse_x: f64,
}

/// Ordered, contiguous segments.
#[derive(Clone, Debug, Default)]
pub struct HamiltonianSchedule {
    pub segments: Vec<Segment>,
}

impl HamiltonianSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if !(s.duration() > 0.0) {
                return Err(JcError::config(
                    format!("schedule.segments[{i}]"),
                    "segment duration must be > 0",
                ));
            }
        }
        Ok(HamiltonianSchedule { segments })
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration()).sum()
    }

    /// Active segment and local time for a global time within the span.
    pub fn segment_at(&self, t: f64) -> Result<(usize, f64)> {
        let total = self.total_duration();
        if !(0.0..=total * (1.0 + 1e-12)).contains(&t) {
            return Err(JcError::TimeOutOfRange { t, span: total });
        }
        let mut start = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            let end = start + s.duration();
            if t <= end || i == self.segments.len() - 1 {
                return Ok((i, t - start));
            }
            start = end;
        }
        unreachable!()
    }
}

/// Dense Hamiltonian of the active segment at global time t.
pub fn assemble_h(
    schedule: &HamiltonianSchedule,
    t: f64,
    space: &SpaceSpec,
) -> Result<Array2<C64>> {
    let (idx, local) = schedule.segment_at(t)?;
    let f = schedule.segments[idx].fields(space.omega, local)?;
    Ok(dense_from_fields(&f, space))
}

/// Dense matrix for a single field set.
pub fn dense_from_fields(f: &SegmentFields, space: &SpaceSpec) -> Array2<C64> {
    let d = space.fock_dim;
    let dim = space.dim();
    let mut h = Array2::<C64>::zeros((dim, dim));
    for n in 0..d {
        h[[space.index(0, n), space.index(0, n)]] = c(-0.5 * f.delta);
        h[[space.index(1, n), space.index(1, n)]] = c(0.5 * f.delta);
    }
    for n in 0..d - 1 {
        let r = ((n + 1) as f64).sqrt();
        let ie = space.index(1, n);
        let ig1 = space.index(0, n + 1);
        h[[ie, ig1]] += c(f.lambda * r);
        h[[ig1, ie]] += c(f.lambda * r);
        h[[ig1, ie]] += I * c(f.theta_cd * r);
        h[[ie, ig1]] -= I * c(f.theta_cd * r);
    }
    if f.pulse_x != 0.0 {
        for n in 0..d {
            h[[space.index(0, n), space.index(1, n)]] += c(f.pulse_x);
            h[[space.index(1, n), space.index(0, n)]] += c(f.pulse_x);
        }
    }
    h
}

/// -i H |psi> by index structure; out is overwritten.
fn apply_rhs_pure(f: &SegmentFields, d: usize, psi: &[C64], out: &mut [C64]) {
    let half = c(0.5 * f.delta);
    for n in 0..d {
        out[n] = -I * (-half) * psi[n];
        out[d + n] = -I * half * psi[d + n];
    }
    if f.lambda != 0.0 || f.theta_cd != 0.0 {
        for n in 0..d - 1 {
            let r = ((n + 1) as f64).sqrt();
            let coupling = c(f.lambda * r);
            let cd = I * c(f.theta_cd * r);
            // H[e,n; g,n+1] = lambda r - i theta r ; H[g,n+1; e,n] = lambda r + i theta r
            out[d + n] += -I * (coupling - cd) * psi[n + 1];
            out[n + 1] += -I * (coupling + cd) * psi[d + n];
        }
    }
    if f.pulse_x != 0.0 {
        let a = c(f.pulse_x);
        for n in 0..d {
            out[n] += -I * a * psi[d + n];
            out[d + n] += -I * a * psi[n];
        }
    }
}

/// Spontaneous-emission, dephasing, loss and heating rates (units of omega).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseRates {
    pub gamma_sm: f64,
    pub gamma_sz: f64,
    pub gamma_a: f64,
    pub gamma_ad: f64,
}

impl NoiseRates {
    pub fn is_zero(&self) -> bool {
        self.gamma_sm == 0.0 && self.gamma_sz == 0.0 && self.gamma_a == 0.0 && self.gamma_ad == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_sm", self.gamma_sm),
            ("gamma_sz", self.gamma_sz),
            ("gamma_a", self.gamma_a),
            ("gamma_ad", self.gamma_ad),
        ] {
            if v < 0.0 {
                return Err(JcError::config(format!("noise.{name}"), "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Master-equation right-hand side: -i[H, rho] + dissipators, by index
/// structure. `work` holds H rho.
fn apply_rhs_density(
    f: &SegmentFields,
    rates: &NoiseRates,
    d: usize,
    rho: &Array2<C64>,
    work: &mut Array2<C64>,
    out: &mut Array2<C64>,
) {
    let dim = 2 * d;
    // work = H rho, column by column (H applied as in the pure path but
    // without the -i factor)
    for j in 0..dim {
        let col = rho.column(j);
        let half = c(0.5 * f.delta);
        for n in 0..d {
            work[[n, j]] = -half * col[n];
            work[[d + n, j]] = half * col[d + n];
        }
        if f.lambda != 0.0 || f.theta_cd != 0.0 {
            for n in 0..d - 1 {
                let r = ((n + 1) as f64).sqrt();
                let coupling = c(f.lambda * r);
                let cd = I * c(f.theta_cd * r);
                work[[d + n, j]] += (coupling - cd) * col[n + 1];
                work[[n + 1, j]] += (coupling + cd) * col[d + n];
            }
        }
        if f.pulse_x != 0.0 {
            let a = c(f.pulse_x);
            for n in 0..d {
                work[[n, j]] += a * col[d + n];
                work[[d + n, j]] += a * col[n];
            }
        }
    }
    // out = -i (
    //   H rho - (H rho)^dagger )  [rho Hermitian]
    for i in 0..dim {
        for j in 0..dim {
            out[[i, j]] = -I * (work[[i, j]] - work[[j, i]].conj());
        }
    }
    if rates.is_zero() {
        return;
    }
    let boson = |idx: usize| idx % d;
    let is_e = |idx: usize| idx >= d;
    for i in 0..dim {
        for j in 0..dim {
            let ni = boson(i) as f64;
            let nj = boson(j) as f64;
            let mut acc = C64::new(0.0, 0.0);
            // mode loss: a rho a† - {n, rho}/2
            if rates.gamma_a > 0.0 {
                let mut t = -0.5 * (ni + nj) * rho[[i, j]];
                if boson(i) + 1 < d && boson(j) + 1 < d {
                    t += c(((ni + 1.0) * (nj + 1.0)).sqrt()) * rho[[i + 1, j + 1]];
                }
                acc += c(rates.gamma_a) * t;
            }
            // mode heating: a† rho a - {a a†, rho}/2
            if rates.gamma_ad > 0.0 {
                let mut t = -0.5 * (ni + nj + 2.0) * rho[[i, j]];
                if boson(i) > 0 && boson(j) > 0 {
                    t += c((ni * nj).sqrt()) * rho[[i - 1, j - 1]];
                }
                acc += c(rates.gamma_ad) * t;
            }
            // spontaneous emission: sm rho sp - {|e><e|, rho}/2
            if rates.gamma_sm > 0.0 {
                let mut t = -0.5
                    * ((if is_e(i) { 1.0 } else { 0.0 }) + (if is_e(j) { 1.0 } else { 0.0 }))
                    * rho[[i, j]];
                if !is_e(i) && !is_e(j) {
                    t += rho[[i + d, j + d]];
                }
                acc += c(rates.gamma_sm) * t;
            }
            // dephasing: sz rho sz - rho
            if rates.gamma_sz > 0.0 {
                let zi = if is_e(i) { 1.0 } else { -1.0 };
                let zj = if is_e(j) { 1.0 } else { -1.0 };
                acc += c(rates.gamma_sz) * (zi * zj - 1.0) * rho[[i, j]];
            }
            out[[i, j]] += acc;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    /// RK4 steps per 1/omega of evolution.
    pub steps_per_unit: u32,
    /// Renormalize pure states after each segment.
    pub renormalize: bool,
    /// Record one sample every this many steps (0: segment boundaries only).
    pub sample_stride: u32,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig { steps_per_unit: 2000, renormalize: true, sample_stride: 0 }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_unit < 100 {
            return Err(JcError::config("evolution.steps_per_unit", "must be >= 100"));
        }
        Ok(())
    }

    fn steps_for(&self, duration: f64, omega: f64) -> usize {
        let n = (duration * omega * self.steps_per_unit as f64).ceil() as usize;
        // even count so segment midpoints land on a step boundary
        (n.max(2) + 1) & !1
    }
}

/// Sampled time series of cheap observables.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub mean_n: Vec<f64>,
    pub mandel_q: Vec<f64>,
    pub spin_purity: Vec<f64>,
    pub excitation: Vec<f64>,
    pub norm: Vec<f64>,
}

impl TimeSeries {
    fn push_pure(&mut self, t: f64, d: usize, psi: &[C64]) {
        let mut n1 = 0.0;
        let mut n2 = 0.0;
        let mut norm = 0.0;
        let mut pe = 0.0;
        let mut coh = C64::new(0.0, 0.0);
        for n in 0..d {
            let pg = psi[n].norm_sqr();
            let pex = psi[d + n].norm_sqr();
            let p = pg + pex;
            norm += p;
            n1 += n as f64 * p;
            n2 += (n as f64) * (n as f64) * p;
            pe += pex;
            coh += psi[d + n] * psi[n].conj();
        }
        let pg = norm - pe;
        self.t.push(t);
        self.norm.push(norm);
        self.mean_n.push(n1 / norm);
        self.mandel_q.push(if n1 > 1e-12 {
            (n2 / norm - (n1 / norm) * (n1 / norm)) / (n1 / norm) - 1.0
        } else {
            f64::NAN
        });
        // purity of the reduced spin state
        let (a, b2) = (pe / norm, pg / norm);
        let cm = coh.norm_sqr() / (norm * norm);
        self.spin_purity.push(a * a + b2 * b2 + 2.0 * cm);
        self.excitation.push((pe + n1) / norm);
    }

    fn push_density(&mut self, t: f64, d: usize, rho: &Array2<C64>) {
        let mut n1 = 0.0;
        let mut n2 = 0.0;
        let mut tr = 0.0;
        let mut pe = 0.0;
        for n in 0..d {
            let pg = rho[[n, n]].re;
            let pex = rho[[d + n, d + n]].re;
            tr += pg + pex;
            n1 += n as f64 * (pg + pex);
            n2 += (n as f64) * (n as f64) * (pg + pex);
            pe += pex;
        }
        let mut coh = C64::new(0.0, 0.0);
        for n in 0..d {
            coh += rho[[d + n, n]];
        }
        let pg = tr - pe;
        self.t.push(t);
        self.norm.push(tr);
        self.mean_n.push(n1 / tr);
        self.mandel_q.push(if n1 > 1e-12 {
            (n2 / tr - (n1 / tr) * (n1 / tr)) / (n1 / tr) - 1.0
        } else {
            f64::NAN
        });
        let (a, b2) = (pe / tr, pg / tr);
        let cm = coh.norm_sqr() / (tr * tr);
        self.spin_purity.push(a * a + b2 * b2 + 2.0 * cm);
        self.excitation.push((pe + n1) / tr);
    }
}

/// Outcome of one schedule integration.
pub struct EvolutionResult {
    pub state: SystemState,
    pub series: TimeSeries,
    pub max_norm_drift: f64,
    pub rk4_steps: u64,
}

/// RK4 integration of the Schrödinger equation over the schedule.
pub fn evolve_pure(
    state: &SystemState,
    schedule: &HamiltonianSchedule,
    cfg: &EvolutionConfig,
) -> Result<EvolutionResult> {
    let Representation::Pure(psi0) = &state.repr else {
        return Err(JcError::Dimension("evolve_pure needs a pure state".into()));
    };
    cfg.validate()?;
    let space = state.space;
    let d = space.fock_dim;
    let dim = space.dim();
    let mut psi = psi0.to_vec();
    let mut series = TimeSeries::default();
    series.push_pure(0.0, d, &psi);

    let mut k1 = vec![C64::new(0.0, 0.0); dim];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();

    let mut t0 = 0.0;
    let mut max_drift = 0.0f64;
    let mut rk4_steps = 0u64;
    for seg in &schedule.segments {
        let dur = seg.duration();
        let steps = cfg.steps_for(dur, space.omega);
        let h = dur / steps as f64;
        for i in 0..steps {
            let tl = i as f64 * h;
            let f1 = seg.fields(space.omega, tl)?;
            apply_rhs_pure(&f1, d, &psi, &mut k1);
            for j in 0..dim {
                tmp[j] = psi[j] + k1[j] * c(h / 2.0);
            }
            let f2 = seg.fields(space.omega, tl + h / 2.0)?;
            apply_rhs_pure(&f2, d, &tmp, &mut k2);
            for j in 0..dim {
                tmp[j] = psi[j] + k2[j] * c(h / 2.0);
            }
            apply_rhs_pure(&f2, d, &tmp, &mut k3);
            for j in 0..dim {
                tmp[j] = psi[j] + k3[j] * c(h);
            }
            let f4 = seg.fields(space.omega, (tl + h).min(dur))?;
            apply_rhs_pure(&f4, d, &tmp, &mut k4);
            for j in 0..dim {
                psi[j] += (k1[j] + c(2.0) * (k2[j] + k3[j]) + k4[j]) * c(h / 6.0);
            }
            rk4_steps += 1;
            // the midpoint sample always lands on a step boundary (even step
            // counts) and feeds the per-rung checkpoints
            let at_mid = i + 1 == steps / 2;
            let at_stride = cfg.sample_stride > 0 && (i + 1) % cfg.sample_stride as usize == 0;
            if (at_mid || at_stride) && i + 1 < steps {
                series.push_pure(t0 + (i + 1) as f64 * h, d, &psi);
            }
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let drift = (norm - 1.0).abs();
        max_drift = max_drift.max(drift);
        if drift > 1e-6 {
            return Err(JcError::StepSize { drift, steps_per_unit: cfg.steps_per_unit });
        }
        if cfg.renormalize {
            for z in psi.iter_mut() {
                *z /= c(norm);
            }
        }
        t0 += dur;
        series.push_pure(t0, d, &psi);
    }
    Ok(EvolutionResult {
        state: SystemState::pure(space, Array1::from_vec(psi))?,
        series,
        max_norm_drift: max_drift,
        rk4_steps,
    })
}

/// RK4 integration of the Lindblad master equation over the schedule.
pub fn evolve_lindblad(
    state: &SystemState,
    schedule: &HamiltonianSchedule,
    rates: &NoiseRates,
    cfg: &EvolutionConfig,
) -> Result<EvolutionResult> {
    cfg.validate()?;
    rates.validate()?;
    let space = state.space;
    let d = space.fock_dim;
    let dim = space.dim();
    let mut rho = state.to_density();
    let mut series = TimeSeries::default();
    series.push_density(0.0, d, &rho);

    let mut work = Array2::<C64>::zeros((dim, dim));
    let mut k1 = Array2::<C64>::zeros((dim, dim));
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();

    let mut t0 = 0.0;
    let mut max_drift = 0.0f64;
    let mut rk4_steps = 0u64;
    for seg in &schedule.segments {
        let dur = seg.duration();
        let steps = cfg.steps_for(dur, space.omega);
        let h = dur / steps as f64;
        for i in 0..steps {
            let tl = i as f64 * h;
            let f1 = seg.fields(space.omega, tl)?;
            apply_rhs_density(&f1, rates, d, &rho, &mut work, &mut k1);
            tmp.assign(&rho);
            tmp.scaled_add(c(h / 2.0), &k1);
            let f2 = seg.fields(space.omega, tl + h / 2.0)?;
            apply_rhs_density(&f2, rates, d, &tmp, &mut work, &mut k2);
            tmp.assign(&rho);
            tmp.scaled_add(c(h / 2.0), &k2);
            apply_rhs_density(&f2, rates, d, &tmp, &mut work, &mut k3);
            tmp.assign(&rho);
            tmp.scaled_add(c(h), &k3);
            let f4 = seg.fields(space.omega, (tl + h).min(dur))?;
            apply_rhs_density(&f4, rates, d, &tmp, &mut work, &mut k4);
            for ((r, &a), (&b, (&cc, &dd))) in rho
                .iter_mut()
                .zip(k1.iter())
                .zip(k2.iter().zip(k3.iter().zip(k4.iter())))
            {
                *r += (a + c(2.0) * (b + cc) + dd) * c(h / 6.0);
            }
            // enforce Hermiticity by symmetrization
            for p in 0..dim {
                for q in (p + 1)..dim {
                    let avg = (rho[[p, q]] + rho[[q, p]].conj()) * c(0.5);
                    rho[[p, q]] = avg;
                    rho[[q, p]] = avg.conj();
                }
                rho[[p, p]] = c(rho[[p, p]].re);
            }
            rk4_steps += 1;
            let at_mid = i + 1 == steps / 2;
            let at_stride = cfg.sample_stride > 0 && (i + 1) % cfg.sample_stride as usize == 0;
            if (at_mid || at_stride) && i + 1 < steps {
                series.push_density(t0 + (i + 1) as f64 * h, d, &rho);
            }
        }
        let tr: f64 = rho.diag().iter().map(|z| z.re).sum();
        let drift = (tr - 1.0).abs();
        max_drift = max_drift.max(drift);
        if drift > 1e-6 {
            return Err(JcError::StepSize { drift, steps_per_unit: cfg.steps_per_unit });
        }
        // positivity is monitored, not projected
        let (evals, _) = linalg::eigh(&rho)?;
        let min_eig = evals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-6 {
            return Err(JcError::Positivity(min_eig));
        }
        t0 += dur;
        series.push_density(t0, d, &rho);
    }
    Ok(EvolutionResult {
        state: SystemState::density(space, rho)?,
        series,
        max_norm_drift: max_drift,
        rk4_steps,
    })
}

/// Product of exact matrix exponentials of H frozen on uniform sub-intervals
/// (midpoint values). Densities with noise use the full superoperator
/// exponential. Verification oracle; dense throughout.
pub fn expm_oracle(
    state: &SystemState,
    schedule: &HamiltonianSchedule,
    rates: &NoiseRates,
    n_slices: usize,
) -> Result<SystemState> {
    let space = state.space;
    let total = schedule.total_duration();
    let dt = total / n_slices as f64;
    match (&state.repr, rates.is_zero()) {
        (Representation::Pure(psi0), true) => {
            let mut psi = psi0.clone();
            for k in 0..n_slices {
                let tm = (k as f64 + 0.5) * dt;
                let h = assemble_h(schedule, tm, &space)?;
                let u = linalg::expm_i_hermitian(&h, dt)?;
                psi = u.dot(&psi);
            }
            SystemState::pure(space, psi)
        }
        _ => {
            let dim = space.dim();
            let mut rho_vec = {
                let rho = state.to_density();
                let mut v = Array1::<C64>::zeros(dim * dim);
                for i in 0..dim {
                    for j in 0..dim {
                        v[i * dim + j] = rho[[i, j]];
                    }
                }
                v
            };
            for k in 0..n_slices {
                let tm = (k as f64 + 0.5) * dt;
                let h = assemble_h(schedule, tm, &space)?;
                let l = liouvillian(&h, rates, &space);
                let prop = linalg::expm(&l.mapv(|z| z * c(dt)))?;
                rho_vec = prop.dot(&rho_vec);
            }
            let mut rho = Array2::<C64>::zeros((dim, dim));
            for i in 0..dim {
                for j in 0..dim {
                    rho[[i, j]] = rho_vec[i * dim + j];
                }
            }
            SystemState::density(space, rho)
        }
    }
}

/// Dense Liouvillian acting on row-major vec(rho).
pub fn liouvillian(h: &Array2<C64>, rates: &NoiseRates, space: &SpaceSpec) -> Array2<C64> {
    let dim = space.dim();
    let id = Array2::<C64>::eye(dim);
    // row-major vec: vec(A rho B) = (A kron B^T) vec(rho)
    let mut l = linalg::kron(h, &id.t().to_owned()).mapv(|z| -I * z)
        + linalg::kron(&id, &h.t().to_owned()).mapv(|z| I * z);
    let ops = crate::hilbert::build_operators(space);
    let jumps: [(f64, &Array2<C64>); 4] = [
        (rates.gamma_sm, &ops["Sm"].matrix),
        (rates.gamma_sz, &ops["Sz"].matrix),
        (rates.gamma_a, &ops["A"].matrix),
        (rates.gamma_ad, &ops["Adag"].matrix),
    ];
    for (g, a) in jumps {
        if g == 0.0 {
            continue;
        }
        let adag = a.t().mapv(|z| z.conj());
        let ada = adag.dot(a);
        l = l + linalg::kron(a, &adag.t().to_owned()).mapv(|z| z * c(g));
        l = l - linalg::kron(&ada, &id).mapv(|z| z * c(0.5 * g));
        l = l - linalg::kron(&id, &ada.t().to_owned()).mapv(|z| z * c(0.5 * g));
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::Spin;
    use approx::assert_abs_diff_eq;

    fn space(d: usize) -> SpaceSpec {
        SpaceSpec::new(d, 1.0).unwrap()
    }

    fn fig_base(tau: f64) -> BaseProtocol {
        BaseProtocol {
            omega_q_start: 1.5,
            omega_q_end: 0.5,
            lambda_0: 0.0,
            lambda_m: 0.25,
            tau,
        }
    }

    fn static_base(omega_q: f64, lambda: f64, tau: f64) -> BaseProtocol {
        BaseProtocol {
            omega_q_start: omega_q,
            omega_q_end: omega_q,
            lambda_0: lambda,
            lambda_m: lambda,
            tau,
        }
    }

    #[test]
    fn idle_segment_assembles_detuning_only() {
        let sp = space(4);
        let sched = HamiltonianSchedule::new(vec![Segment::Idle { duration: 2.0, omega_q: 1.3 }])
            .unwrap();
        let h = assemble_h(&sched, 1.0, &sp).unwrap();
        for n in 0..4 {
            assert_abs_diff_eq!(h[[sp.index(1, n), sp.index(1, n)]].re, 0.15, epsilon = 1e-15);
            assert_abs_diff_eq!(h[[sp.index(0, n), sp.index(0, n)]].re, -0.15, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(h[[sp.index(1, 0), sp.index(0, 1)]].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn assembled_h_is_hermitian_at_random_times() {
        let sp = space(6);
        let sta = StaPulse::new(fig_base(8.0), 0.0);
        let sched = HamiltonianSchedule::new(vec![
            Segment::Lcd { sta },
            Segment::Gaussian { pulse: GaussianPulse::pi(5.0, 1.0) },
            Segment::JcPlusCd { sta },
        ])
        .unwrap();
        let total = sched.total_duration();
        for k in 0..100 {
            let t = total * (k as f64 + 0.3) / 100.0;
            let h = assemble_h(&sched, t, &sp).unwrap();
            let herm = h
                .iter()
                .zip(h.t().iter())
                .map(|(a, b)| (a - b.conj()).norm())
                .fold(0.0f64, f64::max);
            assert!(herm < 1e-12);
        }
    }

    #[test]
    fn structured_rhs_matches_dense_assembly() {
        let sp = space(7);
        let f = SegmentFields { delta: 0.37, lambda: 0.21, theta_cd: 0.11, pulse_x: 0.05 };
        let h = dense_from_fields(&f, &sp);
        let dim = sp.dim();
        let psi: Vec<C64> = (0..dim)
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.13).cos()))
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); dim];
        apply_rhs_pure(&f, sp.fock_dim, &psi, &mut out);
        let dense = h.dot(&Array1::from_vec(psi.clone())).mapv(|z| -I * z);
        for i in 0..dim {
            assert!((out[i] - dense[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn density_rhs_matches_dense_liouvillian() {
        let sp = space(4);
        let f = SegmentFields { delta: 0.3, lambda: 0.15, theta_cd: 0.0, pulse_x: 0.07 };
        let rates = NoiseRates { gamma_sm: 0.02, gamma_sz: 0.015, gamma_a: 0.01, gamma_ad: 0.005 };
        let dim = sp.dim();
        // random-ish Hermitian rho
        let mut rho = Array2::<C64>::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                rho[[i, j]] = C64::new(0.1 * ((i * 7 + j) as f64).sin(), 0.05 * ((i + 3 * j) as f64).cos());
            }
        }
        let rho = (rho.clone() + rho.t().mapv(|z| z.conj())).mapv(|z| z * c(0.5));
        let mut work = Array2::<C64>::zeros((dim, dim));
        let mut out = Array2::<C64>::zeros((dim, dim));
        apply_rhs_density(&f, &rates, sp.fock_dim, &rho, &mut work, &mut out);

        let h = dense_from_fields(&f, &sp);
        let l = liouvillian(&h, &rates, &sp);
        let mut rho_vec = Array1::<C64>::zeros(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                rho_vec[i * dim + j] = rho[[i, j]];
            }
        }
        let expect = l.dot(&rho_vec);
        for i in 0..dim {
            for j in 0..dim {
                assert!(
                    (out[[i, j]] - expect[i * dim + j]).norm() < 1e-13,
                    "mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn lindblad_with_zero_rates_reduces_to_commutator() {
        let sp = space(4);
        let f = SegmentFields { delta: 0.3, lambda: 0.15, theta_cd: 0.02, pulse_x: 0.0 };
        let dim = sp.dim();
        let mut rho = Array2::<C64>::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                rho[[i, j]] = C64::new(((i + 2 * j) as f64).cos(), ((2 * i + j) as f64).sin());
            }
        }
        let rho = (rho.clone() + rho.t().mapv(|z| z.conj())).mapv(|z| z * c(0.5));
        let mut work = Array2::<C64>::zeros((dim, dim));
        let mut out = Array2::<C64>::zeros((dim, dim));
        apply_rhs_density(&f, &NoiseRates::default(), sp.fock_dim, &rho, &mut work, &mut out);
        let h = dense_from_fields(&f, &sp);
        let comm = (h.dot(&rho) - rho.dot(&h)).mapv(|z| -I * z);
        for i in 0..dim {
            for j in 0..dim {
                assert!((out[[i, j]] - comm[[i, j]]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_hamiltonian_is_identity_evolution() {
        let sp = space(4);
        let st = SystemState::basis(sp, Spin::E, 1).unwrap();
        let sched =
            HamiltonianSchedule::new(vec![Segment::Idle { duration: 3.0, omega_q: 1.0 }]).unwrap();
        // delta = 0 when omega_q = omega: H = 0 in the rotating frame
        let res = evolve_pure(&st, &sched, &EvolutionConfig::default()).unwrap();
        let Representation::Pure(v) = &res.state.repr else { panic!() };
        assert_abs_diff_eq!(v[sp.index(1, 1)].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn resonant_rabi_full_transfer() {
        // static resonant JC, lambda = 1/4: |e,0> -> |g,1> at t = pi/(2 lambda)
        let sp = space(6);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let t_flip = std::f64::consts::PI / (2.0 * 0.25);
        let sched = HamiltonianSchedule::new(vec![Segment::Jc {
            base: static_base(1.0, 0.25, t_flip),
        }])
        .unwrap();
        let res = evolve_pure(&st, &sched, &EvolutionConfig::default()).unwrap();
        let Representation::Pure(v) = &res.state.repr else { panic!() };
        assert!(1.0 - v[sp.index(0, 1)].norm_sqr() < 1e-8);
    }

    #[test]
    fn lcd_single_rung_transfer_is_exact() {
        // figS5: omega tau = 8 exact LCD pulses give F = 1 up to integrator error
        let sp = space(10);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let sta = StaPulse::new(fig_base(8.0), 0.0);
        let sched = HamiltonianSchedule::new(vec![Segment::Lcd { sta }]).unwrap();
        let res = evolve_pure(&st, &sched, &EvolutionConfig::default()).unwrap();
        let Representation::Pure(v) = &res.state.repr else { panic!() };
        assert!(1.0 - v[sp.index(0, 1)].norm_sqr() < 1e-6);
        assert!(res.max_norm_drift < 1e-8);
    }

    #[test]
    fn lcd_and_jc_plus_cd_agree_on_populations() {
        let sp = space(10);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let sta = StaPulse::new(fig_base(8.0), 0.0);
        let cfg = EvolutionConfig::default();
        let lcd = evolve_pure(
            &st,
            &HamiltonianSchedule::new(vec![Segment::Lcd { sta }]).unwrap(),
            &cfg,
        )
        .unwrap();
        let cd = evolve_pure(
            &st,
            &HamiltonianSchedule::new(vec![Segment::JcPlusCd { sta }]).unwrap(),
            &cfg,
        )
        .unwrap();
        let Representation::Pure(a) = &lcd.state.repr else { panic!() };
        let Representation::Pure(b) = &cd.state.repr else { panic!() };
        let pa = a[sp.index(0, 1)].norm_sqr();
        let pb = b[sp.index(0, 1)].norm_sqr();
        assert!((pa - pb).abs() < 1e-6, "pa={pa} pb={pb}");
    }

    #[test]
    fn excitation_number_is_conserved_during_sta() {
        let sp = space(10);
        let st = SystemState::basis(sp, Spin::E, 2).unwrap();
        let sta = StaPulse::new(fig_base(8.0), 2.0);
        let sched = HamiltonianSchedule::new(vec![Segment::Lcd { sta }]).unwrap();
        let cfg = EvolutionConfig { sample_stride: 100, ..Default::default() };
        let res = evolve_pure(&st, &sched, &cfg).unwrap();
        for ne in &res.series.excitation {
            assert_abs_diff_eq!(*ne, 3.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn spontaneous_emission_decays_exponentially() {
        let sp = space(3);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let rho = SystemState::density(sp, st.to_density()).unwrap();
        let g = 0.08;
        let t = 4.0;
        let sched =
            HamiltonianSchedule::new(vec![Segment::Idle { duration: t, omega_q: 1.0 }]).unwrap();
        let rates = NoiseRates { gamma_sm: g, ..Default::default() };
        let res = evolve_lindblad(&rho, &sched, &rates, &EvolutionConfig::default()).unwrap();
        let rf = res.state.to_density();
        let pe = rf[[sp.index(1, 0), sp.index(1, 0)]].re;
        assert_abs_diff_eq!(pe, (-g * t).exp(), epsilon = 1e-6);
    }

    #[test]
    fn lindblad_matches_pure_evolution_without_noise() {
        let sp = space(6);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let sta = StaPulse::new(fig_base(5.0), 0.0);
        let sched = HamiltonianSchedule::new(vec![Segment::Lcd { sta }]).unwrap();
        let cfg = EvolutionConfig::default();
        let pure = evolve_pure(&st, &sched, &cfg).unwrap();
        let dens = evolve_lindblad(
            &SystemState::density(sp, st.to_density()).unwrap(),
            &sched,
            &NoiseRates::default(),
            &cfg,
        )
        .unwrap();
        let diff = &dens.state.to_density() - &pure.state.to_density();
        // trace distance bounded by half the sum of singular values; use a
        // cheap Frobenius bound here
        assert!(linalg::fro_norm(&diff) < 1e-8);
    }

    #[test]
    fn expm_oracle_exact_for_static_hamiltonian_single_slice() {
        let sp = space(5);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let dur = 7.3;
        let sched = HamiltonianSchedule::new(vec![Segment::Jc {
            base: static_base(1.2, 0.2, dur),
        }])
        .unwrap();
        let one = expm_oracle(&st, &sched, &NoiseRates::default(), 1).unwrap();
        let many = expm_oracle(&st, &sched, &NoiseRates::default(), 64).unwrap();
        let Representation::Pure(a) = &one.repr else { panic!() };
        let Representation::Pure(b) = &many.repr else { panic!() };
        let fid = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| x.conj() * y)
            .sum::<C64>()
            .norm_sqr();
        assert!(1.0 - fid < 1e-12);
    }

    #[test]
    fn rk4_matches_expm_oracle_on_sta_schedule() {
        let sp = space(8);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let sta = StaPulse::new(fig_base(8.0), 0.0);
        let sched = HamiltonianSchedule::new(vec![Segment::Lcd { sta }]).unwrap();
        let rk = evolve_pure(&st, &sched, &EvolutionConfig::default()).unwrap();
        let oracle = expm_oracle(&st, &sched, &NoiseRates::default(), 80_000).unwrap();
        let Representation::Pure(a) = &rk.state.repr else { panic!() };
        let Representation::Pure(b) = &oracle.repr else { panic!() };
        let fid = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| x.conj() * y)
            .sum::<C64>()
            .norm_sqr();
        assert!(1.0 - fid < 1e-8, "fidelity deficit {}", 1.0 - fid);
    }

    #[test]
    fn lindblad_matches_superoperator_exponential() {
        let sp = space(4);
        let st = SystemState::basis(sp, Spin::E, 1).unwrap();
        let rho0 = SystemState::density(sp, st.to_density()).unwrap();
        let sta = StaPulse::new(fig_base(4.0), 0.0);
        let sched = HamiltonianSchedule::new(vec![Segment::Lcd { sta }]).unwrap();
        let rates = NoiseRates { gamma_sm: 0.01, gamma_sz: 0.005, gamma_a: 0.008, gamma_ad: 0.002 };
        let rk = evolve_lindblad(&rho0, &sched, &rates, &EvolutionConfig::default()).unwrap();
        let oracle = expm_oracle(&rho0, &sched, &rates, 40_000).unwrap();
        let diff = &rk.state.to_density() - &oracle.to_density();
        // entrywise bound implies trace-distance bound at this dimension
        assert!(linalg::max_abs(&diff) * sp.dim() as f64 <= 1e-7);
    }

    #[test]
    fn rk4_error_scales_fourth_order() {
        // static segment: the frozen-H exponential is exact, so the only
        // error in play is RK4's own h^4 term
        let sp = space(6);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let sched = HamiltonianSchedule::new(vec![Segment::Jc {
            base: static_base(2.5, 0.5, 6.0),
        }])
        .unwrap();
        let reference = expm_oracle(&st, &sched, &NoiseRates::default(), 1).unwrap();
        let Representation::Pure(rf) = &reference.repr else { panic!() };
        let err = |spu: u32| -> f64 {
            let cfg = EvolutionConfig { steps_per_unit: spu, renormalize: false, sample_stride: 0 };
            let res = evolve_pure(&st, &sched, &cfg).unwrap();
            let Representation::Pure(v) = &res.state.repr else { panic!() };
            v.iter()
                .zip(rf.iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        // one decade of step halvings: 100 -> 200 -> 400 -> 800
        let errs: Vec<f64> = [100, 200, 400, 800].iter().map(|&s| err(s)).collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (10.0..24.0).contains(&ratio),
                "expected ~16x per halving, got {ratio:.1} ({errs:?})"
            );
        }
    }

    #[test]
    fn norm_drift_guard_fires_on_coarse_steps() {
        let sp = space(24);
        // populate the top levels so the stiffest frequencies matter
        let mut v = Array1::<C64>::zeros(sp.dim());
        v[sp.index(1, 22)] = c(1.0);
        let st = SystemState::pure(sp, v).unwrap();
        let sched = HamiltonianSchedule::new(vec![Segment::Jc {
            base: static_base(25.0, 0.2, 50.0),
        }])
        .unwrap();
        let cfg = EvolutionConfig { steps_per_unit: 100, renormalize: true, sample_stride: 0 };
        match evolve_pure(&st, &sched, &cfg) {
            Err(JcError::StepSize { .. }) => {}
            Ok(res) => assert!(res.max_norm_drift <= 1e-6),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
