//! Drive schedules and their shortcut-to-adiabaticity transforms.
//!
//! The base protocol sweeps the qubit frequency through a quintic polynomial
//! while the coupling follows a cos^4 window. The counterdiabatic coefficient
//! theta(t) and the locally-counterdiabatic fields (omega_q~, lambda~) are
//! evaluated in closed form; finite differences appear only in tests.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{JcError, Result};
use crate::hilbert::SpaceSpec;
use crate::linalg::{self, c, least_squares, I};

/// Denominators below this are treated as the removable 0/0 at segment
/// endpoints (lambda_0 = 0 schedules).
const SINGULAR_EPS: f64 = 1e-12;

/// Driven schedule: quintic omega_q(t), cos^4 lambda(t), duration tau.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseProtocol {
    pub omega_q_start: f64,
    pub omega_q_end: f64,
    pub lambda_0: f64,
    pub lambda_m: f64,
    pub tau: f64,
}

/// Values and first two analytic derivatives of the base fields at time t.
#[derive(Clone, Copy, Debug)]
pub struct BaseFields {
    pub omega_q: f64,
    pub omega_q_dot: f64,
    pub omega_q_ddot: f64,
    pub lambda: f64,
    pub lambda_dot: f64,
    pub lambda_ddot: f64,
}

impl BaseProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(JcError::config("base_protocol.tau", "must be > 0"));
        }
        Ok(())
    }

    pub fn delta_omega_q(&self) -> f64 {
        self.omega_q_end - self.omega_q_start
    }

    /// Analytic fields at t in [0, tau].
    pub fn eval(&self, t: f64) -> Result<BaseFields> {
        if !(0.0..=self.tau * (1.0 + 1e-12)).contains(&t) {
            return Err(JcError::TimeOutOfRange { t, span: self.tau });
        }
        let s = (t / self.tau).clamp(0.0, 1.0);
        let dw = self.delta_omega_q();
        let omega_q = self.omega_q_start + dw * (10.0 - (15.0 - 6.0 * s) * s) * s * s * s;
        let omega_q_dot = dw * 30.0 * s * s * (1.0 - s) * (1.0 - s) / self.tau;
        let omega_q_ddot = dw * 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (self.tau * self.tau);

        // cos^4[pi(1+2s)/2] = sin^4(pi s)
        let (sn, cs) = (std::f64::consts::PI * s).sin_cos();
        let dl = self.lambda_m - self.lambda_0;
        let k = std::f64::consts::PI / self.tau;
        let lambda = dl * sn.powi(4) + self.lambda_0;
        let lambda_dot = dl * 4.0 * sn.powi(3) * cs * k;
        let lambda_ddot = dl * 4.0 * k * k * sn * sn * (3.0 * cs * cs - sn * sn);
        Ok(BaseFields {
            omega_q,
            omega_q_dot,
            omega_q_ddot,
            lambda,
            lambda_dot,
            lambda_ddot,
        })
    }
}

/// STA drive for one JC subspace.
///
/// `n_eff` is the effective subspace parameter entering Omega(t) =
/// 2 lambda(t) sqrt(n_eff + 1). Ladder transfers use the integer subspace
/// index; cat-state compromise waveforms tune it fractionally between the
/// two addressed subspaces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaPulse {
    pub base: BaseProtocol,
    pub n_eff: f64,
}

impl StaPulse {
    pub fn new(base: BaseProtocol, n_eff: f64) -> Self {
        StaPulse { base, n_eff }
    }

    /// Counterdiabatic coefficient theta(t) and its analytic derivative.
    pub fn theta(&self, omega: f64, t: f64) -> Result<(f64, f64)> {
        let f = self.base.eval(t)?;
        let nn = self.n_eff + 1.0;
        let delta = f.omega_q - omega;
        let omega_sq = 4.0 * nn * f.lambda * f.lambda;
        let den = omega_sq + delta * delta;
        if den < SINGULAR_EPS {
            return Err(JcError::SingularSchedule(format!(
                "delta and Omega_n both vanish at t = {t}"
            )));
        }
        let num = delta * f.lambda_dot - f.lambda * f.omega_q_dot;
        let theta = num / den;
        // delta' = omega_q_dot, so the delta'*lambda_dot terms cancel in num'
        let num_dot = delta * f.lambda_ddot - f.lambda * f.omega_q_ddot;
        let den_dot = 2.0 * delta * f.omega_q_dot + 8.0 * nn * f.lambda * f.lambda_dot;
        let theta_dot = num_dot / den - num * den_dot / (den * den);
        Ok((theta, theta_dot))
    }

    /// Locally-counterdiabatic fields (omega_q~, lambda~).
    ///
    /// lambda~ = sqrt(lambda^2 + theta^2); the frequency correction is the
    /// derivative of the gauge angle f = (1/2) arctan(theta/lambda):
    /// omega_q~ = omega_q − (lambda theta' − theta lambda')/(theta² + lambda²).
    /// The 0/0 at endpoints of lambda_0 = 0 schedules resolves to the base
    /// fields, which keeps H_LCD(0) = H_JC(0).
    pub fn lcd_fields(&self, omega: f64, t: f64) -> Result<(f64, f64)> {
        let f = self.base.eval(t)?;
        let (theta, theta_dot) = self.theta(omega, t)?;
        let den = theta * theta + f.lambda * f.lambda;
        let num = f.lambda * theta_dot - theta * f.lambda_dot;
        if den < SINGULAR_EPS {
            if num.abs() < SINGULAR_EPS {
                return Ok((f.omega_q, f.lambda));
            }
            return Err(JcError::SingularSchedule(format!(
                "lambda and theta both vanish at interior t = {t}"
            )));
        }
        let lambda_t = den.sqrt();
        Ok((f.omega_q - num / den, lambda_t))
    }
}

/// Counterdiabatic term i theta(t) (a† sigma⁻ − a sigma⁺) on the full space.
pub fn cd_term(sta: &StaPulse, t: f64, space: &SpaceSpec) -> Result<crate::hilbert::OperatorMatrix> {
    let (theta, _) = sta.theta(space.omega, t)?;
    let d = space.fock_dim;
    let mut m = Array2::<C64>::zeros((space.dim(), space.dim()));
    for n in 0..d - 1 {
        let r = ((n + 1) as f64).sqrt();
        // i theta (a† sm): |g,n+1><e,n| ; minus h.c.
        m[[space.index(0, n + 1), space.index(1, n)]] = I * c(theta * r);
        m[[space.index(1, n), space.index(0, n + 1)]] = -I * c(theta * r);
    }
    Ok(crate::hilbert::OperatorMatrix::new("H_cd", m))
}

/// Numerical counterdiabatic operator from finite-difference eigenvector
/// derivatives, block by block in the excitation ladder, with the gauge fixed
/// by positive overlap against the eigenvectors at the central time.
///
/// `h_of_t` must produce an excitation-block-structured Hermitian matrix
/// (JC form); off-block entries above 1e-10 are rejected.
pub fn berry_cd_numeric<F>(h_of_t: F, t: f64, dt: f64, space: &SpaceSpec) -> Result<Array2<C64>>
where
    F: Fn(f64) -> Array2<C64>,
{
    let d = space.fock_dim;
    let dim = space.dim();
    let h0 = h_of_t(t);
    let hp = h_of_t(t + dt);
    let hm = h_of_t(t - dt);
    for h in [&h0, &hp, &hm] {
        check_block_structure(h, space)?;
    }

    let mut out = Array2::<C64>::zeros((dim, dim));
    // blocks span {|e,n>, |g,n+1>}; |g,0> is a fixed 1x1 block with zero derivative
    for n in 0..d - 1 {
        let ie = space.index(1, n);
        let ig = space.index(0, n + 1);
        let b0 = block2(&h0, ie, ig);
        let bp = block2(&hp, ie, ig);
        let bm = block2(&hm, ie, ig);
        let (v0, gap) = eig2(&b0);
        if gap < 1e-10 {
            return Err(JcError::Degeneracy(gap));
        }
        let (vp, _) = eig2(&bp);
        let (vm, _) = eig2(&bm);
        for k in 0..2 {
            let v = [v0[(0, k)], v0[(1, k)]];
            let mut up = [vp[(0, k)], vp[(1, k)]];
            let mut um = [vm[(0, k)], vm[(1, k)]];
            align_phase(&v, &mut up);
            align_phase(&v, &mut um);
            let dv = [
                (up[0] - um[0]) / c(2.0 * dt),
                (up[1] - um[1]) / c(2.0 * dt),
            ];
            // i (|dv><v| - <v|dv> |v><v|)
            let vdv = v[0].conj() * dv[0] + v[1].conj() * dv[1];
            let idx = [ie, ig];
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    out[[ia, ib]] += I * (dv[a] - vdv * v[a]) * v[b].conj();
                }
            }
        }
    }
    Ok(out)
}

fn check_block_structure(h: &Array2<C64>, space: &SpaceSpec) -> Result<()> {
    let d = space.fock_dim;
    let dim = space.dim();
    let mut block_of = vec![usize::MAX; dim];
    block_of[space.index(0, 0)] = 0;
    for n in 0..d - 1 {
        block_of[space.index(1, n)] = n + 1;
        block_of[space.index(0, n + 1)] = n + 1;
    }
    block_of[space.index(1, d - 1)] = d; // top |e,d-1> has no partner
    for i in 0..dim {
        for j in 0..dim {
            if block_of[i] != block_of[j] && h[[i, j]].norm() > 1e-10 {
                return Err(JcError::Dimension(format!(
                    "Hamiltonian is not excitation-block-structured at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

fn block2(h: &Array2<C64>, i: usize, j: usize) -> [[C64; 2]; 2] {
    [[h[[i, i]], h[[i, j]]], [h[[j, i]], h[[j, j]]]]
}

/// Eigenvectors (columns) of a 2x2 Hermitian block and the eigenvalue gap.
fn eig2(b: &[[C64; 2]; 2]) -> (Block2Vecs, f64) {
    let a = b[0][0].re;
    let d = b[1][1].re;
    let off = b[0][1];
    let tr = a + d;
    let det_disc = ((a - d) * (a - d) / 4.0 + off.norm_sqr()).sqrt();
    let e1 = tr / 2.0 - det_disc;
    let e2 = tr / 2.0 + det_disc;
    let mk = |e: f64| -> [C64; 2] {
        // (H - e) v = 0
        let r1 = [c(a - e), off];
        let r2 = [off.conj(), c(d - e)];
        let (u, v) = if r1[0].norm() + r1[1].norm() > r2[0].norm() + r2[1].norm() {
            (r1[1], -r1[0])
        } else {
            (r2[1], -r2[0])
        };
        let norm = (u.norm_sqr() + v.norm_sqr()).sqrt();
        if norm < 1e-300 {
            [c(1.0), c(0.0)]
        } else {
            [u / c(norm), v / c(norm)]
        }
    };
    let v1 = mk(e1);
    let v2 = mk(e2);
    (Block2Vecs { cols: [v1, v2] }, e2 - e1)
}

struct Block2Vecs {
    cols: [[C64; 2]; 2],
}

impl std::ops::Index<(usize, usize)> for Block2Vecs {
    type Output = C64;
    fn index(&self, (row, col): (usize, usize)) -> &C64 {
        &self.cols[col][row]
    }
}

fn align_phase(reference: &[C64; 2], v: &mut [C64; 2]) {
    let ov = reference[0].conj() * v[0] + reference[1].conj() * v[1];
    if ov.norm() > 1e-14 {
        let ph = ov / c(ov.norm());
        v[0] /= ph;
        v[1] /= ph;
    }
}

/// Generic two-level LCD of H = (Delta/2) sigma_x + (lambda/2) sigma_z.
///
/// Inputs are instantaneous values and derivatives; returns the modified
/// (x_field, z_field) full coefficients (not halved). The arctan branch is
/// fixed by atan2 so the x field is the continuous root sqrt(Delta²+theta_a²)
/// carrying the sign of Delta at theta_a = 0.
#[allow(clippy::too_many_arguments)]
pub fn two_level_lcd(
    delta: f64,
    delta_dot: f64,
    delta_ddot: f64,
    lambda: f64,
    lambda_dot: f64,
    lambda_ddot: f64,
) -> Result<(f64, f64)> {
    let den = lambda * lambda + delta * delta;
    if den < SINGULAR_EPS {
        return Err(JcError::SingularSchedule(
            "two-level fields both vanish".into(),
        ));
    }
    let num = lambda * delta_dot - delta * lambda_dot;
    let theta_a = num / den;
    let num_dot = lambda * delta_ddot - delta * lambda_ddot;
    let den_dot = 2.0 * (lambda * lambda_dot + delta * delta_dot);
    let theta_a_dot = num_dot / den - num * den_dot / (den * den);

    let dena = theta_a * theta_a + delta * delta;
    if dena < SINGULAR_EPS {
        return Err(JcError::SingularSchedule(
            "Delta and theta_a both vanish".into(),
        ));
    }
    // cos 2f = Delta/R, sin 2f = theta_a/R with f = atan2(theta_a, Delta)/2,
    // so the dressed x field is Delta cos2f + theta_a sin2f = +R regardless
    // of the sign of Delta
    let x_field = dena.sqrt();
    let z_field = lambda - (delta * theta_a_dot - theta_a * delta_dot) / dena;
    Ok((x_field, z_field))
}

/// Gaussian spin pulse of a declared rotation angle.
///
/// The amplitude carries a 1/sigma factor so the integrated angle stays at
/// the declared value for every width; at sigma = 1/omega it reduces to the
/// plain (1/2) sqrt(pi/2) envelope. The window is [0, 2 t_pi].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPulse {
    /// Rotation angle in radians (pi or pi/2 in the protocols).
    pub angle: f64,
    pub t_pi: f64,
    pub sigma_pi: f64,
}

impl GaussianPulse {
    pub fn pi(t_pi: f64, sigma_pi: f64) -> Self {
        GaussianPulse { angle: std::f64::consts::PI, t_pi, sigma_pi }
    }

    pub fn half_pi(t_pi: f64, sigma_pi: f64) -> Self {
        GaussianPulse { angle: std::f64::consts::PI / 2.0, t_pi, sigma_pi }
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.t_pi
    }

    /// Truncating the window costs more than ~1e-4 of angle below this ratio.
    pub fn window_is_tight(&self) -> bool {
        self.t_pi / self.sigma_pi < 4.0
    }

    /// Scalar amplitude multiplying sigma_x at local time t in [0, 2 t_pi].
    pub fn field(&self, t: f64) -> f64 {
        let x = (t - self.t_pi) / self.sigma_pi;
        let peak = self.angle / (2.0 * self.sigma_pi * (2.0 * std::f64::consts::PI).sqrt());
        peak * (-0.5 * x * x).exp()
    }
}

/// Truncated Fourier approximation of a pulse shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourierPulse {
    pub n_modes: usize,
    pub omega_f: f64,
    /// c_0, then (c_k, s_k) per mode.
    pub cos_coef: Vec<f64>,
    pub sin_coef: Vec<f64>,
    /// Which field this approximates ("omega_q" or "lambda").
    pub source: String,
    /// Whether the series approximates the full pulse or the LCD correction
    /// on top of the base protocol.
    pub correction_only: bool,
    pub residual: f64,
}

/// Least-squares Fourier fit of samples (t, x(t)).
pub fn fourier_fit(
    samples: &[(f64, f64)],
    n_modes: usize,
    omega_f: f64,
    source: &str,
    correction_only: bool,
) -> Result<FourierPulse> {
    if samples.len() < 4 * (n_modes + 1) {
        return Err(JcError::config(
            "fourier.samples",
            format!(
                "need at least {} samples for N_F = {n_modes}, got {}",
                4 * (n_modes + 1),
                samples.len()
            ),
        ));
    }
    let rows = samples.len();
    let cols = 2 * n_modes + 1;
    let mut a = Array2::<f64>::zeros((rows, cols));
    let mut b = Array1::<f64>::zeros(rows);
    for (i, &(t, y)) in samples.iter().enumerate() {
        a[[i, 0]] = 1.0;
        for k in 1..=n_modes {
            let (sn, cs) = (k as f64 * omega_f * t).sin_cos();
            a[[i, 2 * k - 1]] = cs;
            a[[i, 2 * k]] = sn;
        }
        b[i] = y;
    }
    let (x, residual, _cond) = least_squares(&a, &b)?;
    let mut cos_coef = vec![x[0]];
    let mut sin_coef = vec![0.0];
    for k in 1..=n_modes {
        cos_coef.push(x[2 * k - 1]);
        sin_coef.push(x[2 * k]);
    }
    Ok(FourierPulse {
        n_modes,
        omega_f,
        cos_coef,
        sin_coef,
        source: source.into(),
        correction_only,
        residual,
    })
}

pub fn fourier_eval(fp: &FourierPulse, t: f64) -> f64 {
    let mut y = fp.cos_coef[0];
    for k in 1..=fp.n_modes {
        let (sn, cs) = (k as f64 * fp.omega_f * t).sin_cos();
        y += fp.cos_coef[k] * cs + fp.sin_coef[k] * sn;
    }
    y
}

/// Fit both LCD fields of `sta` with N_F modes on `n_samples` uniform points.
pub fn fit_lcd_pair(
    sta: &StaPulse,
    omega: f64,
    n_modes: usize,
    omega_f: Option<f64>,
    correction_only: bool,
    n_samples: usize,
) -> Result<(FourierPulse, FourierPulse)> {
    let tau = sta.base.tau;
    let omega_f = omega_f.unwrap_or(std::f64::consts::PI / tau);
    let mut ws = Vec::with_capacity(n_samples);
    let mut ls = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = tau * i as f64 / (n_samples - 1) as f64;
        let (wq_t, l_t) = sta.lcd_fields(omega, t)?;
        if correction_only {
            let f = sta.base.eval(t)?;
            ws.push((t, wq_t - f.omega_q));
            ls.push((t, l_t - f.lambda));
        } else {
            ws.push((t, wq_t));
            ls.push((t, l_t));
        }
    }
    let wf = fourier_fit(&ws, n_modes, omega_f, "omega_q", correction_only)?;
    let lf = fourier_fit(&ls, n_modes, omega_f, "lambda", correction_only)?;
    Ok((wf, lf))
}

/// One row of the pulse-export table.
#[derive(Clone, Copy, Debug)]
pub struct PulseSample {
    pub t: f64,
    pub omega_q: f64,
    pub lambda: f64,
    pub theta: f64,
    pub omega_q_tilde: f64,
    pub lambda_tilde: f64,
}

/// Sample t, omega_q, lambda, theta, omega_q~, lambda~ on a uniform grid.
pub fn pulse_table(sta: &StaPulse, omega: f64, n_samples: usize) -> Result<Vec<PulseSample>> {
    let tau = sta.base.tau;
    let mut rows = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = tau * i as f64 / (n_samples - 1) as f64;
        let f = sta.base.eval(t)?;
        let (theta, _) = sta.theta(omega, t)?;
        let (wq_t, l_t) = sta.lcd_fields(omega, t)?;
        rows.push(PulseSample {
            t,
            omega_q: f.omega_q,
            lambda: f.lambda,
            theta,
            omega_q_tilde: wq_t,
            lambda_tilde: l_t,
        });
    }
    Ok(rows)
}
