//! Scalar and phase-space diagnostics: fidelity, purity, Mandel Q, the
//! Wigner function on a rectangular grid and its negativity, and
//! photon-added reference states.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{JcError, Result};
use crate::hilbert::{reduce_boson, DisplacementGenerator, Representation, SystemState};
use crate::linalg::{c, eigh};

/// ⟨target|rho|target⟩ (or |⟨target|psi⟩|² for pure states).
pub fn fidelity(state: &SystemState, target: &SystemState) -> Result<f64> {
    let Representation::Pure(t) = &target.repr else {
        return Err(JcError::Dimension("fidelity target must be pure".into()));
    };
    match &state.repr {
        Representation::Pure(v) => {
            if v.len() != t.len() {
                return Err(JcError::Dimension(format!(
                    "state dim {} != target dim {}",
                    v.len(),
                    t.len()
                )));
            }
            Ok(t.iter()
                .zip(v.iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
                .norm_sqr())
        }
        Representation::Density(r) => {
            if r.nrows() != t.len() {
                return Err(JcError::Dimension(format!(
                    "state dim {} != target dim {}",
                    r.nrows(),
                    t.len()
                )));
            }
            let rv = r.dot(t);
            Ok(t.iter().zip(rv.iter()).map(|(a, b)| (a.conj() * b).re).sum())
        }
    }
}

/// Tr[rho²] of a density matrix.
pub fn purity(rho: &Array2<C64>) -> f64 {
    rho.dot(rho).diag().iter().map(|z| z.re).sum()
}

/// Mandel parameter (⟨n²⟩−⟨n⟩²)/⟨n⟩ − 1 of the boson mode.
pub fn mandel_q(state: &SystemState) -> Result<f64> {
    let rho_b = reduce_boson(state);
    let d = rho_b.nrows();
    let mut n1 = 0.0;
    let mut n2 = 0.0;
    for n in 0..d {
        let p = rho_b[[n, n]].re;
        n1 += n as f64 * p;
        n2 += (n * n) as f64 * p;
    }
    if n1 <= 1e-12 {
        return Err(JcError::UndefinedValue(
            "Mandel Q undefined for (near-)vacuum states".into(),
        ));
    }
    Ok((n2 - n1 * n1) / n1 - 1.0)
}

/// Sampled Wigner function over a square cell-centered grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WignerGrid {
    /// Symmetric extent of the real axis (grid spans [-re_range, re_range]).
    pub re_range: f64,
    pub im_range: f64,
    /// Cells per axis.
    pub resolution: usize,
    /// values[(i, j)] = W(x_i + i y_j), cell-centered samples.
    #[serde(skip)]
    pub values: Array2<f64>,
    /// Largest |W| on the grid boundary; above 1e-6 the grid does not cover
    /// the state's support and negativity is unreliable.
    pub edge_max: f64,
    /// Fock dimension the displaced-parity evaluation ran in.
    pub eval_dim: usize,
}

impl WignerGrid {
    pub fn x(&self, i: usize) -> f64 {
        let h = 2.0 * self.re_range / self.resolution as f64;
        -self.re_range + h * (i as f64 + 0.5)
    }

    pub fn y(&self, j: usize) -> f64 {
        let h = 2.0 * self.im_range / self.resolution as f64;
        -self.im_range + h * (j as f64 + 0.5)
    }

    pub fn cell_area(&self) -> f64 {
        let hx = 2.0 * self.re_range / self.resolution as f64;
        let hy = 2.0 * self.im_range / self.resolution as f64;
        hx * hy
    }

    /// Grid integral (1/pi) ∫ W d²β, equal to Tr[rho] when the grid covers
    /// the support (vacuum-origin value 2 convention).
    pub fn norm_integral(&self) -> f64 {
        self.values.sum() * self.cell_area() / std::f64::consts::PI
    }

    pub fn supports_state(&self) -> bool {
        self.edge_max < 1e-6
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WignerSpec {
    pub extent: f64,
    pub resolution: usize,
}

impl Default for WignerSpec {
    fn default() -> Self {
        WignerSpec { extent: 5.0, resolution: 201 }
    }
}

/// Pick an evaluation dimension large enough that displaced states at the
/// grid corners stay inside the truncated space.
fn evaluation_dim(d_state: usize, n_support: usize, spec: &WignerSpec) -> usize {
    let r_max = (2.0f64).sqrt() * spec.extent;
    let want = (r_max + (n_support as f64).sqrt() + 2.0).powi(2).ceil() as usize;
    want.clamp(d_state, 192)
}

/// Displaced-parity Wigner function W(β) = 2 Tr[rho D(β) (−1)^n D†(β)] of the
/// boson mode (spin traced out first if needed).
pub fn wigner(state: &SystemState, spec: &WignerSpec) -> Result<WignerGrid> {
    let rho_b = reduce_boson(state);
    wigner_of_boson(&rho_b.view(), spec)
}

pub fn wigner_of_boson(rho_b: &ArrayView2<C64>, spec: &WignerSpec) -> Result<WignerGrid> {
    if spec.resolution < 2 {
        return Err(JcError::config("wigner.resolution", "must be >= 2"));
    }
    let d = rho_b.nrows();
    // spectral decomposition; small weights contribute O(weight) to W
    let (vals, vecs) = eigh(&rho_b.to_owned())?;
    let trace: f64 = vals.iter().sum();
    let cutoff = 1e-10 * trace.max(1.0);
    let mut n_support = 1usize;
    for n in 0..d {
        if rho_b[[n, n]].re > 1e-9 {
            n_support = n + 1;
        }
    }
    let d_eval = evaluation_dim(d, n_support, spec);
    let generator = DisplacementGenerator::new(d_eval)?;
    let comps: Vec<(f64, Array1<C64>)> = vals
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l > cutoff)
        .map(|(k, &l)| {
            let mut v = Array1::<C64>::zeros(d_eval);
            v.slice_mut(s![..d]).assign(&vecs.column(k));
            (l, v)
        })
        .collect();

    let res = spec.resolution;
    let rows: Vec<Vec<f64>> = (0..res)
        .into_par_iter()
        .map(|i| {
            let hx = 2.0 * spec.extent / res as f64;
            let x = -spec.extent + hx * (i as f64 + 0.5);
            (0..res)
                .map(|j| {
                    let y = -spec.extent + hx * (j as f64 + 0.5);
                    let beta = C64::new(x, y);
                    let mut w = 0.0;
                    for (l, v) in &comps {
                        let disp = generator.displace_neg(beta, &v.view());
                        let mut parity = 0.0;
                        for (n, z) in disp.iter().enumerate() {
                            let p = z.norm_sqr();
                            parity += if n % 2 == 0 { p } else { -p };
                        }
                        w += l * 2.0 * parity;
                    }
                    w
                })
                .collect()
        })
        .collect();

    let mut values = Array2::<f64>::zeros((res, res));
    let mut edge_max = 0.0f64;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, w) in row.into_iter().enumerate() {
            if i == 0 || j == 0 || i == res - 1 || j == res - 1 {
                edge_max = edge_max.max(w.abs());
            }
            values[[i, j]] = w;
        }
    }
    Ok(WignerGrid {
        re_range: spec.extent,
        im_range: spec.extent,
        resolution: res,
        values,
        edge_max,
        eval_dim: d_eval,
    })
}

/// Wigner negativity (1/2pi) ∫ (|W| − W) d²β by the midpoint rule.
pub fn negativity(grid: &WignerGrid) -> f64 {
    let neg: f64 = grid.values.iter().filter(|&&w| w < 0.0).map(|&w| -w).sum();
    neg * grid.cell_area() / std::f64::consts::PI
}

/// Normalized a†^k |psi⟩ (densities: a†^k rho a^k, renormalized), boson only.
pub fn photon_added_reference(rho_b: &Array2<C64>, k: usize) -> Result<Array2<C64>> {
    let d = rho_b.nrows();
    let mut out = rho_b.clone();
    for _ in 0..k {
        let mut next = Array2::<C64>::zeros((d, d));
        for i in 1..d {
            for j in 1..d {
                next[[i, j]] =
                    out[[i - 1, j - 1]] * c(((i as f64) * (j as f64)).sqrt());
            }
        }
        out = next;
    }
    let tr: f64 = out.diag().iter().map(|z| z.re).sum();
    if tr < 1e-14 {
        return Err(JcError::AmplitudeUnderflow(
            "photon-added state has zero norm".into(),
        ));
    }
    Ok(out.mapv(|z| z / c(tr)))
}

/// Fock-state fidelity ⟨n|rho_b|n⟩.
pub fn fock_fidelity(state: &SystemState, n: usize) -> f64 {
    let rho_b = reduce_boson(state);
    rho_b[[n, n]].re
}

/// Extracted-phase cat fidelity and the phase itself:
/// F = (rho_ll + rho_hh)/2 + |rho_hl|, phi = arg rho_hl.
pub fn cat_fidelity_extracted(state: &SystemState, n_low: usize, n_high: usize) -> Result<(f64, f64)> {
    let rho_b = reduce_boson(state);
    let p_l = rho_b[[n_low, n_low]].re;
    let p_h = rho_b[[n_high, n_high]].re;
    if p_l.max(0.0).sqrt() < 1e-6 || p_h.max(0.0).sqrt() < 1e-6 {
        return Err(JcError::AmplitudeUnderflow(format!(
            "cat components too small: p({n_low}) = {p_l:.3e}, p({n_high}) = {p_h:.3e}"
        )));
    }
    let coh = rho_b[[n_high, n_low]];
    let f = 0.5 * (p_l + p_h) + coh.norm();
    let phi = coh.arg().rem_euclid(2.0 * std::f64::consts::PI);
    Ok((f, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{coherent_state, thermal_state, SpaceSpec, Spin};
    use approx::assert_abs_diff_eq;

    fn space(d: usize) -> SpaceSpec {
        SpaceSpec::new(d, 1.0).unwrap()
    }

    #[test]
    fn fidelity_basics() {
        let sp = space(6);
        let a = SystemState::basis(sp, Spin::E, 2).unwrap();
        let b = SystemState::basis(sp, Spin::E, 3).unwrap();
        assert_abs_diff_eq!(fidelity(&a, &a).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fidelity(&a, &b).unwrap(), 0.0, epsilon = 1e-14);
        // maximally mixed 2-level against any pure spin state
        let mixed = {
            let mut r = Array2::<C64>::zeros((sp.dim(), sp.dim()));
            r[[sp.index(0, 0), sp.index(0, 0)]] = c(0.5);
            r[[sp.index(1, 0), sp.index(1, 0)]] = c(0.5);
            SystemState::density(sp, r).unwrap()
        };
        let up = SystemState::basis(sp, Spin::E, 0).unwrap();
        assert_abs_diff_eq!(fidelity(&mixed, &up).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn fidelity_dimension_mismatch() {
        let a = SystemState::basis(space(4), Spin::E, 0).unwrap();
        let b = SystemState::basis(space(5), Spin::E, 0).unwrap();
        assert!(fidelity(&a, &b).is_err());
    }

    #[test]
    fn purity_values() {
        let sp = space(4);
        let pure = SystemState::basis(sp, Spin::G, 1).unwrap().to_density();
        assert_abs_diff_eq!(purity(&pure), 1.0, epsilon = 1e-14);
        let mut half = Array2::<C64>::zeros((2, 2));
        half[[0, 0]] = c(0.5);
        half[[1, 1]] = c(0.5);
        assert_abs_diff_eq!(purity(&half), 0.5, epsilon = 1e-15);
        // thermal closed form
        let beta = 3.0;
        let th = thermal_state(beta, &space(25)).unwrap();
        let q = (-beta).exp();
        let closed = (1.0 - q) * (1.0 - q) / (1.0 - q * q);
        assert_abs_diff_eq!(purity(&reduce_boson(&th)), closed, epsilon = 1e-8);
    }

    #[test]
    fn mandel_q_reference_states() {
        let sp = space(20);
        let fock5 = SystemState::basis(sp, Spin::E, 5).unwrap();
        assert_abs_diff_eq!(mandel_q(&fock5).unwrap(), -1.0, epsilon = 1e-10);
        for n in 1..8 {
            let f = SystemState::basis(sp, Spin::G, n).unwrap();
            assert_abs_diff_eq!(mandel_q(&f).unwrap(), -1.0, epsilon = 1e-10);
        }
        let coh = coherent_state(c(0.8), &sp).unwrap();
        assert_abs_diff_eq!(mandel_q(&coh).unwrap(), 0.0, epsilon = 1e-8);
        let nth = 1.0 / (2.0f64.exp() - 1.0);
        let th = thermal_state(2.0, &space(30)).unwrap();
        assert_abs_diff_eq!(mandel_q(&th).unwrap(), nth, epsilon = 1e-6);
        // vacuum is undefined
        let vac = SystemState::basis(sp, Spin::E, 0).unwrap();
        assert!(mandel_q(&vac).is_err());
    }

    #[test]
    fn wigner_at_origin() {
        let sp = space(12);
        let spec = WignerSpec { extent: 3.0, resolution: 61 };
        // resolution odd, but cell-centered grid has no point exactly at the
        // origin; evaluate directly through the machinery instead
        let vac = SystemState::basis(sp, Spin::E, 0).unwrap();
        let g = wigner(&vac, &spec).unwrap();
        // near-origin cell should be close to 2 e^{-2 r^2}
        let mid = spec.resolution / 2;
        let r2 = g.x(mid) * g.x(mid) + g.y(mid) * g.y(mid);
        assert_abs_diff_eq!(g.values[[mid, mid]], 2.0 * (-2.0 * r2).exp(), epsilon = 1e-6);

        let one = SystemState::basis(sp, Spin::E, 1).unwrap();
        let g1 = wigner(&one, &spec).unwrap();
        // W_|1>(r) = -2 (1 - 4 r^2) e^{-2 r^2}
        let expect = -2.0 * (1.0 - 4.0 * r2) * (-2.0 * r2).exp();
        assert_abs_diff_eq!(g1.values[[mid, mid]], expect, epsilon = 1e-6);
    }

    #[test]
    fn wigner_of_coherent_state_is_shifted_gaussian() {
        let sp = space(40);
        let alpha = c(0.9);
        let st = coherent_state(alpha, &sp).unwrap();
        let spec = WignerSpec { extent: 4.0, resolution: 81 };
        let g = wigner(&st, &spec).unwrap();
        for (i, j) in [(40, 40), (52, 40), (40, 52), (30, 30), (60, 45)] {
            let beta = C64::new(g.x(i), g.y(j));
            let expect = 2.0 * (-2.0 * (beta - alpha).norm_sqr()).exp();
            assert_abs_diff_eq!(g.values[[i, j]], expect, epsilon = 1e-4);
        }
    }

    #[test]
    fn wigner_norm_integral_is_trace() {
        let sp = space(12);
        let st = coherent_state(c(0.5), &sp).unwrap();
        let g = wigner(&st, &WignerSpec { extent: 5.0, resolution: 101 }).unwrap();
        assert!((g.norm_integral() - 1.0).abs() < 0.01);
        assert!(g.supports_state());
    }

    #[test]
    fn negativity_of_gaussian_states_vanishes() {
        let sp = space(12);
        let st = coherent_state(c(0.7), &sp).unwrap();
        let g = wigner(&st, &WignerSpec { extent: 5.0, resolution: 101 }).unwrap();
        assert!(negativity(&g) < 1e-6);
        let th = thermal_state(1.5, &space(14)).unwrap();
        let g = wigner(&th, &WignerSpec { extent: 5.0, resolution: 101 }).unwrap();
        assert!(negativity(&g) < 1e-6);
    }

    #[test]
    fn negativity_of_fock_one_matches_radial_quadrature() {
        // independent 1-D oracle: W(r) = -2 (1-4r^2) e^{-2r^2}; the negative
        // part integrates over the disk r < 1/2 with measure 2 pi r dr / pi
        let mut acc = 0.0;
        let m = 200_000;
        let h = 0.5 / m as f64;
        for i in 0..m {
            let r = (i as f64 + 0.5) * h;
            let w = -2.0 * (1.0 - 4.0 * r * r) * (-2.0 * r * r).exp();
            acc += (-w) * 2.0 * r * h;
        }
        let oracle = acc; // (1/2pi)∫(|W|-W) = (1/pi)∫_{W<0}|W|, angular 2pi/pi = 2
        let sp = space(12);
        let one = SystemState::basis(sp, Spin::G, 1).unwrap();
        let g = wigner(&one, &WignerSpec { extent: 5.0, resolution: 401 }).unwrap();
        assert_abs_diff_eq!(negativity(&g), oracle, epsilon = 1e-4);
    }

    #[test]
    fn negativity_grid_convergence_under_doubling() {
        let sp = space(12);
        let one = SystemState::basis(sp, Spin::G, 1).unwrap();
        let n1 = negativity(&wigner(&one, &WignerSpec { extent: 5.0, resolution: 201 }).unwrap());
        let n2 = negativity(&wigner(&one, &WignerSpec { extent: 5.0, resolution: 402 }).unwrap());
        assert!((n1 - n2).abs() < 1e-3);
    }

    #[test]
    fn photon_addition_of_vacuum_is_fock_one() {
        let mut rho = Array2::<C64>::zeros((6, 6));
        rho[[0, 0]] = c(1.0);
        let added = photon_added_reference(&rho, 1).unwrap();
        assert_abs_diff_eq!(added[[1, 1]].re, 1.0, epsilon = 1e-14);
        let added2 = photon_added_reference(&rho, 2).unwrap();
        assert_abs_diff_eq!(added2[[2, 2]].re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn photon_addition_zero_norm_errors() {
        let rho = Array2::<C64>::zeros((4, 4));
        assert!(photon_added_reference(&rho, 1).is_err());
    }

    #[test]
    fn cat_phase_extraction() {
        let sp = space(8);
        let mut v = Array1::<C64>::zeros(sp.dim());
        v[sp.index(0, 0)] = c(1.0 / 2f64.sqrt());
        v[sp.index(0, 2)] = c(1.0 / 2f64.sqrt());
        let st = SystemState::pure(sp, v).unwrap();
        let (f, phi) = cat_fidelity_extracted(&st, 0, 2).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi, 0.0, epsilon = 1e-12);

        let mut v = Array1::<C64>::zeros(sp.dim());
        v[sp.index(0, 0)] = c(1.0 / 2f64.sqrt());
        v[sp.index(0, 4)] = C64::new(0.0, 1.0 / 2f64.sqrt());
        let st = SystemState::pure(sp, v).unwrap();
        let (_, phi) = cat_fidelity_extracted(&st, 0, 4).unwrap();
        assert_abs_diff_eq!(phi, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn cat_phase_underflow_errors() {
        let sp = space(8);
        let st = SystemState::basis(sp, Spin::G, 0).unwrap();
        assert!(cat_fidelity_extracted(&st, 0, 4).is_err());
    }
}
