//! Truncated spin-boson Hilbert space: operators, canonical states,
//! projective spin measurement and partial traces.
//!
//! Basis ordering is spin-major: index = spin*d + n with spin in {g=0, e=1}
//! and n the Fock level, so a full-space vector holds the g-block first.

use std::collections::BTreeMap;

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{JcError, Result};
use crate::linalg::{self, c, eigh, I};

pub const DEFAULT_LEAK_TOL: f64 = 1e-6;

/// Truncated space: `fock_dim` Fock levels 0..d-1 and one spin-1/2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub fock_dim: usize,
    pub omega: f64,
}

impl SpaceSpec {
    pub fn new(fock_dim: usize, omega: f64) -> Result<Self> {
        if fock_dim < 2 {
            return Err(JcError::Dimension(format!(
                "fock_dim must be >= 2, got {fock_dim}"
            )));
        }
        if !(omega > 0.0) {
            return Err(JcError::Dimension(format!("omega must be > 0, got {omega}")));
        }
        Ok(SpaceSpec { fock_dim, omega })
    }

    /// Total dimension 2d of the spin ⊗ boson space.
    pub fn dim(&self) -> usize {
        2 * self.fock_dim
    }

    /// Flat index of |spin, n⟩ (spin: 0 = g, 1 = e).
    pub fn index(&self, spin: usize, n: usize) -> usize {
        spin * self.fock_dim + n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    G,
    E,
}

impl Spin {
    pub fn block(&self) -> usize {
        match self {
            Spin::G => 0,
            Spin::E => 1,
        }
    }
}

/// Dense operator with a symbolic tag.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub label: String,
    pub matrix: Array2<C64>,
}

impl OperatorMatrix {
    pub fn new(label: impl Into<String>, matrix: Array2<C64>) -> Self {
        OperatorMatrix { label: label.into(), matrix }
    }
}

/// Pure state vector or density matrix on the full space.
#[derive(Clone, Debug)]
pub enum Representation {
    Pure(Array1<C64>),
    Density(Array2<C64>),
}

#[derive(Clone, Debug)]
pub struct SystemState {
    pub space: SpaceSpec,
    pub repr: Representation,
}

impl SystemState {
    pub fn pure(space: SpaceSpec, vec: Array1<C64>) -> Result<Self> {
        if vec.len() != space.dim() {
            return Err(JcError::Dimension(format!(
                "vector length {} != 2d = {}",
                vec.len(),
                space.dim()
            )));
        }
        Ok(SystemState { space, repr: Representation::Pure(vec) })
    }

    pub fn density(space: SpaceSpec, rho: Array2<C64>) -> Result<Self> {
        if rho.dim() != (space.dim(), space.dim()) {
            return Err(JcError::Dimension(format!(
                "density shape {:?} != (2d, 2d) = ({}, {})",
                rho.dim(),
                space.dim(),
                space.dim()
            )));
        }
        Ok(SystemState { space, repr: Representation::Density(rho) })
    }

    /// Basis state |spin, n⟩.
    pub fn basis(space: SpaceSpec, spin: Spin, n: usize) -> Result<Self> {
        if n >= space.fock_dim {
            return Err(JcError::Dimension(format!(
                "Fock level {n} >= d = {}",
                space.fock_dim
            )));
        }
        let mut v = Array1::<C64>::zeros(space.dim());
        v[space.index(spin.block(), n)] = c(1.0);
        SystemState::pure(space, v)
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.repr, Representation::Pure(_))
    }

    pub fn norm(&self) -> f64 {
        match &self.repr {
            Representation::Pure(v) => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            Representation::Density(r) => r.diag().iter().map(|z| z.re).sum(),
        }
    }

    /// Promote to a density matrix.
    pub fn to_density(&self) -> Array2<C64> {
        match &self.repr {
            Representation::Pure(v) => {
                let d = v.len();
                let mut rho = Array2::<C64>::zeros((d, d));
                for i in 0..d {
                    for j in 0..d {
                        rho[[i, j]] = v[i] * v[j].conj();
                    }
                }
                rho
            }
            Representation::Density(r) => r.clone(),
        }
    }

    /// Population of the topmost Fock level, summed over spin.
    pub fn top_level_population(&self) -> f64 {
        let d = self.space.fock_dim;
        match &self.repr {
            Representation::Pure(v) => v[d - 1].norm_sqr() + v[2 * d - 1].norm_sqr(),
            Representation::Density(r) => r[[d - 1, d - 1]].re + r[[2 * d - 1, 2 * d - 1]].re,
        }
    }

    /// Norm/trace, Hermiticity, positivity and truncation-leak checks.
    pub fn validate(&self, leak_tol: f64) -> Result<()> {
        match &self.repr {
            Representation::Pure(_) => {
                if (self.norm() - 1.0).abs() > 1e-10 {
                    return Err(JcError::Dimension(format!(
                        "pure state norm {} not 1 within 1e-10",
                        self.norm()
                    )));
                }
            }
            Representation::Density(r) => {
                let herm = r
                    .iter()
                    .zip(r.t().iter())
                    .map(|(a, b)| (a - b.conj()).norm())
                    .fold(0.0f64, f64::max);
                if herm > 1e-12 {
                    return Err(JcError::Dimension(format!(
                        "density not Hermitian: max |rho - rho^dag| = {herm:.3e}"
                    )));
                }
                if (self.norm() - 1.0).abs() > 1e-10 {
                    return Err(JcError::Dimension(format!(
                        "density trace {} not 1 within 1e-10",
                        self.norm()
                    )));
                }
                let (vals, _) = eigh(r)?;
                let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                if min < -1e-8 {
                    return Err(JcError::Positivity(min));
                }
            }
        }
        let leak = self.top_level_population();
        if leak > leak_tol {
            return Err(JcError::TruncationUnsafe { leak, tol: leak_tol });
        }
        Ok(())
    }

    /// Expectation value of a Hermitian operator.
    pub fn expect(&self, op: &Array2<C64>) -> f64 {
        match &self.repr {
            Representation::Pure(v) => {
                let hv = op.dot(v);
                v.iter().zip(hv.iter()).map(|(a, b)| (a.conj() * b).re).sum()
            }
            Representation::Density(r) => op.dot(r).diag().iter().map(|z| z.re).sum(),
        }
    }
}

/// Build the spin factors, boson factors, their tensor embeddings and N_e.
///
/// Labels: `a`, `adag`, `n` (d×d boson factors); `sp`, `sm`, `sx`, `sz`
/// (2×2 spin factors); `A`, `Adag`, `N`, `Sp`, `Sm`, `Sx`, `Sz` (full-space
/// embeddings); `Ne` = |e⟩⟨e|⊗1 + 1⊗a†a.
pub fn build_operators(space: &SpaceSpec) -> BTreeMap<String, OperatorMatrix> {
    let d = space.fock_dim;
    let mut a = Array2::<C64>::zeros((d, d));
    for n in 1..d {
        a[[n - 1, n]] = c((n as f64).sqrt());
    }
    let adag = a.t().mapv(|z| z.conj());
    let nb = adag.dot(&a);

    let mut sp = Array2::<C64>::zeros((2, 2)); // |e><g| in g=0,e=1 ordering
    sp[[1, 0]] = c(1.0);
    let sm = sp.t().mapv(|z| z.conj());
    let sx = &sp + &sm;
    let mut sz = Array2::<C64>::zeros((2, 2));
    sz[[0, 0]] = c(-1.0);
    sz[[1, 1]] = c(1.0);

    let id_b = Array2::<C64>::eye(d);
    let id_s = Array2::<C64>::eye(2);

    let big_a = linalg::kron(&id_s, &a);
    let big_adag = linalg::kron(&id_s, &adag);
    let big_n = linalg::kron(&id_s, &nb);
    let big_sp = linalg::kron(&sp, &id_b);
    let big_sm = linalg::kron(&sm, &id_b);
    let big_sx = linalg::kron(&sx, &id_b);
    let big_sz = linalg::kron(&sz, &id_b);

    let mut proj_e = Array2::<C64>::zeros((2, 2));
    proj_e[[1, 1]] = c(1.0);
    let ne = linalg::kron(&proj_e, &id_b) + &big_n;

    let mut out = BTreeMap::new();
    out.insert("a".into(), OperatorMatrix::new("a", a));
    out.insert("adag".into(), OperatorMatrix::new("adag", adag));
    out.insert("n".into(), OperatorMatrix::new("n", nb));
    out.insert("sp".into(), OperatorMatrix::new("sp", sp));
    out.insert("sm".into(), OperatorMatrix::new("sm", sm));
    out.insert("sx".into(), OperatorMatrix::new("sx", sx));
    out.insert("sz".into(), OperatorMatrix::new("sz", sz));
    out.insert("A".into(), OperatorMatrix::new("A", big_a));
    out.insert("Adag".into(), OperatorMatrix::new("Adag", big_adag));
    out.insert("N".into(), OperatorMatrix::new("N", big_n));
    out.insert("Sp".into(), OperatorMatrix::new("Sp", big_sp));
    out.insert("Sm".into(), OperatorMatrix::new("Sm", big_sm));
    out.insert("Sx".into(), OperatorMatrix::new("Sx", big_sx));
    out.insert("Sz".into(), OperatorMatrix::new("Sz", big_sz));
    out.insert("Ne".into(), OperatorMatrix::new("Ne", ne));
    out
}

/// Boson-factor coherent state amplitudes ⟨n|α⟩, renormalized on the
/// truncated space.
pub fn coherent_amplitudes(alpha: C64, d: usize) -> Array1<C64> {
    let mut v = Array1::<C64>::zeros(d);
    let mut term = c(1.0); // alpha^n / sqrt(n!)
    v[0] = term;
    for n in 1..d {
        term *= alpha / c((n as f64).sqrt());
        v[n] = term;
    }
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    // e^{-|alpha|^2/2} absorbed by renormalizing the truncated vector
    v.mapv(|z| z / c(norm))
}

/// |e⟩ ⊗ |α⟩ on the full space.
pub fn coherent_state(alpha: C64, space: &SpaceSpec) -> Result<SystemState> {
    let d = space.fock_dim;
    let amps = coherent_amplitudes(alpha, d);
    let mut v = Array1::<C64>::zeros(space.dim());
    for n in 0..d {
        v[space.index(1, n)] = amps[n];
    }
    let st = SystemState::pure(*space, v)?;
    st.validate(DEFAULT_LEAK_TOL)?;
    Ok(st)
}

/// |e⟩⟨e| ⊗ thermal Gibbs state of the mode at inverse temperature beta_th.
pub fn thermal_state(beta_th: f64, space: &SpaceSpec) -> Result<SystemState> {
    if !(beta_th > 0.0) {
        return Err(JcError::UndefinedValue(format!(
            "thermal state needs beta_th > 0, got {beta_th}"
        )));
    }
    let d = space.fock_dim;
    let q = (-beta_th * space.omega).exp();
    let mut rho = Array2::<C64>::zeros((space.dim(), space.dim()));
    let mut z = 0.0;
    let mut w = 1.0;
    for _ in 0..d {
        z += w;
        w *= q;
    }
    let mut w = 1.0;
    for n in 0..d {
        rho[[space.index(1, n), space.index(1, n)]] = c(w / z);
        w *= q;
    }
    let st = SystemState::density(*space, rho)?;
    st.validate(DEFAULT_LEAK_TOL)?;
    Ok(st)
}

/// Occupation weights of the truncated thermal mode, renormalized.
pub fn thermal_weights(beta_th: f64, omega: f64, d: usize) -> Vec<f64> {
    let q = (-beta_th * omega).exp();
    let mut w: Vec<f64> = (0..d).map(|n| q.powi(n as i32)).collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    w
}

/// Displacement operator D(β) = exp(β a† − β* a) on the boson factor,
/// as the matrix exponential of the truncated generator.
///
/// Uses D(β) = R_φ exp(r(a†−a)) R_φ† with β = r e^{iφ} and R_φ = e^{iφ n̂},
/// which is exact on the truncated space; the central factor comes from one
/// eigendecomposition of the Hermitian −i(a†−a).
pub fn displacement(beta: C64, space: &SpaceSpec) -> Result<OperatorMatrix> {
    let gen = DisplacementGenerator::new(space.fock_dim)?;
    Ok(OperatorMatrix::new(
        format!("D({beta})"),
        gen.matrix(beta),
    ))
}

/// Cached eigendecomposition of −i(a†−a), shared by `displacement` and the
/// Wigner evaluator.
pub struct DisplacementGenerator {
    pub dim: usize,
    evals: Array1<f64>,
    evecs: Array2<C64>,
}

impl DisplacementGenerator {
    pub fn new(d: usize) -> Result<Self> {
        let mut k = Array2::<C64>::zeros((d, d));
        for n in 0..d - 1 {
            let r = ((n + 1) as f64).sqrt();
            k[[n + 1, n]] = -I * c(r);
            k[[n, n + 1]] = I * c(r);
        }
        let (evals, evecs) = eigh(&k)?;
        Ok(DisplacementGenerator { dim: d, evals, evecs })
    }

    /// Dense D(β).
    pub fn matrix(&self, beta: C64) -> Array2<C64> {
        let d = self.dim;
        let r = beta.norm();
        let ph = if r > 0.0 { beta / c(r) } else { c(1.0) };
        // exp(r(a†−a)) = V e^{irΛ} V†  (since a†−a = iK)
        let mut core = Array2::<C64>::zeros((d, d));
        for (j, col) in self.evecs.columns().into_iter().enumerate() {
            let phase = (I * c(r * self.evals[j])).exp();
            for i in 0..d {
                core[[i, j]] = col[i] * phase;
            }
        }
        let core = core.dot(&self.evecs.t().mapv(|z| z.conj()));
        let mut out = Array2::<C64>::zeros((d, d));
        let mut rot = vec![c(1.0); d];
        for n in 1..d {
            rot[n] = rot[n - 1] * ph;
        }
        for i in 0..d {
            for j in 0..d {
                out[[i, j]] = rot[i] * core[[i, j]] * rot[j].conj();
            }
        }
        out
    }

    /// D(−β)ψ for a boson-factor vector, without forming the matrix.
    pub fn displace_neg(&self, beta: C64, psi: &ArrayView1<C64>) -> Array1<C64> {
        let d = self.dim;
        let r = beta.norm();
        let ph = if r > 0.0 { beta / c(r) } else { c(1.0) };
        let mut v = Array1::<C64>::zeros(d);
        let mut rot = c(1.0);
        for n in 0..d {
            v[n] = psi[n] * rot.conj();
            rot *= ph;
        }
        let u = self.evecs.t().mapv(|z| z.conj()).dot(&v);
        let mut u2 = Array1::<C64>::zeros(d);
        for j in 0..d {
            u2[j] = u[j] * (-I * c(r * self.evals[j])).exp();
        }
        // leading R_φ phases dropped: callers only use |component|²
        self.evecs.dot(&u2)
    }
}

/// Projective spin measurement M_r = |r⟩⟨r| ⊗ 1; returns the collapsed,
/// renormalized state and the outcome probability.
pub fn project_spin(state: &SystemState, r: Spin) -> Result<(SystemState, f64)> {
    let d = state.space.fock_dim;
    let block = r.block();
    match &state.repr {
        Representation::Pure(v) => {
            let mut out = Array1::<C64>::zeros(v.len());
            let mut p = 0.0;
            for n in 0..d {
                let idx = block * d + n;
                p += v[idx].norm_sqr();
                out[idx] = v[idx];
            }
            if p < 1e-12 {
                return Err(JcError::MeasurementImpossible(p));
            }
            let out = out.mapv(|z| z / c(p.sqrt()));
            Ok((SystemState::pure(state.space, out)?, p))
        }
        Representation::Density(rho) => {
            let mut out = Array2::<C64>::zeros(rho.dim());
            let mut p = 0.0;
            for n in 0..d {
                p += rho[[block * d + n, block * d + n]].re;
            }
            if p < 1e-12 {
                return Err(JcError::MeasurementImpossible(p));
            }
            for n in 0..d {
                for m in 0..d {
                    out[[block * d + n, block * d + m]] =
                        rho[[block * d + n, block * d + m]] / c(p);
                }
            }
            Ok((SystemState::density(state.space, out)?, p))
        }
    }
}

/// Partial trace over the boson: 2×2 reduced spin density.
pub fn reduce_spin(state: &SystemState) -> Array2<C64> {
    let d = state.space.fock_dim;
    let mut out = Array2::<C64>::zeros((2, 2));
    match &state.repr {
        Representation::Pure(v) => {
            for s in 0..2 {
                for s2 in 0..2 {
                    for n in 0..d {
                        out[[s, s2]] += v[s * d + n] * v[s2 * d + n].conj();
                    }
                }
            }
        }
        Representation::Density(r) => {
            for s in 0..2 {
                for s2 in 0..2 {
                    for n in 0..d {
                        out[[s, s2]] += r[[s * d + n, s2 * d + n]];
                    }
                }
            }
        }
    }
    out
}

/// Partial trace over the spin: d×d reduced boson density.
pub fn reduce_boson(state: &SystemState) -> Array2<C64> {
    let d = state.space.fock_dim;
    let mut out = Array2::<C64>::zeros((d, d));
    match &state.repr {
        Representation::Pure(v) => {
            for s in 0..2 {
                for n in 0..d {
                    for m in 0..d {
                        out[[n, m]] += v[s * d + n] * v[s * d + m].conj();
                    }
                }
            }
        }
        Representation::Density(r) => {
            for s in 0..2 {
                for n in 0..d {
                    for m in 0..d {
                        out[[n, m]] += r[[s * d + n, s * d + m]];
                    }
                }
            }
        }
    }
    out
}

/// JSON form: {"dim": 2d, "kind": "pure"|"density", "re": [...], "im": [...]},
/// row-major for densities.
#[derive(Serialize, Deserialize)]
pub struct StateJson {
    pub dim: usize,
    pub kind: String,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

pub fn state_to_json(state: &SystemState) -> StateJson {
    match &state.repr {
        Representation::Pure(v) => StateJson {
            dim: v.len(),
            kind: "pure".into(),
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        },
        Representation::Density(r) => StateJson {
            dim: r.nrows(),
            kind: "density".into(),
            re: r.iter().map(|z| z.re).collect(),
            im: r.iter().map(|z| z.im).collect(),
        },
    }
}

pub fn state_from_json(js: &StateJson, omega: f64) -> Result<SystemState> {
    let space = SpaceSpec::new(js.dim / 2, omega)?;
    match js.kind.as_str() {
        "pure" => {
            let v = Array1::from_iter(
                js.re.iter().zip(js.im.iter()).map(|(&re, &im)| C64::new(re, im)),
            );
            SystemState::pure(space, v)
        }
        "density" => {
            let flat: Vec<C64> = js
                .re
                .iter()
                .zip(js.im.iter())
                .map(|(&re, &im)| C64::new(re, im))
                .collect();
            let r = Array2::from_shape_vec((js.dim, js.dim), flat)
                .map_err(|e| JcError::Dimension(e.to_string()))?;
            SystemState::density(space, r)
        }
        other => Err(JcError::Config {
            path: "kind".into(),
            msg: format!("unknown state kind `{other}`"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn space(d: usize) -> SpaceSpec {
        SpaceSpec::new(d, 1.0).unwrap()
    }

    #[test]
    fn ladder_action() {
        let ops = build_operators(&space(3));
        let a = &ops["a"].matrix;
        // a|1> = |0>, a|2> = sqrt2 |1>
        assert_abs_diff_eq!(a[[0, 1]].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[[1, 2]].re, 2f64.sqrt(), epsilon = 1e-15);
        let n = &ops["n"].matrix;
        for (k, expect) in [0.0, 1.0, 2.0].iter().enumerate() {
            assert_abs_diff_eq!(n[[k, k]].re, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn commutator_on_interior_block() {
        let d = 8;
        let ops = build_operators(&space(d));
        let a = &ops["a"].matrix;
        let adag = &ops["adag"].matrix;
        let comm = a.dot(adag) - adag.dot(a);
        for i in 0..d - 1 {
            for j in 0..d - 1 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((comm[[i, j]] - c(expect)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_and_sx_identities() {
        let ops = build_operators(&space(5));
        let adag = ops["a"].matrix.t().mapv(|z| z.conj());
        assert!(linalg::max_abs(&(&adag - &ops["adag"].matrix)) < 1e-15);
        let sx = &ops["sp"].matrix + &ops["sm"].matrix;
        assert!(linalg::max_abs(&(&sx - &ops["sx"].matrix)) < 1e-15);
    }

    #[test]
    fn jc_commutes_with_excitation_number() {
        let sp = space(8);
        let ops = build_operators(&sp);
        // H = wq Sz/2 + w N + l (A Sp + Adag Sm) at fixed (wq, l)
        let h = ops["Sz"].matrix.mapv(|z| z * c(0.65))
            + ops["N"].matrix.mapv(|z| z * c(1.0))
            + (ops["A"].matrix.dot(&ops["Sp"].matrix)
                + ops["Adag"].matrix.dot(&ops["Sm"].matrix))
            .mapv(|z| z * c(0.21));
        let ne = &ops["Ne"].matrix;
        let comm = h.dot(ne) - ne.dot(&h);
        assert!(linalg::max_abs(&comm) < 1e-12);
    }

    #[test]
    fn coherent_poisson_populations() {
        let sp = space(20);
        let st = coherent_state(c(0.75), &sp).unwrap();
        let Representation::Pure(v) = &st.repr else { panic!() };
        let a2 = 0.5625f64;
        let mut logfact = 0.0;
        for n in 0..12 {
            if n > 0 {
                logfact += (n as f64).ln();
            }
            let expect = (-a2 + (n as f64) * a2.ln() - logfact).exp();
            assert_abs_diff_eq!(v[sp.index(1, n)].norm_sqr(), expect, epsilon = 1e-10);
        }
        let ops = build_operators(&sp);
        assert_abs_diff_eq!(st.expect(&ops["N"].matrix), 0.5625, epsilon = 1e-9);
    }

    #[test]
    fn coherent_zero_is_vacuum() {
        let sp = space(6);
        let st = coherent_state(c(0.0), &sp).unwrap();
        let Representation::Pure(v) = &st.repr else { panic!() };
        assert_abs_diff_eq!(v[sp.index(1, 0)].norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn coherent_leak_check_fires() {
        let sp = space(4);
        assert!(matches!(
            coherent_state(c(1.5), &sp),
            Err(JcError::TruncationUnsafe { .. })
        ));
    }

    #[test]
    fn thermal_mean_occupation() {
        let sp = space(15);
        let st = thermal_state(3.0, &sp).unwrap();
        let ops = build_operators(&sp);
        let n_th = 1.0 / (3f64.exp() - 1.0);
        assert_abs_diff_eq!(st.expect(&ops["N"].matrix), n_th, epsilon = 1e-6);
    }

    #[test]
    fn thermal_cold_limit_is_vacuum() {
        let sp = space(8);
        let st = thermal_state(60.0, &sp).unwrap();
        let rho = st.to_density();
        assert_abs_diff_eq!(rho[[sp.index(1, 0), sp.index(1, 0)]].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn thermal_purity_closed_form() {
        // sum p_n^2 against (1-q)^2/(1-q^2) on the untruncated law
        let beta = 1.1;
        let sp = space(40);
        let st = thermal_state(beta, &sp).unwrap();
        let rho_b = reduce_boson(&st);
        let purity: f64 = rho_b.dot(&rho_b).diag().iter().map(|z| z.re).sum();
        let q = (-beta).exp();
        let closed = (1.0 - q) * (1.0 - q) / (1.0 - q * q);
        assert_abs_diff_eq!(purity, closed, epsilon = 1e-8);
    }

    #[test]
    fn displacement_matches_coherent_construction() {
        let sp = space(40);
        for beta in [c(0.5), C64::new(1.0, 1.0), C64::new(-0.3, 1.7)] {
            let d_op = displacement(beta, &sp).unwrap();
            let disp0 = d_op.matrix.column(0).to_owned();
            let amps = coherent_amplitudes(beta, sp.fock_dim);
            let diff: f64 = disp0
                .iter()
                .zip(amps.iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-8, "beta={beta}: diff={diff:.2e}");
        }
    }

    #[test]
    fn displacement_inverse_on_interior() {
        let sp = space(40);
        let beta = C64::new(0.8, -0.6);
        let d1 = displacement(beta, &sp).unwrap().matrix;
        let d2 = displacement(-beta, &sp).unwrap().matrix;
        let prod = d1.dot(&d2);
        for i in 0..20 {
            for j in 0..20 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - c(expect)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn displacement_identity_at_zero() {
        let sp = space(10);
        let d0 = displacement(c(0.0), &sp).unwrap().matrix;
        assert!(linalg::max_abs(&(&d0 - &Array2::<C64>::eye(10))) < 1e-12);
    }

    #[test]
    fn projective_measurement_on_product_state() {
        let sp = space(4);
        let st = SystemState::basis(sp, Spin::E, 0).unwrap();
        let (post, p) = project_spin(&st, Spin::E).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-14);
        assert!(post.is_pure());
        assert!(matches!(
            project_spin(&st, Spin::G),
            Err(JcError::MeasurementImpossible(_))
        ));
    }

    #[test]
    fn projective_measurement_on_bell_like_state() {
        let sp = space(4);
        let mut v = Array1::<C64>::zeros(sp.dim());
        v[sp.index(1, 0)] = c(1.0 / 2f64.sqrt());
        v[sp.index(0, 1)] = c(1.0 / 2f64.sqrt());
        let st = SystemState::pure(sp, v).unwrap();
        let (post, p) = project_spin(&st, Spin::G).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-14);
        let Representation::Pure(v) = &post.repr else { panic!() };
        assert_abs_diff_eq!(v[sp.index(0, 1)].norm(), 1.0, epsilon = 1e-14);
        // outcome probabilities sum to 1
        let (_, pe) = project_spin(&st, Spin::E).unwrap();
        assert_abs_diff_eq!(p + pe, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn reduced_spin_of_entangled_state_is_mixed() {
        let sp = space(4);
        let mut v = Array1::<C64>::zeros(sp.dim());
        v[sp.index(1, 0)] = c(1.0 / 2f64.sqrt());
        v[sp.index(0, 1)] = c(1.0 / 2f64.sqrt());
        let st = SystemState::pure(sp, v).unwrap();
        let rs = reduce_spin(&st);
        assert_abs_diff_eq!(rs[[0, 0]].re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(rs[[1, 1]].re, 0.5, epsilon = 1e-14);
        let purity: f64 = rs.dot(&rs).diag().iter().map(|z| z.re).sum();
        assert_abs_diff_eq!(purity, 0.5, epsilon = 1e-14);
        // trace preserved
        assert_abs_diff_eq!(rs.diag().iter().map(|z| z.re).sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn reduced_spin_of_product_states() {
        let sp = space(8);
        let st = SystemState::basis(sp, Spin::E, 5).unwrap();
        let rs = reduce_spin(&st);
        assert_abs_diff_eq!(rs[[1, 1]].re, 1.0, epsilon = 1e-14);
        let st = coherent_state(c(0.6), &sp).unwrap();
        let rs = reduce_spin(&st);
        let purity: f64 = rs.dot(&rs).diag().iter().map(|z| z.re).sum();
        assert_abs_diff_eq!(purity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn state_json_round_trip() {
        let sp = space(5);
        let st = coherent_state(c(0.4), &sp).unwrap();
        let js = state_to_json(&st);
        let back = state_from_json(&js, 1.0).unwrap();
        let Representation::Pure(a) = &st.repr else { panic!() };
        let Representation::Pure(b) = &back.repr else { panic!() };
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).norm() < 1e-15);
        }
    }
}
