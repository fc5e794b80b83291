//! Experiment configuration: JSON schema, named presets, validation and
//! dotted-path overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{EvolutionConfig, NoiseRates};
use crate::error::{JcError, Result};
use crate::hilbert::{SpaceSpec, Spin};
use crate::observables::WignerSpec;
use crate::protocols::{DriveMode, FourierOptions};
use crate::pulses::{BaseProtocol, GaussianPulse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fock,
    Cat,
    PhotonShift,
    PulseExport,
    RobustnessFourier,
    RobustnessNoise,
    ThermalSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceCfg {
    pub fock_dim: usize,
    pub omega: f64,
}

impl Default for SpaceCfg {
    fn default() -> Self {
        SpaceCfg { fock_dim: 30, omega: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseCfg {
    pub t_pi: f64,
    pub sigma_pi: f64,
}

impl Default for PulseCfg {
    fn default() -> Self {
        PulseCfg { t_pi: 5.0, sigma_pi: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WignerCfg {
    pub enabled: bool,
    pub extent: f64,
    pub resolution: usize,
}

impl Default for WignerCfg {
    fn default() -> Self {
        WignerCfg { enabled: false, extent: 5.0, resolution: 201 }
    }
}

impl WignerCfg {
    pub fn spec(&self) -> WignerSpec {
        WignerSpec { extent: self.extent, resolution: self.resolution }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatCfg {
    /// Post-selection branch.
    pub measure: Spin,
    /// Per-STA-segment effective subspace overrides (compromise waveforms).
    pub n_eff: Option<Vec<f64>>,
    /// Prefix the plan with the Fock ladder from |e,0⟩.
    pub include_fock_prep: bool,
    /// Record bare and time-independent baselines alongside the LCD run.
    pub baselines: bool,
}

impl Default for CatCfg {
    fn default() -> Self {
        CatCfg { measure: Spin::G, n_eff: None, include_fock_prep: false, baselines: true }
    }
}

fn default_repetitions() -> usize {
    1
}

fn default_fock_targets() -> Vec<usize> {
    vec![1, 2, 5]
}

fn default_pulse_samples() -> usize {
    1001
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub space: SpaceCfg,
    #[serde(default = "default_base_protocol")]
    pub base_protocol: BaseProtocol,
    #[serde(default)]
    pub pulse: PulseCfg,

    /// Target Fock level for `fock` experiments.
    #[serde(default, alias = "N")]
    pub n_fock: Option<usize>,
    /// Cat component levels.
    #[serde(default)]
    pub n_low: Option<usize>,
    #[serde(default)]
    pub n_high: Option<usize>,
    /// Coherent-state amplitude of the initial mode.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Inverse temperature of an initially thermal mode.
    #[serde(default)]
    pub beta_th: Option<f64>,
    /// Photon-shift repetitions.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Effective subspace parameter for pulse export.
    #[serde(default)]
    pub n_ref: Option<f64>,

    #[serde(default = "default_drive")]
    pub drive: DriveMode,
    #[serde(default)]
    pub fourier: FourierOptions,
    #[serde(default)]
    pub noise: NoiseRates,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub wigner: WignerCfg,
    #[serde(default)]
    pub cat: CatCfg,

    /// Fourier-mode counts for `robustness_fourier`.
    #[serde(default)]
    pub n_f_values: Vec<usize>,
    /// Noise rates for `robustness_noise`.
    #[serde(default)]
    pub gamma_values: Vec<f64>,
    /// Channels for `robustness_noise`:
    /// loss | heating | loss+heating | emission | dephasing | all.
    #[serde(default)]
    pub noise_channels: Vec<String>,
    /// Mean thermal occupations for `thermal_sweep`.
    #[serde(default)]
    pub n_th_values: Vec<f64>,
    /// Fock targets compared at fixed beta_th in `thermal_sweep`.
    #[serde(default = "default_fock_targets")]
    pub fock_targets: Vec<usize>,
    #[serde(default = "default_pulse_samples")]
    pub pulse_samples: usize,

    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Sweep worker count; the JC_STA_WORKERS environment variable wins.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_base_protocol() -> BaseProtocol {
    BaseProtocol {
        omega_q_start: 1.5,
        omega_q_end: 0.5,
        lambda_0: 0.0,
        lambda_m: 0.25,
        tau: 5.0,
    }
}

fn default_drive() -> DriveMode {
    DriveMode::Lcd
}

impl ExperimentConfig {
    pub fn space_spec(&self) -> Result<SpaceSpec> {
        SpaceSpec::new(self.space.fock_dim, self.space.omega)
    }

    pub fn gaussian_pulse(&self) -> GaussianPulse {
        GaussianPulse::pi(self.pulse.t_pi, self.pulse.sigma_pi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.space.fock_dim < 2 {
            return Err(JcError::config("space.fock_dim", "must be >= 2"));
        }
        if !(self.space.omega > 0.0) {
            return Err(JcError::config("space.omega", "must be > 0"));
        }
        if !(self.base_protocol.tau > 0.0) {
            return Err(JcError::config("base_protocol.tau", "must be > 0"));
        }
        if !(self.pulse.t_pi > 0.0) {
            return Err(JcError::config("pulse.t_pi", "must be > 0"));
        }
        if !(self.pulse.sigma_pi > 0.0) {
            return Err(JcError::config("pulse.sigma_pi", "must be > 0"));
        }
        self.noise.validate()?;
        self.evolution.validate()?;
        if self.wigner.resolution < 2 {
            return Err(JcError::config("wigner.resolution", "must be >= 2"));
        }
        if !(self.wigner.extent > 0.0) {
            return Err(JcError::config("wigner.extent", "must be > 0"));
        }
        match self.experiment {
            ExperimentKind::Fock => {
                let n = self
                    .n_fock
                    .ok_or_else(|| JcError::config("n_fock", "required for fock experiments"))?;
                if n < 1 {
                    return Err(JcError::config("n_fock", "must be >= 1"));
                }
                if self.space.fock_dim <= n + 2 {
                    return Err(JcError::config(
                        "space.fock_dim",
                        format!("must exceed n_fock + 2 = {}", n + 2),
                    ));
                }
            }
            ExperimentKind::Cat => {
                let (lo, hi) = match (self.n_low, self.n_high) {
                    (Some(lo), Some(hi)) => (lo, hi),
                    _ => {
                        return Err(JcError::config(
                            "n_low/n_high",
                            "required for cat experiments",
                        ))
                    }
                };
                if hi <= lo || (hi - lo) % 2 != 0 {
                    return Err(JcError::config("n_high", "need n_high - n_low even and >= 2"));
                }
                if self.space.fock_dim <= hi + 2 {
                    return Err(JcError::config(
                        "space.fock_dim",
                        format!("must exceed n_high + 2 = {}", hi + 2),
                    ));
                }
            }
            ExperimentKind::PhotonShift => {
                if self.alpha.is_none() && self.beta_th.is_none() {
                    return Err(JcError::config(
                        "alpha",
                        "photon_shift needs alpha or beta_th",
                    ));
                }
                if self.repetitions < 1 {
                    return Err(JcError::config("repetitions", "must be >= 1"));
                }
            }
            ExperimentKind::RobustnessFourier => {
                if self.n_f_values.is_empty() {
                    return Err(JcError::config(
                        "n_f_values",
                        "robustness_fourier needs at least one mode count",
                    ));
                }
            }
            ExperimentKind::RobustnessNoise => {
                if self.gamma_values.is_empty() {
                    return Err(JcError::config("gamma_values", "need at least one rate"));
                }
                if self.noise_channels.is_empty() {
                    return Err(JcError::config("noise_channels", "need at least one channel"));
                }
            }
            ExperimentKind::ThermalSweep => {
                if self.n_th_values.is_empty() {
                    return Err(JcError::config("n_th_values", "need at least one occupation"));
                }
                for (i, v) in self.n_th_values.iter().enumerate() {
                    if !(*v > 0.0) {
                        return Err(JcError::config(
                            format!("n_th_values[{i}]"),
                            "must be > 0",
                        ));
                    }
                }
            }
            ExperimentKind::PulseExport => {
                if self.pulse_samples < 2 {
                    return Err(JcError::config("pulse_samples", "must be >= 2"));
                }
            }
        }
        Ok(())
    }
}

/// Named parameter sets from the reference figures.
pub fn preset(name: &str) -> Result<Value> {
    let base_fig2 = serde_json::json!({
        "omega_q_start": 1.5,
        "omega_q_end": 0.5,
        "lambda_0": 0.0,
        "lambda_m": 0.25,
    });
    let mut v = match name {
        // Fock |5> ladder, omega tau = omega t_pi = 5
        "fig2b" => serde_json::json!({
            "experiment": "fock",
            "n_fock": 5,
            "space": { "fock_dim": 30 },
            "base_protocol": { "tau": 5.0 },
            "evolution": { "sample_stride": 200 },
        }),
        // cat (|0> + e^{i phi} |4>)/sqrt2 at omega tau = 30
        "fig2d" => serde_json::json!({
            "experiment": "cat",
            "n_low": 0,
            "n_high": 4,
            "space": { "fock_dim": 30 },
            "base_protocol": { "tau": 30.0 },
            "cat": { "n_eff": [1.45, 1.78] },
            "wigner": { "enabled": true },
        }),
        // photon-shifted state from |e, alpha = 3/4> at omega tau = 8
        "fig3" => serde_json::json!({
            "experiment": "photon_shift",
            "alpha": 0.75,
            "repetitions": 1,
            "space": { "fock_dim": 40 },
            "base_protocol": { "tau": 8.0 },
            "wigner": { "enabled": true },
        }),
        // single-rung transfer |e,0> -> |g,1> at omega tau = 8
        "figS5" => serde_json::json!({
            "experiment": "robustness_fourier",
            "space": { "fock_dim": 12 },
            "base_protocol": { "tau": 8.0 },
            "n_f_values": [1, 2, 3, 4, 5, 6, 7, 8],
        }),
        // single-rung transfer under decoherence at omega tau = 5
        "figS6a" => serde_json::json!({
            "experiment": "robustness_noise",
            "space": { "fock_dim": 12 },
            "base_protocol": { "tau": 5.0 },
            "noise_channels": ["loss+heating", "heating", "loss", "emission", "dephasing"],
            "gamma_values": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            "evolution": { "steps_per_unit": 1000 },
        }),
        // cat psi02 under decoherence at omega tau = 30
        "figS6b" => serde_json::json!({
            "experiment": "robustness_noise",
            "n_low": 0,
            "n_high": 2,
            "space": { "fock_dim": 12 },
            "base_protocol": { "tau": 30.0 },
            "noise_channels": ["loss+heating", "emission", "dephasing"],
            "gamma_values": [1e-5, 1e-4, 1e-3, 1e-2],
            "evolution": { "steps_per_unit": 500 },
        }),
        other => {
            return Err(JcError::config(
                "preset",
                format!("unknown preset `{other}`; expected fig2b, fig2d, fig3, figS5, figS6a or figS6b"),
            ))
        }
    };
    // every preset shares the fig2 sweep endpoints
    let bp = v
        .get_mut("base_protocol")
        .and_then(Value::as_object_mut)
        .expect("preset base_protocol");
    for (k, val) in base_fig2.as_object().unwrap() {
        bp.entry(k.clone()).or_insert(val.clone());
    }
    Ok(v)
}

/// Recursive JSON merge: `over` wins, objects merge key-wise.
pub fn merge_values(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_values(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply a dotted-path override such as `base_protocol.tau=8`.
pub fn apply_set(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor.as_object_mut().ok_or_else(|| {
            JcError::config(path, format!("`{}` is not an object", parts[..i].join(".")))
        })?;
        if i == parts.len() - 1 {
            obj.insert((*part).to_string(), parsed);
            return Ok(());
        }
        cursor = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Build a validated config from an optional preset, optional JSON document
/// and dotted-path overrides.
pub fn resolve(
    preset_name: Option<&str>,
    file_json: Option<Value>,
    sets: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut root = match preset_name {
        Some(name) => preset(name)?,
        None => Value::Object(Default::default()),
    };
    if let Some(fj) = file_json {
        merge_values(&mut root, fj);
    }
    for (path, raw) in sets {
        apply_set(&mut root, path, raw)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(root)
        .map_err(|e| JcError::config("<config>", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_file(path: &str) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| JcError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| JcError::config(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fock_config_fills_defaults() {
        let v: Value = serde_json::json!({"experiment": "fock", "N": 1});
        let cfg = resolve(None, Some(v), &[]).unwrap();
        assert_eq!(cfg.n_fock, Some(1));
        assert_eq!(cfg.space.fock_dim, 30);
        assert_eq!(cfg.evolution.steps_per_unit, 2000);
        assert_eq!(cfg.base_protocol.lambda_m, 0.25);
        assert_eq!(cfg.pulse.t_pi, 5.0);
    }

    #[test]
    fn negative_tau_names_field_path() {
        let v: Value =
            serde_json::json!({"experiment": "fock", "N": 1, "base_protocol": {"tau": -3.0}});
        let err = resolve(None, Some(v), &[]).unwrap_err();
        assert!(err.to_string().contains("base_protocol.tau"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let v: Value = serde_json::json!({"experiment": "fock", "N": 1, "bogus": 7});
        assert!(resolve(None, Some(v), &[]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = resolve(Some("fig2b"), None, &[]).unwrap();
        let emitted = serde_json::to_value(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_value(emitted).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn presets_resolve_and_validate() {
        for name in ["fig2b", "fig2d", "fig3", "figS5", "figS6a", "figS6b"] {
            let cfg = resolve(Some(name), None, &[]).unwrap();
            cfg.validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn set_overrides_apply() {
        let cfg = resolve(
            Some("fig2b"),
            None,
            &[
                ("base_protocol.tau".into(), "8.0".into()),
                ("n_fock".into(), "2".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.base_protocol.tau, 8.0);
        assert_eq!(cfg.n_fock, Some(2));
    }
}
