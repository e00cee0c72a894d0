//! Run configuration: strict JSON with physical defaults preloaded.
//!
//! Frequencies in config files are plain Hz (device tables are quoted in
//! MHz/GHz); durations are in nanoseconds. Conversion to angular units
//! happens exactly once, here, when building the core parameter structs.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use magnon_qnd_core::detection::PipelineConfig;
use magnon_qnd_core::hilbert::{CavityModeParams, HilbertConfig, MagnonParams, QubitParams};
use magnon_qnd_core::integrate::IntegratorConfig;
use magnon_qnd_core::readout::{MeasuredProbabilities, ReadoutModel};
use magnon_qnd_core::units::{from_hz, NS};
use magnon_qnd_core::SystemParams;

fn default_system() -> SystemParams {
    SystemParams::default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitConfig {
    pub omega_q_hz: f64,
    pub alpha_hz: f64,
    pub alpha0_hz: f64,
    pub omega_q0_hz: f64,
    pub t1_s: f64,
    pub t2_star_s: f64,
    pub n_th_q: f64,
    pub eps_ini: f64,
}

impl QubitConfig {
    fn from_core(q: &QubitParams) -> Self {
        Self {
            omega_q_hz: q.omega_q / std::f64::consts::TAU,
            alpha_hz: q.alpha / std::f64::consts::TAU,
            alpha0_hz: q.alpha0 / std::f64::consts::TAU,
            omega_q0_hz: q.omega_q0 / std::f64::consts::TAU,
            t1_s: q.t1,
            t2_star_s: q.t2_star,
            n_th_q: q.n_th_q,
            eps_ini: q.eps_ini,
        }
    }

    fn to_core(&self) -> QubitParams {
        QubitParams {
            omega_q: from_hz(self.omega_q_hz),
            alpha: from_hz(self.alpha_hz),
            alpha0: from_hz(self.alpha0_hz),
            omega_q0: from_hz(self.omega_q0_hz),
            t1: self.t1_s,
            t2_star: self.t2_star_s,
            n_th_q: self.n_th_q,
            eps_ini: self.eps_ini,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnonConfig {
    pub omega_m_hz: f64,
    pub omega_m_g_hz: f64,
    pub gamma_m_hz: f64,
    pub n_th_m: f64,
    pub t1_m_s: f64,
    pub coil_omega_m0_hz: f64,
    pub coil_xi_hz_per_a: f64,
}

impl MagnonConfig {
    fn from_core(m: &MagnonParams) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            omega_m_hz: m.omega_m / tau,
            omega_m_g_hz: m.omega_m_g / tau,
            gamma_m_hz: m.gamma_m / tau,
            n_th_m: m.n_th_m,
            t1_m_s: m.t1_m,
            coil_omega_m0_hz: m.coil_omega_m0 / tau,
            coil_xi_hz_per_a: m.coil_xi / tau,
        }
    }

    fn to_core(&self) -> MagnonParams {
        MagnonParams {
            omega_m: from_hz(self.omega_m_hz),
            omega_m_g: from_hz(self.omega_m_g_hz),
            gamma_m: from_hz(self.gamma_m_hz),
            n_th_m: self.n_th_m,
            t1_m: self.t1_m_s,
            coil_omega_m0: from_hz(self.coil_omega_m0_hz),
            coil_xi: from_hz(self.coil_xi_hz_per_a),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityModeConfig {
    pub index_p: usize,
    pub omega_p_hz: f64,
    pub kappa_total_hz: f64,
    pub kappa_in_hz: f64,
    pub kappa_out_hz: f64,
    pub kappa_int_hz: f64,
    pub g_qp_hz: f64,
    pub g_mp_hz: f64,
}

impl CavityModeConfig {
    fn from_core(c: &CavityModeParams) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            index_p: c.index_p,
            omega_p_hz: c.omega_p / tau,
            kappa_total_hz: c.kappa_total / tau,
            kappa_in_hz: c.kappa_in / tau,
            kappa_out_hz: c.kappa_out / tau,
            kappa_int_hz: c.kappa_int / tau,
            g_qp_hz: c.g_qp / tau,
            g_mp_hz: c.g_mp / tau,
        }
    }

    fn to_core(&self) -> CavityModeParams {
        CavityModeParams {
            index_p: self.index_p,
            omega_p: from_hz(self.omega_p_hz),
            kappa_total: from_hz(self.kappa_total_hz),
            kappa_in: from_hz(self.kappa_in_hz),
            kappa_out: from_hz(self.kappa_out_hz),
            kappa_int: from_hz(self.kappa_int_hz),
            g_qp: from_hz(self.g_qp_hz),
            g_mp: from_hz(self.g_mp_hz),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub eps_g: f64,
    pub eps_e: f64,
    pub delta_t_r_ns: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredConfig {
    pub p_e_given_g_prep: f64,
    pub p_e_given_e_prep: f64,
    pub eps_ini: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub qubit: QubitConfig,
    pub magnon: MagnonConfig,
    pub cavity_modes: Vec<CavityModeConfig>,
    pub chi_qm_hz: f64,
    pub delta_s_hz: f64,
    pub delta_d_hz: f64,
    pub tau_d_ns: f64,
    pub readout: ReadoutConfig,
    pub measured: MeasuredConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::from_core(&default_system())
    }
}

impl SystemConfig {
    pub fn from_core(s: &SystemParams) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            qubit: QubitConfig::from_core(&s.qubit),
            magnon: MagnonConfig::from_core(&s.magnon),
            cavity_modes: s.cavity_modes.iter().map(CavityModeConfig::from_core).collect(),
            chi_qm_hz: s.chi_qm / tau,
            delta_s_hz: s.delta_s / tau,
            delta_d_hz: s.delta_d / tau,
            tau_d_ns: s.tau_d / NS,
            readout: ReadoutConfig {
                eps_g: s.readout.eps_g,
                eps_e: s.readout.eps_e,
                delta_t_r_ns: s.readout.delta_t_r / NS,
            },
            measured: MeasuredConfig {
                p_e_given_g_prep: s.measured.p_e_given_g_prep,
                p_e_given_e_prep: s.measured.p_e_given_e_prep,
                eps_ini: s.measured.eps_ini,
            },
        }
    }

    pub fn to_core(&self) -> SystemParams {
        SystemParams {
            qubit: self.qubit.to_core(),
            magnon: self.magnon.to_core(),
            cavity_modes: self.cavity_modes.iter().map(|c| c.to_core()).collect(),
            chi_qm: from_hz(self.chi_qm_hz),
            delta_s: from_hz(self.delta_s_hz),
            delta_d: from_hz(self.delta_d_hz),
            tau_d: self.tau_d_ns * NS,
            readout: ReadoutModel {
                eps_g: self.readout.eps_g,
                eps_e: self.readout.eps_e,
                delta_t_r: self.readout.delta_t_r_ns * NS,
            },
            measured: MeasuredProbabilities {
                p_e_given_g_prep: self.measured.p_e_given_g_prep,
                p_e_given_e_prep: self.measured.p_e_given_e_prep,
                eps_ini: self.measured.eps_ini,
                eps_pi: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HilbertSection {
    pub n_levels_qubit: usize,
    pub n_levels_magnon: usize,
    pub n_levels_cavity: usize,
    pub n_cavity_modes_included: usize,
}

impl Default for HilbertSection {
    fn default() -> Self {
        let h = HilbertConfig::default();
        Self {
            n_levels_qubit: h.n_levels_qubit,
            n_levels_magnon: h.n_levels_magnon,
            n_levels_cavity: h.n_levels_cavity,
            n_cavity_modes_included: h.n_cavity_modes_included,
        }
    }
}

impl HilbertSection {
    pub fn to_core(&self) -> HilbertConfig {
        HilbertConfig {
            n_levels_qubit: self.n_levels_qubit,
            n_levels_magnon: self.n_levels_magnon,
            n_levels_cavity: self.n_levels_cavity,
            n_cavity_modes_included: self.n_cavity_modes_included,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let c = IntegratorConfig::default();
        Self { rtol: c.rtol, atol: c.atol }
    }
}

fn default_tau_grid() -> Vec<f64> {
    vec![40.0, 80.0, 120.0, 200.0, 320.0, 480.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    /// "x_pi_0" (click on ground) or "x_pi_1" (click on excited).
    pub scheme: String,
    /// Detection time for single-protocol runs (ns).
    pub tau_pi_ns: f64,
    /// Detection-time grid for sweep-tau (ns).
    pub tau_grid_ns: Vec<f64>,
    pub n_amplitudes: usize,
    /// Weighted-population target of the strongest sweep amplitude at the
    /// reference detection time.
    pub n_bar_max: f64,
    /// Reference detection time fixing the shared amplitude grid (ns).
    pub tau_ref_ns: f64,
    /// Leading-edge envelope support in units of the duration.
    pub pulse_lead_factor: f64,
    pub dark_magnon_levels: usize,
    pub base_magnon_levels: usize,
    pub max_magnon_levels: usize,
    /// Include the improved-device projection in sweep-tau output.
    pub improved_device: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            scheme: "x_pi_0".into(),
            tau_pi_ns: 200.0,
            tau_grid_ns: default_tau_grid(),
            n_amplitudes: p.n_amplitudes,
            n_bar_max: p.n_bar_max,
            tau_ref_ns: p.tau_ref / NS,
            pulse_lead_factor: p.pulse_support_factor,
            dark_magnon_levels: p.dark_magnon_levels,
            base_magnon_levels: p.base_magnon_levels,
            max_magnon_levels: p.max_magnon_levels,
            improved_device: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// Control-pulse duration used for the readout-error bounding (ns).
    pub tau_pi_ns: f64,
    /// Scan cap on the readout delay (ns).
    pub delay_cap_ns: f64,
    /// Scan granularity (ns); the instrument resolution.
    pub step_ns: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self { tau_pi_ns: 12.0, delay_cap_ns: 200.0, step_ns: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Control detuning of the Ramsey pulses (Hz).
    pub delta_s_hz: f64,
    /// Steady-state magnon population of the continuous drive.
    pub n_bar: f64,
    /// Frequency span of the model spectrum around the control frequency (Hz).
    pub span_hz: f64,
    pub n_points: usize,
    /// Also run the Lindblad Ramsey sequence and fit its FFT spectrum.
    pub simulate_ramsey: bool,
    pub ramsey_tau_max_us: f64,
    pub ramsey_dt_ns: f64,
    pub pi_half_duration_ns: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            delta_s_hz: -4.0e6,
            n_bar: 0.53,
            span_hz: 32.0e6,
            n_points: 1601,
            simulate_ramsey: false,
            ramsey_tau_max_us: 3.0,
            ramsey_dt_ns: 10.0,
            pi_half_duration_ns: 16.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 = all logical cores.
    pub jobs: usize,
    pub output_dir: String,
    pub emit_trajectory: bool,
    pub system: SystemConfig,
    pub hilbert: HilbertSection,
    pub integrator: IntegratorSection,
    pub protocol: ProtocolSection,
    pub readout_bounds: BoundsSection,
    pub spectrum: SpectrumSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20200515,
            jobs: 0,
            output_dir: "runs".into(),
            emit_trajectory: false,
            system: SystemConfig::default(),
            hilbert: HilbertSection::default(),
            integrator: IntegratorSection::default(),
            protocol: ProtocolSection::default(),
            readout_bounds: BoundsSection::default(),
            spectrum: SpectrumSection::default(),
        }
    }
}

impl RunConfig {
    /// Parse strictly from JSON text; unknown keys are rejected and every
    /// embedded invariant is validated before any run starts.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("parsing run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let system = self.system.to_core();
        system.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.hilbert.to_core().validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        if !(self.integrator.rtol > 0.0) || !(self.integrator.atol > 0.0) {
            bail!("integrator tolerances must be positive");
        }
        if self.protocol.scheme != "x_pi_0" && self.protocol.scheme != "x_pi_1" {
            bail!("scheme must be x_pi_0 or x_pi_1, got {}", self.protocol.scheme);
        }
        if !(self.protocol.tau_pi_ns > 0.0) || self.protocol.tau_grid_ns.iter().any(|t| *t <= 0.0)
        {
            bail!("detection times must be positive");
        }
        if self.protocol.n_amplitudes < 2 {
            bail!("need at least 2 drive amplitudes");
        }
        if !(self.protocol.pulse_lead_factor >= 0.5) {
            bail!("pulse_lead_factor must be at least 0.5");
        }
        if !(self.readout_bounds.step_ns > 0.0) {
            bail!("bounds step must be positive");
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            n_levels_qubit: self.hilbert.n_levels_qubit,
            dark_magnon_levels: self.protocol.dark_magnon_levels,
            base_magnon_levels: self.protocol.base_magnon_levels,
            max_magnon_levels: self.protocol.max_magnon_levels,
            n_amplitudes: self.protocol.n_amplitudes,
            n_bar_max: self.protocol.n_bar_max,
            tau_ref: self.protocol.tau_ref_ns * NS,
            pulse_support_factor: self.protocol.pulse_lead_factor,
            integrator: IntegratorConfig {
                rtol: self.integrator.rtol,
                atol: self.integrator.atol,
                ..IntegratorConfig::default()
            },
        }
    }

    pub fn system_params(&self) -> SystemParams {
        self.system.to_core()
    }

    /// Canonical JSON used for the provenance hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
