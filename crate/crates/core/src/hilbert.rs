//! Operators, Hamiltonians, and dressed-state analysis on truncated Fock
//! spaces.
//!
//! The hybrid system is a transmon (anharmonic ladder), the Kittel mode
//! (harmonic), and a set of microwave cavity modes, with rotating-wave
//! Jaynes-Cummings couplings between the qubit/Kittel mode and each cavity
//! mode. Exact diagonalization of the full Hamiltonian yields dressed
//! frequencies, the qubit-magnon coupling, and the dispersive shift;
//! second-order perturbation theory provides the closed-form counterparts.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

/// Dense complex operator on a truncated Hilbert space.
pub type Operator = DMatrix<C64>;

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Annihilation operator on `n_levels` Fock states: entries sqrt(k) on the
/// first superdiagonal.
pub fn annihilation(n_levels: usize) -> Result<Operator> {
    if n_levels < 2 {
        return Err(Error::Dimension(format!(
            "ladder operator needs at least 2 levels, got {n_levels}"
        )));
    }
    let mut a = Operator::zeros(n_levels, n_levels);
    for k in 1..n_levels {
        a[(k - 1, k)] = re((k as f64).sqrt());
    }
    Ok(a)
}

/// Number operator diag(0, 1, ..., n-1).
pub fn number(n_levels: usize) -> Operator {
    Operator::from_fn(n_levels, n_levels, |i, j| {
        if i == j {
            re(i as f64)
        } else {
            re(0.0)
        }
    })
}

/// Transmon ladder Hamiltonian (omega - alpha/2) n + (alpha/2) n^2, diagonal.
pub fn transmon_hamiltonian(omega: f64, alpha: f64, n_levels: usize) -> Operator {
    Operator::from_fn(n_levels, n_levels, |i, j| {
        if i == j {
            let n = i as f64;
            re((omega - alpha / 2.0) * n + alpha / 2.0 * n * n)
        } else {
            re(0.0)
        }
    })
}

fn kron_chain<'a>(factors: impl Iterator<Item = std::borrow::Cow<'a, Operator>>) -> Operator {
    let mut out = Operator::identity(1, 1);
    for f in factors {
        out = out.kronecker(&f);
    }
    out
}

/// Lift `op` acting on subsystem `slot` to the product space of `dims`.
pub fn embed(op: &Operator, slot: usize, dims: &[usize]) -> Result<Operator> {
    use std::borrow::Cow;
    if slot >= dims.len() {
        return Err(Error::Dimension(format!(
            "slot {slot} out of range for {} subsystems",
            dims.len()
        )));
    }
    if op.nrows() != op.ncols() || op.nrows() != dims[slot] {
        return Err(Error::Dimension(format!(
            "operator is {}x{} but slot {slot} has dimension {}",
            op.nrows(),
            op.ncols(),
            dims[slot]
        )));
    }
    Ok(kron_chain(dims.iter().enumerate().map(|(i, &d)| {
        if i == slot {
            Cow::Borrowed(op)
        } else {
            Cow::Owned(Operator::identity(d, d))
        }
    })))
}

/// Lift a product of two single-subsystem operators on distinct slots.
pub fn embed_pair(
    op_a: &Operator,
    slot_a: usize,
    op_b: &Operator,
    slot_b: usize,
    dims: &[usize],
) -> Result<Operator> {
    use std::borrow::Cow;
    if slot_a == slot_b {
        return Err(Error::Dimension("embed_pair slots must differ".into()));
    }
    for (op, slot) in [(op_a, slot_a), (op_b, slot_b)] {
        if slot >= dims.len() || op.nrows() != dims[slot] || op.nrows() != op.ncols() {
            return Err(Error::Dimension(format!(
                "operator/slot mismatch at slot {slot}"
            )));
        }
    }
    Ok(kron_chain(dims.iter().enumerate().map(|(i, &d)| {
        if i == slot_a {
            Cow::Borrowed(op_a)
        } else if i == slot_b {
            Cow::Borrowed(op_b)
        } else {
            Cow::Owned(Operator::identity(d, d))
        }
    })))
}

/// Flat index of the bare product state with per-slot occupation `levels`.
pub fn product_state_index(levels: &[usize], dims: &[usize]) -> Result<usize> {
    if levels.len() != dims.len() {
        return Err(Error::Dimension("levels/dims length mismatch".into()));
    }
    let mut idx = 0;
    for (l, d) in levels.iter().zip(dims) {
        if l >= d {
            return Err(Error::Dimension(format!("level {l} exceeds truncation {d}")));
        }
        idx = idx * d + l;
    }
    Ok(idx)
}

/// One TE_10p cavity mode: frequency, decay rates, and dipole couplings.
///
/// All frequencies and rates in rad/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CavityModeParams {
    pub index_p: usize,
    pub omega_p: f64,
    pub kappa_total: f64,
    pub kappa_in: f64,
    pub kappa_out: f64,
    pub kappa_int: f64,
    /// Electric-dipole coupling to the qubit.
    pub g_qp: f64,
    /// Magnetic-dipole coupling to the Kittel mode.
    pub g_mp: f64,
}

impl CavityModeParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.kappa_total, self.kappa_in, self.kappa_out, self.kappa_int];
        if rates.iter().any(|r| *r < 0.0 || !r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cavity mode {}: decay rates must be finite and nonnegative",
                self.index_p
            )));
        }
        if self.kappa_total + 1e-9 < self.kappa_in + self.kappa_out {
            return Err(Error::InvalidParameter(format!(
                "cavity mode {}: kappa_total < kappa_in + kappa_out",
                self.index_p
            )));
        }
        // Internal losses account for the remainder, within measurement rounding.
        if self.kappa_total > 0.0 {
            let residual =
                (self.kappa_total - self.kappa_in - self.kappa_out - self.kappa_int).abs();
            if residual > 0.02 * self.kappa_total {
                return Err(Error::InvalidParameter(format!(
                    "cavity mode {}: kappa budget inconsistent by {:.3} MHz",
                    self.index_p,
                    units::to_mhz(residual)
                )));
            }
        }
        if !self.omega_p.is_finite() || !self.g_qp.is_finite() || !self.g_mp.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cavity mode {}: non-finite parameter",
                self.index_p
            )));
        }
        Ok(())
    }
}

/// Transmon parameters. Frequencies/rates in rad/s, times in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QubitParams {
    /// Bare |g>-|e> frequency.
    pub omega_q: f64,
    /// Bare anharmonicity (negative).
    pub alpha: f64,
    /// Dressed anharmonicity.
    pub alpha0: f64,
    /// Dressed frequency with the Kittel mode in vacuum.
    pub omega_q0: f64,
    pub t1: f64,
    pub t2_star: f64,
    /// Thermal occupancy entering the Table S3-style excitation channel.
    pub n_th_q: f64,
    /// Initialization error: excited-state probability at protocol start.
    pub eps_ini: f64,
}

impl QubitParams {
    /// Relaxation rate 1/T1; zero for infinite T1.
    pub fn gamma_1(&self) -> f64 {
        if self.t1.is_finite() {
            1.0 / self.t1
        } else {
            0.0
        }
    }

    /// Total linewidth 2/T2*.
    pub fn gamma_q(&self) -> f64 {
        if self.t2_star.is_finite() {
            2.0 / self.t2_star
        } else {
            0.0
        }
    }

    /// Pure dephasing rate (gamma_q - gamma_1)/2, clamped at zero.
    pub fn gamma_phi(&self) -> f64 {
        0.5 * (self.gamma_q() - self.gamma_1()).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0) || !(self.t2_star > 0.0) {
            return Err(Error::InvalidParameter("T1 and T2* must be positive".into()));
        }
        // Physicality of the derived pure-dephasing rate, with slack for
        // measurement rounding.
        if self.gamma_q() < self.gamma_1() * (1.0 - 1e-9) {
            return Err(Error::InvalidParameter(
                "T2* exceeds 2*T1: negative pure-dephasing rate".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.eps_ini) {
            return Err(Error::InvalidParameter("eps_ini must be in [0, 1)".into()));
        }
        if self.n_th_q < 0.0 {
            return Err(Error::InvalidParameter("n_th_q must be nonnegative".into()));
        }
        for v in [self.omega_q, self.alpha, self.alpha0, self.omega_q0] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite qubit frequency".into()));
            }
        }
        Ok(())
    }

    /// Boltzmann ladder ratio p_{n+1}/p_n implied by `eps_ini` on a
    /// `n_levels`-level ladder, i.e. the r solving
    /// r / (1 + r + ... + r^(d-1)) = eps_ini.
    pub fn thermal_ratio(eps_ini: f64, n_levels: usize) -> f64 {
        if eps_ini <= 0.0 {
            return 0.0;
        }
        // Newton iteration on f(r) = r / sum_k r^k - eps.
        let mut r = eps_ini;
        for _ in 0..60 {
            let z: f64 = (0..n_levels).map(|k| r.powi(k as i32)).sum();
            let dz: f64 = (1..n_levels).map(|k| k as f64 * r.powi(k as i32 - 1)).sum();
            let f = r / z - eps_ini;
            let df = (z - r * dz) / (z * z);
            let step = f / df;
            r -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        r.max(0.0)
    }

    /// Thermal occupancy n = r/(1-r) consistent with `eps_ini` so that the
    /// Table S3 channels leave the initial state stationary before the pulses.
    pub fn consistent_n_th(eps_ini: f64, n_levels: usize) -> f64 {
        let r = Self::thermal_ratio(eps_ini, n_levels);
        r / (1.0 - r)
    }
}

/// Kittel-mode parameters. Frequencies/rates in rad/s, times in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagnonParams {
    /// Bare frequency at the operating point.
    pub omega_m: f64,
    /// Dressed frequency with the qubit in the ground state.
    pub omega_m_g: f64,
    pub gamma_m: f64,
    pub n_th_m: f64,
    /// Magnon lifetime from the pulsed calibration (reference value; the
    /// Lindblad channels use gamma_m).
    pub t1_m: f64,
    /// Coil calibration intercept omega_m(I=0).
    pub coil_omega_m0: f64,
    /// Coil calibration slope, rad/s per ampere.
    pub coil_xi: f64,
}

impl MagnonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_m > 0.0) {
            return Err(Error::InvalidParameter("gamma_m must be positive".into()));
        }
        if self.n_th_m < 0.0 {
            return Err(Error::InvalidParameter("n_th_m must be nonnegative".into()));
        }
        for v in [self.omega_m, self.omega_m_g, self.coil_omega_m0, self.coil_xi] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite magnon parameter".into()));
            }
        }
        Ok(())
    }

    /// Kittel frequency at coil current `i_amps` from the linear calibration.
    pub fn omega_m_at_current(&self, i_amps: f64) -> f64 {
        self.coil_omega_m0 + self.coil_xi * i_amps
    }
}

/// Truncation choices for exact diagonalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HilbertConfig {
    pub n_levels_qubit: usize,
    pub n_levels_magnon: usize,
    pub n_levels_cavity: usize,
    pub n_cavity_modes_included: usize,
}

impl Default for HilbertConfig {
    fn default() -> Self {
        Self {
            n_levels_qubit: 3,
            n_levels_magnon: 8,
            n_levels_cavity: 3,
            n_cavity_modes_included: 4,
        }
    }
}

impl HilbertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels_qubit < 2 || self.n_levels_magnon < 2 || self.n_levels_cavity < 2 {
            return Err(Error::InvalidParameter(
                "all truncations must be at least 2 levels".into(),
            ));
        }
        Ok(())
    }

    /// Subsystem dimensions in slot order [qubit, magnon, cavity_1, ...].
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.n_levels_qubit, self.n_levels_magnon];
        d.extend(std::iter::repeat(self.n_levels_cavity).take(self.n_cavity_modes_included));
        d
    }
}

/// Full hybrid-system Hamiltonian H_c + H_q + H_m + H_{q-c} + H_{m-c} on the
/// qubit (x) magnon (x) cavities product space, rotating-wave couplings.
pub fn build_total_hamiltonian(
    qubit: &QubitParams,
    magnon: &MagnonParams,
    cavities: &[CavityModeParams],
    cfg: &HilbertConfig,
) -> Result<Operator> {
    qubit.validate()?;
    magnon.validate()?;
    cfg.validate()?;
    if cfg.n_cavity_modes_included == 0 {
        return Err(Error::InvalidParameter(
            "at least one cavity mode must be retained".into(),
        ));
    }
    if cavities.len() < cfg.n_cavity_modes_included {
        return Err(Error::Dimension(format!(
            "requested {} cavity modes but only {} provided",
            cfg.n_cavity_modes_included,
            cavities.len()
        )));
    }
    let modes = &cavities[..cfg.n_cavity_modes_included];
    for m in modes {
        m.validate()?;
    }

    let dims = cfg.dims();
    let dim: usize = dims.iter().product();

    let b = annihilation(cfg.n_levels_qubit)?;
    let c_op = annihilation(cfg.n_levels_magnon)?;
    let a = annihilation(cfg.n_levels_cavity)?;

    let mut h = Operator::zeros(dim, dim);
    h += embed(
        &transmon_hamiltonian(qubit.omega_q, qubit.alpha, cfg.n_levels_qubit),
        0,
        &dims,
    )?;
    let n_m = number(cfg.n_levels_magnon) * re(magnon.omega_m);
    h += embed(&n_m, 1, &dims)?;

    let b_dag = b.adjoint();
    let c_dag = c_op.adjoint();
    for (p, mode) in modes.iter().enumerate() {
        let slot = 2 + p;
        let n_p = number(cfg.n_levels_cavity) * re(mode.omega_p);
        h += embed(&n_p, slot, &dims)?;

        let qc = embed_pair(&b_dag, 0, &a, slot, &dims)? * re(mode.g_qp);
        h += &qc + qc.adjoint();
        let mc = embed_pair(&c_dag, 1, &a, slot, &dims)? * re(mode.g_mp);
        h += &mc + mc.adjoint();
    }
    Ok(h)
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: Operator,
}

/// Diagonalize a Hermitian matrix. Fails if the input is not Hermitian to
/// within 1e-10 relative Frobenius norm.
pub fn hermitian_eigen(h: &Operator) -> Result<EigenDecomposition> {
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let asym = (h - h.adjoint()).norm();
    if asym > 1e-10 * scale {
        return Err(Error::InvalidParameter(format!(
            "matrix not Hermitian: relative asymmetry {:.3e}",
            asym / scale
        )));
    }
    let se = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..se.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| se.eigenvalues[i]));
    let vectors = Operator::from_columns(
        &order.iter().map(|&i| se.eigenvectors.column(i).into_owned()).collect::<Vec<_>>(),
    );
    Ok(EigenDecomposition { values, vectors })
}

/// Dressed spectrum with bare-state labeling by maximal overlap.
pub struct DressedStates {
    pub dims: Vec<usize>,
    pub eig: EigenDecomposition,
}

impl DressedStates {
    pub fn new(h: &Operator, dims: Vec<usize>) -> Result<Self> {
        let dim: usize = dims.iter().product();
        if h.nrows() != dim {
            return Err(Error::Dimension(format!(
                "Hamiltonian dimension {} does not match product dimension {dim}",
                h.nrows()
            )));
        }
        Ok(Self { dims, eig: hermitian_eigen(h)? })
    }

    /// Energy of the dressed state labeled by the bare occupation `levels`,
    /// identified by maximal overlap. Returns (energy, overlap probability).
    /// Ties within 1e-9 are broken toward the lower eigenvalue index.
    pub fn labeled_energy(&self, levels: &[usize]) -> Result<(f64, f64)> {
        let idx = product_state_index(levels, &self.dims)?;
        let mut best = (0usize, -1.0f64);
        for k in 0..self.eig.values.len() {
            let w = self.eig.vectors[(idx, k)].norm_sqr();
            if w > best.1 + 1e-9 {
                best = (k, w);
            }
        }
        Ok((self.eig.values[best.0], best.1))
    }

    /// As `labeled_energy` but requires the overlap to exceed 1/2.
    pub fn labeled_energy_strict(&self, levels: &[usize]) -> Result<(f64, f64)> {
        let (e, w) = self.labeled_energy(levels)?;
        if w < 0.5 {
            return Err(Error::AmbiguousLabeling(format!(
                "bare state {levels:?} has maximal overlap {w:.3} < 0.5"
            )));
        }
        Ok((e, w))
    }
}

/// Perturbative cavity-mediated qubit-magnon coupling
/// sum_p g_qp g_mp / (omega_qm - omega_p), with both systems at omega_qm.
pub fn coupling_perturbative(
    cavities: &[CavityModeParams],
    omega_qm: f64,
) -> Result<f64> {
    let mut sum = 0.0;
    for mode in cavities {
        let det = omega_qm - mode.omega_p;
        if det.abs() < 1e-9 * mode.omega_p.abs().max(1.0) {
            return Err(Error::Resonance(format!(
                "omega_qm resonant with cavity mode {}",
                mode.index_p
            )));
        }
        sum += mode.g_qp * mode.g_mp / det;
    }
    Ok(sum)
}

/// Result of the avoided-crossing scan behind `coupling_numeric`.
pub struct CrossingScan {
    /// Bare magnon frequency minimizing the splitting.
    pub omega_m_at_min: f64,
    /// Minimal splitting between the two single-excitation dressed states.
    pub min_splitting: f64,
}

fn single_excitation_gap(
    qubit: &QubitParams,
    magnon: &MagnonParams,
    cavities: &[CavityModeParams],
    cfg: &HilbertConfig,
    omega_m: f64,
) -> Result<f64> {
    let mut m = magnon.clone();
    m.omega_m = omega_m;
    let h = build_total_hamiltonian(qubit, &m, cavities, cfg)?;
    let dims = cfg.dims();
    let eig = hermitian_eigen(&h)?;
    let n_slots = dims.len();
    let mut e_qubit = vec![0usize; n_slots];
    e_qubit[0] = 1;
    let mut e_magnon = vec![0usize; n_slots];
    e_magnon[1] = 1;
    let iq = product_state_index(&e_qubit, &dims)?;
    let im = product_state_index(&e_magnon, &dims)?;

    // The crossing pair: the two dressed states carrying the qubit-like and
    // magnon-like single excitations.
    let mut scored: Vec<(f64, usize)> = (0..eig.values.len())
        .map(|k| {
            let w = eig.vectors[(iq, k)].norm_sqr() + eig.vectors[(im, k)].norm_sqr();
            (w, k)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let (w0, k0) = scored[0];
    let (w1, k1) = scored[1];
    if w0 + w1 < 1.0 {
        return Err(Error::AmbiguousLabeling(format!(
            "single-excitation pair carries combined weight {:.3} < 1; \
             excitation number not conserved in this truncation",
            w0 + w1
        )));
    }
    Ok((eig.values[k0] - eig.values[k1]).abs())
}

/// Numerically determine the qubit-magnon coupling as half the minimal
/// splitting of the avoided crossing, scanning the bare magnon frequency
/// across `omega_qm_guess +- half_window`.
pub fn coupling_numeric(
    qubit: &QubitParams,
    magnon: &MagnonParams,
    cavities: &[CavityModeParams],
    cfg: &HilbertConfig,
    omega_qm_guess: f64,
    half_window: f64,
) -> Result<CrossingScan> {
    let gap = |w: f64| single_excitation_gap(qubit, magnon, cavities, cfg, w);
    // Golden-section minimization of the splitting.
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (omega_qm_guess - half_window, omega_qm_guess + half_window);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = gap(x1)?;
    let mut f2 = gap(x2)?;
    for _ in 0..60 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = gap(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = gap(x2)?;
        }
        if (b - a).abs() < 1e-7 * omega_qm_guess.abs().max(1.0) {
            break;
        }
    }
    let (omega_min, gap_min) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    if (omega_min - omega_qm_guess).abs() > 0.999 * half_window {
        return Err(Error::Bracket(
            "avoided-crossing minimum sits at the scan boundary".into(),
        ));
    }
    Ok(CrossingScan { omega_m_at_min: omega_min, min_splitting: gap_min })
}

/// Dispersive shift chi = alpha0 g^2 / [Delta (Delta + alpha0)],
/// valid in and out of the straddling regime away from its boundaries.
pub fn dispersive_shift_perturbative(g_qm: f64, alpha0: f64, delta_qm: f64) -> Result<f64> {
    let scale = alpha0.abs().max(delta_qm.abs()).max(1.0);
    if delta_qm.abs() < 1e-9 * scale {
        return Err(Error::StraddlingBoundary(
            "qubit-magnon detuning vanishes (pole of the dispersive formula)".into(),
        ));
    }
    if (delta_qm + alpha0).abs() < 1e-9 * scale {
        return Err(Error::StraddlingBoundary(
            "detuning equals -alpha0 (straddling-regime boundary pole)".into(),
        ));
    }
    Ok(alpha0 * g_qm * g_qm / (delta_qm * (delta_qm + alpha0)))
}

/// Dispersive shift from exact diagonalization:
/// chi = [E(e,1) - E(g,1) - E(e,0) + E(g,0)] / 2 with maximal-overlap labels.
pub fn dispersive_shift_numeric(h: &Operator, dims: &[usize]) -> Result<f64> {
    let dressed = DressedStates::new(h, dims.to_vec())?;
    let n = dims.len();
    let state = |q: usize, m: usize| {
        let mut l = vec![0usize; n];
        l[0] = q;
        l[1] = m;
        l
    };
    let (e_g0, _) = dressed.labeled_energy_strict(&state(0, 0))?;
    let (e_g1, _) = dressed.labeled_energy_strict(&state(0, 1))?;
    let (e_e0, _) = dressed.labeled_energy_strict(&state(1, 0))?;
    let (e_e1, _) = dressed.labeled_energy_strict(&state(1, 1))?;
    Ok((e_e1 - e_g1 - e_e0 + e_g0) / 2.0)
}

/// Purcell-limited qubit lifetime 1 / sum_p kappa_p (g_qp / (omega_q - omega_p))^2
/// over the retained modes with known linewidths. `None` when no mode
/// contributes (unbounded lifetime).
pub fn purcell_limit(qubit: &QubitParams, cavities: &[CavityModeParams]) -> Result<Option<f64>> {
    let mut rate = 0.0;
    for mode in cavities {
        if mode.kappa_total <= 0.0 {
            continue;
        }
        let det = qubit.omega_q - mode.omega_p;
        if det.abs() < 1e-6 * mode.omega_p.abs().max(1.0) {
            return Err(Error::Resonance(format!(
                "qubit resonant with cavity mode {}",
                mode.index_p
            )));
        }
        let ratio = mode.g_qp / det;
        rate += mode.kappa_total * ratio * ratio;
    }
    if rate <= 0.0 {
        Ok(None)
    } else {
        Ok(Some(1.0 / rate))
    }
}

/// Solve for the bare Kittel frequency whose dressed frequency
/// E(g,1,vac) - E(g,0,vac) matches `target_dressed` (secant iteration).
pub fn bare_magnon_frequency_for_dressed(
    qubit: &QubitParams,
    magnon: &MagnonParams,
    cavities: &[CavityModeParams],
    cfg: &HilbertConfig,
    target_dressed: f64,
) -> Result<f64> {
    let dressed_of = |omega_bare: f64| -> Result<f64> {
        let mut m = magnon.clone();
        m.omega_m = omega_bare;
        let h = build_total_hamiltonian(qubit, &m, cavities, cfg)?;
        let dressed = DressedStates::new(&h, cfg.dims())?;
        let n = cfg.dims().len();
        let mut g1 = vec![0usize; n];
        g1[1] = 1;
        let (e_g1, _) = dressed.labeled_energy_strict(&g1)?;
        let (e_g0, _) = dressed.labeled_energy_strict(&vec![0usize; n])?;
        Ok(e_g1 - e_g0)
    };
    let mut x0 = target_dressed;
    let mut f0 = dressed_of(x0)? - target_dressed;
    let mut x1 = x0 - f0; // dressing shift is small; first correction
    for _ in 0..20 {
        let f1 = dressed_of(x1)? - target_dressed;
        if f1.abs() < 1e-3 {
            return Ok(x1);
        }
        let denom = f1 - f0;
        if denom.abs() < f64::EPSILON * target_dressed.abs() {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / denom;
        x0 = x1;
        f0 = f1;
        x1 = x2;
    }
    Ok(x1)
}
