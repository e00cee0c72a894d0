//! Time-dependent Lindblad dynamics of the driven qubit (x) magnon system in
//! the doubly-rotating frame.
//!
//! The static effective Hamiltonian is diagonal in the product Fock basis:
//! (Delta_s - alpha/2) n_b + (alpha/2) n_b^2 + Delta_d n_c
//! + 2 chi n_b n_c, with the drives Omega_s(t)(b + b+) and
//! Omega_d(t)(c + c+) as the only off-diagonal terms. The generator exploits
//! this: the coherent part costs O(dim^2) elementwise work plus sparse
//! applications of the banded drive and collapse operators.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{annihilation, embed, number, Operator, QubitParams};
use crate::integrate::{integrate, IntegratorConfig, OdeSystem};
use crate::pulses::{GaussianPulse, PulseSchedule};
use crate::system::SystemParams;

/// Drive envelope: a windowed Gaussian pulse or a constant (always-on) tone.
#[derive(Debug, Clone)]
pub enum DriveEnvelope {
    Gaussian(GaussianPulse),
    Constant(f64),
}

impl DriveEnvelope {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DriveEnvelope::Gaussian(p) => p.envelope(t),
            DriveEnvelope::Constant(a) => *a,
        }
    }

    /// Support window of a pulsed envelope. The integrator must land on the
    /// edges: an adaptive step grown across an idle stretch would otherwise
    /// hop over a short pulse without its stages ever sampling it.
    pub fn window(&self) -> Option<(f64, f64)> {
        match self {
            DriveEnvelope::Gaussian(p) if p.amplitude != 0.0 => {
                Some((p.center - p.support_before, p.center + p.support_after))
            }
            _ => None,
        }
    }
}

/// Which subsystem a drive couples to, via (b + b+) or (c + c+).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveOp {
    Qubit,
    Magnon,
}

#[derive(Debug, Clone)]
pub struct DriveTerm {
    pub envelope: DriveEnvelope,
    pub op: DriveOp,
}

/// Effective drive-frame Hamiltonian specification on the qubit (x) magnon
/// space. All rates in rad/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveHamiltonian {
    pub n_qubit: usize,
    pub n_magnon: usize,
    /// Qubit drive detuning omega_q0 - omega_s.
    pub delta_s: f64,
    /// Magnon drive detuning omega_m^g - omega_d.
    pub delta_d: f64,
    /// Anharmonicity of the dressed transmon.
    pub alpha: f64,
    /// Dispersive shift; the qubit frequency moves by 2 chi per magnon.
    pub chi_qm: f64,
}

impl EffectiveHamiltonian {
    pub fn from_system(system: &SystemParams, n_qubit: usize, n_magnon: usize) -> Self {
        Self {
            n_qubit,
            n_magnon,
            delta_s: system.delta_s,
            delta_d: system.delta_d,
            alpha: system.qubit.alpha0,
            chi_qm: system.chi_qm,
        }
    }

    pub fn with_delta_s(mut self, delta_s: f64) -> Self {
        self.delta_s = delta_s;
        self
    }

    pub fn dim(&self) -> usize {
        self.n_qubit * self.n_magnon
    }

    /// Diagonal of the static part in the product basis (qubit-major).
    pub fn static_diagonal(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.dim());
        for q in 0..self.n_qubit {
            let nq = q as f64;
            let eq = (self.delta_s - self.alpha / 2.0) * nq + self.alpha / 2.0 * nq * nq;
            for m in 0..self.n_magnon {
                let nm = m as f64;
                e.push(eq + self.delta_d * nm + 2.0 * self.chi_qm * nq * nm);
            }
        }
        e
    }

    /// Full dense Hamiltonian at time `t` given drive terms (for tests and
    /// the generic RHS path).
    pub fn dense_at(&self, t: f64, drives: &[DriveTerm]) -> Result<Operator> {
        let dims = [self.n_qubit, self.n_magnon];
        let diag = self.static_diagonal();
        let mut h = Operator::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                C64::new(diag[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        for d in drives {
            let om = d.envelope.eval(t);
            if om == 0.0 {
                continue;
            }
            let x = drive_operator(d.op, &dims)?;
            h += x * C64::new(om, 0.0);
        }
        Ok(h)
    }
}

/// (b + b+) or (c + c+) on the product space.
pub fn drive_operator(op: DriveOp, dims: &[usize; 2]) -> Result<Operator> {
    let (slot, n) = match op {
        DriveOp::Qubit => (0, dims[0]),
        DriveOp::Magnon => (1, dims[1]),
    };
    let a = annihilation(n)?;
    let x = &a + a.adjoint();
    embed(&x, slot, dims)
}

/// One Lindblad collapse channel: rate (1/s) and operator.
#[derive(Debug, Clone)]
pub struct CollapseChannel {
    pub rate: f64,
    pub operator: Operator,
}

impl CollapseChannel {
    pub fn new(rate: f64, operator: Operator) -> Result<Self> {
        if rate < 0.0 || !rate.is_finite() {
            return Err(Error::InvalidParameter("collapse rate must be finite and >= 0".into()));
        }
        Ok(Self { rate, operator })
    }
}

/// The standard channel set: qubit relaxation/excitation/pure dephasing and
/// magnon relaxation/excitation. Zero-rate channels are dropped.
pub fn standard_channels(system: &SystemParams, n_qubit: usize, n_magnon: usize) -> Result<Vec<CollapseChannel>> {
    let dims = [n_qubit, n_magnon];
    let b = embed(&annihilation(n_qubit)?, 0, &dims)?;
    let c = embed(&annihilation(n_magnon)?, 1, &dims)?;
    let n_b = embed(&number(n_qubit), 0, &dims)?;

    let q = &system.qubit;
    let m = &system.magnon;
    let candidates = [
        (q.gamma_1() * (1.0 + q.n_th_q), b.clone()),
        (q.gamma_1() * q.n_th_q, b.adjoint()),
        (2.0 * q.gamma_phi(), n_b),
        (m.gamma_m * (1.0 + m.n_th_m), c.clone()),
        (m.gamma_m * m.n_th_m, c.adjoint()),
    ];
    Ok(candidates
        .into_iter()
        .filter(|(rate, _)| *rate > 0.0)
        .map(|(rate, operator)| CollapseChannel { rate, operator })
        .collect())
}

/// Hermitian, unit-trace state on the truncated product space.
#[derive(Debug, Clone)]
pub struct DensityMatrix(pub Operator);

impl DensityMatrix {
    pub fn from_matrix(m: Operator) -> Result<Self> {
        let dm = Self(m);
        dm.validate()?;
        Ok(dm)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Pure product state |q, m>.
    pub fn fock(q: usize, m: usize, n_qubit: usize, n_magnon: usize) -> Self {
        let dim = n_qubit * n_magnon;
        let idx = q * n_magnon + m;
        let mut rho = Operator::zeros(dim, dim);
        rho[(idx, idx)] = C64::new(1.0, 0.0);
        Self(rho)
    }

    /// Thermal qubit ladder consistent with the initialization error,
    /// magnon in vacuum.
    pub fn thermal_qubit_vacuum(eps_ini: f64, n_qubit: usize, n_magnon: usize) -> Self {
        let r = QubitParams::thermal_ratio(eps_ini, n_qubit);
        let weights: Vec<f64> = (0..n_qubit).map(|q| r.powi(q as i32)).collect();
        let z: f64 = weights.iter().sum();
        let dim = n_qubit * n_magnon;
        let mut rho = Operator::zeros(dim, dim);
        for (q, w) in weights.iter().enumerate() {
            rho[(q * n_magnon, q * n_magnon)] = C64::new(w / z, 0.0);
        }
        Self(rho)
    }

    /// Thermal qubit ladder with a coherent magnon state per qubit level
    /// (conditional steady states under a continuous drive).
    pub fn thermal_qubit_coherent(
        eps_ini: f64,
        n_qubit: usize,
        n_magnon: usize,
        betas: &[C64],
    ) -> Self {
        let r = QubitParams::thermal_ratio(eps_ini, n_qubit);
        let weights: Vec<f64> = (0..n_qubit).map(|q| r.powi(q as i32)).collect();
        let z: f64 = weights.iter().sum();
        let dim = n_qubit * n_magnon;
        let mut rho = Operator::zeros(dim, dim);
        for (q, w) in weights.iter().enumerate() {
            let psi = coherent_state(betas[q.min(betas.len() - 1)], n_magnon);
            for i in 0..n_magnon {
                for j in 0..n_magnon {
                    rho[(q * n_magnon + i, q * n_magnon + j)] +=
                        C64::new(w / z, 0.0) * psi[i] * psi[j].conj();
                }
            }
        }
        Self(rho)
    }

    /// Hermiticity, unit trace, and positivity within tolerance.
    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension("density matrix must be square".into()));
        }
        let herm = (m - m.adjoint()).norm();
        if herm > 1e-10 * m.norm().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "density matrix not Hermitian: deviation {herm:.3e}"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace {tr} deviates from one"
            )));
        }
        let eig = m.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-7 {
            return Err(Error::InvalidParameter(format!(
                "density matrix has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }

    /// Per-level qubit populations (magnon traced out).
    pub fn qubit_populations(&self, n_qubit: usize, n_magnon: usize) -> Vec<f64> {
        let mut p = vec![0.0; n_qubit];
        for q in 0..n_qubit {
            for m in 0..n_magnon {
                p[q] += self.0[(q * n_magnon + m, q * n_magnon + m)].re;
            }
        }
        p
    }

    /// Mean magnon number.
    pub fn magnon_number(&self, n_qubit: usize, n_magnon: usize) -> f64 {
        let mut n = 0.0;
        for q in 0..n_qubit {
            for m in 0..n_magnon {
                n += m as f64 * self.0[(q * n_magnon + m, q * n_magnon + m)].re;
            }
        }
        n
    }
}

/// Truncated coherent-state amplitudes, renormalized on the truncated space.
pub fn coherent_state(beta: C64, n_levels: usize) -> Vec<C64> {
    let mut amp = Vec::with_capacity(n_levels);
    let mut term = C64::new(1.0, 0.0);
    amp.push(term);
    for n in 1..n_levels {
        term *= beta / C64::new((n as f64).sqrt(), 0.0);
        amp.push(term);
    }
    let norm: f64 = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in &mut amp {
        *a /= C64::new(norm, 0.0);
    }
    amp
}

/// Time series of qubit-level populations and the magnon population.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `levels[q][k]` is the population of qubit level q at `times[k]`.
    pub levels: Vec<Vec<f64>>,
    pub magnon: Vec<f64>,
}

impl Trajectory {
    pub fn p_g(&self) -> &[f64] {
        &self.levels[0]
    }

    pub fn p_e(&self) -> &[f64] {
        &self.levels[1]
    }

    /// Two-outcome folding of the readout: the bright response tracks the
    /// |e> population, so everything else (including |f>) registers on the
    /// ground side: p~_g = 1 - p~_e.
    pub fn folded_p_g(&self, k: usize) -> f64 {
        1.0 - self.levels[1][k]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Population bookkeeping: levels sum to one and stay in range.
    pub fn validate(&self) -> Result<()> {
        for k in 0..self.len() {
            let sum: f64 = self.levels.iter().map(|l| l[k]).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter(format!(
                    "populations sum to {sum} at t = {:.3e}",
                    self.times[k]
                )));
            }
            for l in &self.levels {
                if !(-1e-8..=1.0 + 1e-8).contains(&l[k]) {
                    return Err(Error::InvalidParameter(format!(
                        "population {} out of range at t = {:.3e}",
                        l[k], self.times[k]
                    )));
                }
            }
        }
        Ok(())
    }

    /// CSV rows `time_ns,p_g,p_e,p_f,n_m` (levels beyond f folded into p_f).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns,p_g,p_e,p_f,n_m\n");
        for k in 0..self.len() {
            let p_g = self.levels[0][k];
            let p_e = if self.levels.len() > 1 { self.levels[1][k] } else { 0.0 };
            let p_f: f64 = self.levels.iter().skip(2).map(|l| l[k]).sum();
            out.push_str(&format!(
                "{:.6},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                self.times[k] * 1e9,
                p_g,
                p_e,
                p_f,
                self.magnon[k]
            ));
        }
        out
    }
}

/// Sparse operator applied by triplets; fast for the banded ladder operators.
struct SparseOp {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn from_dense(m: &Operator) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.nrows() {
            for l in 0..m.ncols() {
                let v = m[(j, l)];
                if v.norm_sqr() > 0.0 {
                    entries.push((j, l, v));
                }
            }
        }
        Self { entries }
    }

    /// out += coeff * (M rho)
    fn add_left_mul(&self, coeff: C64, rho: &Operator, out: &mut Operator) {
        let n = rho.nrows();
        let rs = rho.as_slice();
        let os = out.as_mut_slice();
        for k in 0..n {
            let col = k * n;
            for &(j, l, v) in &self.entries {
                os[col + j] += coeff * v * rs[col + l];
            }
        }
    }

    /// out += coeff * (rho M)
    fn add_right_mul(&self, coeff: C64, rho: &Operator, out: &mut Operator) {
        let n = rho.nrows();
        let rs = rho.as_slice();
        let os = out.as_mut_slice();
        for &(l, k, v) in &self.entries {
            let cv = coeff * v;
            let (src, dst) = (l * n, k * n);
            for j in 0..n {
                os[dst + j] += cv * rs[src + j];
            }
        }
    }

    /// out = M rho
    fn left_mul_into(&self, rho: &Operator, out: &mut Operator) {
        out.as_mut_slice().fill(C64::new(0.0, 0.0));
        self.add_left_mul(C64::new(1.0, 0.0), rho, out);
    }

    /// out += coeff * (X M+): for triplets (k, l, v) of M,
    /// out[:, k] += coeff * conj(v) * X[:, l].
    fn add_mul_adjoint_right(&self, coeff: C64, x: &Operator, out: &mut Operator) {
        let n = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for &(k, l, v) in &self.entries {
            let cv = coeff * v.conj();
            let (src, dst) = (l * n, k * n);
            for j in 0..n {
                os[dst + j] += cv * xs[src + j];
            }
        }
    }
}

struct PreparedChannel {
    rate: f64,
    l: SparseOp,
    /// Diagonal of L+L when it is diagonal (ladder and number operators).
    ldagl_diag: Option<Vec<f64>>,
    ldagl: Option<SparseOp>,
}

impl PreparedChannel {
    fn new(rate: f64, op: &Operator) -> Self {
        let ldagl_dense = op.adjoint() * op;
        let n = ldagl_dense.nrows();
        let mut off_diag = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off_diag += ldagl_dense[(i, j)].norm_sqr();
                }
            }
        }
        if off_diag < 1e-28 {
            let diag = (0..n).map(|i| ldagl_dense[(i, i)].re).collect();
            Self { rate, l: SparseOp::from_dense(op), ldagl_diag: Some(diag), ldagl: None }
        } else {
            Self {
                rate,
                l: SparseOp::from_dense(op),
                ldagl_diag: None,
                ldagl: Some(SparseOp::from_dense(&ldagl_dense)),
            }
        }
    }
}

/// Lindblad generator specialized to a diagonal static Hamiltonian plus
/// banded drives and collapse operators.
pub struct LindbladGenerator {
    dim: usize,
    energies: Vec<f64>,
    drives: Vec<(DriveEnvelope, SparseOp)>,
    channels: Vec<PreparedChannel>,
    scratch: Operator,
}

impl LindbladGenerator {
    pub fn new(
        h: &EffectiveHamiltonian,
        drives: &[DriveTerm],
        channels: &[CollapseChannel],
    ) -> Result<Self> {
        let dim = h.dim();
        let dims = [h.n_qubit, h.n_magnon];
        let mut prepared_drives = Vec::new();
        for d in drives {
            let x = drive_operator(d.op, &dims)?;
            prepared_drives.push((d.envelope.clone(), SparseOp::from_dense(&x)));
        }
        let mut prepared_channels = Vec::new();
        for ch in channels {
            if ch.operator.nrows() != dim || ch.operator.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "collapse operator is {}x{} but the state dimension is {dim}",
                    ch.operator.nrows(),
                    ch.operator.ncols()
                )));
            }
            if ch.rate < 0.0 {
                return Err(Error::InvalidParameter("negative collapse rate".into()));
            }
            if ch.rate > 0.0 {
                prepared_channels.push(PreparedChannel::new(ch.rate, &ch.operator));
            }
        }
        Ok(Self {
            dim,
            energies: h.static_diagonal(),
            drives: prepared_drives,
            channels: prepared_channels,
            scratch: Operator::zeros(dim, dim),
        })
    }
}

impl OdeSystem for LindbladGenerator {
    fn rhs(&mut self, t: f64, rho: &Operator, out: &mut Operator) {
        let n = self.dim;
        out.as_mut_slice().fill(C64::new(0.0, 0.0));

        // -i [H_diag, rho]
        {
            let rs = rho.as_slice();
            let os = out.as_mut_slice();
            for k in 0..n {
                let ek = self.energies[k];
                let col = k * n;
                for j in 0..n {
                    let w = self.energies[j] - ek;
                    if w != 0.0 {
                        let r = rs[col + j];
                        os[col + j] += C64::new(w * r.im, -w * r.re);
                    }
                }
            }
        }

        // -i Omega(t) [X, rho]
        for (env, x) in &self.drives {
            let om = env.eval(t);
            if om != 0.0 {
                x.add_left_mul(C64::new(0.0, -om), rho, out);
                x.add_right_mul(C64::new(0.0, om), rho, out);
            }
        }

        // Dissipators gamma (L rho L+ - 1/2 {L+L, rho})
        let mut scratch = std::mem::replace(&mut self.scratch, Operator::zeros(0, 0));
        for ch in &self.channels {
            ch.l.left_mul_into(rho, &mut scratch);
            ch.l.add_mul_adjoint_right(C64::new(ch.rate, 0.0), &scratch, out);
            if let Some(diag) = &ch.ldagl_diag {
                let rs = rho.as_slice();
                let os = out.as_mut_slice();
                for k in 0..n {
                    let col = k * n;
                    let dk = diag[k];
                    for j in 0..n {
                        let w = 0.5 * ch.rate * (diag[j] + dk);
                        if w != 0.0 {
                            os[col + j] -= C64::new(w, 0.0) * rs[col + j];
                        }
                    }
                }
            } else if let Some(m) = &ch.ldagl {
                let half = C64::new(-0.5 * ch.rate, 0.0);
                m.add_left_mul(half, rho, out);
                m.add_right_mul(half, rho, out);
            }
        }
        self.scratch = scratch;
    }
}

/// Single evaluation of the Lindblad right-hand side at time `t`.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    t: f64,
    h: &EffectiveHamiltonian,
    drives: &[DriveTerm],
    channels: &[CollapseChannel],
) -> Result<Operator> {
    if rho.dim() != h.dim() {
        return Err(Error::Dimension(format!(
            "state dimension {} does not match Hamiltonian dimension {}",
            rho.dim(),
            h.dim()
        )));
    }
    let mut gen = LindbladGenerator::new(h, drives, channels)?;
    let mut out = Operator::zeros(rho.dim(), rho.dim());
    gen.rhs(t, &rho.0, &mut out);
    Ok(out)
}

/// Integrate the master equation, invoking `sink` at every output-grid time.
pub fn evolve_with<F: FnMut(usize, f64, &Operator)>(
    rho0: &DensityMatrix,
    h: &EffectiveHamiltonian,
    drives: &[DriveTerm],
    channels: &[CollapseChannel],
    grid: &[f64],
    integ: &IntegratorConfig,
    mut sink: F,
) -> Result<()> {
    if rho0.dim() != h.dim() {
        return Err(Error::Dimension(format!(
            "state dimension {} does not match Hamiltonian dimension {}",
            rho0.dim(),
            h.dim()
        )));
    }
    if grid.is_empty() {
        return Ok(());
    }
    let mut gen = LindbladGenerator::new(h, drives, channels)?;
    let t0 = grid[0];
    let t_end = *grid.last().unwrap();

    // Merge drive-window edges into the stop list. An adaptive step grown
    // across an idle stretch would otherwise hop over a short pulse without
    // its stages ever sampling it. Only original grid points reach the sink.
    let mut stops: Vec<(f64, Option<usize>)> =
        grid.iter().enumerate().map(|(k, &t)| (t, Some(k))).collect();
    for d in drives {
        if let Some((lo, hi)) = d.envelope.window() {
            for edge in [lo, hi] {
                if edge > t0 && edge < t_end {
                    stops.push((edge, None));
                }
            }
        }
    }
    stops.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.is_none().cmp(&b.1.is_none()))
    });
    stops.dedup_by(|next, kept| {
        if (next.0 - kept.0).abs() < 1e-15 {
            if kept.1.is_none() {
                kept.1 = next.1;
            }
            true
        } else {
            false
        }
    });
    let times: Vec<f64> = stops.iter().map(|s| s.0).collect();
    integrate(&mut gen, t0, &rho0.0, &times, integ, |k, t, y| {
        if let Some(idx) = stops[k].1 {
            sink(idx, t, y);
        }
    })
}

/// Full state history on the output grid.
pub struct Evolution {
    pub n_qubit: usize,
    pub n_magnon: usize,
    pub times: Vec<f64>,
    pub states: Vec<Operator>,
}

impl Evolution {
    pub fn trajectory(&self) -> Trajectory {
        let mut levels = vec![Vec::with_capacity(self.times.len()); self.n_qubit];
        let mut magnon = Vec::with_capacity(self.times.len());
        for s in &self.states {
            let dm = DensityMatrix(s.clone());
            let p = dm.qubit_populations(self.n_qubit, self.n_magnon);
            for (q, pq) in p.iter().enumerate() {
                levels[q].push(*pq);
            }
            magnon.push(dm.magnon_number(self.n_qubit, self.n_magnon));
        }
        Trajectory { times: self.times.clone(), levels, magnon }
    }

    pub fn final_state(&self) -> DensityMatrix {
        DensityMatrix(self.states.last().unwrap().clone())
    }

    /// Expectation series of an operator on the product space.
    pub fn expectation(&self, op: &Operator) -> Vec<C64> {
        self.states.iter().map(|s| (op * s).trace()).collect()
    }
}

/// Integrate and keep every state on the grid.
pub fn evolve_states(
    rho0: &DensityMatrix,
    h: &EffectiveHamiltonian,
    drives: &[DriveTerm],
    channels: &[CollapseChannel],
    grid: &[f64],
    integ: &IntegratorConfig,
) -> Result<Evolution> {
    let mut states = Vec::with_capacity(grid.len());
    let mut times = Vec::with_capacity(grid.len());
    evolve_with(rho0, h, drives, channels, grid, integ, |_, t, s| {
        times.push(t);
        states.push(s.clone());
    })?;
    Ok(Evolution { n_qubit: h.n_qubit, n_magnon: h.n_magnon, times, states })
}

/// Integrate a full protocol schedule and stream expectation values.
pub fn evolve(
    rho0: &DensityMatrix,
    schedule: &PulseSchedule,
    h: &EffectiveHamiltonian,
    channels: &[CollapseChannel],
    grid: &[f64],
    integ: &IntegratorConfig,
) -> Result<Trajectory> {
    schedule.validate()?;
    let n_qubit = h.n_qubit;
    let n_magnon = h.n_magnon;
    let mut levels = vec![Vec::with_capacity(grid.len()); n_qubit];
    let mut magnon = Vec::with_capacity(grid.len());
    let mut times = Vec::with_capacity(grid.len());
    evolve_with(rho0, h, &schedule.drive_terms(), channels, grid, integ, |_, t, s| {
        times.push(t);
        let dm = DensityMatrix(s.clone_owned());
        let p = dm.qubit_populations(n_qubit, n_magnon);
        for (q, pq) in p.iter().enumerate() {
            levels[q].push(*pq);
        }
        magnon.push(dm.magnon_number(n_qubit, n_magnon));
    })?;
    Ok(Trajectory { times, levels, magnon })
}

/// Fast path for calibration: the folded ground-state probability
/// p~_g(t_r) = 1 - p~_e(t_r) of a protocol run, with no intermediate outputs.
pub fn evolve_folded_ground_probability(
    rho0: &DensityMatrix,
    schedule: &PulseSchedule,
    h: &EffectiveHamiltonian,
    channels: &[CollapseChannel],
    integ: &IntegratorConfig,
) -> Result<f64> {
    let grid = [0.0, schedule.t_r()];
    let mut p_g = f64::NAN;
    let (nq, nm) = (h.n_qubit, h.n_magnon);
    evolve_with(rho0, h, &schedule.drive_terms(), channels, &grid, integ, |k, _, s| {
        if k == 1 {
            let dm = DensityMatrix(s.clone_owned());
            p_g = 1.0 - dm.qubit_populations(nq, nm)[1];
        }
    })?;
    Ok(p_g)
}

/// Ramsey sequence settings. The pi/2 pulses share one duration and use half
/// the calibrated pi-pulse amplitude.
#[derive(Debug, Clone)]
pub struct RamseyConfig {
    /// Detuning of the pi/2 pulses from the dressed qubit frequency.
    pub delta_s: f64,
    pub pi_half_duration: f64,
    pub pi_half_amplitude: f64,
    /// Continuous magnon drive amplitude (zero for plain Ramsey).
    pub drive_amplitude: f64,
    /// Pre-evolution under the continuous drive before the first pulse.
    pub settle_time: f64,
    /// Delay between the end of the second pulse window and the readout.
    pub readout_delay: f64,
}

/// Ramsey interferometry: two pi/2 pulses separated by a free evolution of
/// length tau, under an optional continuous magnon excitation. Returns
/// (tau, p_e) with p_e = 1 - p_g at the readout instant.
pub fn ramsey_evolve(
    system: &SystemParams,
    h: &EffectiveHamiltonian,
    cfg: &RamseyConfig,
    taus: &[f64],
    integ: &IntegratorConfig,
) -> Result<Vec<(f64, f64)>> {
    if taus.is_empty() {
        return Err(Error::Grid("empty tau grid".into()));
    }
    for w in taus.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Grid("tau grid must be strictly increasing".into()));
        }
    }
    let channels = standard_channels(system, h.n_qubit, h.n_magnon)?;

    // Conditional coherent steady states of the driven Kittel mode.
    let betas: Vec<C64> = (0..h.n_qubit)
        .map(|q| {
            let det = h.delta_d + 2.0 * h.chi_qm * q as f64;
            C64::new(0.0, -cfg.drive_amplitude) / C64::new(system.magnon.gamma_m / 2.0, det)
        })
        .collect();
    let mut rho = DensityMatrix::thermal_qubit_coherent(
        system.qubit.eps_ini,
        h.n_qubit,
        h.n_magnon,
        &betas,
    );

    let magnon_drive = DriveTerm {
        envelope: DriveEnvelope::Constant(cfg.drive_amplitude),
        op: DriveOp::Magnon,
    };

    // Settle any residual transient of the drive before the first pulse.
    if cfg.settle_time > 0.0 && cfg.drive_amplitude != 0.0 {
        let ev = evolve_states(
            &rho,
            h,
            std::slice::from_ref(&magnon_drive),
            &channels,
            &[0.0, cfg.settle_time],
            integ,
        )?;
        rho = ev.final_state();
    }

    let pulse_window = 2.0 * crate::pulses::SUPPORT_FACTOR * cfg.pi_half_duration;
    let pi_half = |rho_in: &DensityMatrix, extra: f64| -> Result<DensityMatrix> {
        let pulse = GaussianPulse::new(
            cfg.pi_half_amplitude,
            pulse_window / 2.0,
            cfg.pi_half_duration,
        );
        let drives = vec![
            magnon_drive.clone(),
            DriveTerm { envelope: DriveEnvelope::Gaussian(pulse), op: DriveOp::Qubit },
        ];
        let ev = evolve_states(rho_in, h, &drives, &channels, &[0.0, pulse_window + extra], integ)?;
        Ok(ev.final_state())
    };

    // First pi/2 pulse, then one pass over the free evolution, storing the
    // state at every requested tau.
    let rho1 = pi_half(&rho, 0.0)?;
    let mut grid: Vec<f64> = Vec::with_capacity(taus.len() + 1);
    if taus[0] > 0.0 {
        grid.push(0.0);
    }
    grid.extend_from_slice(taus);
    let free = evolve_states(&rho1, h, std::slice::from_ref(&magnon_drive), &channels, &grid, integ)?;

    let offset = grid.len() - taus.len();
    let mut series = Vec::with_capacity(taus.len());
    for (i, &tau) in taus.iter().enumerate() {
        let state = DensityMatrix(free.states[offset + i].clone());
        let after = pi_half(&state, cfg.readout_delay)?;
        let p_e = after.qubit_populations(h.n_qubit, h.n_magnon)[1];
        series.push((tau, p_e));
    }
    Ok(series)
}
