//! Noise and secure-key-rate model for a quantum channel sharing a fiber
//! with classical DWDM channels.
//!
//! Noise sources are forward spontaneous Raman scattering, four-wave mixing
//! and adjacent-channel crosstalk, all expressed as optical power inside the
//! receiver filter. Noise power is converted to a per-gate click probability
//! and fed, together with dark counts, into the asymptotic decoy-state GLLP
//! key rate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Channel, ChannelGrid, LinkId, LinkKind, Network, Topology, SPEED_OF_LIGHT};

/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Error probability of a random (noise or dark) click.
const E0: f64 = 0.5;

/// Spontaneous Raman scattering coefficient as a function of the wavelength
/// offset between pump and quantum channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamanProfile {
    /// Absolute wavelength offsets (nm), strictly increasing.
    pub offset_nm: Vec<f64>,
    /// Stokes-side coefficient at each offset, 1/(km nm).
    pub coefficient: Vec<f64>,
    /// Anti-Stokes (quantum channel at shorter wavelength than the pump)
    /// coefficient relative to the Stokes side.
    pub anti_stokes_factor: f64,
}

/// Default shape rises with offset as the Raman gain does below its peak.
/// The absolute scale is a calibration: it puts Raman noise on a fully
/// loaded 30 km span at roughly the level where it starts to cost key rate,
/// alongside four-wave mixing rather than swamping it.
impl Default for RamanProfile {
    fn default() -> Self {
        RamanProfile {
            offset_nm: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 16.0, 20.0],
            coefficient: [1.0, 1.6, 2.4, 3.0, 3.5, 3.9, 4.3, 5.0, 5.6]
                .iter()
                .map(|c| c * 1e-11)
                .collect(),
            anti_stokes_factor: 0.85,
        }
    }
}

impl RamanProfile {
    /// Coefficient for `qch_nm - pump_nm`; positive offsets are Stokes.
    /// Offsets beyond the table clamp to its edge values.
    pub fn coefficient_at(&self, offset_nm: f64) -> f64 {
        let x = offset_nm.abs();
        let (xs, ys) = (&self.offset_nm, &self.coefficient);
        let base = if x <= xs[0] {
            ys[0]
        } else if x >= xs[xs.len() - 1] {
            ys[ys.len() - 1]
        } else {
            let i = xs.partition_point(|&v| v <= x) - 1;
            let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
            ys[i] + t * (ys[i + 1] - ys[i])
        };
        if offset_nm < 0.0 {
            base * self.anti_stokes_factor
        } else {
            base
        }
    }
}

/// Physical constants of the DWDM-QKD system. Every field can be overridden
/// from a TOML file; units are part of the field name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QkdParams {
    pub gate_rate_hz: f64,
    pub detector_efficiency: f64,
    /// Dark count probability per gate.
    pub dark_count_prob: f64,
    pub gate_duration_ps: f64,
    pub visibility: f64,
    pub filter_bandwidth_ghz: f64,
    pub insertion_loss_db: f64,
    pub attenuation_db_per_km: f64,
    /// Signal-state mean photon number.
    pub mean_photon_number: f64,
    pub raman: RamanProfile,
    /// Fiber nonlinear coefficient gamma, 1/(W km).
    pub nonlinear_coefficient: f64,
    pub dispersion_ps_nm_km: f64,
    pub error_correction_efficiency: f64,
    pub sifting_factor: f64,
    /// Isolation of the demultiplexer towards the two neighbouring channels.
    pub adjacent_isolation_db: f64,
}

impl Default for QkdParams {
    fn default() -> Self {
        QkdParams {
            gate_rate_hz: 1e7,
            detector_efficiency: 0.10,
            dark_count_prob: 3e-6,
            gate_duration_ps: 500.0,
            visibility: 0.95,
            filter_bandwidth_ghz: 15.0,
            insertion_loss_db: 8.0,
            attenuation_db_per_km: 0.2,
            mean_photon_number: 0.5,
            raman: RamanProfile::default(),
            nonlinear_coefficient: 1.3,
            dispersion_ps_nm_km: 17.0,
            error_correction_efficiency: 1.16,
            sifting_factor: 0.5,
            adjacent_isolation_db: 110.0,
        }
    }
}

impl QkdParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: QkdParams = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Param(format!("{name} = {v} not in (0, 1]")))
            }
        };
        unit("detector_efficiency", self.detector_efficiency)?;
        unit("visibility", self.visibility)?;
        unit("sifting_factor", self.sifting_factor)?;
        if !(0.0..1.0).contains(&self.dark_count_prob) {
            return Err(Error::Param(format!("dark_count_prob {}", self.dark_count_prob)));
        }
        for (name, v) in [
            ("gate_rate_hz", self.gate_rate_hz),
            ("gate_duration_ps", self.gate_duration_ps),
            ("filter_bandwidth_ghz", self.filter_bandwidth_ghz),
            ("mean_photon_number", self.mean_photon_number),
            ("error_correction_efficiency", self.error_correction_efficiency),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [
            ("insertion_loss_db", self.insertion_loss_db),
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("nonlinear_coefficient", self.nonlinear_coefficient),
            ("dispersion_ps_nm_km", self.dispersion_ps_nm_km),
            ("adjacent_isolation_db", self.adjacent_isolation_db),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} = {v} must be non-negative")));
            }
        }
        let r = &self.raman;
        if r.offset_nm.is_empty()
            || r.offset_nm.len() != r.coefficient.len()
            || r.offset_nm.windows(2).any(|w| w[0] >= w[1])
            || r.coefficient.iter().any(|&c| c < 0.0)
            || !(r.anti_stokes_factor >= 0.0)
        {
            return Err(Error::Param("malformed Raman profile".into()));
        }
        Ok(())
    }

    /// Attenuation in 1/km.
    pub fn alpha_per_km(&self) -> f64 {
        self.attenuation_db_per_km * std::f64::consts::LN_10 / 10.0
    }

    /// Fiber plus DWDM insertion loss seen by the quantum signal.
    pub fn channel_loss_db(&self, length_km: f64) -> f64 {
        self.attenuation_db_per_km * length_km + self.insertion_loss_db
    }

    fn error_det(&self) -> f64 {
        (1.0 - self.visibility) / 2.0
    }
}

/// A classical channel as seen by the noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalSignal {
    pub channel: Channel,
    pub frequency_thz: f64,
    pub power_mw: f64,
}

impl ClassicalSignal {
    pub fn wavelength_nm(&self) -> f64 {
        thz_to_nm(self.frequency_thz)
    }
}

pub fn thz_to_nm(f_thz: f64) -> f64 {
    SPEED_OF_LIGHT / (f_thz * 1e12) * 1e9
}

/// Receiver filter bandwidth expressed in nm at `wavelength_nm`.
pub fn filter_width_nm(wavelength_nm: f64, params: &QkdParams) -> f64 {
    let lambda = wavelength_nm * 1e-9;
    lambda * lambda * params.filter_bandwidth_ghz * 1e9 / SPEED_OF_LIGHT * 1e9
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseBreakdown {
    pub raman_w: f64,
    pub fwm_w: f64,
    pub crosstalk_w: f64,
    pub p_noise_click: f64,
}

impl NoiseBreakdown {
    pub fn total_w(&self) -> f64 {
        self.raman_w + self.fwm_w + self.crosstalk_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkrEstimate {
    pub gain: f64,
    pub qber: f64,
    pub single_photon_gain: f64,
    pub single_photon_error: f64,
    pub rate_bps: f64,
    pub noise: NoiseBreakdown,
}

/// Forward spontaneous Raman noise collected by the quantum receiver:
/// `sum_c P_c e^{-aL} L rho(lambda_q - lambda_c) d_lambda_f`.
pub fn raman_noise_power(
    signals: &[ClassicalSignal],
    qch_wavelength_nm: f64,
    length_km: f64,
    params: &QkdParams,
) -> f64 {
    let width = filter_width_nm(qch_wavelength_nm, params);
    let transfer = (-params.alpha_per_km() * length_km).exp() * length_km * width;
    signals
        .iter()
        .map(|s| {
            let rho = params.raman.coefficient_at(qch_wavelength_nm - s.wavelength_nm());
            s.power_mw * 1e-3 * rho * transfer
        })
        .sum()
}

/// Phase-matching efficiency of an FWM product for frequency offsets
/// `df_ik`, `df_jk` (Hz).
pub fn fwm_efficiency(df_ik_hz: f64, df_jk_hz: f64, wavelength_nm: f64, length_km: f64, params: &QkdParams) -> f64 {
    let lambda = wavelength_nm * 1e-9;
    // ps/(nm km) -> s/m^2
    let d = params.dispersion_ps_nm_km * 1e-6;
    let delta_beta_per_km =
        2.0 * std::f64::consts::PI * lambda * lambda / SPEED_OF_LIGHT * d * df_ik_hz.abs() * df_jk_hz.abs() * 1e3;
    let alpha = params.alpha_per_km();
    let decay = (-alpha * length_km).exp();
    let a2 = alpha * alpha;
    let b2 = delta_beta_per_km * delta_beta_per_km;
    if a2 + b2 == 0.0 {
        return 1.0;
    }
    let s = (delta_beta_per_km * length_km / 2.0).sin();
    let oscillation = if alpha > 0.0 {
        4.0 * decay * s * s / ((1.0 - decay) * (1.0 - decay))
    } else {
        0.0
    };
    a2 / (a2 + b2) * (1.0 + oscillation)
}

/// Effective nonlinear length (km).
pub fn effective_length_km(length_km: f64, params: &QkdParams) -> f64 {
    let alpha = params.alpha_per_km();
    if alpha > 0.0 {
        (1.0 - (-alpha * length_km).exp()) / alpha
    } else {
        length_km
    }
}

/// Power of one FWM product generated by pumps `i`, `j` and `k`
/// (`f_i + f_j - f_k` falls on the quantum channel). Powers in W.
pub fn fwm_product_power(
    p_i: f64,
    p_j: f64,
    p_k: f64,
    degenerate: bool,
    efficiency: f64,
    length_km: f64,
    params: &QkdParams,
) -> f64 {
    let dg = if degenerate { 3.0 } else { 6.0 };
    let gamma = params.nonlinear_coefficient;
    let leff = effective_length_km(length_km, params);
    efficiency / 9.0
        * dg
        * dg
        * gamma
        * gamma
        * p_i
        * p_j
        * p_k
        * (-params.alpha_per_km() * length_km).exp()
        * leff
        * leff
}

/// Total FWM power falling on the quantum channel. Each product is counted
/// once per unordered pump pair `{i, j}` and distinct `k`.
pub fn fwm_noise_power(
    signals: &[ClassicalSignal],
    qch_frequency_thz: f64,
    length_km: f64,
    params: &QkdParams,
) -> f64 {
    let lambda_q = thz_to_nm(qch_frequency_thz);
    let tolerance = 1e-6;
    let mut total = 0.0;
    for (a, si) in signals.iter().enumerate() {
        for sj in &signals[a..] {
            for sk in signals {
                if sk.channel == si.channel || sk.channel == sj.channel {
                    continue;
                }
                let f = si.frequency_thz + sj.frequency_thz - sk.frequency_thz;
                if (f - qch_frequency_thz).abs() > tolerance {
                    continue;
                }
                let eff = fwm_efficiency(
                    (si.frequency_thz - sk.frequency_thz) * 1e12,
                    (sj.frequency_thz - sk.frequency_thz) * 1e12,
                    lambda_q,
                    length_km,
                    params,
                );
                total += fwm_product_power(
                    si.power_mw * 1e-3,
                    sj.power_mw * 1e-3,
                    sk.power_mw * 1e-3,
                    si.channel == sj.channel,
                    eff,
                    length_km,
                    params,
                );
            }
        }
    }
    total
}

/// Leakage of the two neighbouring channels through the demultiplexer.
pub fn crosstalk_noise_power(signals: &[ClassicalSignal], qch: Channel, isolation_db: f64) -> f64 {
    let leak = 10f64.powf(-isolation_db / 10.0);
    signals
        .iter()
        .filter(|s| s.channel.0.abs_diff(qch.0) == 1)
        .map(|s| s.power_mw * 1e-3 * leak)
        .sum()
}

/// Probability of a noise-induced click per detection gate.
pub fn noise_click_prob(total_noise_w: f64, qch_wavelength_nm: f64, params: &QkdParams) -> f64 {
    (total_noise_w * clicks_per_watt(qch_wavelength_nm, params)).min(1.0)
}

fn clicks_per_watt(wavelength_nm: f64, params: &QkdParams) -> f64 {
    let photon_energy = PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9);
    params.gate_duration_ps * 1e-12 * params.detector_efficiency / photon_energy
}

fn transmittance(channel_loss_db: f64, params: &QkdParams) -> f64 {
    10f64.powf(-channel_loss_db / 10.0) * params.detector_efficiency
}

/// Signal-state gain and QBER.
pub fn gain_and_qber(channel_loss_db: f64, p_noise: f64, params: &QkdParams) -> (f64, f64) {
    let eta = transmittance(channel_loss_db, params);
    let mu = params.mean_photon_number;
    let background = (params.dark_count_prob + p_noise).min(1.0);
    let signal = 1.0 - (-mu * eta).exp();
    let gain = 1.0 - (1.0 - background) * (-mu * eta).exp();
    if gain <= 0.0 {
        return (0.0, 0.5);
    }
    let qber = (E0 * background + params.error_det() * signal) / gain;
    (gain, qber.min(0.5))
}

pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Single-photon yield and error rate from the infinite-decoy estimates.
pub fn single_photon(channel_loss_db: f64, p_noise: f64, params: &QkdParams) -> (f64, f64, f64) {
    let eta = transmittance(channel_loss_db, params);
    let y0 = (params.dark_count_prob + p_noise).min(1.0);
    let y1 = y0 + eta - y0 * eta;
    let mu = params.mean_photon_number;
    let q1 = mu * (-mu).exp() * y1;
    let e1 = if y1 > 0.0 {
        ((E0 * y0 + params.error_det() * eta) / y1).min(0.5)
    } else {
        0.5
    };
    (y1, q1, e1)
}

/// GLLP lower bound on the secure key rate (bit/s), clamped at zero.
pub fn skr_gllp(gain: f64, qber: f64, channel_loss_db: f64, p_noise: f64, params: &QkdParams) -> f64 {
    let (_, q1, e1) = single_photon(channel_loss_db, p_noise, params);
    let per_pulse = -gain * params.error_correction_efficiency * binary_entropy(qber)
        + q1 * (1.0 - binary_entropy(e1));
    (params.sifting_factor * params.gate_rate_hz * per_pulse).max(0.0)
}

/// Full estimate for a given loss and noise click probability.
pub fn estimate(channel_loss_db: f64, noise: NoiseBreakdown, params: &QkdParams) -> SkrEstimate {
    let p = noise.p_noise_click;
    let (gain, qber) = gain_and_qber(channel_loss_db, p, params);
    let (_, q1, e1) = single_photon(channel_loss_db, p, params);
    SkrEstimate {
        gain,
        qber,
        single_photon_gain: q1,
        single_photon_error: e1,
        rate_bps: skr_gllp(gain, qber, channel_loss_db, p, params),
        noise,
    }
}

/// Classical signals currently on `link`.
pub fn link_signals(network: &Network, link: LinkId) -> Vec<ClassicalSignal> {
    let grid = network.topology().grid();
    network
        .data_signals(link)
        .map(|(channel, power_mw)| ClassicalSignal {
            channel,
            frequency_thz: grid.frequency_thz(channel),
            power_mw,
        })
        .collect()
}

/// Noise on `qch` of `link` from the link's present classical occupancy.
pub fn link_noise(network: &Network, link: LinkId, qch: Channel, params: &QkdParams) -> NoiseBreakdown {
    let grid = network.topology().grid();
    let length = network.link(link).length_km;
    let signals = link_signals(network, link);
    let raman_w = raman_noise_power(&signals, grid.wavelength_nm(qch), length, params);
    let fwm_w = fwm_noise_power(&signals, grid.frequency_thz(qch), length, params);
    let crosstalk_w = crosstalk_noise_power(&signals, qch, params.adjacent_isolation_db);
    let p_noise_click = noise_click_prob(raman_w + fwm_w + crosstalk_w, grid.wavelength_nm(qch), params);
    NoiseBreakdown {
        raman_w,
        fwm_w,
        crosstalk_w,
        p_noise_click,
    }
}

/// Key rate of a quantum channel placed at `qch` on a MUX link, given the
/// link's current classical occupancy.
pub fn evaluate_link_skr(
    network: &Network,
    link: LinkId,
    qch: Channel,
    params: &QkdParams,
) -> Result<SkrEstimate> {
    if link.0 >= network.link_count() {
        return Err(Error::UnknownLink(link));
    }
    if network.link(link).kind != LinkKind::Mux {
        return Err(Error::NotMux(link));
    }
    if qch.0 == 0 || qch.0 > network.channels() {
        return Err(Error::Channel(link, qch, "index out of range"));
    }
    let noise = link_noise(network, link, qch, params);
    Ok(estimate(params.channel_loss_db(network.link(link).length_km), noise, params))
}

struct FwmTerm {
    i: usize,
    j: usize,
    k: usize,
    /// Product power per W^3 of pump.
    coef: f64,
}

struct LinkTables {
    loss_db: f64,
    /// `raman[q][c]`: noise W on slot q per W launched on slot c.
    raman: Vec<Vec<f64>>,
    fwm: Vec<Vec<FwmTerm>>,
    /// Clicks per gate per W of noise, per quantum slot.
    click_per_w: Vec<f64>,
}

/// Precomputed per-link coefficients for fast repeated evaluation of
/// [`evaluate_link_skr`] during simulation. Results agree with the direct
/// formulas up to floating-point summation order.
pub struct SkrEvaluator {
    params: QkdParams,
    links: Vec<Option<LinkTables>>,
    leak: f64,
}

impl SkrEvaluator {
    pub fn new(topology: &Topology, params: &QkdParams) -> Self {
        let grid = topology.grid();
        let c = topology.channels();
        let links = topology
            .links()
            .iter()
            .map(|l| {
                (l.kind == LinkKind::Mux).then(|| build_tables(grid, c, l.length_km, params))
            })
            .collect();
        SkrEvaluator {
            params: params.clone(),
            links,
            leak: 10f64.powf(-params.adjacent_isolation_db / 10.0),
        }
    }

    pub fn params(&self) -> &QkdParams {
        &self.params
    }

    /// Total noise power (W) at `qch`; panics on data-only links.
    pub fn noise_w(&self, network: &Network, link: LinkId, qch: Channel) -> f64 {
        let t = self.links[link.0].as_ref().expect("MUX link");
        let states = network.link_states(link);
        let q = qch.slot();
        let mut powers = [0.0f64; 64];
        let powers = &mut powers[..states.len().min(64)];
        let mut total = 0.0;
        for (c, s) in states.iter().enumerate().take(powers.len()) {
            if let crate::network::ChannelState::Data { power_mw, .. } = s {
                let w = power_mw * 1e-3;
                powers[c] = w;
                total += w * t.raman[q][c];
                if c.abs_diff(q) == 1 {
                    total += w * self.leak;
                }
            }
        }
        for term in &t.fwm[q] {
            let p = powers[term.i] * powers[term.j] * powers[term.k];
            if p > 0.0 {
                total += term.coef * p;
            }
        }
        total
    }

    pub fn link_skr(&self, network: &Network, link: LinkId, qch: Channel) -> f64 {
        let t = self.links[link.0].as_ref().expect("MUX link");
        let p_noise = (self.noise_w(network, link, qch) * t.click_per_w[qch.slot()]).min(1.0);
        let (gain, qber) = gain_and_qber(t.loss_db, p_noise, &self.params);
        skr_gllp(gain, qber, t.loss_db, p_noise, &self.params)
    }
}

fn build_tables(grid: &ChannelGrid, channels: usize, length_km: f64, params: &QkdParams) -> LinkTables {
    let ch = |slot: usize| Channel::from_slot(slot);
    let mut raman = vec![vec![0.0; channels]; channels];
    let mut fwm: Vec<Vec<FwmTerm>> = (0..channels).map(|_| Vec::new()).collect();
    let mut click_per_w = vec![0.0; channels];
    for q in 0..channels {
        let lq = grid.wavelength_nm(ch(q));
        let fq = grid.frequency_thz(ch(q));
        click_per_w[q] = clicks_per_watt(lq, params);
        for c in 0..channels {
            if c == q {
                continue;
            }
            let unit = ClassicalSignal {
                channel: ch(c),
                frequency_thz: grid.frequency_thz(ch(c)),
                power_mw: 1e3,
            };
            raman[q][c] = raman_noise_power(&[unit], lq, length_km, params);
        }
        for i in 0..channels {
            for j in i..channels {
                for k in 0..channels {
                    if k == i || k == j || i == q || j == q || k == q {
                        continue;
                    }
                    let (fi, fj, fk) = (
                        grid.frequency_thz(ch(i)),
                        grid.frequency_thz(ch(j)),
                        grid.frequency_thz(ch(k)),
                    );
                    if (fi + fj - fk - fq).abs() > 1e-6 {
                        continue;
                    }
                    let eff = fwm_efficiency((fi - fk) * 1e12, (fj - fk) * 1e12, lq, length_km, params);
                    let coef = fwm_product_power(1.0, 1.0, 1.0, i == j, eff, length_km, params);
                    fwm[q].push(FwmTerm { i, j, k, coef });
                }
            }
        }
    }
    LinkTables {
        loss_db: params.channel_loss_db(length_km),
        raman,
        fwm,
        click_per_w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_topology, SpanSpec, TopologySpec};

    fn sig(ch: usize, mw: f64) -> ClassicalSignal {
        let grid = ChannelGrid::default();
        ClassicalSignal {
            channel: Channel(ch),
            frequency_thz: grid.frequency_thz(Channel(ch)),
            power_mw: mw,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn raman_scalar_closed_form() {
        let mut p = QkdParams::default();
        p.raman = RamanProfile {
            offset_nm: vec![0.0, 30.0],
            coefficient: vec![2e-9, 2e-9],
            anti_stokes_factor: 1.0,
        };
        // pick a bandwidth giving exactly 0.12 nm at 1550 nm
        p.filter_bandwidth_ghz = 0.12e-9 * SPEED_OF_LIGHT / (1550e-9 * 1550e-9) / 1e9;
        let pump = ClassicalSignal {
            channel: Channel(2),
            frequency_thz: SPEED_OF_LIGHT / 1548e-9 / 1e12,
            power_mw: 1.0,
        };
        let got = raman_noise_power(&[pump], 1550.0, 20.0, &p);
        let expected = 1e-3 * 10f64.powf(-0.2 * 20.0 / 10.0) * 20.0 * 2e-9 * 0.12;
        assert!(rel(got, expected) < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn raman_linear_and_empty() {
        let p = QkdParams::default();
        assert_eq!(raman_noise_power(&[], 1550.0, 10.0, &p), 0.0);
        let a = raman_noise_power(&[sig(2, 1.0), sig(5, 0.4)], 1551.0, 10.0, &p);
        let b = raman_noise_power(&[sig(2, 2.0), sig(5, 0.8)], 1551.0, 10.0, &p);
        assert!(rel(b, 2.0 * a) < 1e-12);
    }

    #[test]
    fn raman_profile_clamps_and_scales_anti_stokes() {
        let r = RamanProfile::default();
        assert_eq!(r.coefficient_at(100.0), *r.coefficient.last().unwrap());
        assert!((r.coefficient_at(1.0) - 1.3e-11).abs() < 1e-24);
        assert!((r.coefficient_at(-1.0) - 1.3e-11 * r.anti_stokes_factor).abs() < 1e-24);
    }

    #[test]
    fn fwm_matches_brute_force_enumeration() {
        let p = QkdParams::default();
        let grid = ChannelGrid::default();
        let q = Channel(4);
        let fq = grid.frequency_thz(q);
        let signals = [sig(2, 1.0), sig(3, 2.0), sig(5, 0.5)];
        // Every (i, j, k) with i <= j, k distinct from both, hitting f_q.
        let mut expected = 0.0;
        let mut hits = 0;
        for a in 0..3 {
            for b in a..3 {
                for c in 0..3 {
                    if c == a || c == b {
                        continue;
                    }
                    let (si, sj, sk) = (signals[a], signals[b], signals[c]);
                    if (si.frequency_thz + sj.frequency_thz - sk.frequency_thz - fq).abs() > 1e-6 {
                        continue;
                    }
                    hits += 1;
                    let lambda = grid.wavelength_nm(q) * 1e-9;
                    let dbeta = 2.0 * std::f64::consts::PI * lambda * lambda / SPEED_OF_LIGHT
                        * 17e-6
                        * ((si.frequency_thz - sk.frequency_thz) * 1e12).abs()
                        * ((sj.frequency_thz - sk.frequency_thz) * 1e12).abs()
                        * 1e3;
                    let alpha = 0.2 / 4.342_944_819_032_518;
                    let l = 15.0;
                    let eta = alpha * alpha / (alpha * alpha + dbeta * dbeta)
                        * (1.0
                            + 4.0 * (-alpha * l).exp() * (dbeta * l / 2.0).sin().powi(2)
                                / (1.0 - (-alpha * l).exp()).powi(2));
                    let dg: f64 = if a == b { 3.0 } else { 6.0 };
                    let leff = (1.0 - (-alpha * l).exp()) / alpha;
                    expected += eta / 9.0 * dg * dg * 1.3 * 1.3
                        * si.power_mw * sj.power_mw * sk.power_mw * 1e-9
                        * (-alpha * l).exp() * leff * leff;
                }
            }
        }
        // 2+5-3 and 3+3-2 land on channel 4
        assert_eq!(hits, 2);
        let got = fwm_noise_power(&signals, fq, 15.0, &p);
        assert!(rel(got, expected) < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn fwm_trivial_cases_and_cubic_scaling() {
        let p = QkdParams::default();
        let grid = ChannelGrid::default();
        let fq = grid.frequency_thz(Channel(1));
        assert_eq!(fwm_noise_power(&[sig(2, 1.0)], fq, 10.0, &p), 0.0);
        // 2 and 8 cannot produce channel 1 (2+2-8 is off-grid negative side)
        assert_eq!(fwm_noise_power(&[sig(2, 1.0), sig(8, 1.0)], fq, 10.0, &p), 0.0);
        let s = [sig(2, 1.0), sig(3, 0.7), sig(5, 2.0)];
        let a = fwm_noise_power(&s, fq, 10.0, &p);
        assert!(a > 0.0);
        let s2: Vec<_> = s.iter().map(|x| ClassicalSignal { power_mw: x.power_mw * 2.0, ..*x }).collect();
        assert!(rel(fwm_noise_power(&s2, fq, 10.0, &p), 8.0 * a) < 1e-12);
    }

    #[test]
    fn crosstalk_arithmetic() {
        assert!((crosstalk_noise_power(&[sig(3, 1.0)], Channel(4), 100.0) - 1e-13).abs() < 1e-25);
        assert_eq!(crosstalk_noise_power(&[sig(6, 1.0)], Channel(4), 100.0), 0.0);
        let both = crosstalk_noise_power(&[sig(3, 1.0), sig(5, 2.0), sig(7, 5.0)], Channel(4), 100.0);
        assert!((both - 3e-13).abs() < 1e-25);
        assert!(crosstalk_noise_power(&[sig(5, 1.0)], Channel(4), 300.0) < 1e-32);
    }

    #[test]
    fn click_probability_from_photon_energy() {
        let p = QkdParams::default();
        assert_eq!(noise_click_prob(0.0, 1550.0, &p), 0.0);
        let h_nu: f64 = 6.62607015e-34 * 299_792_458.0 / 1550e-9;
        assert!((h_nu - 1.28e-19).abs() < 0.01e-19);
        let expected = 1e-12 / h_nu * 500e-12 * 0.1;
        let got = noise_click_prob(1e-12, 1550.0, &p);
        assert!(rel(got, expected) < 1e-12);
        assert!((got - 3.9e-4).abs() < 0.05e-4);
        assert!(noise_click_prob(2e-12, 1550.0, &p) >= got);
        assert_eq!(noise_click_prob(1.0, 1550.0, &p), 1.0);
    }

    #[test]
    fn qber_at_zero_noise_equals_detector_error() {
        let mut p = QkdParams::default();
        p.dark_count_prob = 0.0;
        let (_, e) = gain_and_qber(12.0, 0.0, &p);
        assert!((e - 0.025).abs() < 1e-12);
        let (_, e) = gain_and_qber(12.0, 0.9, &QkdParams::default());
        assert!(e > 0.49);
    }

    #[test]
    fn gain_and_qber_closed_form() {
        let p = QkdParams::default();
        let eta = 10f64.powf(-1.2) * 0.1;
        let q = 1.0 - (1.0 - 3e-6) * (-0.5 * eta).exp();
        let e = (0.5 * 3e-6 + 0.025 * (1.0 - (-0.5 * eta).exp())) / q;
        let (gq, ge) = gain_and_qber(12.0, 0.0, &p);
        assert!(rel(gq, q) < 1e-12 && rel(ge, e) < 1e-12);
    }

    #[test]
    fn binary_entropy_identities() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-12);
        for x in [0.01, 0.1, 0.3, 0.45] {
            assert!((binary_entropy(x) - binary_entropy(1.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_zero_at_saturated_qber_and_monotone_in_noise() {
        let p = QkdParams::default();
        assert_eq!(skr_gllp(1e-3, 0.5, 13.0, 1e-3, &p), 0.0);
        let mut last = f64::INFINITY;
        for i in 0..60 {
            let noise = 1e-8 * 1.3f64.powi(i);
            let (g, e) = gain_and_qber(13.0, noise, &p);
            let r = skr_gllp(g, e, 13.0, noise, &p);
            assert!(r <= last + 1e-9);
            last = r;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn dark_count_limited_rate_near_reference() {
        // 25 km, no classical traffic
        let est = estimate(QkdParams::default().channel_loss_db(25.0), NoiseBreakdown::default(), &QkdParams::default());
        assert!(est.rate_bps > 4400.0 / 3.0 && est.rate_bps < 4400.0 * 3.0, "{}", est.rate_bps);
        assert!(est.single_photon_gain <= est.gain);
    }

    fn single_link(length: f64) -> Network {
        let spec = TopologySpec {
            nodes: 2,
            channels: 8,
            grid: ChannelGrid::default(),
            spans: vec![SpanSpec::new(0, 1, length)],
        };
        build_topology(&spec).unwrap()
    }

    #[test]
    fn empty_link_is_channel_symmetric() {
        let net = single_link(20.0);
        let p = QkdParams::default();
        let r: Vec<f64> = (1..=8)
            .map(|c| evaluate_link_skr(&net, LinkId(0), Channel(c), &p).unwrap().rate_bps)
            .collect();
        assert!(r.iter().all(|&x| x == r[0] && x > 0.0));
        assert!(matches!(
            evaluate_link_skr(&net, LinkId(1), Channel(1), &p),
            Err(Error::NotMux(_))
        ));
    }

    #[test]
    fn evaluator_agrees_with_direct_composition() {
        let mut net = single_link(17.0);
        for (w, dbm) in [(2, 3.0), (3, -2.0), (5, 4.5), (6, 0.0)] {
            net.establish(NodeId(0), NodeId(1), Channel(w), 5, dbm);
        }
        let p = QkdParams::default();
        let ev = SkrEvaluator::new(net.topology(), &p);
        for c in [1, 4, 7, 8] {
            let direct = evaluate_link_skr(&net, LinkId(0), Channel(c), &p).unwrap();
            let fast_noise = ev.noise_w(&net, LinkId(0), Channel(c));
            assert!(rel(fast_noise, direct.noise.total_w()) < 1e-9);
            let fast = ev.link_skr(&net, LinkId(0), Channel(c));
            assert!((fast - direct.rate_bps).abs() <= 1e-9 * direct.rate_bps.max(1.0));
        }
    }

    use crate::network::NodeId;

    #[test]
    fn more_traffic_never_helps() {
        let p = QkdParams::default();
        let mut net = single_link(10.0);
        let mut prev: Vec<f64> = (1..=8)
            .map(|c| evaluate_link_skr(&net, LinkId(0), Channel(c), &p).unwrap().rate_bps)
            .collect();
        for w in [3, 5, 8, 2] {
            net.establish(NodeId(0), NodeId(1), Channel(w), 5, 0.0);
            for c in 1..=8 {
                let r = evaluate_link_skr(&net, LinkId(0), Channel(c), &p).unwrap().rate_bps;
                assert!(r <= prev[c - 1]);
                prev[c - 1] = r;
            }
        }
    }

    #[test]
    fn params_toml_override() {
        let p = QkdParams::from_toml_str("visibility = 0.9\n[raman]\noffset_nm = [0.0, 5.0]\ncoefficient = [1e-9, 2e-9]\nanti_stokes_factor = 0.5\n").unwrap();
        assert_eq!(p.visibility, 0.9);
        assert_eq!(p.gate_rate_hz, 1e7);
        assert!(QkdParams::from_toml_str("visibility = 1.5").is_err());
    }
}
