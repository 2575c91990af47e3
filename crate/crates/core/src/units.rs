//! Unit conversions between engineering units and the SI quantities used
//! internally, plus a small compile-time dimension check for the closed-form
//! kernel arguments.

use std::f64::consts::PI;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// 10·log10(e): dB per neper of power ratio.
pub const DB_PER_NEPER: f64 = 4.342_944_819_032_518;

/// 20·log10(e) rounded as in the link-budget convention used by config files.
pub const DB_PER_NEPER_FIELD: f64 = 8.685_889_638;

/// Power loss in dB/km to field attenuation in Np/m.
///
/// Power decays as e^{−2αz}, so 1 Np/m of field attenuation is 20·log10(e)
/// dB/m of power loss: 0.2 dB/km gives α ≈ 2.3e-5 Np/m.
pub fn db_per_km_to_field_alpha(loss_db_per_km: f64) -> f64 {
    loss_db_per_km / DB_PER_NEPER_FIELD / 1000.0
}

/// Field attenuation in Np/m to power loss in dB/km.
pub fn field_alpha_to_db_per_km(alpha: f64) -> f64 {
    alpha * 1000.0 * DB_PER_NEPER_FIELD
}

/// Power loss in dB of a span of length `length` [m] with field attenuation `alpha` [Np/m].
pub fn span_loss_db(alpha: f64, length: f64) -> f64 {
    DB_PER_NEPER * 2.0 * alpha * length
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    1e-3 * db_to_linear(dbm)
}

pub fn watt_to_dbm(w: f64) -> f64 {
    linear_to_db(w / 1e-3)
}

/// PSD in W/Hz to dBm/GHz.
pub fn psd_to_dbm_per_ghz(psd: f64) -> f64 {
    watt_to_dbm(psd * 1e9)
}

/// 1 ps/(nm·km) expressed in s/m².
pub const PS_PER_NM_KM: f64 = 1e-6;

/// 1 ps/(nm²·km) expressed in s/m³.
pub const PS_PER_NM2_KM: f64 = 1e3;

/// Converts dispersion D [s/m²] and slope S [s/m³], both referenced at
/// frequency `f_ref` [Hz], into (β2 [s²/m], β3 [s³/m]).
pub fn dispersion_to_betas(d: f64, s: f64, f_ref: f64) -> (f64, f64) {
    let lambda = SPEED_OF_LIGHT / f_ref;
    let k = lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT);
    let beta2 = -d * k;
    let beta3 = k * k * (s + 2.0 * d / lambda);
    (beta2, beta3)
}

/// Local dispersion D [s/m²] at frequency `f` of a fiber described by
/// (β2, β3) Taylor-expanded around `f_center`.
pub fn local_dispersion(beta2: f64, beta3: f64, f_center: f64, f: f64) -> f64 {
    let beta2_local = beta2 + 2.0 * PI * beta3 * (f - f_center);
    -2.0 * PI * f * f / SPEED_OF_LIGHT * beta2_local
}

/// Exponents of (second, metre) for a physical quantity. Hz is s⁻¹, Np/m is m⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimension {
    pub time: i8,
    pub length: i8,
}

impl Dimension {
    pub const NONE: Dimension = Dimension { time: 0, length: 0 };
    pub const HZ: Dimension = Dimension { time: -1, length: 0 };
    pub const METRE: Dimension = Dimension { time: 0, length: 1 };
    pub const PER_METRE: Dimension = Dimension { time: 0, length: -1 };
    pub const BETA2: Dimension = Dimension { time: 2, length: -1 };
    pub const BETA3: Dimension = Dimension { time: 3, length: -1 };

    pub const fn mul(self, other: Dimension) -> Dimension {
        Dimension {
            time: self.time + other.time,
            length: self.length + other.length,
        }
    }

    pub const fn div(self, other: Dimension) -> Dimension {
        Dimension {
            time: self.time - other.time,
            length: self.length - other.length,
        }
    }

    pub const fn is_dimensionless(self) -> bool {
        self.time == 0 && self.length == 0
    }
}

/// β2eff·BW·Δf / (2α0 + kσ): the island kernel argument.
pub const ISLAND_ARG_DIM: Dimension = Dimension::BETA2
    .mul(Dimension::HZ)
    .mul(Dimension::HZ)
    .div(Dimension::PER_METRE);

/// β2eff·L·BW²: the sine-integral argument of the coherence term.
pub const COHERENCE_ARG_DIM: Dimension = Dimension::BETA2
    .mul(Dimension::METRE)
    .mul(Dimension::HZ)
    .mul(Dimension::HZ);

/// π·β3·Δf has the dimension of β2, so β2eff is homogeneous.
pub const BETA2_EFF_DIM_OK: bool = {
    let d = Dimension::BETA3.mul(Dimension::HZ);
    d.time == Dimension::BETA2.time && d.length == Dimension::BETA2.length
};
