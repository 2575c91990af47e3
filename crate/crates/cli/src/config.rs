//! Link description documents.
//!
//! A document is TOML. Keys carry their unit as a suffix (`_km`, `_thz`,
//! `_dbm`, ...) and are converted to SI on load; see `docs/input-schema.md`.

use std::path::Path;

use nli_core::link::{AmpGain, Channel, Link, RamanGainProfile, Span};
use nli_core::units::{
    db_per_km_to_field_alpha, db_to_linear, dbm_to_watt, dispersion_to_betas, PS_PER_NM2_KM, PS_PER_NM_KM,
};
use serde::Deserialize;

const THZ: f64 = 1e12;
const GHZ: f64 = 1e9;
const KM: f64 = 1e3;

/// Errors raised while reading a document, before link validation.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    /// TOML syntax or type error; the message carries line and column.
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    /// A well-formed document with a missing or unusable field.
    #[error("{path}: {field}: {message}")]
    Field {
        path: String,
        field: String,
        message: String,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(default)]
    channels: ChannelsDoc,
    #[serde(default)]
    spans: Vec<SpanDoc>,
    /// 1-based channel indices (after frequency ordering) to evaluate.
    cut: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelsDoc {
    #[serde(default)]
    comb: Vec<CombDoc>,
    #[serde(default)]
    list: Vec<ChannelDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CombDoc {
    count: usize,
    /// Either the first channel's center or the comb center.
    f_first_thz: Option<f64>,
    f_center_thz: Option<f64>,
    spacing_ghz: f64,
    bandwidth_ghz: f64,
    power_dbm: f64,
    #[serde(default = "default_phi")]
    phi: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelDoc {
    f_center_thz: f64,
    bandwidth_ghz: f64,
    power_dbm: f64,
    #[serde(default = "default_phi")]
    phi: f64,
    #[serde(default)]
    pump: bool,
}

fn default_phi() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerChannel {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GainDoc {
    Scalar(f64),
    List(Vec<f64>),
    Keyword(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanDoc {
    #[serde(default = "one")]
    repeat: usize,
    length_km: Option<f64>,
    loss_db_per_km: Option<PerChannel>,
    gamma_per_w_km: Option<f64>,
    dispersion_ps_nm_km: Option<f64>,
    #[serde(default)]
    slope_ps_nm2_km: f64,
    f_taylor_center_thz: Option<f64>,
    amp_gain_db: Option<GainDoc>,
    raman: Option<RamanDoc>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RamanDoc {
    None,
    Triangular {
        c_r_max_per_w_km: f64,
        delta_f_thz: f64,
    },
    /// `[[u_thz, c_r_per_w_km], ...]`
    Tabulated {
        samples: Vec<(f64, f64)>,
    },
}

/// Reads, converts and validates a link document.
///
/// Validation errors come back as `Err`; warnings are returned next to the
/// link so the caller can decide whether they are fatal.
pub fn load_link(path: &Path) -> Result<Link, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let link = parse_link(&text, &path.display().to_string())?;
    link.ensure_valid()?;
    Ok(link)
}

/// Either a document problem or a link that failed validation.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Invalid(#[from] nli_core::Error),
}

/// Converts document text into a `Link` without validating it.
pub fn parse_link(text: &str, origin: &str) -> Result<Link, ConfigError> {
    let doc: Document = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let field = |field: String, message: String| ConfigError::Field {
        path: origin.to_string(),
        field,
        message,
    };

    let mut channels = Vec::new();
    for (i, c) in doc.channels.comb.iter().enumerate() {
        let name = format!("channels.comb[{i}]");
        let spacing = c.spacing_ghz * GHZ;
        let first = match (c.f_first_thz, c.f_center_thz) {
            (Some(f), None) => f * THZ,
            (None, Some(f)) => f * THZ - spacing * (c.count as f64 - 1.0) / 2.0,
            _ => return Err(field(name, "give exactly one of f_first_thz and f_center_thz".into())),
        };
        let bw = c.bandwidth_ghz * GHZ;
        let psd = dbm_to_watt(c.power_dbm) / bw;
        for k in 0..c.count {
            let mut ch = Channel::new(0, first + spacing * k as f64, bw, psd);
            ch.mod_format_phi = c.phi;
            channels.push(ch);
        }
    }
    for c in &doc.channels.list {
        let bw = c.bandwidth_ghz * GHZ;
        let power = dbm_to_watt(c.power_dbm);
        let mut ch = if c.pump {
            Channel::pump(0, c.f_center_thz * THZ, bw, power)
        } else {
            Channel::new(0, c.f_center_thz * THZ, bw, power / bw)
        };
        ch.mod_format_phi = c.phi;
        channels.push(ch);
    }
    channels.sort_by(|a, b| a.f_center.total_cmp(&b.f_center));
    for (k, ch) in channels.iter_mut().enumerate() {
        ch.index = k + 1;
    }
    let n = channels.len();
    let comb_center = match (channels.first(), channels.last()) {
        (Some(a), Some(b)) => 0.5 * (a.f_center + b.f_center),
        _ => 0.0,
    };

    let mut spans = Vec::new();
    for (i, s) in doc.spans.iter().enumerate() {
        let name = |key: &str| format!("spans[{i}].{key}");
        let missing = |key: &str| field(name(key), format!("span {i} is missing required field {key}"));
        let length = s.length_km.ok_or_else(|| missing("length_km"))? * KM;
        let gamma = s.gamma_per_w_km.ok_or_else(|| missing("gamma_per_w_km"))? / KM;
        let d = s.dispersion_ps_nm_km.ok_or_else(|| missing("dispersion_ps_nm_km"))?;
        let loss = s.loss_db_per_km.as_ref().ok_or_else(|| missing("loss_db_per_km"))?;
        let intrinsic_alpha = match loss {
            PerChannel::Scalar(v) => vec![db_per_km_to_field_alpha(*v); n],
            PerChannel::List(v) if v.len() == n => v.iter().map(|&x| db_per_km_to_field_alpha(x)).collect(),
            PerChannel::List(v) => {
                return Err(field(
                    name("loss_db_per_km"),
                    format!("expected {n} per-channel values, got {}", v.len()),
                ))
            }
        };
        let f_taylor_center = s.f_taylor_center_thz.map_or(comb_center, |f| f * THZ);
        let (beta2, beta3) = dispersion_to_betas(d * PS_PER_NM_KM, s.slope_ps_nm2_km * PS_PER_NM2_KM, f_taylor_center);
        let amp_gain = match &s.amp_gain_db {
            None => AmpGain::Transparent,
            Some(GainDoc::Keyword(k)) if k == "transparent" => AmpGain::Transparent,
            Some(GainDoc::Keyword(k)) => {
                return Err(field(
                    name("amp_gain_db"),
                    format!("expected a number, a list or \"transparent\", got \"{k}\""),
                ))
            }
            Some(GainDoc::Scalar(g)) => AmpGain::PerChannel(vec![db_to_linear(*g); n]),
            Some(GainDoc::List(g)) if g.len() == n => AmpGain::PerChannel(g.iter().map(|&x| db_to_linear(x)).collect()),
            Some(GainDoc::List(g)) => {
                return Err(field(
                    name("amp_gain_db"),
                    format!("expected {n} per-channel values, got {}", g.len()),
                ))
            }
        };
        let raman = match &s.raman {
            None | Some(RamanDoc::None) => Ok(RamanGainProfile::none()),
            Some(RamanDoc::Triangular {
                c_r_max_per_w_km,
                delta_f_thz,
            }) => RamanGainProfile::triangular(c_r_max_per_w_km / KM, delta_f_thz * THZ),
            Some(RamanDoc::Tabulated { samples }) => {
                RamanGainProfile::tabulated(samples.iter().map(|&(u, c)| (u * THZ, c / KM)).collect())
            }
        }
        .map_err(|e| field(name("raman"), e.to_string()))?;
        if s.repeat == 0 {
            return Err(field(name("repeat"), "must be at least 1".into()));
        }
        let span = Span {
            length,
            gamma,
            beta2,
            beta3,
            f_taylor_center,
            intrinsic_alpha,
            amp_gain,
            raman,
        };
        spans.extend(std::iter::repeat_n(span, s.repeat));
    }

    Ok(Link {
        spans,
        channels,
        cut_selection: doc.cut,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[channels.list]]
        f_center_thz = 193.0
        bandwidth_ghz = 32
        power_dbm = 0

        [[spans]]
        length_km = 80
        loss_db_per_km = 0.2
        gamma_per_w_km = 1.3
        dispersion_ps_nm_km = 17
    "#;

    #[test]
    fn minimal_document_applies_defaults() {
        let link = parse_link(MINIMAL, "minimal").unwrap();
        assert_eq!(link.spans.len(), 1);
        assert_eq!(link.channels.len(), 1);
        let s = &link.spans[0];
        assert_eq!(s.amp_gain, AmpGain::Transparent);
        assert!(s.raman.is_zero());
        assert_eq!(s.f_taylor_center, 193e12);
        // β2 = −D·λ²/(2πc) with λ = c/193 THz ≈ 1553.3 nm.
        let lambda = 299_792_458.0 / 193e12;
        let expected = -17e-6 * lambda * lambda / (2.0 * std::f64::consts::PI * 299_792_458.0);
        assert!((s.beta2 / expected - 1.0).abs() < 1e-12);
        assert!((s.beta2 + 21.77e-27).abs() < 0.01e-27);
        assert!((link.channels[0].launch_power() - 1e-3).abs() < 1e-15);
        assert!(link.ensure_valid().is_ok());
    }

    #[test]
    fn loss_is_converted_to_field_attenuation() {
        let link = parse_link(MINIMAL, "minimal").unwrap();
        let alpha = link.spans[0].intrinsic_alpha[0];
        let span_db = 2.0 * alpha * 80e3 * nli_core::units::DB_PER_NEPER;
        assert!((span_db - 16.0).abs() < 1e-6, "{span_db}");
    }

    #[test]
    fn missing_gamma_names_the_span() {
        let text = MINIMAL.to_string()
            + r#"
        [[spans]]
        length_km = 60
        loss_db_per_km = 0.2
        dispersion_ps_nm_km = 17
        "#;
        let err = parse_link(&text, "doc").unwrap_err().to_string();
        assert!(err.contains("span 1"), "{err}");
        assert!(err.contains("gamma_per_w_km"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let err = parse_link("[[spans]]\nlength_km = = 3\n", "bad")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("length_km", "lenght_km");
        let err = parse_link(&text, "doc").unwrap_err().to_string();
        assert!(err.contains("lenght_km"), "{err}");
    }

    #[test]
    fn comb_repeat_and_gain_forms() {
        let text = r#"
            [[channels.comb]]
            count = 5
            f_center_thz = 193.0
            spacing_ghz = 50
            bandwidth_ghz = 32
            power_dbm = -1

            [[channels.list]]
            f_center_thz = 205.0
            bandwidth_ghz = 100
            power_dbm = 20
            pump = true

            [[spans]]
            repeat = 3
            length_km = 80
            loss_db_per_km = 0.2
            gamma_per_w_km = 1.3
            dispersion_ps_nm_km = 17
            amp_gain_db = 16
            raman = { kind = "triangular", c_r_max_per_w_km = 0.42, delta_f_thz = 15 }

            [[spans]]
            length_km = 50
            loss_db_per_km = [0.2, 0.2, 0.2, 0.2, 0.2, 0.25]
            gamma_per_w_km = 1.3
            dispersion_ps_nm_km = 4
            amp_gain_db = [10, 10, 10, 10, 10, 12.5]
            raman = { kind = "tabulated", samples = [[5, 0.1], [13, 0.42], [20, 0.0]] }
        "#;
        let link = parse_link(text, "doc").unwrap();
        assert_eq!(link.spans.len(), 4);
        assert_eq!(link.channels.len(), 6);
        assert!(link.channels[5].is_pump);
        assert_eq!(
            link.channels.iter().map(|c| c.index).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5, 6]
        );
        assert!((link.channels[0].f_center - 192.9e12).abs() < 1.0);
        match link.spans[0].raman {
            RamanGainProfile::Triangular { c_r_max, delta_f } => {
                assert!((c_r_max - 0.42e-3).abs() < 1e-18);
                assert_eq!(delta_f, 15e12);
            }
            ref other => panic!("{other:?}"),
        }
        match &link.spans[3].amp_gain {
            AmpGain::PerChannel(g) => assert!((g[5] - 10f64.powf(1.25)).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert!(link.spans[3].raman.gain(13e12) > 0.0);
    }

    #[test]
    fn per_channel_length_mismatch_is_reported() {
        let text = MINIMAL.replace("loss_db_per_km = 0.2", "loss_db_per_km = [0.2, 0.2]");
        let err = parse_link(&text, "doc").unwrap_err().to_string();
        assert!(err.contains("spans[0].loss_db_per_km"), "{err}");
    }
}
