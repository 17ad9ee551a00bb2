//! Fitted-model container format.
//!
//! One text header line, then little-endian 8-byte IEEE floats:
//!
//! ```text
//! CVDE v1 n=<n> m=<m> kernel=<id> h=<h> [box=<lo>:<hi>] [scheme=pergen] s=<s> seed=<seed>
//! <m*n generator coordinates, row-major> <m log cell volumes>
//!
//! KDE v1 n=<n> m=<m> kernel=gaussian h=<h>
//! <m*n generator coordinates>
//!
//! ADAKDE v1 n=<n> m=<m> kernel=gaussian h=<h>
//! <m*n generator coordinates> <m per-point scale factors>
//! ```
//!
//! Kernel ids are `gaussian`, `uniform-ball` (h holds the radius) and
//! `vde-box` (h written as 0). Cubic boxes serialize as `lo:hi`, general
//! ones as comma lists per side. Header floats use the shortest
//! round-tripping decimal form, so write-read-write is byte-identical.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::baselines::{kde_avg_log_likelihood, KdeModel};
use crate::error::{Error, Result};
use crate::estimator::{
    avg_log_likelihood, DensityModel, FitMeta, LogLikSummary, VersorScheme,
};
use crate::geometry::{AxisBox, GeneratorTable};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::matrix::Matrix;

/// Any model the container can hold.
pub enum AnyModel {
    Cvde(DensityModel),
    Kde(KdeModel),
}

impl AnyModel {
    pub fn dim(&self) -> usize {
        match self {
            AnyModel::Cvde(m) => m.dim(),
            AnyModel::Kde(m) => m.dim(),
        }
    }

    pub fn avg_log_likelihood(&self, test: &Matrix) -> Result<LogLikSummary> {
        match self {
            AnyModel::Cvde(m) => avg_log_likelihood(m, test),
            AnyModel::Kde(m) => kde_avg_log_likelihood(m, test),
        }
    }
}

fn format_box(b: &AxisBox) -> String {
    if b.is_cube() {
        format!("{}:{}", b.lo()[0], b.hi()[0])
    } else {
        let lo: Vec<String> = b.lo().iter().map(|v| v.to_string()).collect();
        let hi: Vec<String> = b.hi().iter().map(|v| v.to_string()).collect();
        format!("{}:{}", lo.join(","), hi.join(","))
    }
}

fn parse_box(text: &str, dim: usize) -> Result<AxisBox> {
    let (lo_text, hi_text) = text
        .split_once(':')
        .ok_or_else(|| Error::ModelFormat(format!("malformed box {text:?}")))?;
    let parse_side = |side: &str| -> Result<Vec<f64>> {
        let vals: Vec<f64> = side
            .split(',')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::ModelFormat(format!("bad box bound {v:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(if vals.len() == 1 { vec![vals[0]; dim] } else { vals })
    };
    AxisBox::new(parse_side(lo_text)?, parse_side(hi_text)?)
}

fn write_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_floats(bytes: &[u8], count: usize, what: &str) -> Result<(Vec<f64>, usize)> {
    let need = count * 8;
    if bytes.len() < need {
        return Err(Error::ModelFormat(format!(
            "truncated {what}: need {need} bytes, have {}",
            bytes.len()
        )));
    }
    let vals = bytes[..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((vals, need))
}

/// Serialize a model to its container bytes.
pub fn model_to_bytes(model: &AnyModel) -> Vec<u8> {
    match model {
        AnyModel::Cvde(m) => {
            let table = m.table();
            let (kernel_id, h) = match m.kernel().family {
                KernelFamily::Gaussian { bandwidth } => ("gaussian", bandwidth),
                KernelFamily::UniformBall { radius } => ("uniform-ball", radius),
                KernelFamily::BoxIndicator => ("vde-box", 0.0),
            };
            let mut header = format!(
                "CVDE v1 n={} m={} kernel={kernel_id} h={h}",
                table.n(),
                table.m()
            );
            if let Some(b) = &m.kernel().support {
                let _ = write!(header, " box={}", format_box(b));
            }
            if m.meta().scheme == VersorScheme::PerGenerator {
                header.push_str(" scheme=pergen");
            }
            let _ = write!(header, " s={} seed={}", m.meta().versors, m.meta().seed);
            header.push('\n');

            let mut out = header.into_bytes();
            write_floats(&mut out, table.points().data());
            write_floats(&mut out, m.log_vols());
            out
        }
        AnyModel::Kde(m) => {
            let tag = if m.local_scales().is_some() { "ADAKDE" } else { "KDE" };
            let header = format!(
                "{tag} v1 n={} m={} kernel=gaussian h={}\n",
                m.table().n(),
                m.table().m(),
                m.bandwidth()
            );
            let mut out = header.into_bytes();
            write_floats(&mut out, m.table().points().data());
            if let Some(scales) = m.local_scales() {
                write_floats(&mut out, scales);
            }
            out
        }
    }
}

/// Parse a model from container bytes.
pub fn model_from_bytes(bytes: &[u8]) -> Result<AnyModel> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::ModelFormat("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::ModelFormat("header is not UTF-8".into()))?;
    let body = &bytes[newline + 1..];

    let mut tokens = header.split(' ');
    let tag = tokens.next().unwrap_or_default();
    let version = tokens.next().unwrap_or_default();
    if version != "v1" {
        return Err(Error::ModelFormat(format!("unsupported version {version:?}")));
    }
    let mut fields = HashMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::ModelFormat(format!("malformed field {tok:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |key: &str| -> Result<&String> {
        fields.get(key).ok_or_else(|| Error::ModelFormat(format!("missing field {key}")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| Error::ModelFormat(format!("bad integer field {key}")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| Error::ModelFormat(format!("bad float field {key}")))
    };

    let n = parse_usize("n")?;
    let m = parse_usize("m")?;
    let h = parse_f64("h")?;
    let kernel_id = get("kernel")?.clone();

    match tag {
        "CVDE" => {
            let s = parse_usize("s")?;
            let seed = get("seed")?
                .parse::<u64>()
                .map_err(|_| Error::ModelFormat("bad integer field seed".into()))?;
            let support = match fields.get("box") {
                Some(b) => Some(parse_box(b, n)?),
                None => None,
            };
            let kernel = match kernel_id.as_str() {
                "gaussian" => match support {
                    Some(b) => KernelSpec::gaussian_boxed(n, h, b)?,
                    None => KernelSpec::gaussian(n, h)?,
                },
                "uniform-ball" => KernelSpec::uniform_ball(n, h)?,
                "vde-box" => KernelSpec::box_indicator(support.ok_or_else(|| {
                    Error::ModelFormat("vde-box model without a box field".into())
                })?)?,
                other => {
                    return Err(Error::ModelFormat(format!("unknown kernel id {other:?}")))
                }
            };
            let scheme = match fields.get("scheme").map(String::as_str) {
                Some("pergen") => VersorScheme::PerGenerator,
                None => VersorScheme::Shared,
                Some(other) => {
                    return Err(Error::ModelFormat(format!("unknown scheme {other:?}")))
                }
            };

            let (points, used) = read_floats(body, m * n, "generator matrix")?;
            let (log_vols, used2) = read_floats(&body[used..], m, "log volume vector")?;
            if body.len() != used + used2 {
                return Err(Error::ModelFormat("trailing bytes after model data".into()));
            }
            let table = GeneratorTable::build(&Matrix::from_vec(m, n, points))?;
            let zero_mass_cells = log_vols
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == f64::NEG_INFINITY)
                .map(|(i, _)| i)
                .collect();
            let meta = FitMeta { versors: s, seed, scheme, zero_mass_cells };
            Ok(AnyModel::Cvde(DensityModel::from_parts(table, kernel, log_vols, meta)?))
        }
        "KDE" | "ADAKDE" => {
            if kernel_id != "gaussian" {
                return Err(Error::ModelFormat(format!(
                    "unknown kernel id {kernel_id:?} for {tag}"
                )));
            }
            let (points, used) = read_floats(body, m * n, "generator matrix")?;
            let table = GeneratorTable::build(&Matrix::from_vec(m, n, points))?;
            let scales = if tag == "ADAKDE" {
                let (scales, used2) = read_floats(&body[used..], m, "scale vector")?;
                if body.len() != used + used2 {
                    return Err(Error::ModelFormat("trailing bytes after model data".into()));
                }
                Some(scales)
            } else {
                if body.len() != used {
                    return Err(Error::ModelFormat("trailing bytes after model data".into()));
                }
                None
            };
            Ok(AnyModel::Kde(KdeModel::from_parts(table, h, scales)?))
        }
        other => Err(Error::ModelFormat(format!("unknown model tag {other:?}"))),
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &AnyModel) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    let bytes = std::fs::read(path)?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::fit_adakde;
    use crate::estimator::{fit, sample_direction_set};
    use crate::kernels::KernelSpec;
    use rand::Rng;

    fn random_table(m: usize, n: usize, seed: u64) -> GeneratorTable {
        let mut rng = crate::rng::rng_from_seed(seed);
        let rows: Vec<Vec<f64>> =
            (0..m).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        GeneratorTable::build(&Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn cvde_round_trip_is_byte_exact() {
        let t = random_table(7, 3, 1);
        let k = KernelSpec::gaussian(3, 0.6243718592964824).unwrap();
        let dirs = sample_direction_set(128, 3, 42).unwrap();
        let model = AnyModel::Cvde(fit(&t, &k, &dirs).unwrap());
        let bytes = model_to_bytes(&model);
        let loaded = model_from_bytes(&bytes).unwrap();
        let bytes2 = model_to_bytes(&loaded);
        assert_eq!(bytes, bytes2);
        assert!(bytes.starts_with(b"CVDE v1 n=3 m=7 kernel=gaussian h=0.6243718592964824 "));
    }

    #[test]
    fn vde_box_round_trip() {
        let t = random_table(5, 2, 3);
        let k = KernelSpec::box_indicator(AxisBox::cube(2, -3.5, 3.5).unwrap()).unwrap();
        let dirs = sample_direction_set(512, 2, 7).unwrap();
        let model = AnyModel::Cvde(fit(&t, &k, &dirs).unwrap());
        let bytes = model_to_bytes(&model);
        assert!(
            std::str::from_utf8(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()])
                .unwrap()
                .contains("kernel=vde-box h=0 box=-3.5:3.5")
        );
        let bytes2 = model_to_bytes(&model_from_bytes(&bytes).unwrap());
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn kde_and_adakde_round_trip() {
        let t = random_table(9, 4, 5);
        let kde = AnyModel::Kde(crate::baselines::fit_kde(&t, 0.37).unwrap());
        let b1 = model_to_bytes(&kde);
        assert_eq!(b1, model_to_bytes(&model_from_bytes(&b1).unwrap()));

        let ada = AnyModel::Kde(fit_adakde(&t, 0.37).unwrap());
        let b2 = model_to_bytes(&ada);
        assert!(b2.starts_with(b"ADAKDE v1"));
        let loaded = model_from_bytes(&b2).unwrap();
        assert_eq!(b2, model_to_bytes(&loaded));
        match loaded {
            AnyModel::Kde(m) => assert!(m.local_scales().is_some()),
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn file_round_trip_and_scoring() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cvde");
        let t = random_table(6, 2, 9);
        let k = KernelSpec::gaussian(2, 0.5).unwrap();
        let dirs = sample_direction_set(2_000, 2, 11).unwrap();
        let fitted = fit(&t, &k, &dirs).unwrap();
        save_model(&path, &AnyModel::Cvde(fitted.clone())).unwrap();
        let loaded = load_model(&path).unwrap();

        let test = crate::datasets::gen_gaussian(2, 50, 77).unwrap();
        let a = avg_log_likelihood(&fitted, &test).unwrap().mean;
        let b = loaded.avg_log_likelihood(&test).unwrap().mean;
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(model_from_bytes(b"").is_err());
        assert!(model_from_bytes(b"WHAT v1 n=1 m=1 kernel=gaussian h=1\n").is_err());
        assert!(model_from_bytes(b"CVDE v2 n=1 m=1 kernel=gaussian h=1 s=1 seed=0\n").is_err());
        assert!(model_from_bytes(b"CVDE v1 n=1 kernel=gaussian h=1 s=1 seed=0\n").is_err());
        // Truncated body.
        assert!(model_from_bytes(b"CVDE v1 n=2 m=3 kernel=gaussian h=1 s=4 seed=0\n\x00\x00")
            .is_err());
    }
}
