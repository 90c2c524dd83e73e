//! Flat `key = value` configuration files.
//!
//! One assignment per line; blank lines and `#` comments are skipped. Every
//! command-line flag has a matching key here, so a run can be described
//! entirely by a file.

use super::{default_samples_per_epoch, LossKind, TrainConfig};
use crate::backbone::{Fusion, NetworkConfig};
use crate::data::{CaseRecord, PhantomSpec};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

/// Parse the flat text format into a key → value map.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::format(format!(
                "line {}: expected `key = value`, got {line:?}",
                idx + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::format(format!("line {}: empty key", idx + 1)));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::format(format!(
                "line {}: duplicate key {key:?}",
                idx + 1
            )));
        }
    }
    Ok(map)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::config(format!("key {key:?}: cannot parse {value:?} ({e})")))
}

fn parse_list<T: FromStr>(key: &str, value: &str, expect: Option<usize>) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(|s| parse_one(key, s.trim()))
        .collect::<Result<_>>()?;
    if let Some(n) = expect {
        if items.len() != n {
            return Err(Error::config(format!(
                "key {key:?}: expected {n} comma-separated values, got {}",
                items.len()
            )));
        }
    }
    Ok(items)
}

fn parse_pair<T: FromStr + Copy>(key: &str, value: &str) -> Result<(T, T)>
where
    T::Err: Display,
{
    let v = parse_list::<T>(key, value, Some(2))?;
    Ok((v[0], v[1]))
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::config(format!(
            "key {key:?}: expected a boolean, got {other:?}"
        ))),
    }
}

fn reject_unknown(map: &BTreeMap<String, String>) -> Result<()> {
    if let Some(key) = map.keys().next() {
        return Err(Error::config(format!("unknown key {key:?}")));
    }
    Ok(())
}

fn require(map: &mut BTreeMap<String, String>, key: &str) -> Result<String> {
    map.remove(key)
        .ok_or_else(|| Error::config(format!("missing required key {key:?}")))
}

/// Assemble a training configuration from parsed keys.
///
/// Required: `fusion`, `loss`, `seed`, `epochs`. Optional with defaults:
/// `profile` (tiny|paper), `lr`, `batch_size`, `samples_per_epoch`,
/// `mpf_independent`, `patch_size`, `stage_channels`, `residual_skips`,
/// `eq3_as_printed`. When `samples_per_epoch` is absent, `fallback` supplies
/// it from the parsed batch size.
pub fn train_config_from_kv(
    map: &BTreeMap<String, String>,
    fallback: impl FnOnce(usize) -> usize,
) -> Result<TrainConfig> {
    let mut map = map.clone();
    let fusion = Fusion::parse(&require(&mut map, "fusion")?)?;
    let loss_kind = LossKind::parse(&require(&mut map, "loss")?)?;
    let seed: u64 = parse_one("seed", &require(&mut map, "seed")?)?;
    let epochs: usize = parse_one("epochs", &require(&mut map, "epochs")?)?;

    let mut network = match map.remove("profile").as_deref() {
        None | Some("tiny") => NetworkConfig::tiny(fusion),
        Some("paper") => NetworkConfig::paper(fusion),
        Some(other) => {
            return Err(Error::config(format!(
                "key \"profile\": expected tiny or paper, got {other:?}"
            )))
        }
    };
    if let Some(v) = map.remove("patch_size") {
        network.patch_size = parse_one("patch_size", &v)?;
    }
    if let Some(v) = map.remove("stage_channels") {
        network.stage_channels = parse_list("stage_channels", &v, Some(6))?;
    }
    if let Some(v) = map.remove("residual_skips") {
        network.residual_skips = parse_flag("residual_skips", &v)?;
    }
    if let Some(v) = map.remove("eq3_as_printed") {
        network.eq3_as_printed = parse_flag("eq3_as_printed", &v)?;
    }

    let lr = match map.remove("lr") {
        Some(v) => parse_one("lr", &v)?,
        None => 5e-4,
    };
    let batch_size = match map.remove("batch_size") {
        Some(v) => parse_one("batch_size", &v)?,
        None => 8,
    };
    let samples_per_epoch = match map.remove("samples_per_epoch") {
        Some(v) => parse_one("samples_per_epoch", &v)?,
        None => fallback(batch_size),
    };
    let mpf_independent = match map.remove("mpf_independent") {
        Some(v) => parse_flag("mpf_independent", &v)?,
        None => true,
    };
    reject_unknown(&map)?;

    let cfg = TrainConfig {
        network,
        loss_kind,
        lr,
        batch_size,
        epochs,
        seed,
        samples_per_epoch,
        mpf_independent,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// [`train_config_from_kv`] with the epoch size derived from a dataset when
/// the file does not pin it.
pub fn train_config_for_dataset(
    map: &BTreeMap<String, String>,
    cases: &[CaseRecord],
) -> Result<TrainConfig> {
    train_config_from_kv(map, |batch| default_samples_per_epoch(cases, batch))
}

/// Assemble a phantom description from parsed keys; everything is optional
/// over the defaults.
pub fn phantom_spec_from_kv(map: &BTreeMap<String, String>) -> Result<PhantomSpec> {
    let mut map = map.clone();
    let mut spec = PhantomSpec::default();
    if let Some(v) = map.remove("cases") {
        spec.cases = parse_one("cases", &v)?;
    }
    if let Some(v) = map.remove("dims") {
        let d = parse_list::<usize>("dims", &v, Some(3))?;
        spec.dims = [d[0], d[1], d[2]];
    }
    if let Some(v) = map.remove("spacing_mm") {
        let s = parse_list::<f64>("spacing_mm", &v, Some(3))?;
        spec.spacing_mm = [s[0], s[1], s[2]];
    }
    if let Some(v) = map.remove("tumor_count") {
        spec.tumor_count = parse_pair("tumor_count", &v)?;
    }
    if let Some(v) = map.remove("tumor_radius") {
        spec.tumor_radius = parse_pair("tumor_radius", &v)?;
    }
    if let Some(v) = map.remove("liver_hu") {
        spec.liver_hu = parse_one("liver_hu", &v)?;
    }
    if let Some(v) = map.remove("background_hu") {
        spec.background_hu = parse_one("background_hu", &v)?;
    }
    if let Some(v) = map.remove("pv_tumor_drop_hu") {
        spec.pv_tumor_drop_hu = parse_pair("pv_tumor_drop_hu", &v)?;
    }
    if let Some(v) = map.remove("art_tumor_boost_hu") {
        spec.art_tumor_boost_hu = parse_pair("art_tumor_boost_hu", &v)?;
    }
    if let Some(v) = map.remove("noise_std_hu") {
        spec.noise_std_hu = parse_one("noise_std_hu", &v)?;
    }
    if let Some(v) = map.remove("pv_faint_fraction") {
        spec.pv_faint_fraction = parse_one("pv_faint_fraction", &v)?;
    }
    if let Some(v) = map.remove("art_only_blob_count") {
        spec.art_only_blob_count = parse_pair("art_only_blob_count", &v)?;
    }
    reject_unknown(&map)?;
    spec.validate()?;
    Ok(spec)
}
