use std::path::Path;

use crate::error::{Error, Result};
use crate::training::{Stage, TrainConfig};

/// Environment variable consulted for the seed when neither the file nor
/// the overrides set one.
pub const SEED_ENV: &str = "SRRES_SEED";

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i, line.split('#').next().unwrap_or("").trim()))
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("{origin}:{}: expected key=value", i + 1),
            })?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Stage defaults, then the file, then `key=value` overrides. The desk
/// preset replaces the SR defaults when `desk` is set.
pub fn resolve_config(stage: Stage, desk: bool, file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match (stage, desk) {
        (Stage::Sr, true) => TrainConfig::desk(),
        (Stage::Domain, true) => {
            return Err(Error::Config {
                key: "desk".into(),
                message: "the desk preset exists only for SR training".into(),
            })
        }
        _ => TrainConfig::for_stage(stage),
    };
    let mut pairs = Vec::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        pairs.extend(parse_kv(&text, &path.display().to_string())?);
    }
    pairs.extend(parse_kv(&overrides.join("\n"), "--set")?);
    let mut seed_set = false;
    for (k, v) in &pairs {
        cfg.set(k, v)?;
        seed_set |= k == "seed";
    }
    if !seed_set {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.set("seed", &v).map_err(|_| Error::Config {
                key: SEED_ENV.into(),
                message: format!("cannot parse `{v}` as u64"),
            })?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The resolved config in the same `key=value` format it is read from.
pub fn config_echo(cfg: &TrainConfig) -> String {
    cfg.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        std::fs::write(&f, "# comment\nbatch_size = 4\n\nseed=3 # trailing\n").unwrap();
        let c = resolve_config(Stage::Sr, false, Some(&f), &["batch_size=8".into()]).unwrap();
        assert_eq!((c.batch_size, c.seed), (8, 3));
        std::fs::write(&f, "").unwrap();
        assert_eq!(resolve_config(Stage::Sr, false, Some(&f), &[]).unwrap().base_lr, 1e-4);
        let e = resolve_config(Stage::Sr, false, None, &["batch_size=abc".into()])
            .unwrap_err()
            .to_string();
        assert!(e.contains("batch_size"), "{e}");
        assert!(resolve_config(Stage::Sr, false, None, &["bogus=1".into()])
            .unwrap_err()
            .to_string()
            .contains("bogus"));
        assert!(resolve_config(Stage::Sr, false, None, &["novalue".into()]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = resolve_config(Stage::Domain, false, None, &["base_lr=3e-4".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("echo.txt");
        std::fs::write(&f, config_echo(&c)).unwrap();
        assert_eq!(resolve_config(Stage::Domain, false, Some(&f), &[]).unwrap(), c);
    }
}
