//! Scenario bundles: a directory holding `scenario.cfg` plus the assembler
//! files it names.
//!
//! ```text
//! name = my_pitfall
//! description = what goes wrong
//! variant = lazy_unsafe            # eager | lazy_unsafe | lazy_ext | lock_only
//! waiting = false
//! attempts = 3
//! approximate_simple = false
//! lock.L = ticket 640              # kind base [mask=N] [reg=N]
//! shared = shared.asm
//! thread.0 = elided.asm elide
//! thread.1 = locked.asm lock
//! config.word_bits = true          # applied under every variant
//! lazy_ext.nt_wait_spins = 4       # applied only under that variant
//! ```

use std::path::{Path, PathBuf};

use super::{Scenario, ThreadSpec};
use crate::config::parse_u64;
use crate::tle::{LockDescriptor, LockKind, TleMode, TleVariant};

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario.cfg line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("scenario.cfg: {0}")]
    Missing(&'static str),
}

fn read(path: PathBuf) -> Result<String, BundleError> {
    std::fs::read_to_string(&path).map_err(|source| BundleError::Io { path, source })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

pub fn load_bundle(dir: &Path) -> Result<Scenario, BundleError> {
    let manifest = read(dir.join("scenario.cfg"))?;
    let mut name = None;
    let mut description = String::new();
    let mut variant = TleVariant::new(TleMode::LazyUnsafe);
    let mut locks = Vec::new();
    let mut shared = None;
    let mut threads: Vec<(usize, ThreadSpec)> = Vec::new();
    let mut config = Vec::new();
    let mut scoped = Vec::new();

    for (i, raw) in manifest.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| BundleError::Manifest { line, message };
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got `{l}`")))?;
        let (k, v) = (k.trim(), v.trim());
        let flag = |v: &str| parse_bool(v).ok_or_else(|| err(format!("bad boolean `{v}`")));
        let num = |v: &str| parse_u64(k, v).map_err(|e| err(e.to_string()));
        match k {
            "name" => name = Some(v.to_string()),
            "description" => description = v.to_string(),
            "variant" => variant.mode = v.parse().map_err(err)?,
            "waiting" => variant.waiting = flag(v)?,
            "attempts" => variant.attempts = num(v)? as u32,
            "approximate_simple" => variant.approximate_simple = flag(v)?,
            "shared" => shared = Some(read(dir.join(v))?),
            _ => {
                if let Some(lname) = k.strip_prefix("lock.") {
                    let mut parts = v.split_whitespace();
                    let kind: LockKind = parts
                        .next()
                        .ok_or_else(|| err("lock needs a kind".into()))?
                        .parse()
                        .map_err(err)?;
                    let b = num(parts.next().ok_or_else(|| err("lock needs a base".into()))?)?;
                    let mut lock = LockDescriptor::new(lname, kind, b);
                    for opt in parts {
                        match opt.split_once('=') {
                            Some(("mask", m)) => lock = lock.with_mask(num(m)?),
                            Some(("reg", r)) => lock = lock.via_reg(num(r)? as u8),
                            _ => return Err(err(format!("unknown lock option `{opt}`"))),
                        }
                    }
                    locks.push(lock);
                } else if let Some(idx) = k.strip_prefix("thread.") {
                    let idx = num(idx)? as usize;
                    let mut parts = v.split_whitespace();
                    let file = parts.next().ok_or_else(|| err("thread needs a file".into()))?;
                    let elides = match parts.next().unwrap_or("elide") {
                        "elide" => true,
                        "lock" => false,
                        other => return Err(err(format!("expected elide or lock, got `{other}`"))),
                    };
                    let template = read(dir.join(file))?;
                    threads.push((idx, ThreadSpec { template, elides }));
                } else if let Some(key) = k.strip_prefix("config.") {
                    config.push((key.to_string(), v.to_string()));
                } else if let Some((mode, key)) = k.split_once('.') {
                    let mode: TleMode = mode
                        .parse()
                        .map_err(|_| err(format!("unknown key `{k}`")))?;
                    scoped.push((mode, key.to_string(), v.to_string()));
                } else {
                    return Err(err(format!("unknown key `{k}`")));
                }
            }
        }
    }
    threads.sort_by_key(|(i, _)| *i);
    if threads.iter().enumerate().any(|(n, (i, _))| n != *i) {
        return Err(BundleError::Missing("thread indices must be 0, 1, ... without gaps"));
    }
    if threads.is_empty() {
        return Err(BundleError::Missing("no thread.N entries"));
    }
    Ok(Scenario {
        name: name.ok_or(BundleError::Missing("name"))?,
        description,
        locks,
        shared: shared.ok_or(BundleError::Missing("shared"))?,
        threads: threads.into_iter().map(|(_, t)| t).collect(),
        variant,
        config,
        scoped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_a_builtin() {
        let dir = std::env::temp_dir().join(format!("lazysub-bundle-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let s = super::super::scenario("nt_store_hazard").unwrap();
        std::fs::write(dir.join("shared.asm"), &s.shared).unwrap();
        std::fs::write(dir.join("body.asm"), &s.threads[0].template).unwrap();
        std::fs::write(
            dir.join("scenario.cfg"),
            "name = nt_store_hazard\ndescription = copy\nlock.L = simple_zero 640\n\
             shared = shared.asm\nthread.1 = body.asm lock\nthread.0 = body.asm\n\
             eager.all_stores_transactional = true\nlazy_ext.all_stores_transactional = true\n",
        )
        .unwrap();
        let b = load_bundle(&dir).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(b.locks, s.locks);
        assert_eq!(b.threads, s.threads);
        assert_eq!(b.scoped, s.scoped);
        assert_eq!(b.variant, s.variant);
    }

    #[test]
    fn reports_bad_lines() {
        let dir = std::env::temp_dir().join(format!("lazysub-bundle-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("scenario.cfg"), "name = x\nlock.L = spin 640\n").unwrap();
        let e = load_bundle(&dir).unwrap_err();
        std::fs::remove_dir_all(&dir).unwrap();
        assert!(matches!(e, BundleError::Manifest { line: 2, .. }), "{e}");
    }
}
