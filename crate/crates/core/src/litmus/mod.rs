//! Litmus scenarios: multi-threaded programs whose critical sections are
//! wrapped in generated acquire/release code, explored under a lock-elision
//! variant and compared against the lock-only outcome set.
//!
//! Thread templates are assembler text with three extra forms:
//!
//! * `ACQUIRE lock` / `RELEASE lock` expand to elided or locking code
//! * `INFLATE lock` converts a held inflatable lock (holder only)
//! * `@name` expands to `t{thread}_name`, so one template serves every thread

mod bundle;
mod catalog;
mod safety;

use std::collections::BTreeMap;

pub use bundle::{load_bundle, BundleError};
pub use catalog::{builtin_scenarios, scenario};
pub use safety::{
    check_against, check_safety, lock_only_oracle, oracle_windows, SafetyReport, Verdict,
};

use crate::config::{ConfigError, EngineConfig};
use crate::htm::Address;
use crate::machine::{LoadError, Machine};
use crate::tle::{
    emit_acquire, emit_inflate, emit_release, emit_subscription, lock_data, LockDescriptor,
    LockKind, Site, TleMode, TleVariant,
};
use crate::vm::{assemble_all, AsmError, Opcode, Program};

/// Memory given to scenario machines unless overridden.
pub const SCENARIO_MEMORY: u64 = 1024;

#[derive(Debug, thiserror::Error)]
pub enum LitmusError {
    #[error("unknown lock `{0}`")]
    UnknownLock(String),
    #[error("thread {thread}: RELEASE {lock} without a matching ACQUIRE")]
    Unpaired { thread: usize, lock: String },
    #[error("thread {thread}: {message}")]
    Template { thread: usize, message: String },
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("missing entry label `{0}`")]
    MissingEntry(String),
    #[error("witness does not replay: {0}")]
    WitnessReplay(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadSpec {
    pub template: String,
    /// Elides its critical sections with the variant under test; otherwise always locks.
    pub elides: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub locks: Vec<LockDescriptor>,
    /// Shared data and routines. Must start with `.org` and carry the `.observe` list.
    pub shared: String,
    pub threads: Vec<ThreadSpec>,
    /// Variant under test for eliding threads.
    pub variant: TleVariant,
    /// Engine settings applied after the variant defaults.
    pub config: Vec<(String, String)>,
    /// Engine settings applied only when running under a given mode.
    pub scoped: Vec<(TleMode, String, String)>,
}

/// A loaded scenario ready to run or explore.
#[derive(Debug, Clone)]
pub struct Built {
    pub machine: Machine,
    pub observe: Vec<Address>,
    pub labels: BTreeMap<String, Address>,
    pub variant: TleVariant,
    /// Site prefixes per thread, in expansion order.
    pub sites: Vec<Vec<String>>,
    pub sources: Vec<String>,
    /// Assembled segments in source order: shared, runtime, one per thread, then lock data.
    pub programs: Vec<Program>,
}

impl Built {
    pub fn label(&self, name: &str) -> Option<Address> {
        self.labels.get(name).copied()
    }

    /// Instructions in thread `t`'s expanded program, excluding data words.
    pub fn thread_instructions(&self, t: usize) -> usize {
        self.sources[2 + t]
            .lines()
            .filter(|l| {
                let code = l.split(';').next().unwrap_or("");
                let code = code.rsplit(':').next().unwrap_or("");
                code.split_whitespace()
                    .next()
                    .is_some_and(|h| Opcode::from_mnemonic(h).is_some())
            })
            .count()
    }
}

/// Engine defaults implied by each variant: only `lazy_ext` runs on the
/// extended hardware, and only there does executing own writes abort.
pub fn variant_config(mode: TleMode) -> EngineConfig {
    let ext = mode == TleMode::LazyExt;
    EngineConfig {
        memory_size: SCENARIO_MEMORY,
        extensions_enabled: ext,
        fetch_own_write_aborts: ext,
        ..EngineConfig::default()
    }
}

impl Scenario {
    pub fn lock(&self, name: &str) -> Option<&LockDescriptor> {
        self.locks.iter().find(|l| l.name == name)
    }

    /// Effective engine config for running under `variant` with caller overrides.
    pub fn config_for(
        &self,
        variant: &TleVariant,
        overrides: &[(String, String)],
    ) -> Result<EngineConfig, ConfigError> {
        let mut c = variant_config(variant.mode);
        for (k, v) in &self.config {
            c.set(k, v)?;
        }
        for (m, k, v) in &self.scoped {
            if *m == variant.mode {
                c.set(k, v)?;
            }
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// The same scenario with every thread taking the real lock.
    pub fn lock_only(&self) -> Scenario {
        Scenario {
            variant: TleVariant {
                attempts: 0,
                ..TleVariant::lock_only()
            },
            ..self.clone()
        }
    }

    fn expand_thread(
        &self,
        t: usize,
        spec: &ThreadSpec,
        variant: &TleVariant,
    ) -> Result<(String, Vec<String>), LitmusError> {
        let v = if spec.elides {
            *variant
        } else {
            TleVariant::lock_only()
        };
        let mut code = String::new();
        let mut data = String::new();
        let mut open: Vec<(String, Site)> = Vec::new();
        let mut sites = Vec::new();
        let prefix = format!("t{t}_");
        for raw in spec.template.lines() {
            let line = raw.replace('@', &prefix);
            let mut words = line.split(';').next().unwrap_or("").split_whitespace();
            let head = words.next().map(|w| w.to_ascii_uppercase());
            let arg = words.next();
            let lock_arg = |name: Option<&str>| -> Result<&LockDescriptor, LitmusError> {
                let name = name.ok_or_else(|| LitmusError::Template {
                    thread: t,
                    message: format!("`{}` needs a lock name", line.trim()),
                })?;
                self.lock(name)
                    .ok_or_else(|| LitmusError::UnknownLock(name.to_string()))
            };
            match head.as_deref() {
                Some("ACQUIRE") => {
                    let lock = lock_arg(arg)?;
                    let site = Site::new(t, sites.len());
                    let f = emit_acquire(lock, &v, site);
                    code.push_str(&f.text);
                    data.push_str(&f.data);
                    sites.push(site.prefix());
                    open.push((lock.name.clone(), site));
                }
                Some("RELEASE") => {
                    let lock = lock_arg(arg)?;
                    let pos = open
                        .iter()
                        .rposition(|(n, _)| *n == lock.name)
                        .ok_or_else(|| LitmusError::Unpaired {
                            thread: t,
                            lock: lock.name.clone(),
                        })?;
                    let (_, site) = open.remove(pos);
                    code.push_str(&emit_release(lock, &v, site).text);
                }
                Some("INFLATE") => {
                    let lock = lock_arg(arg)?;
                    if lock.kind != LockKind::Inflatable {
                        return Err(LitmusError::Template {
                            thread: t,
                            message: format!("INFLATE on {} lock `{}`", lock.kind, lock.name),
                        });
                    }
                    code.push_str(&emit_inflate(lock).text);
                }
                _ => {
                    code.push_str(&line);
                    code.push('\n');
                }
            }
        }
        if let Some((lock, _)) = open.first() {
            return Err(LitmusError::Template {
                thread: t,
                message: format!("ACQUIRE {lock} never released"),
            });
        }
        code.push_str(&data);
        Ok((code, sites))
    }

    /// Expands, assembles and loads the scenario for `variant`.
    pub fn build(
        &self,
        variant: &TleVariant,
        overrides: &[(String, String)],
    ) -> Result<Built, LitmusError> {
        let config = self.config_for(variant, overrides)?;
        let mut sources = vec![self.shared.clone()];
        let mut runtime = String::new();
        for lock in &self.locks {
            runtime.push_str(&emit_subscription(lock, variant.waiting, config.nt_wait_spins).text);
        }
        sources.push(runtime);
        let mut sites = Vec::new();
        for (t, spec) in self.threads.iter().enumerate() {
            let (code, s) = self.expand_thread(t, spec, variant)?;
            sources.push(code);
            sites.push(s);
        }
        for lock in &self.locks {
            sources.push(lock_data(lock));
        }
        let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
        let programs: Vec<Program> = assemble_all(&refs)?;
        let labels: BTreeMap<String, Address> = programs
            .iter()
            .flat_map(|p| p.labels.iter().map(|(k, v)| (k.clone(), *v)))
            .collect();
        let entries = (0..self.threads.len())
            .map(|t| {
                let name = format!("t{t}_main");
                labels
                    .get(&name)
                    .copied()
                    .ok_or(LitmusError::MissingEntry(name))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let observe = programs.iter().flat_map(|p| p.observe.clone()).collect();
        let machine = Machine::new(config, &programs, &entries)?;
        Ok(Built {
            machine,
            observe,
            labels,
            variant: *variant,
            sites,
            sources,
            programs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_defaults() {
        assert!(variant_config(TleMode::LazyExt).extensions_enabled);
        assert!(variant_config(TleMode::LazyExt).fetch_own_write_aborts);
        for m in [TleMode::Eager, TleMode::LazyUnsafe, TleMode::LockOnly] {
            let c = variant_config(m);
            assert!(!c.extensions_enabled && !c.fetch_own_write_aborts);
        }
    }

    #[test]
    fn catalog_builds_under_every_variant() {
        for s in builtin_scenarios() {
            for mode in TleMode::ALL {
                let v = TleVariant {
                    mode,
                    ..s.variant
                };
                let b = s.build(&v, &[]).unwrap_or_else(|e| panic!("{} {mode}: {e}", s.name));
                assert!(!b.observe.is_empty(), "{}", s.name);
            }
        }
    }

    #[test]
    fn unpaired_release_is_rejected() {
        let mut s = scenario("indirect_branch").unwrap();
        s.threads[0].template = "@main:\n    RELEASE L\n    HALT".into();
        assert!(matches!(
            s.build(&s.variant.clone(), &[]),
            Err(LitmusError::Unpaired { .. })
        ));
    }
}
