use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use relent::{Backend, FixtureBackend, LexicalBackend, MissPolicy, RemoteBackend, RemoteConfig};

/// Overrides the address of any `remote:` backend.
pub const REMOTE_ADDR_ENV: &str = "RELENT_REMOTE_ADDR";

/// `fixture:<path>`, `lexical:` or `remote:<address>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendUri {
    Fixture(String),
    Lexical,
    Remote(String),
}

impl FromStr for BackendUri {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (scheme, rest) = s.split_once(':').unwrap_or((s, ""));
        match scheme {
            "fixture" if !rest.is_empty() => Ok(BackendUri::Fixture(rest.to_string())),
            "fixture" => Err("fixture backend needs a path: fixture:<path>".into()),
            "lexical" if rest.is_empty() => Ok(BackendUri::Lexical),
            "lexical" => Err("lexical backend takes no argument: lexical:".into()),
            "remote" => Ok(BackendUri::Remote(rest.to_string())),
            _ => Err(format!("unknown backend `{s}`; expected fixture:<path>, lexical: or remote:<address>")),
        }
    }
}

impl fmt::Display for BackendUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendUri::Fixture(p) => write!(f, "fixture:{p}"),
            BackendUri::Lexical => write!(f, "lexical:"),
            BackendUri::Remote(a) => write!(f, "remote:{a}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendOptions {
    pub strict_fixture: bool,
    pub batch_size: usize,
    pub timeout: Duration,
    pub concurrency: usize,
}

impl BackendUri {
    /// Applies the environment override to a remote address.
    pub fn resolved(self) -> Self {
        match self {
            BackendUri::Remote(addr) => match std::env::var(REMOTE_ADDR_ENV) {
                Ok(over) if !over.is_empty() => BackendUri::Remote(over),
                _ => BackendUri::Remote(addr),
            },
            other => other,
        }
    }

    pub fn build(&self, opts: &BackendOptions) -> Result<Arc<dyn Backend>> {
        Ok(match self {
            BackendUri::Fixture(path) => {
                let policy = if opts.strict_fixture {
                    MissPolicy::Strict
                } else {
                    MissPolicy::UniformDefault
                };
                Arc::new(FixtureBackend::load(path, policy)?)
            }
            BackendUri::Lexical => Arc::new(LexicalBackend),
            BackendUri::Remote(addr) => {
                if addr.is_empty() {
                    bail!("remote backend has no address; pass remote:<address> or set {REMOTE_ADDR_ENV}");
                }
                let config = RemoteConfig {
                    batch_size: opts.batch_size,
                    timeout: opts.timeout,
                    concurrency: opts.concurrency,
                    ..RemoteConfig::default()
                };
                Arc::new(RemoteBackend::with_config(addr, config).with_context(|| format!("backend {self}"))?)
            }
        })
    }
}
