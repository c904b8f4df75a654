//! `key = value` run configuration.
//!
//! ```text
//! # Taylor-Green at Re = 1600
//! n = 32
//! decomp = pencil
//! p = 4          # p1 x p2 chosen automatically unless given
//! re = 1600      # or: nu = 6.25e-4
//! dt = 1e-3
//! t_end = 0.1
//! dealias = true
//! case = taylor_green
//! out_every = 10
//! ```
//!
//! Blank lines and `#` comments are ignored. Only `n` is required.

use std::path::Path;

use crate::error::{ConfigError, Error, Result};
use crate::grid::{Case, Decomp, SolverConfig};

pub const DEFAULT_T_END: f64 = 0.1;

pub const KEYS: [&str; 12] = ["n", "decomp", "p", "p1", "p2", "nu", "re", "dt", "t_end", "dealias", "case", "out_every"];

/// Values that may come from the file or from command-line flags. Flags win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigValues {
    pub n: Option<usize>,
    pub decomp: Option<Decomp>,
    pub p: Option<usize>,
    pub p1: Option<usize>,
    pub p2: Option<usize>,
    pub nu: Option<f64>,
    pub re: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub dealias: Option<bool>,
    pub case: Option<Case>,
    pub out_every: Option<usize>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| ConfigError::invalid(key, format!("cannot parse `{v}` as a number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::invalid(key, format!("expected true or false, got `{v}`"))),
    }
}

impl ConfigValues {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "n" => self.n = Some(parse_num(key, v)?),
            "decomp" => self.decomp = Some(v.parse()?),
            "p" => self.p = Some(parse_num(key, v)?),
            "p1" => self.p1 = Some(parse_num(key, v)?),
            "p2" => self.p2 = Some(parse_num(key, v)?),
            "nu" => self.nu = Some(parse_num(key, v)?),
            "re" => self.re = Some(parse_num(key, v)?),
            "dt" => self.dt = Some(parse_num(key, v)?),
            "t_end" => self.t_end = Some(parse_num(key, v)?),
            "dealias" => self.dealias = Some(parse_bool(key, v)?),
            "case" => self.case = Some(v.parse()?),
            "out_every" => self.out_every = Some(parse_num(key, v)?),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut vals = ConfigValues::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.trim().to_string() });
            };
            let k = k.trim().to_ascii_lowercase();
            if seen.contains(&k) {
                return Err(ConfigError::invalid(&k, format!("set twice (line {})", i + 1)));
            }
            vals.set(&k, v)?;
            seen.push(k);
        }
        if vals.nu.is_some() && vals.re.is_some() {
            return Err(ConfigError::invalid("re", "give either `nu` or `re`, not both"));
        }
        Ok(vals)
    }

    /// `other` takes precedence key by key. A viscosity given in `other`
    /// (as `nu` or `re`) replaces either form in `self`.
    pub fn overlay(mut self, other: &ConfigValues) -> Result<Self, ConfigError> {
        if other.nu.is_some() && other.re.is_some() {
            return Err(ConfigError::invalid("re", "give either `nu` or `re`, not both"));
        }
        if other.nu.is_some() || other.re.is_some() {
            self.nu = other.nu;
            self.re = other.re;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(n, decomp, p, p1, p2, dt, t_end, dealias, case, out_every);
        Ok(self)
    }

    /// Fills defaults and validates.
    pub fn resolve(&self) -> Result<SolverConfig, ConfigError> {
        let n = self.n.ok_or_else(|| ConfigError::invalid("n", "required"))?;
        let mut cfg = SolverConfig::taylor_green(n);
        let decomp = self.decomp.unwrap_or(match (self.p1, self.p2) {
            (Some(_), Some(_)) => Decomp::Pencil,
            _ => Decomp::Slab,
        });
        match decomp {
            Decomp::Slab => {
                if let Some(p1) = self.p1.filter(|&p1| Some(p1) != self.p) {
                    return Err(ConfigError::invalid("p1", format!("only valid for pencil runs (got {p1})")));
                }
                if let Some(p2) = self.p2.filter(|&p2| p2 != 1) {
                    return Err(ConfigError::invalid("p2", format!("only valid for pencil runs (got {p2})")));
                }
                cfg = cfg.with_slab(self.p.unwrap_or(1));
            }
            Decomp::Pencil => {
                let (p1, p2) = pencil_grid(self.p, self.p1, self.p2)?;
                cfg = cfg.with_pencil(p1, p2);
                if let Some(p) = self.p.filter(|&p| p != p1 * p2) {
                    return Err(ConfigError::invalid(
                        "p",
                        format!("pencil needs p = p1 * p2 (p = {p}, p1 = {p1}, p2 = {p2})"),
                    ));
                }
            }
        }
        match (self.nu, self.re) {
            (Some(_), Some(_)) => return Err(ConfigError::invalid("re", "give either `nu` or `re`, not both")),
            (Some(nu), None) => cfg.nu = nu,
            (None, Some(re)) => {
                if !(re > 0.0 && re.is_finite()) {
                    return Err(ConfigError::invalid("re", format!("must be finite and > 0, got {re}")));
                }
                cfg.nu = 1.0 / re;
            }
            (None, None) => {}
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        match self.t_end {
            Some(t) => cfg.t_end = t,
            None => {
                log::info!("t_end not set, using default {DEFAULT_T_END}");
                cfg.t_end = DEFAULT_T_END;
            }
        }
        if let Some(d) = self.dealias {
            cfg.dealias = d;
        }
        if let Some(c) = self.case {
            cfg.case = c;
        }
        if let Some(o) = self.out_every {
            cfg.out_every = o;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Pencil factors from whatever subset of `p`, `p1`, `p2` was given. With
/// only `p`, `p1` is the largest divisor of `p` not above `sqrt(p)`.
pub fn pencil_grid(p: Option<usize>, p1: Option<usize>, p2: Option<usize>) -> Result<(usize, usize), ConfigError> {
    let nonzero = |key: &str, v: usize| {
        if v == 0 {
            Err(ConfigError::invalid(key, "must be at least 1"))
        } else {
            Ok(v)
        }
    };
    match (p, p1, p2) {
        (_, Some(a), Some(b)) => Ok((nonzero("p1", a)?, nonzero("p2", b)?)),
        (Some(p), Some(a), None) => {
            let a = nonzero("p1", a)?;
            if p % a != 0 {
                return Err(ConfigError::invalid("p1", format!("must divide p (p = {p}, p1 = {a})")));
            }
            Ok((a, p / a))
        }
        (Some(p), None, Some(b)) => {
            let b = nonzero("p2", b)?;
            if p % b != 0 {
                return Err(ConfigError::invalid("p2", format!("must divide p (p = {p}, p2 = {b})")));
            }
            Ok((p / b, b))
        }
        (Some(p), None, None) => {
            let p = nonzero("p", p)?;
            let p1 = (1..=p).take_while(|d| d * d <= p).filter(|d| p % d == 0).last().unwrap_or(1);
            Ok((p1, p / p1))
        }
        (None, a, b) => Ok((nonzero("p1", a.unwrap_or(1))?, nonzero("p2", b.unwrap_or(1))?)),
    }
}

pub fn parse_config_str(text: &str, overrides: &ConfigValues) -> Result<SolverConfig> {
    Ok(ConfigValues::parse(text)?.overlay(overrides)?.resolve()?)
}

pub fn parse_config(path: &Path, overrides: &ConfigValues) -> Result<SolverConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_config_str(&text, overrides)
}
