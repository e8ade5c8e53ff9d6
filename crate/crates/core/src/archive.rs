//! Versioned binary archive of a fitted model.
//!
//! The archive embeds the seed, a hash of the resolved configuration, the
//! family (with its resolved dispersion), the frozen spline system, the prior
//! settings, and the stored draws, so that scoring new data needs nothing
//! but this file. Everything is little-endian; floats are raw IEEE-754 bits,
//! making save/load exact.

use crate::error::{Error, Result};
use crate::expfam::{Family, FamilyKind};
use crate::priors::HyperParameters;
use crate::sampler::{ChainConfig, Diagnostics, ParameterState, PosteriorDraws};
use crate::spline::SplineSystem;
use nalgebra::{DMatrix, DVector};
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"TBIDRAWS";
const VERSION: u32 = 1;

/// FNV-1a, used to fingerprint the resolved configuration text.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct DrawsArchive {
    pub seed: u64,
    pub config_hash: u64,
    pub family: Family,
    pub system: SplineSystem,
    pub rho: f64,
    pub lambda_prior: f64,
    pub lambda_prop: f64,
    pub beta0: DVector<f64>,
    pub m0: DVector<f64>,
    pub q: DMatrix<f64>,
    pub main_names: Vec<String>,
    pub index_names: Vec<String>,
    pub chain: ChainConfig,
    pub draws: PosteriorDraws,
}

impl DrawsArchive {
    /// Rebuilds the hyperparameters stored in the archive (with ρ attached).
    pub fn hyper(&self) -> Result<HyperParameters> {
        Ok(HyperParameters::new(
            self.lambda_prior,
            self.beta0.clone(),
            self.lambda_prop,
            self.m0.clone(),
            self.q.clone(),
        )?
        .with_rho(self.rho))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        put_u32(out, VERSION)?;
        put_u64(out, self.seed)?;
        put_u64(out, self.config_hash)?;
        put_u32(
            out,
            match self.family.kind() {
                FamilyKind::Gaussian => 0,
                FamilyKind::Bernoulli => 1,
                FamilyKind::Poisson => 2,
            },
        )?;
        put_f64(out, self.family.dispersion())?;
        let (pi0, pi1) = self.system.pi();
        put_f64(out, pi0)?;
        put_f64(out, pi1)?;
        put_vec(out, self.system.breaks())?;
        put_f64(out, self.rho)?;
        put_f64(out, self.lambda_prior)?;
        put_f64(out, self.lambda_prop)?;
        put_vec(out, self.beta0.as_slice())?;
        put_vec(out, self.m0.as_slice())?;
        put_u64(out, self.q.nrows() as u64)?;
        put_vec(out, self.q.as_slice())?;
        put_names(out, &self.main_names)?;
        put_names(out, &self.index_names)?;
        put_u64(out, self.chain.n_iter as u64)?;
        put_u64(out, self.chain.burn_in as u64)?;
        put_u64(out, self.chain.thin as u64)?;
        put_u64(out, self.chain.n_chains as u64)?;
        put_f64(out, self.draws.acceptance_rate)?;
        put_u64(out, self.draws.scoring_failures as u64)?;
        put_u64(out, self.draws.error_rejections as u64)?;
        match &self.draws.beta_anchor {
            Some(anchor) => {
                put_u32(out, 1)?;
                put_vec(out, anchor.as_slice())?;
            }
            None => put_u32(out, 0)?,
        }
        put_u64(out, self.draws.chain_sizes.len() as u64)?;
        for &sz in &self.draws.chain_sizes {
            put_u64(out, sz as u64)?;
        }
        put_u64(out, self.draws.states.len() as u64)?;
        for s in &self.draws.states {
            put_vec(out, s.m.as_slice())?;
            put_vec(out, s.beta.as_slice())?;
            put_vec(out, s.gamma.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(inp: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        inp.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Archive("not a draws archive (bad magic)".into()));
        }
        let version = get_u32(inp)?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported archive version {version}")));
        }
        let seed = get_u64(inp)?;
        let config_hash = get_u64(inp)?;
        let family = match get_u32(inp)? {
            0 => Family::gaussian(),
            1 => Family::bernoulli(),
            2 => Family::poisson(),
            k => return Err(Error::Archive(format!("unknown family code {k}"))),
        };
        let dispersion = get_f64(inp)?;
        let family = family.with_dispersion(dispersion);
        let pi0 = get_f64(inp)?;
        let pi1 = get_f64(inp)?;
        let breaks = get_vec(inp)?;
        let system = SplineSystem::from_breaks(breaks, pi0, pi1)?;
        let rho = get_f64(inp)?;
        let lambda_prior = get_f64(inp)?;
        let lambda_prop = get_f64(inp)?;
        let beta0 = DVector::from_vec(get_vec(inp)?);
        let m0 = DVector::from_vec(get_vec(inp)?);
        let q_rows = get_u64(inp)? as usize;
        let q_data = get_vec(inp)?;
        if q_data.len() != q_rows * q_rows {
            return Err(Error::Archive("m prior covariance has wrong size".into()));
        }
        let q = DMatrix::from_column_slice(q_rows, q_rows, &q_data);
        let main_names = get_names(inp)?;
        let index_names = get_names(inp)?;
        let chain = ChainConfig {
            n_iter: get_u64(inp)? as usize,
            burn_in: get_u64(inp)? as usize,
            thin: get_u64(inp)? as usize,
            seed,
            n_chains: get_u64(inp)? as usize,
        };
        let acceptance_rate = get_f64(inp)?;
        let scoring_failures = get_u64(inp)? as usize;
        let error_rejections = get_u64(inp)? as usize;
        let beta_anchor = match get_u32(inp)? {
            0 => None,
            1 => Some(DVector::from_vec(get_vec(inp)?)),
            k => return Err(Error::Archive(format!("bad anchor flag {k}"))),
        };
        let n_chain_sizes = get_u64(inp)? as usize;
        let mut chain_sizes = Vec::with_capacity(n_chain_sizes);
        for _ in 0..n_chain_sizes {
            chain_sizes.push(get_u64(inp)? as usize);
        }
        let n_states = get_u64(inp)? as usize;
        let mut states = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let m = DVector::from_vec(get_vec(inp)?);
            let beta = DVector::from_vec(get_vec(inp)?);
            let gamma = DVector::from_vec(get_vec(inp)?);
            states.push(ParameterState::new(m, beta, gamma, &system));
        }
        Ok(DrawsArchive {
            seed,
            config_hash,
            family,
            system,
            rho,
            lambda_prior,
            lambda_prop,
            beta0,
            m0,
            q,
            main_names,
            index_names,
            chain,
            draws: PosteriorDraws {
                states,
                chain_sizes,
                acceptance_rate,
                diagnostics: Diagnostics::default(),
                scoring_failures,
                error_rejections,
                beta_anchor,
            },
        })
    }
}

fn put_u32<W: Write>(out: &mut W, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64<W: Write>(out: &mut W, v: u64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(out: &mut W, v: f64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_vec<W: Write>(out: &mut W, v: &[f64]) -> Result<()> {
    put_u64(out, v.len() as u64)?;
    for &x in v {
        put_f64(out, x)?;
    }
    Ok(())
}

fn put_names<W: Write>(out: &mut W, names: &[String]) -> Result<()> {
    put_u64(out, names.len() as u64)?;
    for name in names {
        let bytes = name.as_bytes();
        put_u64(out, bytes.len() as u64)?;
        out.write_all(bytes)?;
    }
    Ok(())
}

fn get_u32<R: Read>(inp: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    inp.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn get_u64<R: Read>(inp: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    inp.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn get_f64<R: Read>(inp: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    inp.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn get_vec<R: Read>(inp: &mut R) -> Result<Vec<f64>> {
    let n = get_u64(inp)? as usize;
    if n > (1 << 32) {
        return Err(Error::Archive("vector length out of range".into()));
    }
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push(get_f64(inp)?);
    }
    Ok(v)
}

fn get_names<R: Read>(inp: &mut R) -> Result<Vec<String>> {
    let n = get_u64(inp)? as usize;
    if n > (1 << 24) {
        return Err(Error::Archive("name count out of range".into()));
    }
    let mut names = Vec::with_capacity(n);
    for _ in 0..n {
        let len = get_u64(inp)? as usize;
        if len > (1 << 24) {
            return Err(Error::Archive("name length out of range".into()));
        }
        let mut buf = vec![0u8; len];
        inp.read_exact(&mut buf)?;
        names.push(
            String::from_utf8(buf).map_err(|_| Error::Archive("name is not UTF-8".into()))?,
        );
    }
    Ok(names)
}
