//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `KSLS` |
//! | 4 | format version (u32) |
//! | 4 | dimension (u32) |
//! | 8·dim | cells (u64) |
//! | 8·dim | lengths (f64) |
//! | 8·21 | scalars, see [`SCALAR_NAMES`] |
//! | 8·6·N | fields `u v w Ψ ψ η`, row-major f64 |
//! | 4 | CRC-32 of everything before it |

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evolution::{InitialSummary, SolverConfig, State, DEFAULT_IDENTITY_TOLERANCE};
use crate::grid::{Field, Grid};

pub const MAGIC: &[u8; 4] = b"KSLS";
pub const FORMAT_VERSION: u32 = 1;

/// Order of the scalar block. `step` and `clamp_count` are stored as u64.
pub const SCALAR_NAMES: [&str; 21] = [
    "tau",
    "dt",
    "t",
    "step",
    "m",
    "gamma_vin_linf",
    "eta_bound",
    "v_running_min",
    "k0_running",
    "clamp_count",
    "initial_u_l1",
    "initial_v_l1",
    "initial_u_linf",
    "initial_v_linf",
    "initial_v_min",
    "initial_v_max",
    "sup_u_linf",
    "sup_v_linf",
    "reserved0",
    "reserved1",
    "reserved2",
];

/// A resumable state together with the run scalars it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tau: f64,
    pub dt: f64,
    pub state: State,
    /// Running sup over the run so far.
    pub sup_u_linf: f64,
    pub sup_v_linf: f64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(config: &SolverConfig, state: State, sup_u_linf: f64, sup_v_linf: f64) -> Self {
        Checkpoint {
            tau: config.tau,
            dt: config.dt,
            state,
            sup_u_linf,
            sup_v_linf,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let s = &self.state;
        let g = s.grid();
        let mut out = Vec::with_capacity(64 + 8 * 6 * g.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
        for &c in g.cells() {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for &l in g.lengths() {
            out.extend_from_slice(&l.to_le_bytes());
        }
        let i = &s.initial;
        let f = |x: f64| x.to_le_bytes();
        let scalars: [[u8; 8]; 21] = [
            f(self.tau),
            f(self.dt),
            f(s.t),
            s.step.to_le_bytes(),
            f(s.m),
            f(s.gamma_vin_linf),
            f(s.eta_bound),
            f(s.v_running_min),
            f(s.k0_running),
            s.clamp_count.to_le_bytes(),
            f(i.u_l1),
            f(i.v_l1),
            f(i.u_linf),
            f(i.v_linf),
            f(i.v_min),
            f(i.v_max),
            f(self.sup_u_linf),
            f(self.sup_v_linf),
            [0; 8],
            [0; 8],
            [0; 8],
        ];
        scalars.iter().for_each(|b| out.extend_from_slice(b));
        for (_, field) in s.fields() {
            for &x in field.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 12 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "CRC mismatch (stored {stored:08x}, computed {actual:08x})"
            )));
        }
        let dim = r.u32()? as usize;
        if !(1..=2).contains(&dim) {
            return Err(Error::Checkpoint(format!("unsupported dimension {dim}")));
        }
        let cells = (0..dim)
            .map(|_| r.u64().map(|c| c as usize))
            .collect::<Result<Vec<_>>>()?;
        let lengths = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let grid = Grid::new(dim, &cells, &lengths).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let tau = r.f64()?;
        let dt = r.f64()?;
        let t = r.f64()?;
        let step = r.u64()?;
        let m = r.f64()?;
        let gamma_vin_linf = r.f64()?;
        let eta_bound = r.f64()?;
        let v_running_min = r.f64()?;
        let k0_running = r.f64()?;
        let clamp_count = r.u64()?;
        let initial = InitialSummary {
            u_l1: r.f64()?,
            v_l1: r.f64()?,
            u_linf: r.f64()?,
            v_linf: r.f64()?,
            v_min: r.f64()?,
            v_max: r.f64()?,
        };
        let sup_u_linf = r.f64()?;
        let sup_v_linf = r.f64()?;
        r.take(24)?;
        let expected = 6 * 8 * grid.len();
        if body.len() - r.pos != expected {
            return Err(Error::Checkpoint(format!(
                "field block has {} bytes, expected {expected}",
                body.len() - r.pos
            )));
        }
        let mut field = || -> Result<Field> {
            let v = (0..grid.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Field::from_values(grid, v)
        };
        let (u, v, w, big_psi, psi, eta) = (field()?, field()?, field()?, field()?, field()?, field()?);
        let state = State {
            t,
            step,
            u,
            v,
            w,
            big_psi,
            psi,
            eta,
            m,
            gamma_vin_linf,
            eta_bound,
            v_running_min,
            k0_running,
            clamp_count,
            initial,
        };
        Ok(Checkpoint {
            tau,
            dt,
            state,
            sup_u_linf,
            sup_v_linf,
        })
    }

    /// Sup-norm of the key identity residual relative to its scale.
    pub fn identity_residual(&self) -> Result<f64> {
        let r = self.state.identity_field(self.tau)?.linf();
        Ok(r / self.state.identity_scale(self.tau).max(f64::MIN_POSITIVE))
    }

    /// Refuses to continue a run under a different grid, τ or dt.
    pub fn check_compatible(&self, config: &SolverConfig) -> Result<()> {
        if *self.state.grid() != config.grid {
            return Err(Error::Checkpoint(format!(
                "grid {:?}×{:?} does not match configured {:?}×{:?}",
                self.state.grid().cells(),
                self.state.grid().lengths(),
                config.grid.cells(),
                config.grid.lengths()
            )));
        }
        if self.tau != config.tau || self.dt != config.dt {
            return Err(Error::Checkpoint(format!(
                "checkpoint has tau = {}, dt = {}; configuration has tau = {}, dt = {}",
                self.tau, self.dt, config.tau, config.dt
            )));
        }
        Ok(())
    }
}

/// Writes to a temporary sibling, syncs, then renames over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.encode();
    let tmp = path.with_extension("ksls.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint and re-verifies the key identity before returning it.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::decode(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let res = ckpt.identity_residual()?;
    if !(res <= DEFAULT_IDENTITY_TOLERANCE) {
        return Err(Error::Checkpoint(format!(
            "{}: key identity residual {res:.3e} exceeds {DEFAULT_IDENTITY_TOLERANCE:e}",
            path.display()
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Solver;
    use crate::motility::MotilityFunction;
    use crate::operators::cosine_mode;

    fn sample(grid: Grid) -> (SolverConfig, Checkpoint) {
        let cfg = SolverConfig::new(1.5, 0.01, 1.0, grid, MotilityFunction::sine());
        let solver = Solver::new(cfg.clone()).unwrap();
        let u = cosine_mode(&grid, &[1, 1]).scale(0.3).offset(1.0);
        let v = cosine_mode(&grid, &[2, 0]).scale(0.2).offset(0.9);
        let mut s = solver.init_state(&u, &v).unwrap();
        for _ in 0..5 {
            s = solver.step(&s).unwrap();
        }
        let ck = Checkpoint::new(&cfg, s, 1.3, 1.1);
        (cfg, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for grid in [Grid::line(17, 2.0).unwrap(), Grid::rect([8, 6], [1.0, 0.75]).unwrap()] {
            let (_, ck) = sample(grid);
            let back = Checkpoint::decode(&ck.encode()).unwrap();
            assert_eq!(back.encode(), ck.encode());
            for ((_, a), (_, b)) in back.state.fields().iter().zip(ck.state.fields()) {
                let bits = |f: &Field| f.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn header_layout() {
        let (_, ck) = sample(Grid::line(4, 1.0).unwrap());
        let b = ck.encode();
        assert_eq!(&b[0..4], b"KSLS");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 28 + 8 * 21 + 8 * 6 * 4 + 4);
    }

    #[test]
    fn corruption_is_detected() {
        let (_, ck) = sample(Grid::line(8, 1.0).unwrap());
        let mut b = ck.encode();
        let k = b.len() / 2;
        b[k] ^= 1;
        assert!(Checkpoint::decode(&b).unwrap_err().to_string().contains("CRC"));
        let b = ck.encode();
        assert!(Checkpoint::decode(&b[..b.len() - 9]).is_err());
        let mut b = ck.encode();
        b[0] = b'X';
        assert!(Checkpoint::decode(&b).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn save_load_and_identity_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ksls");
        let (cfg, ck) = sample(Grid::rect([8, 8], [1.0, 1.0]).unwrap());
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        back.check_compatible(&cfg).unwrap();
        let mut other = cfg.clone();
        other.dt = 0.02;
        assert!(back.check_compatible(&other).is_err());

        // a state that violates the identity is refused
        let mut bad = ck.clone();
        bad.state.w = bad.state.w.offset(1e-3);
        save_checkpoint(&path, &bad).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("identity"));
        assert!(!path.with_extension("ksls.tmp").exists());
    }
}
