//! Protocol x BER x seed sweeps.

use rayon::prelude::*;

use crate::coding::Protocol;
use crate::error::SweepError;
use crate::scenario::config::ScenarioConfig;
use crate::sim::{run, Metrics};

/// One simulation of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub protocol: Protocol,
    pub ber: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub scenario: String,
    /// Ordered by (protocol, ber, seed) ascending.
    pub cells: Vec<CellResult>,
}

/// Every cell of `cfg` in output order: protocol, then BER, then seed, each ascending.
pub fn cells(cfg: &ScenarioConfig) -> Vec<Cell> {
    let mut protocols = cfg.protocols.clone();
    protocols.sort_unstable();
    protocols.dedup();
    let mut bers = cfg.bers.clone();
    bers.sort_by(f64::total_cmp);
    bers.dedup();
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut out = Vec::with_capacity(protocols.len() * bers.len() * seeds.len());
    for &protocol in &protocols {
        for &ber in &bers {
            for &seed in &seeds {
                out.push(Cell { protocol, ber, seed });
            }
        }
    }
    out
}

/// Runs every cell on up to `jobs` threads (0 = one per core). Output order never depends on
/// scheduling; the first failing cell in output order aborts the sweep.
pub fn run_sweep(cfg: &ScenarioConfig, jobs: usize) -> Result<SweepResult, SweepError> {
    cfg.validate()?;
    let cells = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<CellResult, SweepError>> =
        pool.install(|| cells.par_iter().map(|&cell| run_cell(cfg, cell)).collect());
    Ok(SweepResult {
        scenario: cfg.name.clone(),
        cells: outcomes.into_iter().collect::<Result<_, _>>()?,
    })
}

pub fn run_cell(cfg: &ScenarioConfig, cell: Cell) -> Result<CellResult, SweepError> {
    let sc = cfg.scenario(cell.protocol, cell.ber)?;
    let metrics = run(&sc, cell.seed).map_err(|source| SweepError::Run {
        protocol: cell.protocol.name().to_string(),
        ber: cell.ber,
        seed: cell.seed,
        source,
    })?;
    Ok(CellResult { cell, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::config::parse_config;

    #[test]
    fn full_grid_has_one_cell_per_combination() {
        let cfg = ScenarioConfig::builtin(crate::scenario::TopologyKind::EightNode);
        let c = cells(&cfg);
        assert_eq!(c.len(), 4 * 6 * 5);
        assert!(c.windows(2).all(|w| {
            let (a, b) = (w[0], w[1]);
            (a.protocol, a.ber, a.seed) < (b.protocol, b.ber, b.seed)
        }));
    }

    #[test]
    fn cell_order_ignores_listing_order() {
        let cfg =
            parse_config("topology = x_topo\nprotocols = flexonc, plain\nbers = 1e-4, 0\nseeds = 2, 1\n")
                .unwrap();
        let c = cells(&cfg);
        assert_eq!(c.len(), 8);
        assert_eq!((c[0].protocol, c[0].ber, c[0].seed), (Protocol::Plain, 0.0, 1));
        assert_eq!((c[7].protocol, c[7].ber, c[7].seed), (Protocol::FlexOnc, 1e-4, 2));
    }

    #[test]
    fn single_cell_sweep() {
        let cfg =
            parse_config("topology = x_topo\nprotocols = cope\nbers = 0\nseeds = 7\nflow = 0,3,0.1,1\n")
                .unwrap();
        let res = run_sweep(&cfg, 2).unwrap();
        assert_eq!(res.cells.len(), 1);
        assert_eq!(res.cells[0].metrics.flows[0].delivered, 10);
    }
}
