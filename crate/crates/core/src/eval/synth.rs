use rayon::prelude::*;

use super::plan::Pools;
use crate::error::Result;
use crate::rng::derive_seed;
use crate::signal::{generate_capture_framed, sample_channel, PopulationSpec, PreambleTemplate};
use crate::store::Record;

/// One (transmitter, receiver, day) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub tx: u32,
    pub rx: u32,
    pub day: u16,
}

/// All cells of `txs × rxs × days`.
pub fn cells(txs: &[u32], rxs: &[u32], days: &[u16]) -> Vec<Cell> {
    let mut out = Vec::with_capacity(txs.len() * rxs.len() * days.len());
    for &day in days {
        for &tx in txs {
            for &rx in rxs {
                out.push(Cell { tx, rx, day });
            }
        }
    }
    out
}

/// Seed of capture `index` in a cell. Device profiles stay fixed; every
/// capture redraws its channel, padding and noise, so different days differ
/// only in those draws.
pub fn capture_seed(seed: u64, cell: Cell, index: usize) -> u64 {
    derive_seed(seed, &format!("{}/{}/{}/{index}", cell.tx, cell.rx, cell.day))
}

/// `per_cell` fixed-length captures for every cell.
pub fn synthesize(
    pools: &Pools,
    spec: &PopulationSpec,
    template: &PreambleTemplate,
    cells: &[Cell],
    per_cell: usize,
    frame_len: usize,
    seed: u64,
) -> Result<Vec<Record>> {
    let jobs: Vec<(Cell, usize)> = cells.iter().flat_map(|c| (0..per_cell).map(move |i| (*c, i))).collect();
    jobs.par_iter()
        .map(|&(cell, i)| {
            let s = capture_seed(seed, cell, i);
            let tx = pools.transmitter(cell.tx)?;
            let rx = pools.receiver(cell.rx)?;
            let ch = sample_channel(spec, s);
            let y = generate_capture_framed(template, tx, &ch, rx, s, frame_len)?;
            Ok(Record::from_signal(cell.tx, cell.rx, cell.day, &y))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let spec = PopulationSpec::default();
        let pools = Pools::synthetic(&spec, 3, 2, 1).unwrap();
        let c = cells(&[0, 1, 2], &[0, 1], &[1, 2]);
        assert_eq!(c.len(), 12);
        let t = PreambleTemplate::desk();
        let a = synthesize(&pools, &spec, &t, &c, 2, 360, 5).unwrap();
        assert_eq!(a.len(), 24);
        assert!(a.iter().all(|r| r.len() == 360));
        assert_eq!(a, synthesize(&pools, &spec, &t, &c, 2, 360, 5).unwrap());
        let b = synthesize(&pools, &spec, &t, &c, 2, 360, 6).unwrap();
        assert_ne!(a[0].iq, b[0].iq);
        assert!(synthesize(&pools, &spec, &t, &cells(&[9], &[0], &[1]), 1, 360, 5).is_err());
    }
}
