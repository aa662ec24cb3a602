//! Decomposition of macro-primitives over simulated ranks and the particle
//! exchange protocol.
//!
//! Ranks are in-process workers. Every particle is owned by exactly one rank
//! at a time; after a position update its current owner locates it, decides
//! the destination and hands it over in a batch ordered by
//! `(origin_primitive, dof)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::FunctionSpace;
use crate::mesh::{MeshHierarchy, PrimitiveKind};
use crate::transport::{Particle, TransportStats};

#[derive(Clone, Debug)]
pub struct PartitionLayout {
    pub ranks: usize,
    /// Owning rank of every macro-primitive.
    pub owner: Vec<u32>,
    /// Ranks sharing at least one interface primitive, per rank.
    pub neighbors: Vec<Vec<u32>>,
}

impl PartitionLayout {
    #[inline]
    pub fn owner_of(&self, primitive: usize) -> usize {
        self.owner[primitive] as usize
    }
}

/// Contiguous blocks of volume primitives by id; interface primitives go to
/// the lowest rank among their adjacent volumes.
pub fn partition_mesh(mesh: &MeshHierarchy, ranks: usize) -> Result<PartitionLayout> {
    let nv = mesh.num_volumes;
    if ranks == 0 || ranks > nv {
        return Err(Error::Config(format!("cannot split {nv} volume primitives over {ranks} ranks")));
    }
    let base = nv / ranks;
    let extra = nv % ranks;
    let mut owner = vec![0u32; mesh.primitives.len()];
    let mut v = 0;
    for r in 0..ranks {
        let count = base + usize::from(r < extra);
        for _ in 0..count {
            owner[v] = r as u32;
            v += 1;
        }
    }
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); ranks];
    for p in &mesh.primitives {
        if p.kind == PrimitiveKind::Volume {
            continue;
        }
        let ranks_here: Vec<u32> = p.neighbors.iter().map(|&n| owner[n]).collect();
        owner[p.id] = *ranks_here.iter().min().expect("interface primitive has a volume");
        for &a in &ranks_here {
            for &b in &ranks_here {
                if a != b {
                    neighbors[a as usize].push(b);
                }
            }
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    Ok(PartitionLayout { ranks, owner, neighbors })
}

/// Particles leaving one rank, in deterministic key order.
#[derive(Clone, Debug, Default)]
pub struct MigrationBatch {
    pub entries: Vec<(Particle, u32)>,
}

impl MigrationBatch {
    pub fn sort(&mut self) {
        self.entries.sort_by_key(|(p, _)| (p.origin_primitive, p.dof));
    }
}

/// Particles grouped by owning rank.
#[derive(Clone, Debug)]
pub struct RankedParticles {
    pub ranks: Vec<Vec<Particle>>,
}

impl RankedParticles {
    pub fn len(&self) -> usize {
        self.ranks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Particle> {
        self.ranks.iter().flatten()
    }

    pub fn par_for_each(&mut self, f: impl Fn(&mut Particle) + Sync + Send) {
        self.ranks.par_iter_mut().for_each(|r| r.par_iter_mut().with_min_len(64).for_each(&f));
    }
}

/// Locates every particle at its current position (using its current volume
/// as the search hint), clamps positions that left the domain, and moves
/// particles to the rank owning the containing volume.
pub fn sync_particles(particles: &mut RankedParticles, layout: &PartitionLayout, space: &FunctionSpace) -> TransportStats {
    let before = particles.len();
    let mesh = space.mesh();
    let stats: Vec<TransportStats> = particles
        .ranks
        .par_iter_mut()
        .map(|rank| {
            rank.par_iter_mut()
                .with_min_len(64)
                .map(|p| {
                    let (loc, flags) = space.locate(&p.position, p.primitive as usize);
                    if flags.clamped {
                        p.position = mesh.blending.forward(&loc.comp);
                    }
                    p.location = loc;
                    p.primitive = loc.macro_id;
                    TransportStats {
                        clamps: u64::from(flags.clamped),
                        escalations: u64::from(flags.escalated),
                        ..Default::default()
                    }
                })
                .reduce(TransportStats::default, |a, b| a.merge(&b))
        })
        .collect();
    let mut total = stats.iter().fold(TransportStats::default(), |a, b| a.merge(b));

    let mut batches: Vec<MigrationBatch> = Vec::with_capacity(layout.ranks);
    for (r, rank) in particles.ranks.iter_mut().enumerate() {
        let mut batch = MigrationBatch::default();
        let mut keep = Vec::with_capacity(rank.len());
        for p in rank.drain(..) {
            let dest = layout.owner_of(p.primitive as usize);
            if dest == r {
                keep.push(p);
            } else {
                batch.entries.push((p, dest as u32));
            }
        }
        *rank = keep;
        batch.sort();
        batches.push(batch);
    }
    for batch in batches {
        total.particles_migrated += batch.entries.len() as u64;
        for (p, dest) in batch.entries {
            particles.ranks[dest as usize].push(p);
        }
    }
    debug_assert_eq!(before, particles.len());
    total
}
