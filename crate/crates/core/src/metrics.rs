//! Overlap scoring between a segmentation and its ground truth.

use crate::error::Result;
use crate::kv::KvRecord;
use crate::volume::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapReport {
    /// |X ∩ G| / |X ∪ G|; 1.0 when both masks are empty.
    pub tanimoto: f64,
    pub segmented: usize,
    pub truth: usize,
    pub intersection: usize,
}

impl OverlapReport {
    pub fn union(&self) -> usize {
        self.segmented + self.truth - self.intersection
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.push_f64("tm", self.tanimoto)
            .push("segmented_voxels", self.segmented)
            .push("truth_voxels", self.truth)
            .push("intersection_voxels", self.intersection)
            .push("union_voxels", self.union());
        rec
    }
}

/// Tanimoto (Jaccard) overlap by exact voxel counting.
pub fn tanimoto(x: &BinaryMask, g: &BinaryMask) -> Result<OverlapReport> {
    x.grid().ensure_same(g.grid(), "tanimoto")?;
    let (mut nx, mut ng, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in x.data().iter().zip(g.data()) {
        nx += a as usize;
        ng += b as usize;
        both += (a && b) as usize;
    }
    let union = nx + ng - both;
    let tanimoto = if union == 0 {
        1.0
    } else {
        both as f64 / union as f64
    };
    Ok(OverlapReport {
        tanimoto,
        segmented: nx,
        truth: ng,
        intersection: both,
    })
}
