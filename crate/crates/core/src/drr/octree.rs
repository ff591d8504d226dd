//! Max-pyramid over 8^3 voxel blocks for empty-space skipping.

use crate::volume::AttenuationVolume;

/// Leaf block edge length in voxels.
pub const LEAF_SIZE: usize = 8;
const LEAF_SHIFT: u32 = 3;

#[derive(Debug, Clone)]
struct Level {
    dims: [usize; 3],
    max: Vec<f32>,
}

/// Complete octree stored level by level; level 0 holds the leaf blocks and
/// the last level is the single root node.
#[derive(Debug, Clone)]
pub struct EmptySpaceOctree {
    volume_dims: [usize; 3],
    threshold: f32,
    levels: Vec<Level>,
}

impl EmptySpaceOctree {
    pub fn volume_dims(&self) -> [usize; 3] {
        self.volume_dims
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_dims(&self, level: usize) -> [usize; 3] {
        self.levels[level].dims
    }

    /// Block edge length in voxels of nodes at `level`.
    pub fn node_size(&self, level: usize) -> usize {
        LEAF_SIZE << level
    }

    pub fn node_max(&self, level: usize, node: [usize; 3]) -> f32 {
        let l = &self.levels[level];
        l.max[node[0] + l.dims[0] * (node[1] + l.dims[1] * node[2])]
    }

    pub fn is_skippable(&self, level: usize, node: [usize; 3]) -> bool {
        self.node_max(level, node) <= self.threshold
    }

    pub fn root_skippable(&self) -> bool {
        self.is_skippable(self.levels.len() - 1, [0, 0, 0])
    }

    /// Highest level whose node containing voxel `v` is skippable, if any.
    #[inline]
    pub(crate) fn skippable_level(&self, v: [usize; 3]) -> Option<usize> {
        let leaf = [v[0] >> LEAF_SHIFT, v[1] >> LEAF_SHIFT, v[2] >> LEAF_SHIFT];
        if !self.is_skippable(0, leaf) {
            return None;
        }
        let mut level = 0;
        while level + 1 < self.levels.len() {
            let s = LEAF_SHIFT + level as u32 + 1;
            if !self.is_skippable(level + 1, [v[0] >> s, v[1] >> s, v[2] >> s]) {
                break;
            }
            level += 1;
        }
        Some(level)
    }
}

/// Build the pyramid. Nodes whose max is `<= empty_threshold` are skippable;
/// with a positive threshold skipping drops their (small) contribution.
pub fn build_octree(vol: &AttenuationVolume, empty_threshold: f32) -> EmptySpaceOctree {
    let dims = vol.dims();
    let threshold = empty_threshold.max(0.0);
    let leaf_dims = dims.map(|n| n.div_ceil(LEAF_SIZE));
    let mut leaf = vec![0.0f32; leaf_dims.iter().product()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            let row = vol.index(0, j, k);
            let lrow = leaf_dims[0] * ((j >> LEAF_SHIFT) + leaf_dims[1] * (k >> LEAF_SHIFT));
            for (i, &v) in vol.data()[row..row + dims[0]].iter().enumerate() {
                let slot = &mut leaf[lrow + (i >> LEAF_SHIFT)];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
    let mut levels = vec![Level {
        dims: leaf_dims,
        max: leaf,
    }];
    while levels.last().unwrap().dims.iter().any(|&d| d > 1) {
        let prev = levels.last().unwrap();
        let pd = prev.dims;
        let nd = pd.map(|d| d.div_ceil(2));
        let mut max = vec![0.0f32; nd.iter().product()];
        for k in 0..pd[2] {
            for j in 0..pd[1] {
                for i in 0..pd[0] {
                    let v = prev.max[i + pd[0] * (j + pd[1] * k)];
                    let slot = &mut max[i / 2 + nd[0] * (j / 2 + nd[1] * (k / 2))];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        levels.push(Level { dims: nd, max });
    }
    EmptySpaceOctree {
        volume_dims: dims,
        threshold,
        levels,
    }
}
