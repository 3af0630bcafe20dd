//! 6-connected component labelling, cavity filling and small-component removal.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Grid, Volume, VolumeKind};

fn neighbors6(g: &Grid, idx: usize, mut f: impl FnMut(usize)) {
    let [i, j, k] = g.coords(idx);
    let d = g.dims;
    if i > 0 {
        f(idx - 1);
    }
    if i + 1 < d[0] {
        f(idx + 1);
    }
    if j > 0 {
        f(idx - d[0]);
    }
    if j + 1 < d[1] {
        f(idx + d[0]);
    }
    if k > 0 {
        f(idx - d[0] * d[1]);
    }
    if k + 1 < d[2] {
        f(idx + d[0] * d[1]);
    }
}

/// Labels foreground components in scan order. Returns per-voxel labels
/// (0 = background, `c + 1` = component `c`) and component sizes.
pub fn label_components(m: &Volume) -> (Vec<u32>, Vec<usize>) {
    let g = *m.grid();
    let data = m.data();
    let mut labels = vec![0u32; data.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if data[start] == 0.0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(idx) = queue.pop_front() {
            size += 1;
            neighbors6(&g, idx, |n| {
                if data[n] != 0.0 && labels[n] == 0 {
                    labels[n] = label;
                    queue.push_back(n);
                }
            });
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Sets every background voxel not 6-connected to the grid border.
pub fn fill_holes(m: &Volume) -> Volume {
    let g = *m.grid();
    let d = g.dims;
    let data = m.data();
    let mut outside = vec![false; data.len()];
    let mut queue = VecDeque::new();
    for idx in 0..data.len() {
        let [i, j, k] = g.coords(idx);
        let border = i == 0 || j == 0 || k == 0 || i + 1 == d[0] || j + 1 == d[1] || k + 1 == d[2];
        if border && data[idx] == 0.0 {
            outside[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(idx) = queue.pop_front() {
        neighbors6(&g, idx, |n| {
            if data[n] == 0.0 && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        });
    }
    let filled = outside.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
    Volume::new(g, filled, VolumeKind::Mask).expect("binary data")
}

pub fn largest_component(m: &Volume) -> Volume {
    let (labels, sizes) = label_components(m);
    // ties go to the first component in scan order
    let best = sizes.iter().enumerate().fold(None, |acc: Option<(usize, usize)>, (i, &s)| match acc {
        Some((_, bs)) if bs >= s => acc,
        _ => Some((i, s)),
    });
    let keep = best.map(|(i, _)| i as u32 + 1);
    let data = labels.iter().map(|&l| if l != 0 && Some(l) == keep { 1.0 } else { 0.0 }).collect();
    Volume::new(*m.grid(), data, VolumeKind::Mask).expect("binary data")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanupOptions {
    pub min_component: usize,
    pub largest_only: bool,
    pub fill_holes: bool,
}

impl Default for CleanupOptions {
    fn default() -> Self {
        CleanupOptions { min_component: 50, largest_only: false, fill_holes: true }
    }
}

#[derive(Clone, Debug)]
pub struct CleanupOutcome {
    pub mask: Volume,
    pub holes_filled: usize,
    /// Sizes of the components that were dropped.
    pub removed_components: Vec<usize>,
}

pub fn morph_cleanup(m: &Volume, min_component: usize) -> Volume {
    morph_cleanup_with(m, CleanupOptions { min_component, ..Default::default() }).mask
}

/// Fills cavities, then drops components below `min_component` voxels (or all
/// but the largest). An empty mask passes through.
pub fn morph_cleanup_with(m: &Volume, opts: CleanupOptions) -> CleanupOutcome {
    let mask = m.threshold(|v| v != 0.0);
    let before = mask.count_nonzero();
    let mask = if opts.fill_holes { fill_holes(&mask) } else { mask };
    let holes_filled = mask.count_nonzero() - before;

    let (labels, sizes) = label_components(&mask);
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let first_largest = sizes.iter().position(|&s| s == largest);
    let keep: Vec<bool> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| if opts.largest_only { Some(i) == first_largest } else { s >= opts.min_component })
        .collect();
    let removed_components = sizes.iter().zip(&keep).filter(|(_, &k)| !k).map(|(&s, _)| s).collect();
    let data = labels.iter().map(|&l| if l != 0 && keep[l as usize - 1] { 1.0 } else { 0.0 }).collect();
    let mask = Volume::new(*m.grid(), data, VolumeKind::Mask).expect("binary data");
    CleanupOutcome { mask, holes_filled, removed_components }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(n: usize) -> Vec<f64> {
        vec![0.0; n * n * n]
    }

    fn set_box(data: &mut [f64], g: &Grid, lo: [usize; 3], hi: [usize; 3]) {
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    data[g.index(i, j, k)] = 1.0;
                }
            }
        }
    }

    #[test]
    fn fills_interior_hole() {
        let g = Grid::cube(14);
        let mut d = blank(14);
        set_box(&mut d, &g, [2, 2, 2], [12, 12, 12]);
        d[g.index(6, 6, 6)] = 0.0;
        let m = Volume::new(g, d, VolumeKind::Mask).unwrap();
        let out = morph_cleanup(&m, 50);
        assert_eq!(out.get(6, 6, 6), 1.0);
        assert_eq!(out.count_nonzero(), 1000);
    }

    #[test]
    fn removes_small_satellite() {
        let g = Grid::cube(20);
        let mut d = blank(20);
        set_box(&mut d, &g, [1, 1, 1], [11, 11, 6]); // 500 voxels
        set_box(&mut d, &g, [15, 15, 15], [19, 19, 16]); // 16 voxels
        set_box(&mut d, &g, [15, 15, 17], [17, 17, 18]); // 4 voxels, separate
        let m = Volume::new(g, d, VolumeKind::Mask).unwrap();
        let out = morph_cleanup_with(&m, CleanupOptions { min_component: 50, ..Default::default() });
        assert_eq!(out.mask.count_nonzero(), 500);
        assert_eq!(out.removed_components, vec![16, 4]);
        for k in 1..6 {
            assert_eq!(out.mask.get(5, 5, k), 1.0);
        }
    }

    /// Independent labelling oracle: repeated relaxation of min-label over neighbours.
    fn relaxation_sizes(m: &Volume) -> Vec<usize> {
        let g = *m.grid();
        let n = g.len();
        let mut lab: Vec<usize> = (0..n).map(|i| if m.data()[i] != 0.0 { i + 1 } else { 0 }).collect();
        loop {
            let mut changed = false;
            for idx in 0..n {
                if lab[idx] == 0 {
                    continue;
                }
                let mut best = lab[idx];
                neighbors6(&g, idx, |nb| {
                    if lab[nb] != 0 {
                        best = best.min(lab[nb]);
                    }
                });
                if best < lab[idx] {
                    lab[idx] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut counts = std::collections::BTreeMap::new();
        for &l in lab.iter().filter(|&&l| l != 0) {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let mut v: Vec<usize> = counts.into_values().collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }

    #[test]
    fn largest_only_keeps_biggest() {
        let g = Grid::cube(24);
        let mut d = blank(24);
        set_box(&mut d, &g, [1, 1, 1], [11, 11, 4]); // 300
        set_box(&mut d, &g, [14, 14, 14], [20, 19, 16]); // 60
        set_box(&mut d, &g, [1, 20, 20], [6, 22, 21]); // 10
        let m = Volume::new(g, d, VolumeKind::Mask).unwrap();
        assert_eq!(relaxation_sizes(&m), vec![300, 60, 10]);
        let (_, sizes) = label_components(&m);
        let mut s = sizes.clone();
        s.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(s, relaxation_sizes(&m));
        let out = morph_cleanup_with(&m, CleanupOptions { largest_only: true, ..Default::default() });
        assert_eq!(out.mask.count_nonzero(), 300);
        assert_eq!(out.mask.get(5, 5, 2), 1.0);
    }

    #[test]
    fn empty_passes_through() {
        let m = Volume::filled(Grid::cube(8), 0.0, VolumeKind::Mask);
        assert_eq!(morph_cleanup(&m, 50).count_nonzero(), 0);
    }
}
