//! Hierarchical contour map: watershed basins of the edge magnitude over the
//! known region, boundaries weighted by the oriented signal, and a greedy
//! merge that yields nested contours with strengths in [0, 1].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use crate::contours::EdgeSignal;
use crate::error::{Error, Result};
use crate::grid::{Grid, N4};
use crate::imagery::MaskRegion;

/// One contour arc: an ordered chain of boundary points between two regions.
#[derive(Debug, Clone)]
pub struct ContourArc {
    pub id: usize,
    /// Crack midpoints tracing the arc; half-integer coordinates.
    pub points: Vec<(f64, f64)>,
    /// Threshold at which the arc disappears, in [0, 1].
    pub strength: f64,
    /// Merge event that removes this arc.
    pub(crate) event: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct MergeEvent {
    /// Normalized merge value = the strength of arcs dying here.
    pub value: f64,
    /// Dendrogram children (leaf basins or earlier events).
    pub left: usize,
    pub right: usize,
}

/// Nested contour set over the known region.
#[derive(Debug, Clone)]
pub struct ContourHierarchy {
    pub arcs: Vec<ContourArc>,
    basin_labels: Grid<i32>,
    n_basins: usize,
    /// Dendrogram: node k < n_basins is a leaf; node n_basins + e is event e.
    events: Vec<MergeEvent>,
    basin_pixels: Vec<Vec<(u32, u32)>>,
}

impl ContourHierarchy {
    pub fn basin_count(&self) -> usize {
        self.n_basins
    }

    /// Arcs with strength strictly greater than `t`.
    pub fn contours_at(&self, t: f64) -> Vec<&ContourArc> {
        self.arcs.iter().filter(|a| a.strength > t).collect()
    }

    /// Region label map at threshold `t`: all merges with value <= t applied.
    /// Unknown pixels are -1; labels are compacted in scan order.
    pub fn regions_at(&self, t: f64) -> Grid<i32> {
        let mut dsu = Dsu::new(self.n_basins);
        // leader leaf per dendrogram node
        let mut leader = Vec::with_capacity(self.n_basins + self.events.len());
        for i in 0..self.n_basins {
            leader.push(i);
        }
        for ev in &self.events {
            let (la, lb) = (leader[ev.left], leader[ev.right]);
            if ev.value <= t {
                dsu.union(la, lb);
            }
            leader.push(la);
        }
        let mut compact: HashMap<usize, i32> = HashMap::new();
        let mut out = Grid::new(self.basin_labels.width(), self.basin_labels.height(), -1);
        for y in 0..out.height() {
            for x in 0..out.width() {
                let b = *self.basin_labels.get(x, y);
                if b >= 0 {
                    let root = dsu.find(b as usize);
                    let next = compact.len() as i32;
                    let id = *compact.entry(root).or_insert(next);
                    out.set(x, y, id);
                }
            }
        }
        out
    }

    /// Basin ids flanking an arc at the level where it emerges: the two sides
    /// that the arc separated just before they merged.
    pub fn arc_flank_basins(&self, arc_id: usize) -> (Vec<u32>, Vec<u32>) {
        let ev = &self.events[self.arcs[arc_id].event];
        (self.node_leaves(ev.left), self.node_leaves(ev.right))
    }

    fn node_leaves(&self, node: usize) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if n < self.n_basins {
                out.push(n as u32);
            } else {
                let ev = &self.events[n - self.n_basins];
                stack.push(ev.left);
                stack.push(ev.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// Pixels of the two flank regions of an arc.
    pub fn flank_pixels(&self, arc_id: usize) -> (Vec<(u32, u32)>, Vec<(u32, u32)>) {
        let (a, b) = self.arc_flank_basins(arc_id);
        let collect = |ids: &[u32]| {
            let mut px = Vec::new();
            for &id in ids {
                px.extend_from_slice(&self.basin_pixels[id as usize]);
            }
            px
        };
        (collect(&a), collect(&b))
    }

    pub fn basin_labels(&self) -> &Grid<i32> {
        &self.basin_labels
    }
}

/// Watershed of the signal magnitude over the known region followed by greedy
/// ultrametric merging of the weakest boundaries.
pub fn build_hierarchy(signal: &EdgeSignal, mask: &MaskRegion) -> Result<ContourHierarchy> {
    let (w, h) = (signal.magnitude.width(), signal.magnitude.height());
    assert_eq!(
        (w, h),
        (mask.width() as usize, mask.height() as usize),
        "signal and mask dimensions must match"
    );
    let known = |x: i64, y: i64| mask.is_known_i(x, y);
    if !(0..h as i64).any(|y| (0..w as i64).any(|x| known(x, y))) {
        return Err(Error::EmptyKnownRegion);
    }

    let (labels, n_basins) = watershed(&signal.magnitude, mask);

    let mut basin_pixels = vec![Vec::new(); n_basins];
    for y in 0..h {
        for x in 0..w {
            let b = *labels.get(x, y);
            if b >= 0 {
                basin_pixels[b as usize].push((x as u32, y as u32));
            }
        }
    }

    // boundary cracks between 4-adjacent basins
    let vertical_bin = signal.nearest_orientation(std::f64::consts::FRAC_PI_2);
    let horizontal_bin = signal.nearest_orientation(0.0);
    struct Crack {
        mid: (f64, f64),
        weight: f64,
    }
    let mut pair_cracks: BTreeMap<(u32, u32), Vec<Crack>> = BTreeMap::new();
    let mut push_crack = |a: i32, b: i32, mid: (f64, f64), weight: f64| {
        if a < 0 || b < 0 || a == b {
            return;
        }
        let key = (a.min(b) as u32, a.max(b) as u32);
        pair_cracks.entry(key).or_default().push(Crack { mid, weight });
    };
    for y in 0..h {
        for x in 0..w {
            let here = *labels.get(x, y);
            if x + 1 < w {
                let right = *labels.get(x + 1, y);
                if here >= 0 && right >= 0 && here != right {
                    // boundary element runs vertically
                    let resp = &signal.responses[vertical_bin];
                    let wgt = 0.5 * (resp.get(x, y) + resp.get(x + 1, y));
                    push_crack(here, right, (x as f64 + 0.5, y as f64), wgt);
                }
            }
            if y + 1 < h {
                let down = *labels.get(x, y + 1);
                if here >= 0 && down >= 0 && here != down {
                    let resp = &signal.responses[horizontal_bin];
                    let wgt = 0.5 * (resp.get(x, y) + resp.get(x, y + 1));
                    push_crack(here, down, (x as f64, y as f64 + 0.5), wgt);
                }
            }
        }
    }

    // chains per boundary pair
    struct ChainRec {
        points: Vec<(f64, f64)>,
        event: usize,
    }
    let mut chains: Vec<ChainRec> = Vec::new();
    struct BoundaryAgg {
        weight_sum: f64,
        cracks: usize,
        chain_ids: Vec<usize>,
        version: u64,
    }
    let mut boundaries: BTreeMap<(u32, u32), BoundaryAgg> = BTreeMap::new();
    let mut adjacency: HashMap<u32, BTreeSet<u32>> = HashMap::new();
    for (&pair, cracks) in &pair_cracks {
        let mut chain_ids = Vec::new();
        for points in order_chains(cracks.iter().map(|c| c.mid).collect()) {
            chain_ids.push(chains.len());
            chains.push(ChainRec { points, event: usize::MAX });
        }
        let weight_sum = cracks.iter().map(|c| c.weight).sum();
        boundaries.insert(
            pair,
            BoundaryAgg {
                weight_sum,
                cracks: cracks.len(),
                chain_ids,
                version: 0,
            },
        );
        adjacency.entry(pair.0).or_default().insert(pair.1);
        adjacency.entry(pair.1).or_default().insert(pair.0);
    }

    // greedy merge of the weakest boundary, monotone-clipped
    #[derive(PartialEq)]
    struct HeapEntry {
        mean: f64,
        pair: (u32, u32),
        version: u64,
    }
    impl Eq for HeapEntry {}
    impl Ord for HeapEntry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.mean
                .total_cmp(&other.mean)
                .then(self.pair.cmp(&other.pair))
                .then(self.version.cmp(&other.version))
        }
    }
    impl PartialOrd for HeapEntry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    let mut heap: BinaryHeap<Reverse<HeapEntry>> = BinaryHeap::new();
    let mut version_counter: u64 = 1;
    for (&pair, agg) in &boundaries {
        heap.push(Reverse(HeapEntry {
            mean: agg.weight_sum / agg.cracks as f64,
            pair,
            version: agg.version,
        }));
    }

    let mut dsu = Dsu::new(n_basins);
    // dendrogram node carried by each region root
    let mut node_of_root: Vec<usize> = (0..n_basins).collect();
    let mut events: Vec<MergeEvent> = Vec::new();
    let mut raw_values: Vec<f64> = Vec::new();
    let mut last_value = 0.0f64;

    while let Some(Reverse(entry)) = heap.pop() {
        let Some(agg) = boundaries.get(&entry.pair) else {
            continue;
        };
        if agg.version != entry.version {
            continue;
        }
        let (a, b) = entry.pair;
        let value = (agg.weight_sum / agg.cracks as f64).max(last_value);
        last_value = value;

        let event_id = events.len();
        events.push(MergeEvent {
            value, // normalized later
            left: node_of_root[a as usize],
            right: node_of_root[b as usize],
        });
        raw_values.push(value);
        for &cid in &boundaries[&entry.pair].chain_ids {
            chains[cid].event = event_id;
        }
        boundaries.remove(&entry.pair);

        let root = dsu.union(a as usize, b as usize) as u32;
        node_of_root[root as usize] = n_basins + event_id;

        // fold boundaries of the absorbed region into the surviving root
        let other = if root == a { b } else { a };
        let neighbors_a = adjacency.remove(&a).unwrap_or_default();
        let neighbors_b = adjacency.remove(&b).unwrap_or_default();
        let mut folded: BTreeSet<u32> = BTreeSet::new();
        for c in neighbors_a.into_iter().chain(neighbors_b) {
            if c != a && c != b {
                folded.insert(c);
            }
        }
        let mut new_neighbors = BTreeSet::new();
        for c in folded {
            let key_a = (a.min(c), a.max(c));
            let key_b = (b.min(c), b.max(c));
            let mut weight_sum = 0.0;
            let mut cracks = 0;
            let mut chain_ids = Vec::new();
            for key in [key_a, key_b] {
                if let Some(old) = boundaries.remove(&key) {
                    weight_sum += old.weight_sum;
                    cracks += old.cracks;
                    chain_ids.extend(old.chain_ids);
                }
            }
            if cracks == 0 {
                continue;
            }
            if let Some(set) = adjacency.get_mut(&c) {
                set.remove(&a);
                set.remove(&b);
                set.insert(root);
            }
            new_neighbors.insert(c);
            let key = (root.min(c), root.max(c));
            let version = version_counter;
            version_counter += 1;
            heap.push(Reverse(HeapEntry {
                mean: weight_sum / cracks as f64,
                pair: key,
                version,
            }));
            boundaries.insert(
                key,
                BoundaryAgg {
                    weight_sum,
                    cracks,
                    chain_ids,
                    version,
                },
            );
        }
        adjacency.insert(root, new_neighbors);
        let _ = other;
    }

    // normalize strengths by the maximum merge value
    let v_max = raw_values.iter().cloned().fold(0.0f64, f64::max);
    for ev in &mut events {
        ev.value = if v_max > 0.0 { ev.value / v_max } else { 0.0 };
    }
    let mut arcs = Vec::new();
    for chain in chains {
        debug_assert!(chain.event != usize::MAX, "every chain dies at some merge");
        if chain.event == usize::MAX {
            continue;
        }
        let strength = events[chain.event].value;
        arcs.push(ContourArc {
            id: arcs.len(),
            points: chain.points,
            strength,
            event: chain.event,
        });
    }

    Ok(ContourHierarchy {
        arcs,
        basin_labels: labels,
        n_basins,
        events,
        basin_pixels,
    })
}

/// Priority-flood watershed over the known region. Returns per-pixel basin
/// labels (-1 on unknown pixels) and the basin count. Seeds are the regional
/// minima plateaus; flooding ties break on (value, pixel index, push order).
fn watershed(magnitude: &Grid<f64>, mask: &MaskRegion) -> (Grid<i32>, usize) {
    let (w, h) = (magnitude.width(), magnitude.height());
    let mut labels: Grid<i32> = Grid::new(w, h, -1);
    let mut n_basins = 0usize;

    // regional minima plateaus (4-connected equal-value sets with no lower neighbor)
    let mut visited = Grid::new(w, h, false);
    let mut seeds: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.is_known_i(x as i64, y as i64) || *visited.get(x, y) {
                continue;
            }
            let level = *magnitude.get(x, y);
            let mut plateau = vec![(x, y)];
            let mut queue = vec![(x, y)];
            visited.set(x, y, true);
            let mut is_min = true;
            while let Some((cx, cy)) = queue.pop() {
                for (dx, dy) in N4 {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if !mask.is_known_i(nx, ny) {
                        continue;
                    }
                    let nv = *magnitude.get(nx as usize, ny as usize);
                    if nv < level {
                        is_min = false;
                    } else if nv == level && !*visited.get(nx as usize, ny as usize) {
                        visited.set(nx as usize, ny as usize, true);
                        plateau.push((nx as usize, ny as usize));
                        queue.push((nx as usize, ny as usize));
                    }
                }
            }
            if is_min {
                for &(px, py) in &plateau {
                    labels.set(px, py, n_basins as i32);
                }
                seeds.extend(plateau);
                n_basins += 1;
            }
        }
    }

    #[derive(PartialEq, Eq)]
    struct FloodEntry {
        value_bits: u64,
        idx: u32,
        seq: u64,
        label: i32,
    }
    impl Ord for FloodEntry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.value_bits
                .cmp(&other.value_bits)
                .then(self.idx.cmp(&other.idx))
                .then(self.seq.cmp(&other.seq))
        }
    }
    impl PartialOrd for FloodEntry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    let mut heap: BinaryHeap<Reverse<FloodEntry>> = BinaryHeap::new();
    let mut seq = 0u64;
    // magnitude is non-negative, so the IEEE bit pattern orders numerically
    let mut push = |heap: &mut BinaryHeap<Reverse<FloodEntry>>,
                    seq: &mut u64,
                    x: usize,
                    y: usize,
                    label: i32,
                    value: f64| {
        heap.push(Reverse(FloodEntry {
            value_bits: value.to_bits(),
            idx: (y * w + x) as u32,
            seq: *seq,
            label,
        }));
        *seq += 1;
    };
    for &(x, y) in &seeds {
        let label = *labels.get(x, y);
        push(&mut heap, &mut seq, x, y, label, *magnitude.get(x, y));
    }
    let mut claimed = Grid::new(w, h, false);
    for &(x, y) in &seeds {
        claimed.set(x, y, true);
    }
    while let Some(Reverse(entry)) = heap.pop() {
        let (x, y) = ((entry.idx as usize) % w, (entry.idx as usize) / w);
        if *labels.get(x, y) < 0 {
            labels.set(x, y, entry.label);
        }
        let label = *labels.get(x, y);
        for (dx, dy) in N4 {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if mask.is_known_i(nx, ny) && !*claimed.get(nx as usize, ny as usize) {
                claimed.set(nx as usize, ny as usize, true);
                push(
                    &mut heap,
                    &mut seq,
                    nx as usize,
                    ny as usize,
                    label,
                    *magnitude.get(nx as usize, ny as usize),
                );
            }
        }
    }

    (labels, n_basins)
}

/// Orders a set of crack midpoints into chains by walking nearest neighbors.
fn order_chains(mids: Vec<(f64, f64)>) -> Vec<Vec<(f64, f64)>> {
    let n = mids.len();
    if n == 0 {
        return Vec::new();
    }
    // adjacency on doubled integer coordinates
    let key = |p: (f64, f64)| ((p.0 * 2.0).round() as i64, (p.1 * 2.0).round() as i64);
    let mut index: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &m) in mids.iter().enumerate() {
        index.entry(key(m)).or_default().push(i);
    }
    let neighbors = |i: usize| -> Vec<usize> {
        let (kx, ky) = key(mids[i]);
        let mut out = Vec::new();
        for dy in -2..=2i64 {
            for dx in -2..=2i64 {
                if let Some(list) = index.get(&(kx + dx, ky + dy)) {
                    for &j in list {
                        if j != i {
                            let ddx = mids[i].0 - mids[j].0;
                            let ddy = mids[i].1 - mids[j].1;
                            if (ddx * ddx + ddy * ddy).sqrt() <= 1.01 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };

    let degree: Vec<usize> = (0..n).map(|i| neighbors(i).len()).collect();
    let mut used = vec![false; n];
    let mut chains = Vec::new();
    // endpoints first so open chains start at a natural end
    let mut starts: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1).collect();
    starts.extend(0..n);
    for s in starts {
        if used[s] {
            continue;
        }
        let mut chain = vec![mids[s]];
        used[s] = true;
        let mut cur = s;
        loop {
            let next = neighbors(cur).into_iter().find(|&j| !used[j]);
            match next {
                Some(j) => {
                    used[j] = true;
                    chain.push(mids[j]);
                    cur = j;
                }
                None => break,
            }
        }
        chains.push(chain);
    }
    chains
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Union keeping the smaller id as root; returns the surviving root.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop] = keep;
        keep
    }
}
