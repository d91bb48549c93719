//! Construction by deconstruction: dense stacks are built on a 4x4 grid
//! scaffold, verified, then thinned out by recursively removing blocks
//! while the structure stays stable.

mod corpus;

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    rasterize, BlockInstance, BlockShape, Pose6, Silhouette64, Stack, View, CELL, GRID_SIZE,
};
use crate::stability::{classify_with, StabilityParams};

pub use corpus::{
    build_corpus, lint_corpus, template_seed, Corpus, CorpusManifest, CorpusSummary, DatagenError,
    LintReport, SplitCounts, MANIFEST_FILE, POSE_STD_FLOOR, TEST_FILE, TRAIN_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub n_templates: usize,
    /// Half-width of the uniform horizontal position noise.
    pub jitter_xy: f64,
    /// Half-width of the uniform yaw noise (radians).
    pub jitter_yaw: f64,
    pub max_removals: usize,
    pub test_fraction: f64,
    /// Draws per template slot before the slot is given up.
    pub max_template_attempts: usize,
    /// Worker threads; 0 = one per available core.
    pub workers: usize,
    pub stability: StabilityParams,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            n_templates: 2000,
            jitter_xy: 0.1,
            jitter_yaw: 0.03,
            max_removals: 4,
            test_fraction: 0.1,
            max_template_attempts: 64,
            workers: 0,
            stability: StabilityParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub shape: BlockShape,
    pub row: usize,
    /// Leftmost occupied cell.
    pub col: usize,
}

impl Placement {
    /// Cell-center pose before jitter.
    pub fn nominal_pose(&self) -> Pose6 {
        let span = self.shape.width_cells() as f64;
        let x = (self.col as f64 + span / 2.0) * CELL - CELL * GRID_SIZE as f64 / 2.0;
        let z = CELL * self.row as f64 + CELL / 2.0;
        Pose6::from_translation(x, 0.0, z)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridTemplate {
    /// Bottom row first, left to right within a row.
    pub placements: Vec<Placement>,
    pub rng_seed: u64,
}

impl GridTemplate {
    /// `cells[row][col]`, row 0 at the bottom.
    pub fn cells(&self) -> [[Option<BlockShape>; GRID_SIZE]; GRID_SIZE] {
        let mut cells = [[None; GRID_SIZE]; GRID_SIZE];
        for p in &self.placements {
            cells[p.row][p.col..p.col + p.shape.width_cells()].fill(Some(p.shape));
        }
        cells
    }

    pub fn occupied(&self, row: usize) -> usize {
        self.cells()[row].iter().flatten().count()
    }

    pub fn full_cubes() -> Self {
        let placements = (0..GRID_SIZE)
            .flat_map(|row| {
                (0..GRID_SIZE).map(move |col| Placement {
                    shape: BlockShape::Cube,
                    row,
                    col,
                })
            })
            .collect();
        Self {
            placements,
            rng_seed: 0,
        }
    }
}

/// Bottom-up random fill. Each row draws uniformly among the shapes that
/// are admissible for it (triangles only in the top row) and keeps a draw
/// only if it fits in the remaining width; the row is closed once three
/// cells are taken. A three-cell row gets its hole at a random boundary
/// between its blocks.
pub fn build_template(seed: u64) -> GridTemplate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placements = Vec::new();
    for row in 0..GRID_SIZE {
        let admissible: &[BlockShape] = if row == GRID_SIZE - 1 {
            &BlockShape::ALL
        } else {
            &BlockShape::ALL[..3]
        };
        let mut pieces = Vec::new();
        let mut used = 0;
        while used < GRID_SIZE - 1 {
            let shape = *admissible.choose(&mut rng).expect("non-empty");
            if used + shape.width_cells() <= GRID_SIZE {
                used += shape.width_cells();
                pieces.push(shape);
            }
        }
        let gap_at = if used < GRID_SIZE {
            rng.random_range(0..=pieces.len())
        } else {
            usize::MAX
        };
        let mut col = 0;
        for (k, shape) in pieces.into_iter().enumerate() {
            if k == gap_at {
                col += 1;
            }
            placements.push(Placement { shape, row, col });
            col += shape.width_cells();
        }
    }
    GridTemplate {
        placements,
        rng_seed: seed,
    }
}

/// Place every block at its cell-center pose, then add uniform noise to
/// x, y and yaw. Jitter can push row neighbours into each other; such
/// pairs are pushed apart symmetrically along x until they just touch.
pub fn instantiate<R: Rng + ?Sized>(
    t: &GridTemplate,
    jitter_xy: f64,
    jitter_yaw: f64,
    rng: &mut R,
) -> Stack {
    let mut poses: Vec<(f64, f64, f64, f64)> = t
        .placements
        .iter()
        .map(|p| {
            let n = p.nominal_pose().translation;
            let mut u = |h: f64| {
                if h > 0.0 {
                    rng.random_range(-h..=h)
                } else {
                    0.0
                }
            };
            (n.x + u(jitter_xy), n.y + u(jitter_xy), n.z, u(jitter_yaw))
        })
        .collect();

    for row in 0..GRID_SIZE {
        let mut idx: Vec<usize> = (0..t.placements.len())
            .filter(|&i| t.placements[i].row == row)
            .collect();
        idx.sort_by_key(|&i| t.placements[i].col);
        let half = |i: usize, yaw: f64| {
            let [w, d, _] = t.placements[i].shape.extent();
            0.5 * (w * yaw.cos().abs() + d * yaw.sin().abs())
        };
        for _ in 0..32 {
            let mut moved = false;
            for w in idx.windows(2) {
                let (a, b) = (w[0], w[1]);
                let overlap =
                    (poses[a].0 + half(a, poses[a].3)) - (poses[b].0 - half(b, poses[b].3));
                if overlap > 0.0 {
                    poses[a].0 -= overlap / 2.0;
                    poses[b].0 += overlap / 2.0;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }

    let blocks = t
        .placements
        .iter()
        .zip(poses)
        .map(|(p, (x, y, z, yaw))| BlockInstance::new(p.shape, Pose6::with_yaw(x, y, z, yaw)))
        .collect();
    Stack::new(blocks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub parent_id: Option<String>,
    pub depth: usize,
    /// Lineage key: every descendant shares its root's template id.
    pub template: u64,
    pub blocks: Vec<BlockInstance>,
    #[serde(rename = "sil")]
    pub silhouette_front: Silhouette64,
    pub counts: [usize; 4],
}

impl DatasetRecord {
    pub fn stack(&self) -> Stack {
        Stack::new(self.blocks.clone())
    }

    fn from_settled(
        id: String,
        parent_id: Option<String>,
        depth: usize,
        template: u64,
        stack: Stack,
    ) -> Self {
        Self {
            silhouette_front: rasterize(&stack, View::Front),
            counts: stack.counts(),
            blocks: stack.blocks,
            id,
            parent_id,
            depth,
            template,
        }
    }
}

pub fn root_id(template: u64) -> String {
    format!("t{template:06}")
}

/// Stable stacks become depth-0 records (with their settled poses);
/// anything else is rejected.
pub fn verify_and_emit(
    stack: &Stack,
    template: u64,
    params: &StabilityParams,
) -> Option<DatasetRecord> {
    let verdict = classify_with(stack, params).ok()?;
    verdict
        .stable
        .then(|| DatasetRecord::from_settled(root_id(template), None, 0, template, verdict.settled))
}

/// Index of the block at the top of the stack: highest center, leftmost
/// on ties.
pub fn top_block(blocks: &[BlockInstance]) -> Option<usize> {
    (0..blocks.len()).max_by(|&i, &j| {
        let (a, b) = (blocks[i].pose.translation, blocks[j].pose.translation);
        a.z.total_cmp(&b.z).then(b.x.total_cmp(&a.x))
    })
}

/// Depth-first removal search below `root`. Block sets are keyed by the
/// removed indices of the root, so a set reached through different
/// removal orders is judged (and emitted) once.
pub fn removal_expand(
    root: &DatasetRecord,
    max_removals: usize,
    params: &StabilityParams,
) -> Vec<DatasetRecord> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let keep: Vec<usize> = (0..root.blocks.len()).collect();
    expand(
        root,
        &root.id,
        &keep,
        &[],
        max_removals,
        params,
        &mut seen,
        &mut out,
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn expand(
    root: &DatasetRecord,
    parent_id: &str,
    keep: &[usize],
    removed: &[usize],
    budget: usize,
    params: &StabilityParams,
    seen: &mut HashSet<Vec<usize>>,
    out: &mut Vec<DatasetRecord>,
) {
    if budget == 0 {
        return;
    }
    let current: Vec<BlockInstance> = keep.iter().map(|&i| root.blocks[i]).collect();
    let Some(top) = top_block(&current).map(|k| keep[k]) else {
        return;
    };
    for &victim in keep.iter().filter(|&&i| i != top) {
        let mut next_removed = removed.to_vec();
        next_removed.push(victim);
        next_removed.sort_unstable();
        if !seen.insert(next_removed.clone()) {
            continue;
        }
        let next_keep: Vec<usize> = keep.iter().copied().filter(|&i| i != victim).collect();
        let stack = Stack::new(next_keep.iter().map(|&i| root.blocks[i]).collect());
        let Ok(verdict) = classify_with(&stack, params) else {
            continue;
        };
        if !verdict.stable {
            continue;
        }
        let tag: Vec<String> = next_removed.iter().map(|i| i.to_string()).collect();
        let id = format!("{}-r{}", root.id, tag.join("."));
        out.push(DatasetRecord::from_settled(
            id.clone(),
            Some(parent_id.to_string()),
            next_removed.len(),
            root.template,
            verdict.settled,
        ));
        expand(
            root,
            &id,
            &next_keep,
            &next_removed,
            budget - 1,
            params,
            seen,
            out,
        );
    }
}

/// Full pipeline for one template slot: draw templates until one survives
/// verification, then expand it. Returns nothing if every attempt fell.
pub fn generate_lineage(
    template: u64,
    corpus_seed: u64,
    cfg: &DatagenConfig,
) -> Vec<DatasetRecord> {
    for attempt in 0..cfg.max_template_attempts as u64 {
        let seed = template_seed(corpus_seed, template, attempt);
        let t = build_template(seed);
        let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed);
        jitter_rng.set_stream(1);
        let stack = instantiate(&t, cfg.jitter_xy, cfg.jitter_yaw, &mut jitter_rng);
        if let Some(root) = verify_and_emit(&stack, template, &cfg.stability) {
            let mut records = removal_expand(&root, cfg.max_removals, &cfg.stability);
            records.insert(0, root);
            return records;
        }
    }
    Vec::new()
}
