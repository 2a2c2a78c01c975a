//! Kernel pattern masks, pattern libraries, and the integer steerable-filter
//! identities that motivate the derived 8-pattern library.
//!
//! A pattern is a 3x3 binary mask with exactly four set positions. Two mask
//! families matter here: the Gaussian family (center + one corner + the two
//! edges adjacent to that corner, closed under 90-degree rotation; the four
//! masks sum elementwise to the integer Gaussian filter) and the ELoG family
//! (center + three of the four edge positions; the four masks average to the
//! cross profile `[[0,p,0],[p,1,p],[0,p,0]]` with p = 3/4). Their union is
//! the 8-pattern library which downstream stages select from.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Kernel side length. Everything in this crate is 3x3.
pub const KERNEL_SIDE: usize = 3;
/// Positions in a kernel.
pub const KERNEL_AREA: usize = 9;
/// Non-zero entries kept per kernel (matches 4-wide SIMD lanes).
pub const PATTERN_WEIGHTS: usize = 4;
/// Number of 4-of-9 candidate masks, C(9,4).
pub const CANDIDATE_COUNT: usize = 126;

/// A 3x3 binary occupancy mask with exactly four set bits.
///
/// Bit `i` covers position `(i / 3, i % 3)`, row-major. Masks order by their
/// bitmap value; that ordering is the canonical one everywhere in the crate.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct PatternMask(u16);

impl PatternMask {
    pub fn from_bits(bits: u16) -> Result<Self> {
        if bits >= 1 << KERNEL_AREA || bits.count_ones() as usize != PATTERN_WEIGHTS {
            return Err(Error::InvalidMask { bits });
        }
        Ok(PatternMask(bits))
    }

    /// Builds a mask from four distinct `(row, col)` positions.
    pub fn from_positions(positions: [(usize, usize); PATTERN_WEIGHTS]) -> Result<Self> {
        let mut bits = 0u16;
        for (r, c) in positions {
            if r >= KERNEL_SIDE || c >= KERNEL_SIDE {
                return Err(Error::IndexOutOfRange(format!("mask position ({r}, {c})")));
            }
            bits |= 1 << (r * KERNEL_SIDE + c);
        }
        Self::from_bits(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, row: usize, col: usize) -> bool {
        row < KERNEL_SIDE && col < KERNEL_SIDE && self.0 & (1 << (row * KERNEL_SIDE + col)) != 0
    }

    /// The four set positions in ascending bit order.
    pub fn positions(self) -> [(usize, usize); PATTERN_WEIGHTS] {
        let mut out = [(0, 0); PATTERN_WEIGHTS];
        let mut n = 0;
        for i in 0..KERNEL_AREA {
            if self.0 & (1 << i) != 0 {
                out[n] = (i / KERNEL_SIDE, i % KERNEL_SIDE);
                n += 1;
            }
        }
        debug_assert_eq!(n, PATTERN_WEIGHTS);
        out
    }

    /// 0/1 occupancy matrix.
    pub fn as_matrix(self) -> [[u8; KERNEL_SIDE]; KERNEL_SIDE] {
        let mut m = [[0u8; KERNEL_SIDE]; KERNEL_SIDE];
        for (r, c) in self.positions() {
            m[r][c] = 1;
        }
        m
    }

    /// Rotates the mask 90 degrees clockwise: `(r, c) -> (c, 2 - r)`.
    pub fn rotated90(self) -> Self {
        let mut bits = 0u16;
        for (r, c) in self.positions() {
            bits |= 1 << (c * KERNEL_SIDE + (KERNEL_SIDE - 1 - r));
        }
        PatternMask(bits)
    }

    pub fn contains_center(self) -> bool {
        self.contains(1, 1)
    }

    pub fn touches_corner(self) -> bool {
        [(0, 0), (0, 2), (2, 0), (2, 2)]
            .iter()
            .any(|&(r, c)| self.contains(r, c))
    }
}

impl std::fmt::Debug for PatternMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PatternMask({:#011b})", self.0)
    }
}

impl TryFrom<u16> for PatternMask {
    type Error = Error;
    fn try_from(bits: u16) -> Result<Self> {
        PatternMask::from_bits(bits)
    }
}

impl From<PatternMask> for u16 {
    fn from(m: PatternMask) -> u16 {
        m.bits()
    }
}

/// An ordered set of distinct pattern masks.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PatternLibrary {
    masks: Vec<PatternMask>,
}

impl PatternLibrary {
    pub fn new(masks: Vec<PatternMask>) -> Result<Self> {
        if masks.is_empty() || masks.len() > CANDIDATE_COUNT {
            return Err(Error::InvalidLibrary(format!(
                "library size {} outside 1..={CANDIDATE_COUNT}",
                masks.len()
            )));
        }
        let mut seen = [false; 1 << KERNEL_AREA];
        for m in &masks {
            if std::mem::replace(&mut seen[m.bits() as usize], true) {
                return Err(Error::InvalidLibrary(format!("duplicate mask {:?}", m)));
            }
        }
        Ok(PatternLibrary { masks })
    }

    pub fn k(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[PatternMask] {
        &self.masks
    }

    pub fn mask(&self, idx: usize) -> PatternMask {
        self.masks[idx]
    }

    pub fn index_of(&self, mask: PatternMask) -> Option<usize> {
        self.masks.iter().position(|&m| m == mask)
    }

    /// Serializes as `{"version":1,"masks":[bitmap,...]}`, the interchange
    /// document consumed by the pruner and the packer.
    pub fn to_json(&self) -> String {
        let doc = LibraryDoc {
            version: LIBRARY_DOC_VERSION,
            masks: self.masks.iter().map(|m| m.bits()).collect(),
        };
        serde_json::to_string(&doc).expect("library serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LibraryDoc = serde_json::from_str(text)?;
        if doc.version != LIBRARY_DOC_VERSION {
            return Err(Error::InvalidLibrary(format!(
                "unsupported library document version {}",
                doc.version
            )));
        }
        let masks = doc
            .masks
            .into_iter()
            .map(PatternMask::from_bits)
            .collect::<Result<Vec<_>>>()?;
        PatternLibrary::new(masks)
    }
}

const LIBRARY_DOC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LibraryDoc {
    version: u32,
    masks: Vec<u16>,
}

/// Parameters of the interpolation construction: Gaussian variance, the
/// interpolation coefficient `p`, and the number of interpolated layers `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteerableSpec {
    pub sigma_sq: f64,
    pub p: f64,
    pub n: u32,
}

impl Default for SteerableSpec {
    fn default() -> Self {
        SteerableSpec {
            sigma_sq: 0.5,
            p: 0.75,
            n: 8,
        }
    }
}

impl SteerableSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0) {
            return Err(Error::Infeasible("sigma_sq must be positive".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Infeasible("p must lie in (0, 1]".into()));
        }
        if self.n < 1 {
            return Err(Error::Infeasible("n must be at least 1".into()));
        }
        Ok(())
    }
}

/// A 3x3 integer filter.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct IntFilter3x3 {
    pub entries: [[i32; KERNEL_SIDE]; KERNEL_SIDE],
}

impl IntFilter3x3 {
    pub fn new(entries: [[i32; KERNEL_SIDE]; KERNEL_SIDE]) -> Self {
        IntFilter3x3 { entries }
    }

    pub fn sum(&self) -> i32 {
        self.entries.iter().flatten().sum()
    }

    pub fn as_f64(&self) -> [[f64; KERNEL_SIDE]; KERNEL_SIDE] {
        let mut out = [[0.0; KERNEL_SIDE]; KERNEL_SIDE];
        for r in 0..KERNEL_SIDE {
            for c in 0..KERNEL_SIDE {
                out[r][c] = self.entries[r][c] as f64;
            }
        }
        out
    }
}

/// Discrete 1-D convolution, full support.
pub(crate) fn conv1d(a: &[i32], b: &[i32]) -> Vec<i32> {
    let mut out = vec![0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn outer3(v: &[i32; 3]) -> IntFilter3x3 {
    let mut m = [[0i32; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = v[r] * v[c];
        }
    }
    IntFilter3x3::new(m)
}

/// Integer 3x3 Gaussian: the binomial row `[1 2 1]` (which is `[1 1] * [1 1]`)
/// times its transpose.
pub fn gaussian_filter_3x3() -> IntFilter3x3 {
    let row = conv1d(&[1, 1], &[1, 1]);
    outer3(&[row[0], row[1], row[2]])
}

/// Which integer Laplacian-of-Gaussian approximation to return.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LogApprox {
    /// Separable second difference, sign chosen so the center lobe is
    /// positive: `[[-1,2,-1],[2,-4,2],[-1,2,-1]]`.
    First,
    /// 4-neighbor cross Laplacian: `[[0,1,0],[1,-4,1],[0,1,0]]`.
    Second,
}

pub fn log_filter_approx(which: LogApprox) -> IntFilter3x3 {
    match which {
        LogApprox::First => IntFilter3x3::new([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]]),
        LogApprox::Second => IntFilter3x3::new([[0, 1, 0], [1, -4, 1], [0, 1, 0]]),
    }
}

/// The enhanced-LoG integer filter: a cross with an 8x center boost.
pub fn elog_filter() -> IntFilter3x3 {
    IntFilter3x3::new([[0, 1, 0], [1, 8, 1], [0, 1, 0]])
}

/// All 126 masks with exactly four set bits, ascending bitmap order.
pub fn enumerate_candidate_masks() -> PatternLibrary {
    let masks: Vec<PatternMask> = (0u16..1 << KERNEL_AREA)
        .filter(|b| b.count_ones() as usize == PATTERN_WEIGHTS)
        .map(PatternMask)
        .collect();
    debug_assert_eq!(masks.len(), CANDIDATE_COUNT);
    PatternLibrary::new(masks).expect("candidate enumeration is a valid library")
}

/// The four masks whose 0/1 matrices sum to the integer Gaussian filter:
/// each holds the center, one corner, and the two edges adjacent to that
/// corner. The family is closed under 90-degree rotation. Ascending bitmap
/// order.
pub fn gaussian_pattern_set() -> PatternLibrary {
    let seed = PatternMask::from_positions([(1, 1), (0, 0), (0, 1), (1, 0)])
        .expect("corner family seed is a valid mask");
    let mut masks = vec![seed];
    let mut cur = seed;
    for _ in 0..3 {
        cur = cur.rotated90();
        masks.push(cur);
    }
    masks.sort();
    PatternLibrary::new(masks).expect("rotation family is distinct")
}

/// The four masks holding the center and three of the four edge positions
/// (each omits a distinct edge). Their elementwise mean is the cross profile
/// `[[0,3/4,0],[3/4,1,3/4],[0,3/4,0]]`. Ascending bitmap order.
pub fn elog_pattern_set() -> PatternLibrary {
    let edges = [(0, 1), (1, 0), (1, 2), (2, 1)];
    let mut masks = Vec::with_capacity(4);
    for omit in 0..4 {
        let kept: Vec<(usize, usize)> = (0..4).filter(|&i| i != omit).map(|i| edges[i]).collect();
        masks.push(
            PatternMask::from_positions([(1, 1), kept[0], kept[1], kept[2]])
                .expect("edge family member is a valid mask"),
        );
    }
    masks.sort();
    PatternLibrary::new(masks).expect("edge family is distinct")
}

/// Union of the Gaussian and ELoG families: the 8-pattern library, ascending
/// bitmap order. The two families are disjoint (Gaussian masks touch a
/// corner, ELoG masks do not), so K is always 8.
pub fn derived_library() -> PatternLibrary {
    let mut masks: Vec<PatternMask> = gaussian_pattern_set()
        .masks()
        .iter()
        .chain(elog_pattern_set().masks())
        .copied()
        .collect();
    masks.sort();
    masks.dedup();
    PatternLibrary::new(masks).expect("union of derived families is a valid library")
}

/// Target filter for an interpolation report.
#[derive(Clone, Copy, Debug)]
pub enum TargetFilter {
    Gaussian,
    Elog,
    Custom(IntFilter3x3),
}

impl TargetFilter {
    fn resolve(self) -> IntFilter3x3 {
        match self {
            TargetFilter::Gaussian => gaussian_filter_3x3(),
            TargetFilter::Elog => elog_filter(),
            TargetFilter::Custom(f) => f,
        }
    }
}

/// Picks the natural comparison target for a library: Gaussian if any mask
/// touches a corner, ELoG otherwise.
pub fn auto_target(library: &PatternLibrary) -> TargetFilter {
    if library.masks().iter().any(|m| m.touches_corner()) {
        TargetFilter::Gaussian
    } else {
        TargetFilter::Elog
    }
}

/// Numeric summary of how a mask library composes towards a target filter.
///
/// `cosine_mean` compares the expected (mean) mask directly against the
/// target. `cosine_composite` compares the central 3x3 of the n-fold
/// self-convolution of the mean mask against the target; that reading of
/// "interpolating the patterns across n layers" is one interpretation and
/// is reported, not asserted against any threshold.
#[derive(Clone, Debug, Serialize)]
pub struct InterpolationReport {
    pub k: usize,
    pub n: u32,
    pub p: f64,
    pub mean_mask: [[f64; 3]; 3],
    pub composite_center: [[f64; 3]; 3],
    pub target: [[f64; 3]; 3],
    pub cosine_mean: f64,
    pub cosine_composite: f64,
}

pub fn interpolation_report(
    spec: &SteerableSpec,
    library: &PatternLibrary,
    target: TargetFilter,
) -> Result<InterpolationReport> {
    spec.validate()?;
    let k = library.k();

    let mut mean = [[0.0f64; 3]; 3];
    for m in library.masks() {
        for (r, c) in m.positions() {
            mean[r][c] += 1.0 / k as f64;
        }
    }

    let composite = self_convolve(&mean, spec.n);
    let composite_center = center_crop3(&composite);
    let target = target.resolve().as_f64();

    Ok(InterpolationReport {
        k,
        n: spec.n,
        p: spec.p,
        mean_mask: mean,
        composite_center,
        target,
        cosine_mean: cosine3(&mean, &target),
        cosine_composite: cosine3(&composite_center, &target),
    })
}

/// Full 2-D convolution of `n` copies of a 3x3 grid; result is (2n+1)^2.
fn self_convolve(base: &[[f64; 3]; 3], n: u32) -> Vec<Vec<f64>> {
    let mut acc: Vec<Vec<f64>> = base.iter().map(|r| r.to_vec()).collect();
    for _ in 1..n {
        let h = acc.len();
        let w = acc[0].len();
        let mut next = vec![vec![0.0; w + 2]; h + 2];
        for (i, row) in acc.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (bi, brow) in base.iter().enumerate() {
                    for (bj, &bv) in brow.iter().enumerate() {
                        next[i + bi][j + bj] += v * bv;
                    }
                }
            }
        }
        acc = next;
    }
    acc
}

fn center_crop3(grid: &[Vec<f64>]) -> [[f64; 3]; 3] {
    let mid = grid.len() / 2;
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = grid[mid - 1 + r][mid - 1 + c];
        }
    }
    out
}

/// Cosine similarity between two 3x3 grids flattened to 9-vectors.
pub fn cosine3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            dot += a[r][c] * b[r][c];
            na += a[r][c] * a[r][c];
            nb += b[r][c] * b[r][c];
        }
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}
