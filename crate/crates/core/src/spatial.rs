//! Coarse localization of activation maps: binarization at half the map
//! maximum, a 3×3 grid of cells (numbered row-major from the top-left), and
//! simplification of the active cells into position labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::net::ActivationMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMap {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }
}

/// A value becomes 1 iff it is strictly greater than half the map maximum.
/// All-zero maps binarize to all zeros; a constant positive map to all ones.
pub fn binarize(map: &ActivationMap) -> BinaryMap {
    let threshold = 0.5 * map.max();
    BinaryMap {
        height: map.height,
        width: map.width,
        bits: map.values.iter().map(|&v| v > threshold).collect(),
    }
}

/// Subset of the nine grid cells, stored as a bit set.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CellSet(u16);

impl CellSet {
    pub const ALL: CellSet = CellSet(0x1ff);

    pub fn empty() -> Self {
        CellSet(0)
    }

    /// Panics on cells outside `0..9`.
    pub fn from_cells(cells: &[usize]) -> Self {
        cells.iter().fold(CellSet(0), |set, &c| set.with(c))
    }

    pub fn from_bits(bits: u16) -> Self {
        CellSet(bits & 0x1ff)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn with(self, cell: usize) -> Self {
        assert!(cell < 9, "cell index {cell} out of range");
        CellSet(self.0 | 1 << cell)
    }

    pub fn contains(self, cell: usize) -> bool {
        cell < 9 && self.0 & (1 << cell) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: CellSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: CellSet) -> CellSet {
        CellSet(self.0 | other.0)
    }

    pub fn difference(self, other: CellSet) -> CellSet {
        CellSet(self.0 & !other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..9).filter(move |&c| self.contains(c))
    }
}

impl fmt::Debug for CellSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Band boundaries along one axis: three bands of `n / 3`, the remainder
/// going to the last band.
fn band_of(index: usize, n: usize) -> usize {
    (index / (n / 3)).min(2)
}

/// Cell `c` is active iff any bit inside its region is set.
pub fn grid_cells(bmap: &BinaryMap) -> Result<CellSet> {
    if bmap.height < 3 || bmap.width < 3 {
        return Err(Error::Input(format!(
            "binary map {}x{} is smaller than the 3x3 grid",
            bmap.height, bmap.width
        )));
    }
    let mut cells = CellSet::empty();
    for row in 0..bmap.height {
        for col in 0..bmap.width {
            if bmap.get(row, col) {
                cells = cells.with(3 * band_of(row, bmap.height) + band_of(col, bmap.width));
            }
        }
    }
    Ok(cells)
}

/// Closed vocabulary of position labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PositionLabel {
    TopLeftCorner,
    Top,
    TopRightCorner,
    Left,
    Center,
    Right,
    BottomLeftCorner,
    Bottom,
    BottomRightCorner,
    EntireTop,
    EntireBottom,
    EntireLeft,
    EntireRight,
    Perimeter,
    CenterCross,
    UpperHalf,
    LowerHalf,
    LeftHalf,
    RightHalf,
    EntireImage,
}

use PositionLabel::*;

const BASIC: [PositionLabel; 9] = [
    TopLeftCorner,
    Top,
    TopRightCorner,
    Left,
    Center,
    Right,
    BottomLeftCorner,
    Bottom,
    BottomRightCorner,
];

/// Compound labels with their defining cells, in output order.
const COMPOUNDS: [(PositionLabel, &[usize]); 10] = [
    (EntireTop, &[0, 1, 2]),
    (EntireBottom, &[6, 7, 8]),
    (EntireLeft, &[0, 3, 6]),
    (EntireRight, &[2, 5, 8]),
    (Perimeter, &[0, 1, 2, 5, 8, 7, 6, 3]),
    (CenterCross, &[1, 3, 4, 5, 7]),
    (UpperHalf, &[0, 1, 2, 3, 4, 5]),
    (LowerHalf, &[3, 4, 5, 6, 7, 8]),
    (LeftHalf, &[0, 1, 3, 4, 6, 7]),
    (RightHalf, &[1, 2, 4, 5, 7, 8]),
];

/// "entire X" is dropped when the matching half is also present.
const SUPERSEDED_BY: [(PositionLabel, PositionLabel); 4] = [
    (EntireTop, UpperHalf),
    (EntireBottom, LowerHalf),
    (EntireLeft, LeftHalf),
    (EntireRight, RightHalf),
];

impl PositionLabel {
    pub const ALL: [PositionLabel; 20] = [
        TopLeftCorner,
        Top,
        TopRightCorner,
        Left,
        Center,
        Right,
        BottomLeftCorner,
        Bottom,
        BottomRightCorner,
        EntireTop,
        EntireBottom,
        EntireLeft,
        EntireRight,
        Perimeter,
        CenterCross,
        UpperHalf,
        LowerHalf,
        LeftHalf,
        RightHalf,
        EntireImage,
    ];

    pub fn basic(cell: usize) -> PositionLabel {
        BASIC[cell]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TopLeftCorner => "top-left corner",
            Top => "top",
            TopRightCorner => "top-right corner",
            Left => "left",
            Center => "center",
            Right => "right",
            BottomLeftCorner => "bottom-left corner",
            Bottom => "bottom",
            BottomRightCorner => "bottom-right corner",
            EntireTop => "entire top",
            EntireBottom => "entire bottom",
            EntireLeft => "entire left",
            EntireRight => "entire right",
            Perimeter => "perimeter",
            CenterCross => "center cross",
            UpperHalf => "upper half",
            LowerHalf => "lower half",
            LeftHalf => "left half",
            RightHalf => "right half",
            EntireImage => "entire image",
        }
    }

    /// Grid cells the label stands for.
    pub fn cells(self) -> CellSet {
        if self == EntireImage {
            return CellSet::ALL;
        }
        if let Some(cell) = BASIC.iter().position(|&b| b == self) {
            return CellSet::empty().with(cell);
        }
        let (_, cells) = COMPOUNDS.iter().find(|(l, _)| *l == self).expect("compound label");
        CellSet::from_cells(cells)
    }
}

impl fmt::Display for PositionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PositionLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown position label '{s}'")))
    }
}

impl Serialize for PositionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PositionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(|_| {
            serde::de::Error::invalid_value(serde::de::Unexpected::Str(&s), &"a position label")
        })
    }
}

/// Shortens a set of active cells into position labels.
///
/// Seven or more cells collapse to "entire image". Otherwise every compound
/// whose cells are all active is collected (compounds may share cells),
/// "entire X" is dropped when its half is also collected, and remaining
/// uncovered cells are emitted as basic labels. Compounds come first in
/// table order, then basics by cell index.
pub fn simplify_positions(cells: CellSet) -> Vec<PositionLabel> {
    if cells.len() >= 7 {
        return vec![EntireImage];
    }
    let mut compounds: Vec<PositionLabel> = COMPOUNDS
        .iter()
        .filter(|(_, def)| CellSet::from_cells(def).is_subset(cells))
        .map(|(label, _)| *label)
        .collect();
    let collected = compounds.clone();
    compounds.retain(|label| {
        !SUPERSEDED_BY
            .iter()
            .any(|(entire, half)| entire == label && collected.contains(half))
    });
    let covered = compounds
        .iter()
        .fold(CellSet::empty(), |acc, l| acc.union(l.cells()));
    compounds
        .into_iter()
        .chain(cells.difference(covered).iter().map(PositionLabel::basic))
        .collect()
}

/// Binarize, grid, and simplify in one step.
pub fn positions_for_map(map: &ActivationMap) -> Result<(BinaryMap, CellSet, Vec<PositionLabel>)> {
    let bmap = binarize(map);
    let cells = grid_cells(&bmap)?;
    let labels = simplify_positions(cells);
    Ok((bmap, cells, labels))
}
