use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_STAGES: usize = 4;
pub const BASE_CHANNELS: usize = 64;
pub const INPUT_SIDE: usize = 32;

/// Blocks per stage of one Small ResNet, each 1 or 2.
///
/// `R1111` is ResNet-10 and `R2222` is ResNet-18 in the CIFAR layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArchSpec {
    blocks: [u8; NUM_STAGES],
}

impl ArchSpec {
    pub fn new(blocks: [u8; NUM_STAGES]) -> Result<Self> {
        if blocks.iter().any(|b| !(1..=2).contains(b)) {
            return Err(Error::Argument(format!(
                "blocks per stage must be 1 or 2, got {blocks:?}"
            )));
        }
        Ok(Self { blocks })
    }

    pub fn blocks_per_stage(&self) -> [u8; NUM_STAGES] {
        self.blocks
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn total_blocks(&self) -> usize {
        self.blocks.iter().map(|&b| b as usize).sum()
    }

    pub fn num_stitch_points(&self) -> usize {
        self.total_blocks() + 1
    }

    /// Zero-based stage of residual block `k` (1-based).
    pub fn stage_of_block(&self, k: usize) -> usize {
        assert!(k >= 1 && k <= self.total_blocks(), "block {k} out of range");
        let mut seen = 0;
        for (s, &b) in self.blocks.iter().enumerate() {
            seen += b as usize;
            if k <= seen {
                return s;
            }
        }
        unreachable!()
    }

    /// Whether block `k` opens a stage after the first (and so downsamples).
    pub fn block_downsamples(&self, k: usize) -> bool {
        let s = self.stage_of_block(k);
        s > 0 && (k == 1 || self.stage_of_block(k - 1) != s)
    }

    pub fn stage_shape(stage: usize) -> TensorShape {
        TensorShape::new(
            BASE_CHANNELS << stage,
            INPUT_SIDE >> stage,
            INPUT_SIDE >> stage,
        )
    }

    pub fn point_shape(&self, index: usize) -> Result<TensorShape> {
        if index > self.total_blocks() {
            return Err(Error::Argument(format!(
                "stitch index {index} out of range for {self} (max {})",
                self.total_blocks()
            )));
        }
        Ok(if index == 0 {
            Self::stage_shape(0)
        } else {
            Self::stage_shape(self.stage_of_block(index))
        })
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R")?;
        for b in self.blocks {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .strip_prefix('R')
            .or_else(|| s.strip_prefix('r'))
            .ok_or_else(|| {
                Error::Argument(format!("architecture name {s:?} must start with 'R'"))
            })?;
        let bytes = digits.as_bytes();
        if bytes.len() != NUM_STAGES {
            return Err(Error::Argument(format!(
                "architecture name {s:?} needs four digits"
            )));
        }
        let mut blocks = [0u8; NUM_STAGES];
        for (b, &c) in blocks.iter_mut().zip(bytes) {
            *b = c.wrapping_sub(b'0');
        }
        Self::new(blocks)
    }
}

impl Serialize for ArchSpec {
    fn serialize<Ser: serde::Serializer>(
        &self,
        s: Ser,
    ) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ArchSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All 16 Small ResNets in lexicographic order, `R1111` through `R2222`.
pub fn enumerate_archs() -> Vec<ArchSpec> {
    let mut out = Vec::with_capacity(16);
    for code in 0..16u8 {
        let blocks = std::array::from_fn(|s| 1 + ((code >> (NUM_STAGES - 1 - s)) & 1));
        out.push(ArchSpec { blocks });
    }
    out
}

/// Channel/spatial shape of one example's activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn with_batch(&self, n: usize) -> [usize; 4] {
        [n, self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.channels, self.height, self.width)
    }
}

/// Cut location: 0 after the stem, `k` after the k-th residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StitchPoint {
    pub index: usize,
    pub shape: TensorShape,
}

pub fn stitch_points(arch: &ArchSpec) -> Vec<StitchPoint> {
    (0..=arch.total_blocks())
        .map(|index| StitchPoint {
            index,
            shape: arch.point_shape(index).expect("index in range"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_archs_in_order() {
        let archs = enumerate_archs();
        assert_eq!(archs.len(), 16);
        assert_eq!(archs[0].name(), "R1111");
        assert_eq!(archs[1].name(), "R1112");
        assert_eq!(archs[15].name(), "R2222");
        let mut sorted = archs.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, archs);
        for a in &archs {
            assert!((4..=8).contains(&a.total_blocks()));
        }
    }

    #[test]
    fn parse_round_trip_and_rejects() {
        for a in enumerate_archs() {
            assert_eq!(a.name().parse::<ArchSpec>().unwrap(), a);
        }
        for bad in ["R1113", "R111", "X1111", "R11111", "R0111"] {
            assert!(bad.parse::<ArchSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn shape_table() {
        let r1111: ArchSpec = "R1111".parse().unwrap();
        let shapes: Vec<[usize; 3]> = stitch_points(&r1111)
            .iter()
            .map(|p| p.shape.dims())
            .collect();
        assert_eq!(
            shapes,
            vec![
                [64, 32, 32],
                [64, 32, 32],
                [128, 16, 16],
                [256, 8, 8],
                [512, 4, 4]
            ]
        );
        let r2222: ArchSpec = "R2222".parse().unwrap();
        assert_eq!(r2222.point_shape(2).unwrap().dims(), [64, 32, 32]);
        assert!(r2222.block_downsamples(3));
        assert!(!r2222.block_downsamples(4));
        for a in enumerate_archs() {
            let pts = stitch_points(&a);
            assert_eq!(pts.len(), a.total_blocks() + 1);
            assert_eq!(pts.last().unwrap().shape.dims(), [512, 4, 4]);
        }
    }
}
