//! Network configuration and its structural invariants.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Precision;
use crate::sampling::MeshHierarchy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Nested grid with bilinear up transitions and strided down transitions.
    Full,
    /// Grid without the up transitions.
    NoUp,
    /// Grid without the down transitions.
    NoDown,
    /// Plain skip connections: bridges tap encoder outputs directly.
    Shallow,
    /// No bridges at all; the decoder sees only the embedding.
    None,
}

impl AggregationMode {
    pub fn has_grid(self) -> bool {
        matches!(
            self,
            AggregationMode::Full | AggregationMode::NoUp | AggregationMode::NoDown
        )
    }

    pub fn has_bridges(self) -> bool {
        !matches!(self, AggregationMode::None)
    }
}

fn default_fc_hidden() -> usize {
    512
}
fn default_graph_bias() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetConfig {
    /// Square input image side; must equal `4 * 2^levels`.
    pub input_size: usize,
    /// Encoder depth L; one stride-2 residual block per level.
    pub levels: usize,
    /// Channels per level, finest first; length must equal `levels`.
    pub encoder_channels: Vec<usize>,
    /// Hidden width of the embedding head.
    #[serde(default = "default_fc_hidden")]
    pub fc_hidden: usize,
    pub embedding_dim: usize,
    /// Vertex feature width throughout the decoder.
    pub decoder_channels: usize,
    pub densegcn_growth: usize,
    pub cheb_order: usize,
    pub aggregation_mode: AggregationMode,
    pub precision: Precision,
    /// Bias on the standalone (head) graph convolutions.
    #[serde(default = "default_graph_bias")]
    pub graph_bias: bool,
    /// Directory holding the hierarchy manifest; optional when the
    /// hierarchy is supplied programmatically.
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("levels must be at least 1".into()));
        }
        let expected = 4usize << self.levels;
        if self.input_size != expected {
            return Err(Error::InvalidConfig(format!(
                "input_size must be 4*2^levels = {expected}, got {}",
                self.input_size
            )));
        }
        if self.encoder_channels.len() != self.levels {
            return Err(Error::InvalidConfig(format!(
                "encoder_channels must list {} entries, got {}",
                self.levels,
                self.encoder_channels.len()
            )));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("encoder channels must be positive".into()));
        }
        if self.embedding_dim == 0
            || self.decoder_channels == 0
            || self.densegcn_growth == 0
            || self.fc_hidden == 0
        {
            return Err(Error::InvalidConfig("widths must be positive".into()));
        }
        if self.cheb_order == 0 {
            return Err(Error::InvalidConfig("cheb_order must be at least 1".into()));
        }
        Ok(())
    }

    /// Feature-map side at grid level `i` (1 = finest).
    pub fn map_width(&self, level: usize) -> usize {
        self.input_size >> level
    }

    /// Vertex counts the hierarchy's grid section must match, finest first.
    pub fn grid_counts(&self) -> Vec<usize> {
        (1..=self.levels)
            .map(|i| {
                let w = self.map_width(i);
                w * w
            })
            .collect()
    }

    /// Checks the hierarchy against this config and returns 1 when the
    /// hierarchy carries an extra finest level for the output mesh, else 0.
    pub fn hierarchy_offset(&self, hierarchy: &MeshHierarchy) -> Result<usize> {
        let counts = hierarchy.level_counts();
        let grid = self.grid_counts();
        if counts == grid {
            return Ok(0);
        }
        if counts.len() == grid.len() + 1 && counts[1..] == grid[..] && counts[0] > grid[0] {
            return Ok(1);
        }
        Err(Error::InvalidConfig(format!(
            "hierarchy levels {counts:?} do not match the grid schedule {grid:?} \
             (with an optional extra finest level)"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn desk_config() -> NetConfig {
        NetConfig {
            input_size: 64,
            levels: 4,
            encoder_channels: vec![8, 16, 32, 64],
            fc_hidden: 256,
            embedding_dim: 128,
            decoder_channels: 64,
            densegcn_growth: 16,
            cheb_order: 3,
            aggregation_mode: AggregationMode::Full,
            precision: Precision::Single,
            graph_bias: true,
            hierarchy: None,
        }
    }

    #[test]
    fn valid_config_passes() {
        desk_config().validate().unwrap();
    }

    #[test]
    fn input_size_must_match_levels() {
        let mut c = desk_config();
        c.input_size = 60;
        assert!(c.validate().is_err());
        c.input_size = 128;
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_counts_are_map_width_squares() {
        let c = desk_config();
        assert_eq!(c.grid_counts(), vec![1024, 256, 64, 16]);
        assert_eq!(c.map_width(1), 32);
        assert_eq!(c.map_width(4), 4);
    }

    #[test]
    fn full_scale_counts() {
        let c = NetConfig {
            input_size: 256,
            levels: 6,
            encoder_channels: vec![16, 32, 64, 128, 128, 128],
            fc_hidden: 512,
            embedding_dim: 256,
            decoder_channels: 128,
            densegcn_growth: 32,
            cheb_order: 3,
            aggregation_mode: AggregationMode::Full,
            precision: Precision::Single,
            graph_bias: true,
            hierarchy: None,
        };
        c.validate().unwrap();
        assert_eq!(c.grid_counts(), vec![16384, 4096, 1024, 256, 64, 16]);
    }

    #[test]
    fn config_json_round_trip() {
        let c = desk_config();
        let json = serde_json::to_string(&c).unwrap();
        let back: NetConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.input_size, 64);
        assert_eq!(back.aggregation_mode, AggregationMode::Full);
    }
}
