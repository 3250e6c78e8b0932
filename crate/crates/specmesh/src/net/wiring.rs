//! Channel and connectivity algebra for the aggregation grid.
//!
//! Grid nodes are indexed X^{i,j} with level i = 1..=L (1 = finest) and
//! column j = 0..=L-i. Column 0 is the encoder output at that level. For
//! j >= 1:
//!
//!   X^{i,j} = ResBlock(Concat(X^{i,0}, ..., X^{i,j-1},
//!                             Up(X^{i+1,j-1}),
//!                             Down(X^{i-1,j-1}) when i > 1))
//!
//! where Up is bilinear 2x and Down a stride-2 convolution mapping into the
//! level's channel count. The bridge feeding the decoder at level i is
//! X^{i, L-i} (or the encoder output in shallow mode).

use crate::net::config::{AggregationMode, NetConfig};

/// Number of grid columns (beyond column 0) at level `i`.
pub fn extra_columns(config: &NetConfig, level: usize) -> usize {
    if config.aggregation_mode.has_grid() {
        config.levels - level
    } else {
        0
    }
}

/// Whether node X^{i,j} consumes an up transition from level i+1.
pub fn has_up(config: &NetConfig, _level: usize, column: usize) -> bool {
    column >= 1 && !matches!(config.aggregation_mode, AggregationMode::NoUp)
}

/// Whether node X^{i,j} consumes a down transition from level i-1.
pub fn has_down(config: &NetConfig, level: usize, column: usize) -> bool {
    column >= 1 && level > 1 && !matches!(config.aggregation_mode, AggregationMode::NoDown)
}

/// Concatenated input width of grid node X^{i,j} (j >= 1).
pub fn node_input_channels(config: &NetConfig, level: usize, column: usize) -> usize {
    let c = config.encoder_channels[level - 1];
    let mut width = column * c;
    if has_up(config, level, column) {
        width += config.encoder_channels[level]; // level + 1 entry
    }
    if has_down(config, level, column) {
        width += c;
    }
    width
}

/// Channel width of the bridge concatenated into the decoder at `level`;
/// zero when bridges are disabled.
pub fn bridge_channels(config: &NetConfig, level: usize) -> usize {
    if config.aggregation_mode.has_bridges() {
        config.encoder_channels[level - 1]
    } else {
        0
    }
}

/// Input width of the decoder block at `level`.
pub fn decoder_input_channels(config: &NetConfig, level: usize) -> usize {
    config.decoder_channels + bridge_channels(config, level)
}
