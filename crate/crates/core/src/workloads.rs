//! Reference grid and synthetic model specs used by examples, benches and
//! the CLI's default recipes.

use crate::types::{FrequencyGrid, LayerConfig, ModelSpec};

/// 29 CPU levels over 0.1–2.2 GHz and 11 GPU levels over 0.3–1.3 GHz.
pub fn reference_grid() -> FrequencyGrid {
    FrequencyGrid::linear(29, (0.1, 2.2), 11, (0.3, 1.3)).expect("valid reference grid")
}

/// A 20-layer convolutional network: 17 convolutions followed by 3 linear
/// layers.
pub fn standard_dnn() -> ModelSpec {
    let mut layers = vec![LayerConfig::conv(224, 224, 3, 32, 7, 2)];
    layers.extend([
        LayerConfig::conv(112, 112, 32, 32, 3, 2),
        LayerConfig::conv(56, 56, 32, 64, 3, 1),
        LayerConfig::conv(56, 56, 64, 64, 3, 1),
        LayerConfig::conv(56, 56, 64, 64, 3, 1),
        LayerConfig::conv(56, 56, 64, 128, 3, 2),
        LayerConfig::conv(28, 28, 128, 128, 3, 1),
        LayerConfig::conv(28, 28, 128, 128, 3, 1),
        LayerConfig::conv(28, 28, 128, 128, 1, 1),
        LayerConfig::conv(28, 28, 128, 256, 3, 2),
        LayerConfig::conv(14, 14, 256, 256, 3, 1),
        LayerConfig::conv(14, 14, 256, 256, 3, 1),
        LayerConfig::conv(14, 14, 256, 256, 1, 1),
        LayerConfig::conv(14, 14, 256, 512, 3, 2),
        LayerConfig::conv(7, 7, 512, 512, 3, 1),
        LayerConfig::conv(7, 7, 512, 512, 3, 1),
        LayerConfig::conv(7, 7, 512, 512, 1, 1),
    ]);
    layers.extend([
        LayerConfig::linear(512, 1024),
        LayerConfig::linear(1024, 1024),
        LayerConfig::linear(1024, 1000),
    ]);
    ModelSpec {
        name: "synthetic-dnn-20".into(),
        layers,
    }
}

/// A decoder of identical transformer blocks at a given context length.
pub fn transformer_model(blocks: usize, embed_dim: u64, heads: u64, context: u64) -> ModelSpec {
    ModelSpec {
        name: format!("synthetic-transformer-{blocks}x{embed_dim}"),
        layers: vec![LayerConfig::transformer(embed_dim, heads, context); blocks],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{frequency_pair_count, validate_model_spec, LayerType};

    #[test]
    fn reference_shapes() {
        assert_eq!(frequency_pair_count(&reference_grid()), 319);
        let dnn = validate_model_spec(standard_dnn()).unwrap();
        assert_eq!(dnn.layers.len(), 20);
        for t in [LayerType::Convolution, LayerType::Linear] {
            let distinct = dnn
                .unique_configs()
                .into_iter()
                .filter(|c| c.layer_type == t)
                .count();
            assert!(distinct >= 3);
        }
        assert!(validate_model_spec(transformer_model(4, 256, 4, 1)).is_ok());
    }
}
