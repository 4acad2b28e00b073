//! Analytic gradients of the noise-prediction loss against central finite
//! differences at double precision.

mod gradcheck;

use expose_core::model::ModelConfig;
use gradcheck::{case, check_adapter, check_base, TOL};

#[test]
fn base_parameter_gradients_conditional_path() {
    let c = case(ModelConfig::tiny(), 11);
    for (name, err, norm) in check_base(&c, false, None) {
        if name == "uncond.audio" {
            assert_eq!(norm, 0.0, "audio was supplied, no gradient expected");
            continue;
        }
        assert!(norm > 0.0, "{name} has a zero gradient");
        assert!(err <= TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn base_parameter_gradients_unconditional_path() {
    let c = case(ModelConfig::tiny(), 12);
    for (name, err, norm) in check_base(&c, true, None) {
        assert!(norm > 0.0, "{name} has a zero gradient");
        assert!(err <= TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn adapter_gradients() {
    let c = case(ModelConfig::tiny(), 13);
    for (name, err, norm) in check_adapter(&c, None) {
        assert!(norm > 0.0, "{name} has a zero gradient");
        assert!(err <= TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn gradients_with_dropout_masks_and_two_heads() {
    let cfg = ModelConfig {
        seq_len: 3,
        model_dim: 4,
        num_heads: 2,
        num_layers: 2,
        dropout: 0.3,
        ..ModelConfig::tiny()
    };
    let c = case(cfg, 14);
    for (name, err, _) in check_base(&c, false, Some(99)) {
        assert!(err <= TOL, "{name}: relative error {err:e}");
    }
    for (name, err, _) in check_adapter(&c, Some(99)) {
        assert!(err <= TOL, "{name}: relative error {err:e}");
    }
}
