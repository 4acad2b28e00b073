//! Synthetic talking-identity data and curation-stage operations.

mod corpus;
mod curation;
mod persona;

pub use corpus::{
    audio_seed, build_pretraining_corpus, forged_clip, genuine_clip, persona_for, read_corpus,
    read_manifest, to_dataset, write_corpus, ClipMeta, CorpusClip, SynthConfig, MANIFEST,
};
pub use curation::{
    filter_clip, refine_coeffs, singularize_across, singularize_shape, ClipFilter, FilterDecision,
    FlameGradient, FlameSequence, Refinement, RefinementObjective, ShapeCoeffs, REFINE_ITERS,
    REFINE_LR,
};
pub use persona::{
    forge_clip, generate_persona, shared_response, synthesize_audio, synthesize_clip, ClipContent,
    PersonaConfig, PersonaSpec,
};
