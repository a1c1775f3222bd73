mod config;
mod forward;
mod layers;
mod params;

pub use config::{ConvActivation, ModelConfig};
pub use forward::{
    co_attend, encode, trimmed_window_mask, CoAttentionModel, CoAttentionVars, EncoderVars, ForwardTrace,
};
pub use layers::{
    add_bias, article_to_essay, attention_pool, conv_sentence, document_width, dropout, embed_lookup, essay_to_article,
    fuse, lstm_forward, similarity_matrix, LstmVars, ParamVars,
};
pub use params::{expected_shapes, LstmParams, ModelParams};
